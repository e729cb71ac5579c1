//! Exposure of sensing results to application functions.

use super::{body, parse_body, Bus, BusError, NetworkFunction, NfDescriptor, NfError, NfKind, NfMessage};
use crate::saf::SensingResult;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::any::Any;
use std::collections::BTreeMap;

pub const EXPOSE: &str = "nef.expose/1";
pub const EXPOSED: &str = "nef.exposed/1";
pub const SENSING_RESULT: &str = "nef.sensing_result/1";
/// Results of task `t` are published on `sensing_result/t`.
pub const SENSING_RESULT_TOPIC_PREFIX: &str = "sensing_result/";

#[derive(Serialize, Deserialize)]
struct Expose {
    result: SensingResult,
}

#[derive(Serialize, Deserialize)]
struct Exposed {
    subscribers: usize,
}

pub fn result_topic(task: &str) -> String {
    format!("{SENSING_RESULT_TOPIC_PREFIX}{task}")
}

#[derive(Debug)]
pub struct Nef {
    id: String,
    exposed: u64,
}

impl Nef {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            exposed: 0,
        }
    }

    pub fn exposed(&self) -> u64 {
        self.exposed
    }

    /// Hands a result to the NEF; returns how many subscribers it will reach.
    pub fn expose_via(bus: &mut Bus, sender: &str, nef: &str, result: &SensingResult) -> Result<usize, BusError> {
        let resp = bus.request(sender, nef, body(EXPOSE, &Expose { result: result.clone() }))?;
        let e: Exposed = parse_body(&resp, EXPOSED).map_err(|e| BusError::Codec(e.0))?;
        Ok(e.subscribers)
    }
}

impl NetworkFunction for Nef {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Nef, &["nnef-exposure"])
    }

    fn handle_request(&mut self, bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        let req: Expose = parse_body(&msg.body, EXPOSE)?;
        req.result.validate().map_err(NfError::new)?;
        self.exposed += 1;
        let topic = result_topic(&req.result.task);
        let n = bus.notify(&self.id, &topic, body(SENSING_RESULT, &req.result));
        Ok(body(EXPOSED, &Exposed { subscribers: n }))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// Application-side endpoint that records delivered results.
#[derive(Debug)]
pub struct ApplicationFunction {
    id: String,
    per_step: BTreeMap<u64, u64>,
    last: Option<SensingResult>,
}

impl ApplicationFunction {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            per_step: BTreeMap::new(),
            last: None,
        }
    }

    pub fn subscribe_task(&self, bus: &mut Bus, task: &str) -> Result<(), BusError> {
        bus.subscribe(&self.id, &result_topic(task))
    }

    /// Deliveries keyed by the step they were emitted in.
    pub fn deliveries(&self) -> &BTreeMap<u64, u64> {
        &self.per_step
    }

    pub fn total(&self) -> u64 {
        self.per_step.values().sum()
    }

    pub fn last(&self) -> Option<&SensingResult> {
        self.last.as_ref()
    }
}

impl NetworkFunction for ApplicationFunction {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Af, &["sensing-consumer"])
    }

    fn handle_request(&mut self, _bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        Err(NfError::new(format!("af: unsupported schema {:?}", msg.schema())))
    }

    fn handle_notification(&mut self, _bus: &mut Bus, msg: &NfMessage) -> Result<(), NfError> {
        let r: SensingResult = parse_body(&msg.body, SENSING_RESULT)?;
        *self.per_step.entry(msg.envelope.step).or_default() += 1;
        self.last = Some(r);
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
