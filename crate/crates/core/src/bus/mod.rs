//! In-process service-based bus.
//!
//! Network functions register with the bus and talk through two patterns:
//! request/response (synchronous, routed by recipient id) and
//! subscribe/notify (queued per topic, delivered at the step barrier in
//! subscriber-id order). Every message crosses the bus as JSON text, so the
//! transport boundary is exercised even though everything runs in one
//! process.

mod nef;
mod pcf;

pub use nef::{result_topic, ApplicationFunction, Nef, SENSING_RESULT_TOPIC_PREFIX};
pub use pcf::{EePolicy, Pcf, PolicyMode, RegionGate};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::any::Any;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("network function `{0}` is already registered")]
    DuplicateId(String),
    #[error("no live network function `{0}`")]
    UnknownRecipient(String),
    #[error("network function `{0}` is busy handling another request")]
    Reentrant(String),
    #[error("`{recipient}` failed to handle the request: {diagnostic}")]
    Handler { recipient: String, diagnostic: Value },
    #[error("malformed message: {0}")]
    Codec(String),
    #[error("invalid value: {0}")]
    Value(String),
}

/// Failure reported by a network function's handler.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct NfError(pub String);

impl NfError {
    pub fn new(msg: impl fmt::Display) -> Self {
        Self(msg.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NfKind {
    Scf,
    Saf,
    Secf,
    Nef,
    Af,
    Pcf,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfDescriptor {
    pub id: String,
    pub kind: NfKind,
    pub services: Vec<String>,
    pub live: bool,
}

impl NfDescriptor {
    pub fn new(id: impl Into<String>, kind: NfKind, services: &[&str]) -> Self {
        Self {
            id: id.into(),
            kind,
            services: services.iter().map(|s| s.to_string()).collect(),
            live: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: u64,
    pub sender: String,
    /// Recipient NF id, or the topic for notifications.
    pub recipient: String,
    /// Id of the request this message answers.
    pub correlation_id: Option<u64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfMessage {
    pub envelope: Envelope,
    pub body: Value,
}

impl NfMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn decode(text: &str) -> Result<Self, BusError> {
        serde_json::from_str(text).map_err(|e| BusError::Codec(e.to_string()))
    }

    pub fn schema(&self) -> Option<&str> {
        self.body.get("schema").and_then(Value::as_str)
    }
}

/// Wraps a payload into a body object tagged with `schema`.
pub fn body<T: Serialize>(schema: &str, payload: &T) -> Value {
    let mut map = match serde_json::to_value(payload).expect("payload serializes") {
        Value::Object(m) => m,
        Value::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    map.insert("schema".into(), Value::String(schema.into()));
    Value::Object(map)
}

/// Extracts a payload after checking the body's schema tag.
pub fn parse_body<T: DeserializeOwned>(body: &Value, schema: &str) -> Result<T, NfError> {
    let mut map = body
        .as_object()
        .cloned()
        .ok_or_else(|| NfError::new("body is not an object"))?;
    match map.remove("schema") {
        Some(Value::String(s)) if s == schema => {}
        other => {
            return Err(NfError::new(format!(
                "expected schema `{schema}`, found {}",
                other.map_or("none".to_string(), |v| v.to_string())
            )))
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| NfError::new(format!("{schema}: {e}")))
}

/// A service attached to the bus.
pub trait NetworkFunction: Any {
    fn descriptor(&self) -> NfDescriptor;

    fn handle_request(&mut self, bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError>;

    fn handle_notification(&mut self, _bus: &mut Bus, _msg: &NfMessage) -> Result<(), NfError> {
        Ok(())
    }

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}

struct Slot {
    descriptor: NfDescriptor,
    /// Empty while the function is handling a message.
    service: Option<Box<dyn NetworkFunction>>,
}

/// Result of delivering queued notifications.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FlushReport {
    pub delivered: usize,
    pub failures: Vec<(String, NfError)>,
}

#[derive(Default)]
pub struct Bus {
    slots: BTreeMap<String, Slot>,
    subscriptions: BTreeMap<String, BTreeSet<String>>,
    pending: VecDeque<NfMessage>,
    next_msg_id: u64,
    step: u64,
    requests: u64,
    notifications: u64,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bus")
            .field("nfs", &self.slots.keys().collect::<Vec<_>>())
            .field("step", &self.step)
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn register(&mut self, service: Box<dyn NetworkFunction>) -> Result<(), BusError> {
        let descriptor = service.descriptor();
        if self.slots.contains_key(&descriptor.id) {
            return Err(BusError::DuplicateId(descriptor.id));
        }
        self.slots.insert(
            descriptor.id.clone(),
            Slot {
                descriptor,
                service: Some(service),
            },
        );
        Ok(())
    }

    pub fn deregister(&mut self, id: &str) -> Option<Box<dyn NetworkFunction>> {
        for subs in self.subscriptions.values_mut() {
            subs.remove(id);
        }
        self.slots.remove(id).and_then(|s| s.service)
    }

    pub fn set_live(&mut self, id: &str, live: bool) -> Result<(), BusError> {
        let slot = self
            .slots
            .get_mut(id)
            .ok_or_else(|| BusError::UnknownRecipient(id.into()))?;
        slot.descriptor.live = live;
        Ok(())
    }

    /// Live functions of a kind, sorted by id.
    pub fn discover(&self, kind: NfKind) -> Vec<NfDescriptor> {
        self.slots
            .values()
            .filter(|s| s.descriptor.kind == kind && s.descriptor.live)
            .map(|s| s.descriptor.clone())
            .collect()
    }

    /// Typed access to a registered function's state.
    pub fn service<T: NetworkFunction>(&self, id: &str) -> Option<&T> {
        self.slots.get(id)?.service.as_ref()?.as_any().downcast_ref()
    }

    pub fn service_mut<T: NetworkFunction>(&mut self, id: &str) -> Option<&mut T> {
        self.slots.get_mut(id)?.service.as_mut()?.as_any_mut().downcast_mut()
    }

    fn envelope(&mut self, sender: &str, recipient: &str, correlation_id: Option<u64>) -> Envelope {
        self.next_msg_id += 1;
        Envelope {
            msg_id: self.next_msg_id,
            sender: sender.into(),
            recipient: recipient.into(),
            correlation_id,
            step: self.step,
        }
    }

    /// Sends a request and returns the response body.
    pub fn request(&mut self, sender: &str, recipient: &str, body: Value) -> Result<Value, BusError> {
        match self.slots.get(recipient) {
            Some(s) if s.descriptor.live => {}
            _ => return Err(BusError::UnknownRecipient(recipient.into())),
        }
        let envelope = self.envelope(sender, recipient, None);
        let request_id = envelope.msg_id;
        let msg = NfMessage::decode(&NfMessage { envelope, body }.encode())?;
        let mut service = self
            .slots
            .get_mut(recipient)
            .and_then(|s| s.service.take())
            .ok_or_else(|| BusError::Reentrant(recipient.into()))?;
        self.requests += 1;
        let outcome = service.handle_request(self, &msg);
        if let Some(slot) = self.slots.get_mut(recipient) {
            slot.service = Some(service);
        }
        match outcome {
            Ok(resp) => {
                let envelope = self.envelope(recipient, sender, Some(request_id));
                let reply = NfMessage::decode(&NfMessage { envelope, body: resp }.encode())?;
                debug_assert_eq!(reply.envelope.correlation_id, Some(request_id));
                Ok(reply.body)
            }
            Err(e) => Err(BusError::Handler {
                recipient: recipient.into(),
                diagnostic: serde_json::json!({
                    "schema": "bus.error/1",
                    "request_id": request_id,
                    "error": e.0,
                }),
            }),
        }
    }

    pub fn subscribe(&mut self, subscriber: &str, topic: &str) -> Result<(), BusError> {
        if !self.slots.contains_key(subscriber) {
            return Err(BusError::UnknownRecipient(subscriber.into()));
        }
        self.subscriptions
            .entry(topic.into())
            .or_default()
            .insert(subscriber.into());
        Ok(())
    }

    pub fn unsubscribe(&mut self, subscriber: &str, topic: &str) {
        if let Some(s) = self.subscriptions.get_mut(topic) {
            s.remove(subscriber);
        }
    }

    /// Live subscribers of a topic, sorted by id.
    pub fn subscribers(&self, topic: &str) -> Vec<String> {
        self.subscriptions
            .get(topic)
            .map(|s| {
                s.iter()
                    .filter(|id| self.slots.get(*id).is_some_and(|sl| sl.descriptor.live))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Queues a notification; returns the number of current subscribers.
    pub fn notify(&mut self, sender: &str, topic: &str, body: Value) -> usize {
        let envelope = self.envelope(sender, topic, None);
        self.pending.push_back(NfMessage { envelope, body });
        self.subscribers(topic).len()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Delivers every queued notification, including those emitted while
    /// delivering, in emission order and subscriber-id order.
    pub fn flush(&mut self) -> FlushReport {
        let mut report = FlushReport::default();
        while let Some(msg) = self.pending.pop_front() {
            let text = msg.encode();
            for sub in self.subscribers(&msg.envelope.recipient) {
                let copy = match NfMessage::decode(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        report.failures.push((sub, NfError::new(e)));
                        continue;
                    }
                };
                let Some(mut service) = self.slots.get_mut(&sub).and_then(|s| s.service.take()) else {
                    report.failures.push((sub, NfError::new("subscriber busy")));
                    continue;
                };
                self.notifications += 1;
                let outcome = service.handle_notification(self, &copy);
                if let Some(slot) = self.slots.get_mut(&sub) {
                    slot.service = Some(service);
                }
                report.delivered += 1;
                if let Err(e) = outcome {
                    report.failures.push((sub, e));
                }
            }
        }
        report
    }

    /// Step barrier: delivers everything emitted so far, then moves to `step`.
    pub fn begin_step(&mut self, step: u64) -> FlushReport {
        let report = self.flush();
        self.step = step;
        report
    }

    /// (requests handled, notifications delivered) since creation.
    pub fn traffic(&self) -> (u64, u64) {
        (self.requests, self.notifications)
    }
}
