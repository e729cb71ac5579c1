//! Sensing analytics: fusion of per-source observations into results.
//!
//! Fusion is inverse-variance weighting. Weights are taken relative to the
//! most precise input, `r_i = σ_min² / σ_i²`, so the most precise input has
//! weight exactly 1 and equal-variance inputs reduce to a plain mean:
//!
//! ```text
//! x̂  = Σ r_i x_i / Σ r_i
//! σ̂² = σ_min² / Σ r_i        (= 1 / Σ 1/σ_i²)
//! ```
//!
//! Inputs are put in a canonical order before summing, which makes the
//! result independent of the order observations arrive in.

use crate::bus::{body, parse_body, Bus, BusError, Nef, NetworkFunction, NfDescriptor, NfError, NfKind, NfMessage};
use crate::geometry::Vec3;
use crate::sensors::{SensingObservation, Target};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::any::Any;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SafError {
    #[error("no observations to fuse")]
    NoData,
    #[error("observations mix targets or steps: {0}")]
    Mixed(String),
    #[error("invalid sensing result: {0}")]
    InvalidResult(String),
}

/// Fused estimate for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fused {
    pub position: Vec3,
    pub velocity: Vec3,
    pub pos_variance: f64,
    pub vel_variance: f64,
}

fn canonical(a: &SensingObservation, b: &SensingObservation) -> Ordering {
    a.source
        .cmp(&b.source)
        .then(a.mode.cmp(&b.mode))
        .then(a.pos_sigma.total_cmp(&b.pos_sigma))
        .then(a.vel_sigma.total_cmp(&b.vel_sigma))
        .then_with(|| cmp_vec(a.est_position, b.est_position))
        .then_with(|| cmp_vec(a.est_velocity, b.est_velocity))
}

fn cmp_vec(a: Vec3, b: Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Relative weights and fused variance for the given standard deviations.
fn weights(sigmas: &[f64]) -> (Vec<f64>, f64) {
    let min = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        // Exact inputs dominate; average them.
        let w: Vec<f64> = sigmas.iter().map(|&s| if s <= 0.0 { 1.0 } else { 0.0 }).collect();
        return (w, 0.0);
    }
    let min2 = min * min;
    let w: Vec<f64> = sigmas
        .iter()
        .map(|&s| if s == min { 1.0 } else { min2 / (s * s) })
        .collect();
    let sum: f64 = w.iter().sum();
    (w, min2 / sum)
}

/// Standard deviation of the inverse-variance combination of `sigmas`.
pub fn fused_sigma(sigmas: &[f64]) -> f64 {
    if sigmas.len() == 1 {
        return sigmas[0];
    }
    weights(sigmas).1.sqrt()
}

fn weighted_mean(points: &[Vec3], w: &[f64]) -> Vec3 {
    let mut acc = Vec3::ZERO;
    let mut wsum = 0.0;
    for (p, &wi) in points.iter().zip(w) {
        if wi > 0.0 {
            acc = acc + *p * wi;
            wsum += wi;
        }
    }
    let mean = acc * (1.0 / wsum);
    // Guard the [min, max] hull against rounding.
    let clamp = |v: f64, f: fn(&Vec3) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        v.clamp(lo, hi)
    };
    Vec3::new(clamp(mean.x, |p| p.x), clamp(mean.y, |p| p.y), clamp(mean.z, |p| p.z))
}

/// Fuses observations of a single vehicle at a single step.
pub fn fuse(observations: &[SensingObservation]) -> Result<Fused, SafError> {
    let first = observations.first().ok_or(SafError::NoData)?;
    for o in observations {
        if o.target != first.target || o.step != first.step {
            return Err(SafError::Mixed(format!(
                "{:?}@{} vs {:?}@{}",
                first.target, first.step, o.target, o.step
            )));
        }
        if o.target == Target::FalseAlarm {
            return Err(SafError::Mixed("false alarms are not fused".into()));
        }
    }
    if let [o] = observations {
        return Ok(Fused {
            position: o.est_position,
            velocity: o.est_velocity,
            pos_variance: o.pos_sigma * o.pos_sigma,
            vel_variance: o.vel_sigma * o.vel_sigma,
        });
    }
    let mut obs: Vec<&SensingObservation> = observations.iter().collect();
    obs.sort_by(|a, b| canonical(a, b));
    let ps: Vec<f64> = obs.iter().map(|o| o.pos_sigma).collect();
    let vs: Vec<f64> = obs.iter().map(|o| o.vel_sigma).collect();
    let (wp, pos_variance) = weights(&ps);
    let (wv, vel_variance) = weights(&vs);
    let positions: Vec<Vec3> = obs.iter().map(|o| o.est_position).collect();
    let velocities: Vec<Vec3> = obs.iter().map(|o| o.est_velocity).collect();
    Ok(Fused {
        position: weighted_mean(&positions, &wp),
        velocity: weighted_mean(&velocities, &wv),
        pos_variance,
        vel_variance,
    })
}

/// Latency contributions of one source's data path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyLeg {
    pub acquisition: f64,
    pub transfer: f64,
    pub compute: f64,
}

impl LatencyLeg {
    pub fn total(&self) -> f64 {
        self.acquisition + self.transfer + self.compute
    }
}

/// End-to-end latency of a fused result: the slowest contributing path.
pub fn end_to_end_latency(legs: &[LatencyLeg]) -> f64 {
    legs.iter().map(LatencyLeg::total).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingResult {
    pub task: String,
    pub vehicle: String,
    pub step: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub pos_variance: f64,
    pub vel_variance: f64,
    /// Norm of the position error against ground truth.
    pub pos_err: f64,
    pub vel_err: f64,
    pub a_pos: f64,
    pub a_vel: f64,
    pub sources: Vec<String>,
    pub latency: f64,
}

impl SensingResult {
    pub fn validate(&self) -> Result<(), SafError> {
        let bad = |m: &str| Err(SafError::InvalidResult(format!("{}/{}: {m}", self.task, self.vehicle)));
        if self.sources.is_empty() {
            return bad("no contributing sources");
        }
        if !(0.0..=1.0).contains(&self.a_pos) || !(0.0..=1.0).contains(&self.a_vel) {
            return bad("accuracy outside [0, 1]");
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return bad("latency must be finite and >= 0");
        }
        if !(self.position.is_finite() && self.velocity.is_finite()) {
            return bad("non-finite estimate");
        }
        Ok(())
    }
}

pub const RESULTS_CSV_HEADER: &str = "step,task,vehicle,pos_err,vel_err,a_pos,a_vel,latency,sources";

impl SensingResult {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.task,
            self.vehicle,
            self.pos_err,
            self.vel_err,
            self.a_pos,
            self.a_vel,
            self.latency,
            self.sources.join(";")
        )
    }
}

/// Fused but not yet scored estimate of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedResult {
    pub vehicle: String,
    pub fused: Fused,
    pub sources: Vec<String>,
    pub latency: f64,
    /// Bits behind this estimate, for per-vehicle energy attribution.
    pub data_volume: f64,
}

/// Groups observations per vehicle and fuses each group. False alarms are
/// counted, not fused. `legs` maps source id to its latency path.
pub fn fuse_step(
    observations: &[SensingObservation],
    legs: &BTreeMap<String, LatencyLeg>,
) -> Result<(Vec<FusedResult>, u64), SafError> {
    let mut groups: BTreeMap<&str, Vec<SensingObservation>> = BTreeMap::new();
    let mut false_alarms = 0;
    for o in observations {
        match o.vehicle() {
            Some(v) => groups.entry(v).or_default().push(o.clone()),
            None => false_alarms += 1,
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (vehicle, obs) in groups {
        let fused = fuse(&obs)?;
        let mut sources: Vec<String> = obs.iter().map(|o| o.source.clone()).collect();
        sources.sort();
        sources.dedup();
        let path: Vec<LatencyLeg> = sources
            .iter()
            .map(|s| {
                legs.get(s).copied().unwrap_or(LatencyLeg {
                    acquisition: obs
                        .iter()
                        .find(|o| &o.source == s)
                        .map_or(0.0, |o| o.acquisition_latency),
                    ..LatencyLeg::default()
                })
            })
            .collect();
        out.push(FusedResult {
            vehicle: vehicle.to_owned(),
            fused,
            sources,
            latency: end_to_end_latency(&path),
            data_volume: obs.iter().map(|o| o.data_volume).sum(),
        });
    }
    Ok((out, false_alarms))
}

pub const FUSE: &str = "saf.fuse/1";
pub const FUSED: &str = "saf.fused/1";
pub const PUBLISH: &str = "saf.publish/1";
pub const PUBLISHED: &str = "saf.published/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuseRequest {
    pub observations: Vec<SensingObservation>,
    pub legs: BTreeMap<String, LatencyLeg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuseResponse {
    pub results: Vec<FusedResult>,
    pub false_alarms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PublishRequest {
    pub results: Vec<SensingResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PublishResponse {
    /// NEF exposures made.
    pub exposed: u64,
    /// Subscribers reached, summed over exposures.
    pub subscribers: u64,
}

/// SAF network function: fuses on request and publishes through the NEF.
#[derive(Debug)]
pub struct Saf {
    id: String,
    published: u64,
}

impl Saf {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            published: 0,
        }
    }

    pub fn published(&self) -> u64 {
        self.published
    }

    fn publish(&mut self, bus: &mut Bus, results: &[SensingResult]) -> Result<PublishResponse, NfError> {
        let nef = bus.discover(NfKind::Nef).into_iter().next().map(|d| d.id);
        let mut resp = PublishResponse {
            exposed: 0,
            subscribers: 0,
        };
        for r in results {
            r.validate().map_err(NfError::new)?;
            self.published += 1;
            if let Some(nef) = &nef {
                resp.subscribers += Nef::expose_via(bus, &self.id, nef, r).map_err(NfError::new)? as u64;
                resp.exposed += 1;
            }
        }
        Ok(resp)
    }

    pub fn fuse_via(bus: &mut Bus, sender: &str, saf: &str, req: &FuseRequest) -> Result<FuseResponse, BusError> {
        let resp = bus.request(sender, saf, body(FUSE, req))?;
        parse_body(&resp, FUSED).map_err(|e| BusError::Codec(e.0))
    }

    pub fn publish_via(
        bus: &mut Bus,
        sender: &str,
        saf: &str,
        results: Vec<SensingResult>,
    ) -> Result<PublishResponse, BusError> {
        let resp = bus.request(sender, saf, body(PUBLISH, &PublishRequest { results }))?;
        parse_body(&resp, PUBLISHED).map_err(|e| BusError::Codec(e.0))
    }
}

impl NetworkFunction for Saf {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Saf, &["nsaf-fusion", "nsaf-publish"])
    }

    fn handle_request(&mut self, bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        match msg.schema() {
            Some(FUSE) => {
                let req: FuseRequest = parse_body(&msg.body, FUSE)?;
                let (results, false_alarms) = fuse_step(&req.observations, &req.legs).map_err(NfError::new)?;
                Ok(body(FUSED, &FuseResponse { results, false_alarms }))
            }
            Some(PUBLISH) => {
                let req: PublishRequest = parse_body(&msg.body, PUBLISH)?;
                let resp = self.publish(bus, &req.results)?;
                Ok(body(PUBLISHED, &resp))
            }
            other => Err(NfError::new(format!("saf: unsupported schema {other:?}"))),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
