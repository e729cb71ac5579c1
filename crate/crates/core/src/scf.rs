//! Sensing coordination: chooses which sources run, in which mode, and where
//! their data is processed.
//!
//! Each sensing epoch the coordinator builds, per source, the list of
//! latency-feasible `(mode, location)` options, enumerates the plans that
//! respect RF mode compatibility, predicts accuracy and energy for each
//! analytically and picks the policy optimum among the plans that meet the
//! requirements.
//!
//! Predicted per-vehicle accuracy enumerates which covering sources detect the
//! vehicle. For a detection pattern `D` the fused deviation is
//! `σ_D = (Σ_{j∈D} σ_j⁻²)^(-1/2)` and the expected accuracy fraction follows
//! from [`expected_accuracy`]. A vehicle is satisfied when its miss
//! probability is within bounds and the probability that a detection lands
//! inside every accuracy bound reaches the planning confidence.
//!
//! Policies rank feasible plans by:
//!
//! | policy               | first key               | second key  |
//! |----------------------|-------------------------|-------------|
//! | `energy_first`       | lowest EC               | highest Σa  |
//! | `performance_first`  | highest Σa              | lowest EC   |
//! | `balanced:λ`         | `λ·Σa/(2V) + (1−λ)·EC_min/EC` | lowest EC |
//!
//! followed by fewer activations and then the lexicographically smallest
//! activation list. Keys compare equal within a relative tolerance of 1e-12
//! so that rounding never decides between plans.

use crate::bus::{
    body, parse_body, Bus, BusError, EePolicy, NetworkFunction, NfDescriptor, NfError, NfKind, NfMessage, Pcf,
    PolicyMode,
};
use crate::energy::{proc_energy, tx_energy, ComputeProfile};
use crate::geometry::{Aabb, Vec3};
use crate::metrics::{Accuracy, RequirementField, SensingRequirements};
use crate::saf::{fused_sigma, LatencyLeg};
use crate::scenario::{Link, VehicleTruth, Weather};
use crate::secf::{EnergyAssessment, FEEDBACK_TOPIC_PREFIX};
use crate::sensors::{expected_accuracy, prob_within, SensingMode, SensorError, SensorSource, SourceKind};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use std::any::Any;
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScfError {
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("latency budget must be > 0, got {0}")]
    InvalidBudget(f64),
    #[error("no processing location meets the latency budget")]
    PlacementInfeasible,
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("source `{source_id}` cannot be processed at {location}")]
    BadLocation { source_id: String, location: Location },
    #[error("invalid planning input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EeDenominator {
    /// Every vehicle's accuracy is divided by the task's total energy.
    #[default]
    Shared,
    /// Energy is attributed per vehicle in proportion to its data volume.
    PerVehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanningConfig {
    /// Required probability that a detection meets every accuracy bound.
    /// The effective target is the larger of this and the task's
    /// `confidence_min`.
    pub planning_confidence: f64,
    /// Largest candidate count searched exhaustively.
    pub exhaustive_limit: usize,
    pub ee_denominator: EeDenominator,
    /// Relative drift between measured and predicted energy that triggers
    /// recalibration of the cost model.
    pub recalibration_threshold: f64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            planning_confidence: 0.99,
            exhaustive_limit: 4096,
            ee_denominator: EeDenominator::Shared,
            recalibration_threshold: 0.10,
        }
    }
}

impl PlanningConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.planning_confidence) {
            return Err(format!(
                "planning_confidence must be in [0, 1], got {}",
                self.planning_confidence
            ));
        }
        if self.exhaustive_limit == 0 {
            return Err("exhaustive_limit must be >= 1".into());
        }
        if !(self.recalibration_threshold.is_finite() && self.recalibration_threshold > 0.0) {
            return Err(format!(
                "recalibration_threshold must be > 0, got {}",
                self.recalibration_threshold
            ));
        }
        Ok(())
    }
}

/// Where a source's data is processed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Edge(String),
    Central,
}

impl Location {
    /// Ledger node id of the compute site.
    pub fn node(&self) -> &str {
        match self {
            Location::Edge(bs) => bs,
            Location::Central => "central",
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Edge(bs) => write!(f, "edge:{bs}"),
            Location::Central => f.write_str("central"),
        }
    }
}

impl FromStr for Location {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central" => Ok(Location::Central),
            _ => match s.strip_prefix("edge:") {
                Some(bs) if !bs.is_empty() => Ok(Location::Edge(bs.into())),
                _ => Err(format!("bad location `{s}`")),
            },
        }
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Activation {
    pub source: String,
    pub mode: SensingMode,
    pub location: Location,
}

impl Activation {
    pub fn new(source: impl Into<String>, mode: SensingMode, location: Location) -> Self {
        Self {
            source: source.into(),
            mode,
            location,
        }
    }
}

/// A source together with its current position and data paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSite {
    pub source: SensorSource,
    pub position: Vec3,
    /// Base station serving the source; its edge server is the edge option.
    pub station: String,
    pub edge_compute: ComputeProfile,
    pub local_link: Link,
    pub backhaul: Link,
}

/// Nominal energy split and latency of one activation over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationCost {
    pub bits: f64,
    /// At the host.
    pub rf_frontend: f64,
    /// Local link plus backhaul when processed centrally, at the station.
    pub transfer: f64,
    /// On-sensor processing at the host.
    pub host_process: f64,
    /// Processing at the edge server or central cloud.
    pub location_process: f64,
    pub leg: LatencyLeg,
}

impl ActivationCost {
    pub fn total(&self) -> f64 {
        self.rf_frontend + self.transfer + self.host_process + self.location_process
    }
}

pub fn activation_cost(
    site: &SourceSite,
    mode: SensingMode,
    location: &Location,
    central: &ComputeProfile,
    step_duration: f64,
) -> Result<ActivationCost, ScfError> {
    let src = &site.source;
    let bits = src.data_volume(step_duration);
    let mode_cost = src.cost_multiplier(mode)?;
    let (profile, backhaul) = match location {
        Location::Edge(bs) if *bs == site.station => (&site.edge_compute, None),
        Location::Edge(_) => {
            return Err(ScfError::BadLocation {
                source_id: src.id.clone(),
                location: location.clone(),
            })
        }
        Location::Central => (central, Some(site.backhaul)),
    };
    let mut transfer = tx_energy(bits, site.local_link.energy_per_bit);
    let mut transfer_latency = site.local_link.latency;
    if let Some(b) = backhaul {
        transfer += tx_energy(bits, b.energy_per_bit);
        transfer_latency += b.latency;
    }
    Ok(ActivationCost {
        bits,
        rf_frontend: tx_energy(bits, src.tx_cost) * mode_cost,
        transfer,
        host_process: bits * src.proc_cost,
        location_process: proc_energy(bits, profile),
        leg: LatencyLeg {
            acquisition: src.acquisition_latency,
            transfer: transfer_latency,
            compute: profile.compute_latency(bits),
        },
    })
}

/// A processing location with its end-to-end latency and energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementOption {
    pub location: Location,
    pub latency: f64,
    pub energy: f64,
}

/// Cheapest location whose latency fits the budget; ties go to the edge.
pub fn place_processing(options: &[PlacementOption], budget: f64) -> Result<Location, ScfError> {
    if !(budget > 0.0) {
        return Err(ScfError::InvalidBudget(budget));
    }
    options
        .iter()
        .filter(|o| o.latency <= budget)
        .min_by(|a, b| a.energy.total_cmp(&b.energy).then_with(|| a.location.cmp(&b.location)))
        .map(|o| o.location.clone())
        .ok_or(ScfError::PlacementInfeasible)
}

/// Both placement options of a site in a given mode.
pub fn placement_options(
    site: &SourceSite,
    mode: SensingMode,
    central: &ComputeProfile,
    step_duration: f64,
) -> Result<Vec<PlacementOption>, ScfError> {
    [Location::Edge(site.station.clone()), Location::Central]
        .into_iter()
        .map(|location| {
            let c = activation_cost(site, mode, &location, central, step_duration)?;
            Ok(PlacementOption {
                location,
                latency: c.leg.total(),
                energy: c.total(),
            })
        })
        .collect()
}

pub fn schedule_refresh(current: u64, refresh_interval: u64) -> u64 {
    current + refresh_interval.max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingTask {
    pub id: String,
    pub regions: Vec<Aabb>,
    pub requirements: SensingRequirements,
    /// Used when no PCF is reachable.
    pub policy: EePolicy,
}

impl SensingTask {
    /// Vehicles inside the task regions or an enabled gate, minus those in a
    /// disabled gate, in input order.
    pub fn targets(&self, policy: &EePolicy, vehicles: &[VehicleTruth]) -> Vec<VehicleTruth> {
        vehicles
            .iter()
            .filter(|v| {
                let p = v.position;
                let included = self.regions.iter().any(|r| r.contains(p))
                    || policy.region_gates.iter().any(|g| g.enabled && g.region.contains(p));
                let excluded = policy.region_gates.iter().any(|g| !g.enabled && g.region.contains(p));
                included && !excluded
            })
            .cloned()
            .collect()
    }
}

/// How the coordinator searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinator {
    /// Exhaustive up to the limit, greedy beyond.
    #[default]
    Ee,
    /// Every source in its most accurate mode, processed centrally.
    AllOn,
    /// Greedy regardless of candidate count.
    Greedy,
    /// Brute force over the unpruned option product.
    Oracle,
}

impl Coordinator {
    pub fn as_str(self) -> &'static str {
        match self {
            Coordinator::Ee => "ee",
            Coordinator::AllOn => "all_on",
            Coordinator::Greedy => "greedy",
            Coordinator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Coordinator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Coordinator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ee" => Coordinator::Ee,
            "all_on" => Coordinator::AllOn,
            "greedy" => Coordinator::Greedy,
            "oracle" => Coordinator::Oracle,
            _ => return Err(format!("unknown coordinator `{s}` (ee, all_on, greedy, oracle)")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    Greedy,
    Oracle,
    MinProbe,
    Fixed,
}

impl SearchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Greedy => "greedy",
            SearchMode::Oracle => "oracle",
            SearchMode::MinProbe => "min_probe",
            SearchMode::Fixed => "fixed",
        }
    }
}

/// Inputs to one planning call.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub step: u64,
    pub task_id: &'a str,
    pub requirements: &'a SensingRequirements,
    pub policy: PolicyMode,
    pub targets: &'a [VehicleTruth],
    /// Sorted by source id.
    pub sites: &'a [SourceSite],
    pub central: &'a ComputeProfile,
    pub step_duration: f64,
    pub weather: Weather,
    /// Multiplier applied to predicted energy.
    pub cost_scale: f64,
    pub config: &'a PlanningConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePrediction {
    pub vehicle: String,
    pub accuracy: Accuracy,
    pub p_detect: f64,
    /// P(every accuracy bound met | detected).
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub per_vehicle: Vec<VehiclePrediction>,
    pub ec: f64,
    pub false_alarm_rate: f64,
    pub max_latency: f64,
}

impl Prediction {
    pub fn accuracy_sum(&self) -> f64 {
        self.per_vehicle.iter().map(|v| v.accuracy.sum()).sum()
    }

    /// `None` when the plan uses no energy.
    pub fn ee(&self) -> Option<f64> {
        (self.ec > 0.0).then(|| self.accuracy_sum() / self.ec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infeasibility {
    /// First requirement the chosen plan misses.
    pub binding: RequirementField,
    /// Targets left unsatisfied by the chosen plan.
    pub unsatisfied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedActivation {
    pub activation: Activation,
    pub leg: LatencyLeg,
    pub predicted_ec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingPlan {
    pub step: u64,
    pub task: String,
    pub targets: Vec<String>,
    pub activations: Vec<PlannedActivation>,
    pub predicted: Vec<VehiclePrediction>,
    pub predicted_ec: f64,
    pub predicted_ee: Option<f64>,
    pub search: SearchMode,
    pub candidates: usize,
    pub infeasible: Option<Infeasibility>,
}

pub const PLANS_CSV_HEADER: &str = "step,task,source,mode,location,pred_ec,pred_ee";

impl SensingPlan {
    pub fn activation_list(&self) -> Vec<Activation> {
        self.activations.iter().map(|a| a.activation.clone()).collect()
    }

    /// One row per activation, or one row with empty source fields for an
    /// empty plan. Energy and EE columns are plan totals.
    pub fn csv_lines(&self) -> Vec<String> {
        let ee = self.predicted_ee.map(|v| v.to_string()).unwrap_or_default();
        if self.activations.is_empty() {
            return vec![format!("{},{},,,,{},{}", self.step, self.task, self.predicted_ec, ee)];
        }
        self.activations
            .iter()
            .map(|a| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.step,
                    self.task,
                    a.activation.source,
                    a.activation.mode,
                    a.activation.location,
                    self.predicted_ec,
                    ee
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Options and evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Opt {
    site: usize,
    activation: Activation,
    cost: ActivationCost,
    /// Scaled predicted energy.
    ec: f64,
    miss: f64,
    false_alarm: f64,
    /// Per target: effective (position, velocity) deviation when covered.
    sigma: Vec<Option<(f64, f64)>>,
}

/// Effective bounds on the along-track error magnitude.
fn along_track_bounds(req: &SensingRequirements, heading: Vec3) -> (f64, f64) {
    let h = heading.horizontal_norm();
    let v = heading.z.abs();
    let div = |b: f64, c: f64| if c > 0.0 { b / c } else { f64::INFINITY };
    let pos = div(req.pos_bound_h, h).min(div(req.pos_bound_v, v));
    (pos, div(req.vel_bound_h, h))
}

#[derive(Debug, Clone, Copy, Default)]
struct VehicleEval {
    a_pos: f64,
    a_vel: f64,
    p_detect: f64,
    p_miss: f64,
    confidence: f64,
}

const EXACT_PATTERNS_MAX: usize = 12;

fn eval_vehicle(sig: &[(f64, f64, f64)], req: &SensingRequirements, bounds: (f64, f64)) -> VehicleEval {
    let k = sig.len();
    let p_miss: f64 = sig.iter().map(|s| s.2).product();
    let p_detect = 1.0 - p_miss;
    if k == 0 {
        return VehicleEval {
            p_miss,
            ..VehicleEval::default()
        };
    }
    let (mut a_pos, mut a_vel, mut within) = (0.0, 0.0, 0.0);
    let mut add = |p: f64, sp: f64, sv: f64| {
        a_pos += p * expected_accuracy(sp, req.pos_bound_h);
        a_vel += p * expected_accuracy(sv, req.vel_bound_h);
        within += p * prob_within(sp, bounds.0) * prob_within(sv, bounds.1);
    };
    if k <= EXACT_PATTERNS_MAX {
        let mut sp = Vec::with_capacity(k);
        let mut sv = Vec::with_capacity(k);
        for mask in 1u32..(1 << k) {
            sp.clear();
            sv.clear();
            let mut p = 1.0;
            for (j, s) in sig.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    p *= 1.0 - s.2;
                    sp.push(s.0);
                    sv.push(s.1);
                } else {
                    p *= s.2;
                }
            }
            if p > 0.0 {
                add(p, fused_sigma(&sp), fused_sigma(&sv));
            }
        }
    } else {
        // All-detected deviation applied to the detection probability.
        let sp: Vec<f64> = sig.iter().map(|s| s.0).collect();
        let sv: Vec<f64> = sig.iter().map(|s| s.1).collect();
        add(p_detect, fused_sigma(&sp), fused_sigma(&sv));
    }
    VehicleEval {
        a_pos: a_pos.clamp(0.0, 1.0),
        a_vel: a_vel.clamp(0.0, 1.0),
        p_detect,
        p_miss,
        confidence: if p_detect > 0.0 {
            (within / p_detect).min(1.0)
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone)]
struct Eval {
    opts: Vec<usize>,
    acc: f64,
    ec: f64,
    satisfied: usize,
    binding: Option<RequirementField>,
}

impl Eval {
    fn feasible(&self) -> bool {
        self.binding.is_none()
    }
}

struct Planner<'a> {
    ctx: PlanningContext<'a>,
    opts: Vec<Opt>,
    /// Option indices per site, in (mode, location) order.
    by_site: Vec<Vec<usize>>,
    conflicts: Vec<Vec<bool>>,
    bounds: Vec<(f64, f64)>,
    confidence_target: f64,
    cache: HashMap<(usize, Vec<usize>), VehicleEval>,
}

impl<'a> Planner<'a> {
    fn new(ctx: PlanningContext<'a>) -> Result<Self, ScfError> {
        let mut opts = Vec::new();
        let mut by_site = vec![Vec::new(); ctx.sites.len()];
        for (si, site) in ctx.sites.iter().enumerate() {
            for mode in site.source.available_modes() {
                for location in [Location::Edge(site.station.clone()), Location::Central] {
                    let cost = activation_cost(site, mode, &location, ctx.central, ctx.step_duration)?;
                    if !(cost.leg.total() <= ctx.requirements.max_latency) {
                        continue;
                    }
                    by_site[si].push(opts.len());
                    opts.push(Self::make_opt(&ctx, si, mode, location, cost)?);
                }
            }
        }
        Ok(Self::with_opts(ctx, opts, by_site))
    }

    fn make_opt(
        ctx: &PlanningContext<'a>,
        si: usize,
        mode: SensingMode,
        location: Location,
        cost: ActivationCost,
    ) -> Result<Opt, ScfError> {
        let site = &ctx.sites[si];
        let src = &site.source;
        let sigma = ctx
            .targets
            .iter()
            .map(|t| {
                if src.covers(site.position, t.position) {
                    src.effective_sigma(mode, site.position.distance(t.position), ctx.weather)
                        .map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Opt {
            site: si,
            activation: Activation::new(src.id.clone(), mode, location),
            ec: cost.total() * ctx.cost_scale,
            cost,
            miss: src.detection.miss_probability,
            false_alarm: src.detection.false_alarm_rate,
            sigma,
        })
    }

    fn with_opts(ctx: PlanningContext<'a>, opts: Vec<Opt>, by_site: Vec<Vec<usize>>) -> Self {
        let conflicts = ctx
            .sites
            .iter()
            .enumerate()
            .map(|(i, x)| {
                ctx.sites
                    .iter()
                    .enumerate()
                    .map(|(j, y)| {
                        let (a, b) = (&x.source, &y.source);
                        i != j
                            && a.kind == SourceKind::Rf
                            && b.kind == SourceKind::Rf
                            && a.coverage.region.intersects(&b.coverage.region)
                    })
                    .collect()
            })
            .collect();
        let bounds = ctx
            .targets
            .iter()
            .map(|t| along_track_bounds(ctx.requirements, t.heading))
            .collect();
        let confidence_target = ctx.requirements.confidence_min.max(ctx.config.planning_confidence);
        Self {
            ctx,
            opts,
            by_site,
            conflicts,
            bounds,
            confidence_target,
            cache: HashMap::new(),
        }
    }

    fn compatible(&self, chosen: &[usize], candidate: usize) -> bool {
        let c = &self.opts[candidate];
        chosen.iter().all(|&o| {
            let o = &self.opts[o];
            !self.conflicts[o.site][c.site] || o.activation.mode == c.activation.mode
        })
    }

    /// Sites whose coverage holds at least one target.
    fn gated_sites(&self) -> Vec<usize> {
        (0..self.ctx.sites.len())
            .filter(|&s| {
                let site = &self.ctx.sites[s];
                self.ctx
                    .targets
                    .iter()
                    .any(|t| site.source.covers(site.position, t.position))
            })
            .collect()
    }

    fn vehicle(&mut self, t: usize, opts: &[usize]) -> VehicleEval {
        let covering: Vec<usize> = opts
            .iter()
            .copied()
            .filter(|&o| self.opts[o].sigma[t].is_some())
            .collect();
        if let Some(e) = self.cache.get(&(t, covering.clone())) {
            return *e;
        }
        let sig: Vec<(f64, f64, f64)> = covering
            .iter()
            .map(|&o| {
                let (sp, sv) = self.opts[o].sigma[t].expect("covering");
                (sp, sv, self.opts[o].miss)
            })
            .collect();
        let e = eval_vehicle(&sig, self.ctx.requirements, self.bounds[t]);
        self.cache.insert((t, covering), e);
        e
    }

    fn evaluate(&mut self, opts: &[usize]) -> Eval {
        let req = *self.ctx.requirements;
        let mut acc = 0.0;
        let mut satisfied = 0;
        let mut detections = 0.0;
        let mut binding: Option<RequirementField> = None;
        let note = |b: &mut Option<RequirementField>, f: RequirementField| {
            if b.is_none_or(|cur| f < cur) {
                *b = Some(f);
            }
        };
        if opts
            .iter()
            .any(|&o| !(self.opts[o].cost.leg.total() <= req.max_latency))
        {
            note(&mut binding, RequirementField::Latency);
        }
        for t in 0..self.ctx.targets.len() {
            let e = self.vehicle(t, opts);
            acc += e.a_pos + e.a_vel;
            detections += e.p_detect;
            let missed_ok = e.p_miss <= req.missed_max;
            let conf_ok = e.confidence >= self.confidence_target;
            if missed_ok && conf_ok {
                satisfied += 1;
            }
            if !missed_ok {
                note(&mut binding, RequirementField::MissedDetection);
            } else if !conf_ok {
                note(&mut binding, RequirementField::Confidence);
            }
        }
        let fa: f64 = opts.iter().map(|&o| self.opts[o].false_alarm).sum();
        let fa_rate = if detections + fa > 0.0 {
            fa / (detections + fa)
        } else {
            0.0
        };
        if !(fa_rate <= req.false_alarm_max) {
            note(&mut binding, RequirementField::FalseAlarm);
        }
        let ec = opts.iter().map(|&o| self.opts[o].ec).sum();
        Eval {
            opts: opts.to_vec(),
            acc,
            ec,
            satisfied,
            binding,
        }
    }

    fn activations(&self, opts: &[usize]) -> Vec<Activation> {
        let mut v: Vec<Activation> = opts.iter().map(|&o| self.opts[o].activation.clone()).collect();
        v.sort();
        v
    }

    /// Number of compatible candidates over `sites`, stopping past `limit`.
    fn count(&self, sites: &[usize], limit: usize) -> usize {
        fn rec(p: &Planner, sites: &[usize], chosen: &mut Vec<usize>, limit: usize, n: &mut usize) {
            if *n > limit {
                return;
            }
            let Some((&s, rest)) = sites.split_first() else {
                *n += 1;
                return;
            };
            rec(p, rest, chosen, limit, n);
            for &o in &p.by_site[s] {
                if p.compatible(chosen, o) {
                    chosen.push(o);
                    rec(p, rest, chosen, limit, n);
                    chosen.pop();
                }
            }
        }
        let mut n = 0;
        rec(self, sites, &mut Vec::new(), limit, &mut n);
        n
    }

    fn candidates(&self, sites: &[usize]) -> Vec<Vec<usize>> {
        fn rec(p: &Planner, sites: &[usize], chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            let Some((&s, rest)) = sites.split_first() else {
                out.push(chosen.clone());
                return;
            };
            rec(p, rest, chosen, out);
            for &o in &p.by_site[s] {
                if p.compatible(chosen, o) {
                    chosen.push(o);
                    rec(p, rest, chosen, out);
                    chosen.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(self, sites, &mut Vec::new(), &mut out);
        out
    }

    /// Cheapest single activation over all sites.
    fn min_probe(&self) -> Result<Vec<usize>, ScfError> {
        let mut best: Option<usize> = None;
        for (si, site) in self.ctx.sites.iter().enumerate() {
            for mode in site.source.available_modes() {
                let options = placement_options(site, mode, self.ctx.central, self.ctx.step_duration)?;
                let Ok(loc) = place_processing(&options, self.ctx.requirements.max_latency) else {
                    continue;
                };
                let Some(&o) = self.by_site[si]
                    .iter()
                    .find(|&&o| self.opts[o].activation.mode == mode && self.opts[o].activation.location == loc)
                else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some(b) => self.opts[o]
                        .ec
                        .total_cmp(&self.opts[b].ec)
                        .then_with(|| self.opts[o].activation.cmp(&self.opts[b].activation))
                        .is_lt(),
                };
                if better {
                    best = Some(o);
                }
            }
        }
        Ok(best.into_iter().collect())
    }

    fn compare(&self, a: &Eval, b: &Eval, mode: PolicyMode, ec_min: f64) -> Ordering {
        policy_order(mode, (a.acc, a.ec), (b.acc, b.ec), self.ctx.targets.len(), ec_min)
            .then_with(|| b.opts.len().cmp(&a.opts.len()))
            .then_with(|| self.activations(&b.opts).cmp(&self.activations(&a.opts)))
    }

    /// Best of `evals` under the policy, or the best-effort fallback.
    fn select(&self, evals: &[Eval]) -> (usize, Option<Infeasibility>) {
        let feasible: Vec<usize> = (0..evals.len()).filter(|&i| evals[i].feasible()).collect();
        if !feasible.is_empty() {
            let ec_min = feasible.iter().map(|&i| evals[i].ec).fold(f64::INFINITY, f64::min);
            let best = feasible
                .iter()
                .copied()
                .reduce(|b, i| {
                    if self.compare(&evals[i], &evals[b], self.ctx.policy, ec_min).is_gt() {
                        i
                    } else {
                        b
                    }
                })
                .expect("nonempty");
            return (best, None);
        }
        let best = (0..evals.len())
            .reduce(|b, i| {
                let ord = evals[i]
                    .satisfied
                    .cmp(&evals[b].satisfied)
                    .then_with(|| self.compare(&evals[i], &evals[b], PolicyMode::PerformanceFirst, 0.0));
                if ord.is_gt() {
                    i
                } else {
                    b
                }
            })
            .expect("at least the empty plan");
        let e = &evals[best];
        let binding = e.binding.unwrap_or(RequirementField::MissedDetection);
        (
            best,
            Some(Infeasibility {
                binding,
                unsatisfied: self.ctx.targets.len() - e.satisfied,
            }),
        )
    }

    fn greedy(&mut self, sites: &[usize]) -> (Vec<usize>, Option<Infeasibility>) {
        let singles: Vec<usize> = sites.iter().flat_map(|&s| self.by_site[s].clone()).collect();
        let ec_min = singles
            .iter()
            .map(|&o| self.opts[o].ec)
            .filter(|&e| e > 0.0)
            .fold(f64::INFINITY, f64::min);
        let ec_min = if ec_min.is_finite() { ec_min } else { 0.0 };
        let key = |p: &Planner, a: &Eval, b: &Eval| {
            a.feasible()
                .cmp(&b.feasible())
                .then(a.satisfied.cmp(&b.satisfied))
                .then_with(|| p.compare(a, b, p.ctx.policy, ec_min))
        };
        let mut current = self.evaluate(&[]);
        loop {
            let active: Vec<usize> = current.opts.iter().map(|&o| self.opts[o].site).collect();
            let mut best: Option<Eval> = None;
            for &s in sites {
                if active.contains(&s) {
                    continue;
                }
                for o in self.by_site[s].clone() {
                    if !self.compatible(&current.opts, o) {
                        continue;
                    }
                    let mut next = current.opts.clone();
                    next.push(o);
                    next.sort_by_key(|&o| self.opts[o].site);
                    let e = self.evaluate(&next);
                    if best.as_ref().is_none_or(|b| key(self, &e, b).is_gt()) {
                        best = Some(e);
                    }
                }
            }
            match best {
                Some(b) if key(self, &b, &current).is_gt() => current = b,
                _ => break,
            }
        }
        let infeasible = (!current.feasible()).then(|| Infeasibility {
            binding: current.binding.expect("infeasible"),
            unsatisfied: self.ctx.targets.len() - current.satisfied,
        });
        (current.opts, infeasible)
    }

    fn into_plan(
        mut self,
        opts: Vec<usize>,
        search: SearchMode,
        candidates: usize,
        infeasible: Option<Infeasibility>,
    ) -> SensingPlan {
        let mut opts = opts;
        opts.sort_by(|&a, &b| self.opts[a].activation.cmp(&self.opts[b].activation));
        let predicted: Vec<VehiclePrediction> = (0..self.ctx.targets.len())
            .map(|t| {
                let e = self.vehicle(t, &opts);
                VehiclePrediction {
                    vehicle: self.ctx.targets[t].id.clone(),
                    accuracy: Accuracy::new(e.a_pos, e.a_vel),
                    p_detect: e.p_detect,
                    confidence: e.confidence,
                }
            })
            .collect();
        let predicted_ec: f64 = opts.iter().map(|&o| self.opts[o].ec).sum();
        let acc: f64 = predicted.iter().map(|p| p.accuracy.sum()).sum();
        SensingPlan {
            step: self.ctx.step,
            task: self.ctx.task_id.to_owned(),
            targets: self.ctx.targets.iter().map(|t| t.id.clone()).collect(),
            activations: opts
                .iter()
                .map(|&o| PlannedActivation {
                    activation: self.opts[o].activation.clone(),
                    leg: self.opts[o].cost.leg,
                    predicted_ec: self.opts[o].ec,
                })
                .collect(),
            predicted,
            predicted_ec,
            predicted_ee: (predicted_ec > 0.0).then(|| acc / predicted_ec),
            search,
            candidates,
            infeasible,
        }
    }
}

const REL_TOL: f64 = 1e-12;

/// Orders two floats, treating values within a relative 1e-12 as equal.
pub fn cmp_tol(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= REL_TOL * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Balanced score of a plan with accuracy sum `acc` and energy `ec`.
pub fn balanced_score(lambda: f64, acc: f64, ec: f64, vehicles: usize, ec_min: f64) -> f64 {
    let acc_term = if vehicles == 0 {
        0.0
    } else {
        acc / (2.0 * vehicles as f64)
    };
    let energy_term = if ec <= ec_min {
        1.0
    } else if ec_min <= 0.0 {
        0.0
    } else {
        ec_min / ec
    };
    lambda * acc_term + (1.0 - lambda) * energy_term
}

/// Policy preference between plans given as `(Σa, EC)`; `Greater` means `a`
/// is preferred.
pub fn policy_order(mode: PolicyMode, a: (f64, f64), b: (f64, f64), vehicles: usize, ec_min: f64) -> Ordering {
    let (acc_a, ec_a) = a;
    let (acc_b, ec_b) = b;
    match mode {
        PolicyMode::EnergyFirst => cmp_tol(ec_b, ec_a).then_with(|| cmp_tol(acc_a, acc_b)),
        PolicyMode::PerformanceFirst => cmp_tol(acc_a, acc_b).then_with(|| cmp_tol(ec_b, ec_a)),
        PolicyMode::Balanced(l) => cmp_tol(
            balanced_score(l, acc_a, ec_a, vehicles, ec_min),
            balanced_score(l, acc_b, ec_b, vehicles, ec_min),
        )
        .then_with(|| cmp_tol(ec_b, ec_a)),
    }
}

// ---------------------------------------------------------------------------
// Public planning entry points
// ---------------------------------------------------------------------------

fn validate_ctx(ctx: &PlanningContext) -> Result<(), ScfError> {
    if ctx.sites.windows(2).any(|w| w[0].source.id >= w[1].source.id) {
        return Err(ScfError::Invalid("sites must be sorted by unique source id".into()));
    }
    if !(ctx.cost_scale.is_finite() && ctx.cost_scale > 0.0) {
        return Err(ScfError::Invalid(format!("cost scale {} must be > 0", ctx.cost_scale)));
    }
    Ok(())
}

/// Every candidate plan the exhaustive search considers.
pub fn enumerate_candidates(ctx: PlanningContext) -> Result<Vec<Vec<Activation>>, ScfError> {
    validate_ctx(&ctx)?;
    let p = Planner::new(ctx)?;
    let gated = p.gated_sites();
    if gated.is_empty() {
        return Ok(vec![p.activations(&p.min_probe()?)]);
    }
    Ok(p.candidates(&gated).iter().map(|c| p.activations(c)).collect())
}

/// Analytic accuracy and energy prediction for an explicit plan.
pub fn predict(activations: &[Activation], ctx: PlanningContext) -> Result<Prediction, ScfError> {
    validate_ctx(&ctx)?;
    let mut opts = Vec::new();
    let mut by_site = vec![Vec::new(); ctx.sites.len()];
    for a in activations {
        let si = ctx
            .sites
            .iter()
            .position(|s| s.source.id == a.source)
            .ok_or_else(|| ScfError::UnknownSource(a.source.clone()))?;
        let cost = activation_cost(&ctx.sites[si], a.mode, &a.location, ctx.central, ctx.step_duration)?;
        by_site[si].push(opts.len());
        opts.push(Planner::make_opt(&ctx, si, a.mode, a.location.clone(), cost)?);
    }
    let n = opts.len();
    let mut p = Planner::with_opts(ctx, opts, by_site);
    let all: Vec<usize> = (0..n).collect();
    let e = p.evaluate(&all);
    let mut detections = 0.0;
    let per_vehicle = (0..ctx.targets.len())
        .map(|t| {
            let v = p.vehicle(t, &all);
            detections += v.p_detect;
            VehiclePrediction {
                vehicle: ctx.targets[t].id.clone(),
                accuracy: Accuracy::new(v.a_pos, v.a_vel),
                p_detect: v.p_detect,
                confidence: v.confidence,
            }
        })
        .collect();
    let fa: f64 = p.opts.iter().map(|o| o.false_alarm).sum();
    Ok(Prediction {
        per_vehicle,
        ec: e.ec,
        false_alarm_rate: if detections + fa > 0.0 {
            fa / (detections + fa)
        } else {
            0.0
        },
        max_latency: p.opts.iter().map(|o| o.cost.leg.total()).fold(0.0, f64::max),
    })
}

/// Chooses the plan for one epoch.
pub fn plan(ctx: PlanningContext, coordinator: Coordinator) -> Result<SensingPlan, ScfError> {
    validate_ctx(&ctx)?;
    if coordinator == Coordinator::AllOn {
        return all_on_plan(ctx);
    }
    let mut p = Planner::new(ctx)?;
    let gated = p.gated_sites();
    if gated.is_empty() {
        let probe = p.min_probe()?;
        let e = p.evaluate(&probe);
        let infeasible = (!e.feasible()).then(|| Infeasibility {
            binding: e.binding.expect("infeasible"),
            unsatisfied: ctx.targets.len() - e.satisfied,
        });
        return Ok(p.into_plan(probe, SearchMode::MinProbe, 1, infeasible));
    }
    let limit = ctx.config.exhaustive_limit;
    match coordinator {
        Coordinator::Oracle => {
            let cands = brute_force_candidates(&p, &gated);
            let evals: Vec<Eval> = cands.iter().map(|c| p.evaluate(c)).collect();
            let (best, inf) = p.select(&evals);
            let n = evals.len();
            let chosen = evals[best].opts.clone();
            Ok(p.into_plan(chosen, SearchMode::Oracle, n, inf))
        }
        Coordinator::Ee if p.count(&gated, limit) <= limit => {
            let cands = p.candidates(&gated);
            let evals: Vec<Eval> = cands.iter().map(|c| p.evaluate(c)).collect();
            let (best, inf) = p.select(&evals);
            let n = evals.len();
            let chosen = evals[best].opts.clone();
            Ok(p.into_plan(chosen, SearchMode::Exhaustive, n, inf))
        }
        _ => {
            let n = p.count(&gated, limit);
            let (chosen, inf) = p.greedy(&gated);
            Ok(p.into_plan(chosen, SearchMode::Greedy, n, inf))
        }
    }
}

/// Full option product filtered afterwards, without incremental pruning.
fn brute_force_candidates(p: &Planner, sites: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for &s in sites {
        let mut next = Vec::new();
        for c in &out {
            next.push(c.clone());
            for &o in &p.by_site[s] {
                let mut d = c.clone();
                d.push(o);
                next.push(d);
            }
        }
        out = next;
    }
    out.retain(|c| {
        c.iter().enumerate().all(|(i, &a)| {
            c[i + 1..].iter().all(|&b| {
                let (oa, ob) = (&p.opts[a], &p.opts[b]);
                !p.conflicts[oa.site][ob.site] || oa.activation.mode == ob.activation.mode
            })
        })
    });
    out
}

/// Every source in its most accurate mode with central processing.
pub fn all_on_plan(ctx: PlanningContext) -> Result<SensingPlan, ScfError> {
    validate_ctx(&ctx)?;
    let mut opts = Vec::new();
    let mut by_site = vec![Vec::new(); ctx.sites.len()];
    for (si, site) in ctx.sites.iter().enumerate() {
        let mode = site.source.most_accurate_mode();
        let cost = activation_cost(site, mode, &Location::Central, ctx.central, ctx.step_duration)?;
        by_site[si].push(opts.len());
        opts.push(Planner::make_opt(&ctx, si, mode, Location::Central, cost)?);
    }
    let all: Vec<usize> = (0..opts.len()).collect();
    let mut p = Planner::with_opts(ctx, opts, by_site);
    let e = p.evaluate(&all);
    let infeasible = (!e.feasible()).then(|| Infeasibility {
        binding: e.binding.expect("infeasible"),
        unsatisfied: ctx.targets.len() - e.satisfied,
    });
    Ok(p.into_plan(all, SearchMode::Fixed, 1, infeasible))
}

// ---------------------------------------------------------------------------
// Network function
// ---------------------------------------------------------------------------

pub const PLAN: &str = "scf.plan/1";
pub const PLAN_RESULT: &str = "scf.plan_result/1";
pub const GET_STATUS: &str = "scf.get_status/1";
pub const STATUS: &str = "scf.status/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRequest {
    pub step: u64,
    pub vehicles: Vec<VehicleTruth>,
    pub sites: Vec<SourceSite>,
    pub step_duration: f64,
    pub weather: Weather,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResponse {
    /// `None` when no refresh is due at this step.
    pub plan: Option<SensingPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub step: u64,
    pub ratio: f64,
    pub cost_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScfStatus {
    pub cost_scale: f64,
    pub recalibrations: Vec<Recalibration>,
    pub last_assessment: Option<EnergyAssessment>,
    pub next_refresh: u64,
}

/// SCF network function. Policy comes from the PCF when one is registered.
#[derive(Debug)]
pub struct Scf {
    id: String,
    task: SensingTask,
    central: ComputeProfile,
    config: PlanningConfig,
    coordinator: Coordinator,
    cost_scale: f64,
    next_refresh: u64,
    predicted: BTreeMap<u64, f64>,
    recalibrations: Vec<Recalibration>,
    last_assessment: Option<EnergyAssessment>,
}

impl Scf {
    pub fn new(
        id: impl Into<String>,
        task: SensingTask,
        central: ComputeProfile,
        config: PlanningConfig,
        coordinator: Coordinator,
    ) -> Self {
        Self {
            id: id.into(),
            task,
            central,
            config,
            coordinator,
            cost_scale: 1.0,
            next_refresh: 0,
            predicted: BTreeMap::new(),
            recalibrations: Vec::new(),
            last_assessment: None,
        }
    }

    pub fn feedback_topic(&self) -> String {
        format!("{FEEDBACK_TOPIC_PREFIX}{}", self.task.id)
    }

    pub fn cost_scale(&self) -> f64 {
        self.cost_scale
    }

    pub fn recalibrations(&self) -> &[Recalibration] {
        &self.recalibrations
    }

    pub fn last_assessment(&self) -> Option<&EnergyAssessment> {
        self.last_assessment.as_ref()
    }

    fn policy(&self, bus: &mut Bus) -> EePolicy {
        match bus.discover(NfKind::Pcf).first() {
            Some(pcf) => {
                Pcf::get_via(bus, &self.id, &pcf.id, &self.task.id).unwrap_or_else(|_| self.task.policy.clone())
            }
            None => self.task.policy.clone(),
        }
    }

    fn plan_step(&mut self, bus: &mut Bus, req: &PlanRequest) -> Result<Option<SensingPlan>, ScfError> {
        if req.step < self.next_refresh {
            return Ok(None);
        }
        let policy = self.policy(bus);
        let targets = self.task.targets(&policy, &req.vehicles);
        let ctx = PlanningContext {
            step: req.step,
            task_id: &self.task.id,
            requirements: &self.task.requirements,
            policy: policy.mode,
            targets: &targets,
            sites: &req.sites,
            central: &self.central,
            step_duration: req.step_duration,
            weather: req.weather,
            cost_scale: self.cost_scale,
            config: &self.config,
        };
        let plan = plan(ctx, self.coordinator)?;
        self.predicted.insert(req.step, plan.predicted_ec);
        self.next_refresh = schedule_refresh(req.step, self.task.requirements.refresh_interval);
        Ok(Some(plan))
    }

    /// Applies an assessment: rescales the cost model when measured energy
    /// drifts from the prediction by more than the threshold.
    pub fn apply_feedback(&mut self, a: EnergyAssessment) -> Option<Recalibration> {
        let predicted: f64 = self.predicted.range(a.window_start..a.window_end).map(|(_, e)| e).sum();
        let measured = a.breakdown.total;
        let mut out = None;
        if predicted > 0.0 {
            let ratio = measured / predicted;
            if (ratio - 1.0).abs() > self.config.recalibration_threshold {
                self.cost_scale *= ratio;
                let r = Recalibration {
                    step: a.window_end.saturating_sub(1),
                    ratio,
                    cost_scale: self.cost_scale,
                };
                self.recalibrations.push(r);
                out = Some(r);
            }
        }
        self.last_assessment = Some(a);
        out
    }

    pub fn plan_via(
        bus: &mut Bus,
        sender: &str,
        scf: &str,
        req: &PlanRequest,
    ) -> Result<Option<SensingPlan>, BusError> {
        let resp = bus.request(sender, scf, body(PLAN, req))?;
        let r: PlanResponse = parse_body(&resp, PLAN_RESULT).map_err(|e| BusError::Codec(e.0))?;
        Ok(r.plan)
    }
}

impl NetworkFunction for Scf {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Scf, &["nscf-coordination"])
    }

    fn handle_request(&mut self, bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        match msg.schema() {
            Some(PLAN) => {
                let req: PlanRequest = parse_body(&msg.body, PLAN)?;
                let plan = self.plan_step(bus, &req).map_err(NfError::new)?;
                Ok(body(PLAN_RESULT, &PlanResponse { plan }))
            }
            Some(GET_STATUS) => Ok(body(
                STATUS,
                &ScfStatus {
                    cost_scale: self.cost_scale,
                    recalibrations: self.recalibrations.clone(),
                    last_assessment: self.last_assessment.clone(),
                    next_refresh: self.next_refresh,
                },
            )),
            other => Err(NfError::new(format!("scf: unsupported schema {other:?}"))),
        }
    }

    fn handle_notification(&mut self, _bus: &mut Bus, msg: &NfMessage) -> Result<(), NfError> {
        let a: EnergyAssessment = parse_body(&msg.body, crate::secf::ASSESSMENT)?;
        if a.task == self.task.id {
            self.apply_feedback(a);
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    struct Fixture {
        sites: Vec<SourceSite>,
        targets: Vec<VehicleTruth>,
        req: SensingRequirements,
        central: ComputeProfile,
        config: PlanningConfig,
    }

    impl Fixture {
        fn new(sites: Vec<SourceSite>, targets: Vec<VehicleTruth>) -> Self {
            Self {
                sites,
                targets,
                req: requirements(),
                central: central(),
                config: PlanningConfig::default(),
            }
        }

        fn ctx(&self, policy: PolicyMode) -> PlanningContext<'_> {
            PlanningContext {
                step: 0,
                task_id: "t",
                requirements: &self.req,
                policy,
                targets: &self.targets,
                sites: &self.sites,
                central: &self.central,
                step_duration: 0.05,
                weather: Weather::Clear,
                cost_scale: 1.0,
                config: &self.config,
            }
        }
    }

    fn rf(id: &str, x: f64, modes: &[SensingMode]) -> SourceSite {
        let mut s = site(id, SourceKind::Rf, x);
        s.source.modes = modes.to_vec();
        s
    }

    #[test]
    fn single_rf_source_candidates() {
        let f = Fixture::new(
            vec![rf("r", 0.0, &[SensingMode::Mono, SensingMode::Bi])],
            vec![vehicle("v", 10.0)],
        );
        let c = enumerate_candidates(f.ctx(PolicyMode::EnergyFirst)).unwrap();
        // off + 2 modes x 2 locations
        assert_eq!(c.len(), 5);
        assert!(c.contains(&vec![]));
        assert!(c.contains(&vec![Activation::new("r", SensingMode::Bi, Location::Central)]));
    }

    #[test]
    fn overlapping_rf_sources_share_a_mode() {
        let f = Fixture::new(
            vec![
                rf("a", 0.0, &[SensingMode::Mono, SensingMode::Multi]),
                rf("b", 50.0, &[SensingMode::Mono, SensingMode::Multi]),
            ],
            vec![vehicle("v", 10.0)],
        );
        let c = enumerate_candidates(f.ctx(PolicyMode::EnergyFirst)).unwrap();
        for plan in &c {
            if let [x, y] = plan.as_slice() {
                assert_eq!(x.mode, y.mode);
            }
        }
        // 1 + 4 + 4 singles, plus both active in the same mode: 2 modes x 4 locations
        assert_eq!(c.len(), 1 + 4 + 4 + 8);
    }

    #[test]
    fn disjoint_rf_sources_are_independent() {
        let f = Fixture::new(
            vec![
                rf("a", 0.0, &[SensingMode::Mono, SensingMode::Multi]),
                rf("b", 500.0, &[SensingMode::Mono, SensingMode::Multi]),
            ],
            vec![vehicle("v", 10.0), vehicle("w", 510.0)],
        );
        assert_eq!(enumerate_candidates(f.ctx(PolicyMode::EnergyFirst)).unwrap().len(), 25);
    }

    #[test]
    fn no_targets_gives_min_probe() {
        let f = Fixture::new(
            vec![
                site("lidar", SourceKind::Lidar, 0.0),
                site("video", SourceKind::Video, 0.0),
            ],
            vec![],
        );
        let p = plan(f.ctx(PolicyMode::PerformanceFirst), Coordinator::Ee).unwrap();
        assert_eq!(p.search, SearchMode::MinProbe);
        assert_eq!(p.activations.len(), 1);
        // Video streams fewer bits than lidar under the shared cost figures.
        assert_eq!(p.activations[0].activation.source, "video");
        assert!(p.infeasible.is_none());
    }

    #[test]
    fn empty_source_set_gives_empty_plan() {
        let f = Fixture::new(vec![], vec![]);
        let c = enumerate_candidates(f.ctx(PolicyMode::EnergyFirst)).unwrap();
        assert_eq!(c, vec![Vec::<Activation>::new()]);
    }

    #[test]
    fn uncovered_targets_are_reported() {
        let f = Fixture::new(vec![site("video", SourceKind::Video, 0.0)], vec![vehicle("v", 900.0)]);
        let p = plan(f.ctx(PolicyMode::Balanced(0.5)), Coordinator::Ee).unwrap();
        assert_eq!(p.infeasible.unwrap().binding, RequirementField::MissedDetection);
    }

    #[test]
    fn gating_excludes_idle_sources() {
        let f = Fixture::new(
            vec![site("a", SourceKind::Video, 0.0), site("b", SourceKind::Video, 1000.0)],
            vec![vehicle("v", 10.0)],
        );
        let c = enumerate_candidates(f.ctx(PolicyMode::EnergyFirst)).unwrap();
        assert!(c.iter().flatten().all(|a| a.source == "a"));
    }

    #[test]
    fn empty_plan_prediction() {
        let f = Fixture::new(vec![site("a", SourceKind::Video, 0.0)], vec![vehicle("v", 10.0)]);
        let p = predict(&[], f.ctx(PolicyMode::EnergyFirst)).unwrap();
        assert_eq!(p.ec, 0.0);
        assert_eq!(p.ee(), None);
        assert_eq!(p.per_vehicle[0].accuracy, Accuracy::new(0.0, 0.0));
    }

    #[test]
    fn zero_sigma_predicts_perfect_accuracy() {
        let mut s = site("a", SourceKind::Video, 0.0);
        s.source.noise.position_sigma = 0.0;
        s.source.noise.velocity_sigma = 0.0;
        s.source.detection.miss_probability = 0.0;
        let f = Fixture::new(vec![s], vec![vehicle("v", 10.0)]);
        let p = predict(
            &[Activation::new("a", SensingMode::Implicit, Location::Central)],
            f.ctx(PolicyMode::EnergyFirst),
        )
        .unwrap();
        assert_eq!(p.per_vehicle[0].accuracy, Accuracy::new(1.0, 1.0));
    }

    #[test]
    fn placement_follows_budget_and_energy() {
        let edge = PlacementOption {
            location: Location::Edge("bs".into()),
            latency: 0.015,
            energy: 5.0,
        };
        let central = PlacementOption {
            location: Location::Central,
            latency: 0.030,
            energy: 1.0,
        };
        let both = [edge.clone(), central.clone()];
        assert_eq!(place_processing(&both, 0.020).unwrap(), Location::Edge("bs".into()));
        assert_eq!(place_processing(&both, 600.0).unwrap(), Location::Central);
        assert_eq!(place_processing(&both, 0.010), Err(ScfError::PlacementInfeasible));
        assert_eq!(place_processing(&both, 0.0), Err(ScfError::InvalidBudget(0.0)));
    }

    #[test]
    fn refresh_schedule() {
        assert_eq!(schedule_refresh(0, 5), 5);
        assert_eq!(schedule_refresh(7, 1), 8);
    }

    #[test]
    fn location_round_trip() {
        for l in [Location::Central, Location::Edge("bs1".into())] {
            assert_eq!(l.to_string().parse::<Location>().unwrap(), l);
        }
        assert!("edge:".parse::<Location>().is_err());
    }

    #[test]
    fn feedback_recalibrates_on_drift() {
        let mut scf = Scf::new(
            "scf",
            SensingTask {
                id: "t".into(),
                regions: vec![],
                requirements: requirements(),
                policy: EePolicy::default(),
            },
            central(),
            PlanningConfig::default(),
            Coordinator::Ee,
        );
        scf.predicted.insert(0, 10.0);
        let mut a = EnergyAssessment::empty("t", 0, 1);
        a.breakdown.total = 10.0;
        assert_eq!(scf.apply_feedback(a.clone()), None);
        a.breakdown.total = 12.0;
        let r = scf.apply_feedback(a).unwrap();
        assert!((r.ratio - 1.2).abs() < 1e-15);
        assert!((scf.cost_scale() - 1.2).abs() < 1e-15);
    }

    fn random_fixture(seed: u64) -> Fixture {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut sites = Vec::new();
        for (i, kind) in [SourceKind::Rf, SourceKind::Video, SourceKind::Lidar]
            .into_iter()
            .enumerate()
        {
            if rng.random_bool(0.8) {
                let mut s = site(&format!("s{i}"), kind, rng.random_range(0.0..200.0));
                s.source.noise.position_sigma = rng.random_range(0.05..0.8);
                s.source.noise.velocity_sigma = rng.random_range(0.005..0.06);
                s.source.tx_cost = rng.random_range(1e-10..5e-9);
                if kind == SourceKind::Rf {
                    s.source.modes = vec![SensingMode::Mono, SensingMode::Bi, SensingMode::Multi];
                }
                sites.push(s);
            }
        }
        let n = rng.random_range(0..4);
        let targets = (0..n)
            .map(|i| vehicle(&format!("v{i}"), rng.random_range(-50.0..250.0)))
            .collect();
        Fixture::new(sites, targets)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn policy_monotonicity(seed in any::<u64>()) {
            let f = random_fixture(seed);
            let ec = |m| plan(f.ctx(m), Coordinator::Ee).unwrap();
            let (e, b, p) = (ec(PolicyMode::EnergyFirst), ec(PolicyMode::Balanced(0.5)), ec(PolicyMode::PerformanceFirst));
            if e.infeasible.is_none() && b.infeasible.is_none() && p.infeasible.is_none() {
                prop_assert!(e.predicted_ec <= b.predicted_ec * (1.0 + 1e-12));
                prop_assert!(b.predicted_ec <= p.predicted_ec * (1.0 + 1e-12));
            }
        }

        #[test]
        fn exhaustive_matches_oracle(seed in any::<u64>(), l in 0.0..=1.0f64) {
            let f = random_fixture(seed);
            for m in [PolicyMode::EnergyFirst, PolicyMode::PerformanceFirst, PolicyMode::Balanced(l)] {
                let a = plan(f.ctx(m), Coordinator::Ee).unwrap();
                let b = plan(f.ctx(m), Coordinator::Oracle).unwrap();
                prop_assert_eq!(a.activation_list(), b.activation_list());
            }
        }

        #[test]
        fn plans_respect_constraints(seed in any::<u64>()) {
            let f = random_fixture(seed);
            for c in [Coordinator::Ee, Coordinator::Greedy] {
                let p = plan(f.ctx(PolicyMode::Balanced(0.5)), c).unwrap();
                for a in &p.activations {
                    prop_assert!(a.leg.total() <= f.req.max_latency);
                }
                let rf: Vec<_> = p.activations.iter().filter(|a| a.activation.source == "s0").collect();
                prop_assert!(rf.len() <= 1);
            }
        }
    }

    #[test]
    fn greedy_reaches_feasibility_when_exhaustive_does() {
        for seed in 0..40 {
            let f = random_fixture(seed);
            let e = plan(f.ctx(PolicyMode::EnergyFirst), Coordinator::Ee).unwrap();
            let g = plan(f.ctx(PolicyMode::EnergyFirst), Coordinator::Greedy).unwrap();
            assert_eq!(
                g.search,
                if f.targets.is_empty() || e.search == SearchMode::MinProbe {
                    SearchMode::MinProbe
                } else {
                    SearchMode::Greedy
                }
            );
            if e.infeasible.is_none() && g.infeasible.is_none() {
                assert!(e.predicted_ec <= g.predicted_ec * (1.0 + 1e-12));
            }
        }
    }
}
