//! Scenario documents and the simulated world they describe.
//!
//! A scenario is a JSON object with the sections `schema`, `sim`, `roads`,
//! `vehicles`, `base_stations`, `central_compute`, `sources`,
//! `requirements` and `policy`. Unknown fields are rejected everywhere. See
//! `scenarios/README.md` in this crate for the field reference.

mod world;

pub use world::{
    BaseStation, GroundTruthState, Link, RoadEdge, RoadGraph, RoadNode, Vehicle, VehicleKind, VehicleTruth, Weather,
    World,
};

use crate::bus::{EePolicy, RegionGate};
use crate::energy::ComputeProfile;
use crate::geometry::{Aabb, Vec3};
use crate::metrics::{Environment, SensingRequirements};
use crate::scf::{EeDenominator, PlanningConfig};
use crate::sensors::{
    Coverage, Degradation, DetectionModel, ModeTable, NoiseModel, SensingMode, SensorSource, SourceKind,
};
use serde::Deserialize;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA: &str = "eesim.scenario/1";

/// The emergency-vehicle corridor scenario shipped with the crate.
pub const BUNDLED_EMERGENCY: &str = include_str!("../../scenarios/emergency.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column} (field `{path}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        path: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

// ---------------------------------------------------------------------------
// Document model
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema: String,
    sim: SimDoc,
    roads: RoadsDoc,
    vehicles: Vec<VehicleDoc>,
    base_stations: Vec<BaseStationDoc>,
    central_compute: ComputeProfile,
    sources: Vec<SourceDoc>,
    requirements: RequirementsDoc,
    #[serde(default)]
    policy: PolicyDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimDoc {
    step_duration: f64,
    steps: u64,
    seed: u64,
    #[serde(default)]
    weather: Weather,
    #[serde(default = "default_detection_window")]
    detection_window: u64,
    #[serde(default = "one")]
    energy_metering_factor: f64,
}

fn default_detection_window() -> u64 {
    20
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadsDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    position: Vec3,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    id: String,
    from: String,
    to: String,
    #[serde(default)]
    length: Option<f64>,
    capacity: u32,
    speed_limit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleDoc {
    id: String,
    kind: VehicleKind,
    route: Vec<String>,
    speed: f64,
    #[serde(default)]
    start_offset: f64,
    #[serde(default = "yes")]
    connected: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseStationDoc {
    id: String,
    position: Vec3,
    edge_compute: ComputeProfile,
    local_link: Link,
    backhaul: Link,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceDoc {
    id: String,
    kind: SourceKind,
    host: String,
    coverage: Coverage,
    #[serde(default)]
    modes: Vec<SensingMode>,
    noise: NoiseModel,
    #[serde(default)]
    degradation: Degradation,
    #[serde(default)]
    detection: DetectionModel,
    #[serde(default)]
    data_rate: Option<f64>,
    tx_cost: f64,
    #[serde(default)]
    proc_cost: f64,
    acquisition_latency: f64,
    #[serde(default)]
    mode_table: ModeTable,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequirementsDoc {
    task: String,
    regions: Vec<Aabb>,
    #[serde(default)]
    environment: Environment,
    pos_bound_h: Option<f64>,
    pos_bound_v: Option<f64>,
    vel_bound_h: Option<f64>,
    range_resolution: Option<f64>,
    vel_resolution: Option<f64>,
    max_latency: Option<f64>,
    refresh_interval: Option<u64>,
    confidence_min: Option<f64>,
    missed_max: Option<f64>,
    false_alarm_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default)]
    region_gates: Vec<RegionGate>,
    #[serde(default)]
    planning: PlanningConfig,
}

fn default_mode() -> String {
    "balanced:0.5".into()
}

impl Default for PolicyDoc {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            region_gates: vec![],
            planning: PlanningConfig::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Loaded scenario
// ---------------------------------------------------------------------------

/// Sensing task: which regions to sense and the bounds results must meet.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub regions: Vec<Aabb>,
    pub requirements: SensingRequirements,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub steps: u64,
    pub seed: u64,
    /// Trailing window (in sensing steps) for detection statistics.
    pub detection_window: u64,
    /// Ratio of metered to nominal energy; models cost drift the coordinator
    /// has to learn from energy assessments.
    pub energy_metering_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: World,
    pub sources: Vec<SensorSource>,
    pub central_compute: ComputeProfile,
    pub task: TaskSpec,
    pub policy: EePolicy,
    pub planning: PlanningConfig,
    pub sim: SimSettings,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                path,
                message: inner.to_string(),
            }
        })?;
        build(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_EMERGENCY).expect("bundled scenario is valid")
    }

    pub fn source(&self, id: &str) -> Option<&SensorSource> {
        self.sources.iter().find(|s| s.id == id)
    }

    /// Multiplies every energy cost parameter (sensor, link and compute) by `c`.
    pub fn scale_energy_costs(&mut self, c: f64) {
        for s in &mut self.sources {
            s.tx_cost *= c;
            s.proc_cost *= c;
        }
        for b in &mut self.world.base_stations {
            b.edge_compute.j_per_bit *= c;
            b.local_link.energy_per_bit *= c;
            b.backhaul.energy_per_bit *= c;
        }
        self.central_compute.j_per_bit *= c;
    }
}

/// Parses and validates a scenario document into a world at step 0.
pub fn load_scenario(text: &str) -> Result<World, ScenarioError> {
    Scenario::from_json(text).map(|s| s.world)
}

fn check_id(kind: &str, id: &str) -> Result<(), ScenarioError> {
    if id.is_empty() || id.chars().any(|c| c == ',' || c == ';' || c.is_whitespace()) {
        return invalid(format!(
            "{kind} id `{id}` must be non-empty without commas, semicolons or whitespace"
        ));
    }
    Ok(())
}

fn unique<'a>(kind: &str, ids: impl Iterator<Item = &'a str>) -> Result<(), ScenarioError> {
    let mut seen = HashSet::new();
    for id in ids {
        check_id(kind, id)?;
        if !seen.insert(id) {
            return invalid(format!("duplicate {kind} id `{id}`"));
        }
    }
    Ok(())
}

fn finite_nonneg(what: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        invalid(format!("{what} must be a finite value >= 0, got {v}"))
    }
}

fn build(doc: Document) -> Result<Scenario, ScenarioError> {
    if doc.schema != SCHEMA {
        return invalid(format!("unsupported schema `{}`, expected `{SCHEMA}`", doc.schema));
    }
    let sim = &doc.sim;
    if !(sim.step_duration.is_finite() && sim.step_duration > 0.0) {
        return invalid("sim.step_duration must be > 0");
    }
    if sim.steps == 0 {
        return invalid("sim.steps must be >= 1");
    }
    if sim.detection_window == 0 {
        return invalid("sim.detection_window must be >= 1");
    }
    if !(sim.energy_metering_factor.is_finite() && sim.energy_metering_factor > 0.0) {
        return invalid("sim.energy_metering_factor must be > 0");
    }

    // Roads.
    unique("node", doc.roads.nodes.iter().map(|n| n.id.as_str()))?;
    unique("edge", doc.roads.edges.iter().map(|e| e.id.as_str()))?;
    let node_index: HashMap<&str, usize> = doc
        .roads
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let nodes: Vec<RoadNode> = doc
        .roads
        .nodes
        .iter()
        .map(|n| {
            if n.position.is_finite() {
                Ok(RoadNode {
                    id: n.id.clone(),
                    position: n.position,
                })
            } else {
                invalid(format!("node `{}` has a non-finite position", n.id))
            }
        })
        .collect::<Result<_, _>>()?;
    let mut edges = Vec::with_capacity(doc.roads.edges.len());
    for e in &doc.roads.edges {
        let from = *node_index.get(e.from.as_str()).ok_or_else(|| {
            ScenarioError::Validation(format!("edge `{}` references missing node `{}`", e.id, e.from))
        })?;
        let to = *node_index
            .get(e.to.as_str())
            .ok_or_else(|| ScenarioError::Validation(format!("edge `{}` references missing node `{}`", e.id, e.to)))?;
        let geometric = nodes[from].position.distance(nodes[to].position);
        if geometric <= 0.0 {
            return invalid(format!("edge `{}` joins coincident nodes", e.id));
        }
        let length = e.length.unwrap_or(geometric);
        if !(length.is_finite() && length > 0.0) {
            return invalid(format!("edge `{}` length must be > 0", e.id));
        }
        if !(e.speed_limit.is_finite() && e.speed_limit > 0.0) {
            return invalid(format!("edge `{}` speed_limit must be > 0", e.id));
        }
        if e.capacity == 0 {
            return invalid(format!("edge `{}` capacity must be >= 1", e.id));
        }
        edges.push(RoadEdge {
            id: e.id.clone(),
            from,
            to,
            length,
            capacity: e.capacity,
            speed_limit: e.speed_limit,
        });
    }
    let graph = RoadGraph::new(nodes, edges);

    // Vehicles.
    unique("vehicle", doc.vehicles.iter().map(|v| v.id.as_str()))?;
    let mut vehicles = Vec::with_capacity(doc.vehicles.len());
    let mut occupancy: HashMap<usize, u32> = HashMap::new();
    for v in &doc.vehicles {
        if v.route.is_empty() {
            return invalid(format!("vehicle `{}` has an empty route", v.id));
        }
        let route = v
            .route
            .iter()
            .map(|eid| {
                graph.edge_by_id(eid).ok_or_else(|| {
                    ScenarioError::Validation(format!("vehicle `{}` route references missing edge `{eid}`", v.id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        for w in route.windows(2) {
            if graph.edges[w[0]].to != graph.edges[w[1]].from {
                return invalid(format!(
                    "vehicle `{}` route is not connected between `{}` and `{}`",
                    v.id, graph.edges[w[0]].id, graph.edges[w[1]].id
                ));
            }
        }
        finite_nonneg(&format!("vehicle `{}` speed", v.id), v.speed)?;
        let first_len = graph.edges[route[0]].length;
        if !(v.start_offset.is_finite() && (0.0..=first_len).contains(&v.start_offset)) {
            return invalid(format!(
                "vehicle `{}` start_offset {} outside first edge (length {first_len})",
                v.id, v.start_offset
            ));
        }
        let slot = occupancy.entry(route[0]).or_default();
        *slot += 1;
        if *slot > graph.edges[route[0]].capacity {
            return invalid(format!(
                "edge `{}` holds more vehicles than its capacity",
                graph.edges[route[0]].id
            ));
        }
        vehicles.push(Vehicle {
            id: v.id.clone(),
            kind: v.kind,
            route,
            leg: 0,
            offset: v.start_offset,
            cruise_speed: v.speed,
            position: Vec3::ZERO,
            velocity: Vec3::ZERO,
            connected: v.connected,
            parked: false,
        });
    }
    vehicles.sort_by(|a, b| a.id.cmp(&b.id));

    // Base stations.
    unique("base station", doc.base_stations.iter().map(|b| b.id.as_str()))?;
    if !doc.central_compute.is_valid() {
        return invalid("central_compute profile has invalid parameters");
    }
    let mut base_stations = Vec::with_capacity(doc.base_stations.len());
    for b in &doc.base_stations {
        if !b.edge_compute.is_valid() {
            return invalid(format!("base station `{}` edge_compute is invalid", b.id));
        }
        for (what, l) in [("local_link", b.local_link), ("backhaul", b.backhaul)] {
            finite_nonneg(&format!("base station `{}` {what} latency", b.id), l.latency)?;
            finite_nonneg(
                &format!("base station `{}` {what} energy_per_bit", b.id),
                l.energy_per_bit,
            )?;
        }
        if !b.position.is_finite() {
            return invalid(format!("base station `{}` has a non-finite position", b.id));
        }
        base_stations.push(BaseStation {
            id: b.id.clone(),
            position: b.position,
            attached_sources: vec![],
            edge_compute: b.edge_compute,
            local_link: b.local_link,
            backhaul: b.backhaul,
        });
    }
    let vehicle_ids: HashSet<&str> = doc.vehicles.iter().map(|v| v.id.as_str()).collect();
    if let Some(clash) = base_stations.iter().find(|b| vehicle_ids.contains(b.id.as_str())) {
        return invalid(format!("id `{}` names both a vehicle and a base station", clash.id));
    }

    // Sources.
    unique("source", doc.sources.iter().map(|s| s.id.as_str()))?;
    let mut sources = Vec::with_capacity(doc.sources.len());
    let mut attached: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in doc.sources {
        let host_is_bs = base_stations.iter().any(|b| b.id == s.host);
        if !host_is_bs && !vehicle_ids.contains(s.host.as_str()) {
            return invalid(format!("source `{}` host `{}` does not exist", s.id, s.host));
        }
        if !host_is_bs && base_stations.is_empty() {
            return invalid(format!(
                "vehicle-hosted source `{}` needs a base station to report to",
                s.id
            ));
        }
        let src = SensorSource {
            data_rate: s.data_rate.unwrap_or_else(|| s.kind.default_data_rate()),
            id: s.id,
            kind: s.kind,
            host: s.host,
            coverage: s.coverage,
            modes: s.modes,
            noise: s.noise,
            degradation: s.degradation,
            detection: s.detection,
            tx_cost: s.tx_cost,
            proc_cost: s.proc_cost,
            acquisition_latency: s.acquisition_latency,
            mode_table: s.mode_table,
        };
        src.validate().map_err(|e| ScenarioError::Validation(e.to_string()))?;
        if host_is_bs {
            attached.entry(src.host.clone()).or_default().push(src.id.clone());
        }
        sources.push(src);
    }
    sources.sort_by(|a, b| a.id.cmp(&b.id));
    for b in &mut base_stations {
        if let Some(mut ids) = attached.remove(&b.id) {
            ids.sort();
            b.attached_sources = ids;
        }
    }

    // Requirements and task.
    let r = &doc.requirements;
    check_id("task", &r.task)?;
    if r.regions.is_empty() {
        return invalid("requirements.regions must list at least one region");
    }
    if let Some(bad) = r.regions.iter().find(|b| !b.is_well_formed()) {
        return invalid(format!("requirements region {bad:?} is not well formed"));
    }
    let mut req = SensingRequirements::v2x(r.environment);
    macro_rules! override_field {
        ($($f:ident),*) => { $( if let Some(v) = r.$f { req.$f = v; } )* };
    }
    override_field!(
        pos_bound_h,
        pos_bound_v,
        vel_bound_h,
        range_resolution,
        vel_resolution,
        max_latency,
        refresh_interval,
        confidence_min,
        missed_max,
        false_alarm_max
    );
    req.validate().map_err(|e| ScenarioError::Validation(e.to_string()))?;

    // Policy.
    let policy = EePolicy {
        mode: doc
            .policy
            .mode
            .parse()
            .map_err(|e: crate::bus::BusError| ScenarioError::Validation(e.to_string()))?,
        region_gates: doc.policy.region_gates,
    };
    policy
        .validate()
        .map_err(|e| ScenarioError::Validation(e.to_string()))?;
    if let Some(g) = policy.region_gates.iter().find(|g| !g.region.is_well_formed()) {
        return invalid(format!("policy region gate {:?} is not well formed", g.region));
    }
    let planning = doc.policy.planning;
    planning.validate().map_err(ScenarioError::Validation)?;
    if planning.ee_denominator == EeDenominator::PerVehicle && sources.is_empty() {
        return invalid("per-vehicle EE attribution needs at least one source");
    }

    let mut world = World {
        road_graph: graph,
        vehicles,
        base_stations,
        step_duration: sim.step_duration,
        current_step: 0,
        environment: r.environment,
        weather: sim.weather,
    };
    world.place();

    Ok(Scenario {
        world,
        sources,
        central_compute: doc.central_compute,
        task: TaskSpec {
            id: r.task.clone(),
            regions: r.regions.clone(),
            requirements: req,
        },
        policy,
        planning,
        sim: SimSettings {
            steps: sim.steps,
            seed: sim.seed,
            detection_window: sim.detection_window,
            energy_metering_factor: sim.energy_metering_factor,
        },
    })
}
