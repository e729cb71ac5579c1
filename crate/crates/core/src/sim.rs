//! Simulation loop, exports and coordinator comparison.
//!
//! Per step: the bus barrier delivers pending notifications, the SCF plans
//! when a refresh is due, active sources sense, the SAF fuses and publishes
//! through the NEF, energy is recorded and handed to the SECF, and an EE
//! report row is produced. Steps without a due refresh neither sense nor
//! consume energy.

use crate::bus::{ApplicationFunction, Bus, BusError, EePolicy, Nef, Pcf, PolicyMode};
use crate::energy::{write_csv, EnergyCategory, EnergyError, EnergyLedger, EnergyRecord};
use crate::metrics::{
    accuracy_fraction, check_requirements, detection_stats, ee_kpi, ee_kpi_per_vehicle, within_accuracy_bounds,
    Accuracy, DetectionCounts, DetectionStats, EeReport, MetricsError, ObservedErrors, RequirementField, EE_CSV_HEADER,
};
use crate::rng;
use crate::saf::{FuseRequest, Saf, SensingResult, RESULTS_CSV_HEADER};
use crate::scenario::{Scenario, World};
use crate::scf::{
    activation_cost, Coordinator, EeDenominator, PlanRequest, Scf, ScfError, SearchMode, SensingPlan, SensingTask,
    SourceSite, PLANS_CSV_HEADER,
};
use crate::secf::{EnergyBatch, Secf, SecfError, SecfStore, ENERGY_TOPIC};
use crate::sensors::{sense, SensingContext, SensorError, Target};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

const RUNNER: &str = "runner";
const SCF_ID: &str = "scf";
const SAF_ID: &str = "saf";
const SECF_ID: &str = "secf";
const PCF_ID: &str = "pcf";
const NEF_ID: &str = "nef";
const AF_ID: &str = "af";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Planning(#[from] ScfError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Secf(#[from] SecfError),
    #[error("network function `{nf}` failed at step {step}: {message}")]
    Delivery { nf: String, step: u64, message: String },
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reconciliation failed: {0}")]
    Reconciliation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(format!("unknown export format `{s}` (csv, json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: u64,
    pub seed: u64,
    pub coordinator: Coordinator,
    /// Replaces the scenario's policy mode.
    pub policy: Option<PolicyMode>,
    /// Where the SECF keeps its log; in memory when absent.
    pub secf_log: Option<PathBuf>,
}

impl RunConfig {
    /// Steps and seed from the scenario, `ee` coordinator.
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            steps: s.sim.steps,
            seed: s.sim.seed,
            coordinator: Coordinator::Ee,
            policy: None,
            secf_log: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.steps == 0 {
            return Err(RunError::Config("steps must be >= 1".into()));
        }
        if let Some(p) = self.policy {
            p.validate().map_err(|e| RunError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub targets: u64,
    pub misses: u64,
    pub true_detections: u64,
    pub within_bounds: u64,
    pub false_alarms: u64,
    pub confidence: f64,
    pub missed_rate: f64,
    pub false_alarm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub task: String,
    pub coordinator: Coordinator,
    pub policy: PolicyMode,
    pub seed: u64,
    pub steps: u64,
    pub epochs: u64,
    pub total_ec: f64,
    pub p_tx: f64,
    pub p_p: f64,
    pub rf_frontend: f64,
    pub data_transfer: f64,
    pub data_process: f64,
    pub mean_ee: Option<f64>,
    pub results: u64,
    pub detection: DetectionSummary,
    /// Run-level check: detection thresholds over the whole run and no
    /// result beyond the latency bound.
    pub requirements_met: bool,
    pub requirement_violations: Vec<RequirementField>,
    /// Individual results exceeding an error or latency bound, per field.
    pub result_violations: BTreeMap<RequirementField, u64>,
    pub max_result_latency: f64,
    pub search_modes: BTreeMap<SearchMode, u64>,
    pub infeasible_plans: u64,
    pub recalibrations: u64,
    pub final_cost_scale: f64,
    pub af_deliveries: u64,
    pub secf_records: u64,
    pub bus_requests: u64,
    pub bus_notifications: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub energy: Vec<EnergyRecord>,
    pub results: Vec<SensingResult>,
    pub reports: Vec<EeReport>,
    pub plans: Vec<SensingPlan>,
    pub summary: Summary,
}

fn check_flush(report: crate::bus::FlushReport, step: u64) -> Result<(), RunError> {
    match report.failures.into_iter().next() {
        Some((nf, e)) => Err(RunError::Delivery { nf, step, message: e.0 }),
        None => Ok(()),
    }
}

/// Current sites of every source, sorted by source id.
pub fn source_sites(scenario: &Scenario, world: &World) -> Result<Vec<SourceSite>, RunError> {
    scenario
        .sources
        .iter()
        .map(|s| {
            let position = world
                .host_position(&s.host)
                .ok_or_else(|| RunError::Config(format!("source `{}` has no host `{}`", s.id, s.host)))?;
            let bs = world
                .serving_station(&s.host)
                .ok_or_else(|| RunError::Config(format!("source `{}` has no serving station", s.id)))?;
            Ok(SourceSite {
                source: s.clone(),
                position,
                station: bs.id.clone(),
                edge_compute: bs.edge_compute,
                local_link: bs.local_link,
                backhaul: bs.backhaul,
            })
        })
        .collect()
}

struct Services {
    bus: Bus,
}

fn build_bus(scenario: &Scenario, cfg: &RunConfig) -> Result<Services, RunError> {
    let mut policy: EePolicy = scenario.policy.clone();
    if let Some(m) = cfg.policy {
        policy.mode = m;
    }
    let task = SensingTask {
        id: scenario.task.id.clone(),
        regions: scenario.task.regions.clone(),
        requirements: scenario.task.requirements,
        policy: policy.clone(),
    };
    let store = match &cfg.secf_log {
        Some(p) => SecfStore::with_log(p)?,
        None => SecfStore::in_memory(),
    };
    let mut bus = Bus::new();
    bus.register(Box::new(Pcf::new(PCF_ID)))?;
    bus.register(Box::new(Nef::new(NEF_ID)))?;
    let af = ApplicationFunction::new(AF_ID);
    bus.register(Box::new(af))?;
    bus.register(Box::new(Saf::new(SAF_ID)))?;
    bus.register(Box::new(Secf::new(SECF_ID, store)))?;
    let scf = Scf::new(
        SCF_ID,
        task,
        scenario.central_compute,
        scenario.planning,
        cfg.coordinator,
    );
    let feedback = scf.feedback_topic();
    bus.register(Box::new(scf))?;
    bus.subscribe(AF_ID, &crate::bus::result_topic(&scenario.task.id))?;
    bus.subscribe(SECF_ID, ENERGY_TOPIC)?;
    bus.subscribe(SCF_ID, &feedback)?;
    Pcf::set_via(&mut bus, RUNNER, PCF_ID, &scenario.task.id, &policy)?;
    Ok(Services { bus })
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let Services { mut bus } = build_bus(scenario, cfg)?;
    let mut world = scenario.world.clone();
    let task = &scenario.task;
    let req = task.requirements;
    let metering = scenario.sim.energy_metering_factor;

    let mut ledger = EnergyLedger::new();
    let mut results_out = Vec::new();
    let mut reports = Vec::new();
    let mut plans = Vec::new();
    let mut window: VecDeque<DetectionCounts> = VecDeque::new();
    let mut totals = DetectionCounts::default();
    let mut result_violations: BTreeMap<RequirementField, u64> = BTreeMap::new();
    let mut max_result_latency: f64 = 0.0;

    for n in 0..cfg.steps {
        check_flush(bus.begin_step(n), n)?;
        let truth = world.ground_truth();
        let sites = source_sites(scenario, &world)?;
        let request = PlanRequest {
            step: n,
            vehicles: truth.vehicles.clone(),
            sites: sites.clone(),
            step_duration: world.step_duration,
            weather: world.weather,
        };
        let Some(plan) = Scf::plan_via(&mut bus, RUNNER, SCF_ID, &request)? else {
            world.step();
            continue;
        };

        // Sense.
        let targets: BTreeSet<&str> = plan.targets.iter().map(String::as_str).collect();
        let mut observations = Vec::new();
        let mut legs = BTreeMap::new();
        let mut records = Vec::new();
        for pa in &plan.activations {
            let a = &pa.activation;
            let site = sites
                .iter()
                .find(|s| s.source.id == a.source)
                .ok_or_else(|| RunError::Config(format!("plan names unknown source `{}`", a.source)))?;
            let ctx = SensingContext {
                source_position: site.position,
                step_duration: world.step_duration,
                weather: world.weather,
                pos_bound: req.pos_bound_h,
                vel_bound: req.vel_bound_h,
            };
            let mut r = rng::stream(cfg.seed, &format!("sense/{}", a.source), n);
            for o in sense(&site.source, a.mode, &ctx, &truth, &mut r)? {
                let keep = match &o.target {
                    Target::Vehicle(v) => targets.contains(v.as_str()),
                    Target::FalseAlarm => true,
                };
                if keep {
                    observations.push(o);
                }
            }
            let cost = activation_cost(
                site,
                a.mode,
                &a.location,
                &scenario.central_compute,
                world.step_duration,
            )?;
            legs.insert(a.source.clone(), cost.leg);
            let host = site.source.host.as_str();
            for (node, category, joules) in [
                (host, EnergyCategory::RfFrontend, cost.rf_frontend),
                (site.station.as_str(), EnergyCategory::DataTransfer, cost.transfer),
                (host, EnergyCategory::DataProcess, cost.host_process),
                (a.location.node(), EnergyCategory::DataProcess, cost.location_process),
            ] {
                records.push(EnergyRecord::new(
                    n,
                    node,
                    task.id.as_str(),
                    category,
                    joules * metering,
                ));
            }
        }

        // Fuse, score, publish.
        let fused = Saf::fuse_via(
            &mut bus,
            RUNNER,
            SAF_ID,
            &FuseRequest {
                observations,
                legs: legs.clone(),
            },
        )?;
        let mut step_results = Vec::with_capacity(fused.results.len());
        let mut volumes: BTreeMap<String, f64> = BTreeMap::new();
        let mut counts = DetectionCounts {
            targets: plan.targets.len() as u64,
            false_alarms: fused.false_alarms,
            ..DetectionCounts::default()
        };
        let mut step_violations = Vec::new();
        for f in &fused.results {
            let v = truth
                .get(&f.vehicle)
                .ok_or_else(|| RunError::Reconciliation(format!("result for unknown vehicle `{}`", f.vehicle)))?;
            let errors =
                ObservedErrors::from_estimates(f.fused.position, v.position, f.fused.velocity, v.velocity, f.latency);
            let pos_err = (f.fused.position - v.position).norm();
            let vel_err = (f.fused.velocity - v.velocity).norm();
            counts.true_detections += 1;
            if within_accuracy_bounds(&errors, &req) {
                counts.within_bounds += 1;
            }
            for viol in check_requirements(&errors, &req) {
                *result_violations.entry(viol.field).or_default() += 1;
                step_violations.push(viol);
            }
            max_result_latency = max_result_latency.max(f.latency);
            volumes.insert(f.vehicle.clone(), f.data_volume);
            step_results.push(SensingResult {
                task: task.id.clone(),
                vehicle: f.vehicle.clone(),
                step: n,
                position: f.fused.position,
                velocity: f.fused.velocity,
                pos_variance: f.fused.pos_variance,
                vel_variance: f.fused.vel_variance,
                pos_err,
                vel_err,
                a_pos: accuracy_fraction(pos_err, req.pos_bound_h),
                a_vel: accuracy_fraction(vel_err, req.vel_bound_h),
                sources: f.sources.clone(),
                latency: f.latency,
            });
        }
        counts.misses = counts.targets - counts.true_detections;
        Saf::publish_via(&mut bus, RUNNER, SAF_ID, step_results.clone())?;

        // Energy.
        for r in &records {
            ledger.record(r.clone())?;
        }
        let ec = ledger.ec_sensing(&task.id, n);
        let by_vehicle: BTreeMap<&str, Accuracy> = step_results
            .iter()
            .map(|r| (r.vehicle.as_str(), Accuracy::new(r.a_pos, r.a_vel)))
            .collect();
        let per_vehicle: Vec<(String, Accuracy)> = plan
            .targets
            .iter()
            .map(|v| (v.clone(), by_vehicle.get(v.as_str()).copied().unwrap_or_default()))
            .collect();
        let acc: Vec<Accuracy> = per_vehicle.iter().map(|p| p.1).collect();
        let ee_value = if ec.total > 0.0 {
            Some(match scenario.planning.ee_denominator {
                EeDenominator::Shared => ee_kpi(&acc, ec.total)?,
                EeDenominator::PerVehicle => {
                    let vols: Vec<f64> = plan
                        .targets
                        .iter()
                        .map(|v| volumes.get(v).copied().unwrap_or(0.0))
                        .collect();
                    if vols.iter().sum::<f64>() > 0.0 {
                        ee_kpi_per_vehicle(&acc, &vols, ec.total)?
                    } else {
                        0.0
                    }
                }
            })
        } else {
            None
        };
        let useful: f64 = acc.iter().map(Accuracy::sum).sum();
        bus.notify(
            RUNNER,
            ENERGY_TOPIC,
            Secf::batch_body(&EnergyBatch {
                step: n,
                task: task.id.clone(),
                records: records.clone(),
                useful,
            }),
        );

        // Detection window.
        totals += counts;
        window.push_back(counts);
        while window.len() as u64 > scenario.sim.detection_window.max(1) {
            window.pop_front();
        }
        let detection: Option<DetectionStats> = detection_stats(window.make_contiguous(), &req).ok();
        if let Some(d) = &detection {
            step_violations.extend(d.violations(&req));
        }
        reports.push(EeReport {
            step: n,
            ee_value,
            per_vehicle,
            ec_total: ec.total,
            p_tx: ec.p_tx,
            p_p: ec.p_p,
            violations: step_violations,
            detection,
        });
        results_out.extend(step_results);
        plans.push(plan);
        world.step();
    }
    check_flush(bus.begin_step(cfg.steps), cfg.steps)?;

    let summary = summarize(
        scenario,
        cfg,
        &bus,
        &ledger,
        &results_out,
        &reports,
        &plans,
        totals,
        result_violations,
        max_result_latency,
    )?;
    reconcile(&bus, &ledger, &summary, &reports, results_out.len(), &task.id)?;
    Ok(RunOutput {
        energy: ledger.records().to_vec(),
        results: results_out,
        reports,
        plans,
        summary,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    scenario: &Scenario,
    cfg: &RunConfig,
    bus: &Bus,
    ledger: &EnergyLedger,
    results: &[SensingResult],
    reports: &[EeReport],
    plans: &[SensingPlan],
    totals: DetectionCounts,
    result_violations: BTreeMap<RequirementField, u64>,
    max_result_latency: f64,
) -> Result<Summary, RunError> {
    let req = scenario.task.requirements;
    let mut cats = [0.0f64; 3];
    for r in ledger.records() {
        cats[r.category as usize] += r.joules;
    }
    let ees: Vec<f64> = reports.iter().filter_map(|r| r.ee_value).collect();
    let mean_ee = (!ees.is_empty()).then(|| ees.iter().sum::<f64>() / ees.len() as f64);

    let (detection, mut violations) = match detection_stats(&[totals], &req) {
        Ok(d) => (
            DetectionSummary {
                targets: totals.targets,
                misses: totals.misses,
                true_detections: totals.true_detections,
                within_bounds: totals.within_bounds,
                false_alarms: totals.false_alarms,
                confidence: d.confidence,
                missed_rate: d.missed_rate,
                false_alarm_rate: d.false_alarm_rate,
            },
            d.violations(&req).into_iter().map(|v| v.field).collect::<Vec<_>>(),
        ),
        Err(_) => (
            DetectionSummary {
                confidence: 1.0,
                ..DetectionSummary::default()
            },
            vec![],
        ),
    };
    if result_violations.get(&RequirementField::Latency).copied().unwrap_or(0) > 0 {
        violations.insert(0, RequirementField::Latency);
    }

    let mut search_modes = BTreeMap::new();
    for p in plans {
        *search_modes.entry(p.search).or_default() += 1;
    }
    let scf: &Scf = bus
        .service(SCF_ID)
        .ok_or_else(|| RunError::Reconciliation("scf missing".into()))?;
    let af: &ApplicationFunction = bus
        .service(AF_ID)
        .ok_or_else(|| RunError::Reconciliation("af missing".into()))?;
    let secf: &Secf = bus
        .service(SECF_ID)
        .ok_or_else(|| RunError::Reconciliation("secf missing".into()))?;
    let (bus_requests, bus_notifications) = bus.traffic();
    let policy = cfg.policy.unwrap_or(scenario.policy.mode);
    Ok(Summary {
        schema: "eesim.summary/1".into(),
        task: scenario.task.id.clone(),
        coordinator: cfg.coordinator,
        policy,
        seed: cfg.seed,
        steps: cfg.steps,
        epochs: reports.len() as u64,
        total_ec: ledger.total(),
        p_tx: cats[0] + cats[1],
        p_p: cats[2],
        rf_frontend: cats[0],
        data_transfer: cats[1],
        data_process: cats[2],
        mean_ee,
        results: results.len() as u64,
        detection,
        requirements_met: violations.is_empty(),
        requirement_violations: violations,
        result_violations,
        max_result_latency,
        search_modes,
        infeasible_plans: plans.iter().filter(|p| p.infeasible.is_some()).count() as u64,
        recalibrations: scf.recalibrations().len() as u64,
        final_cost_scale: scf.cost_scale(),
        af_deliveries: af.total(),
        secf_records: secf.store().ledger().len() as u64,
        bus_requests,
        bus_notifications,
    })
}

fn reconcile(
    bus: &Bus,
    ledger: &EnergyLedger,
    summary: &Summary,
    reports: &[EeReport],
    results: usize,
    task: &str,
) -> Result<(), RunError> {
    let fail = |m: String| Err(RunError::Reconciliation(m));
    for r in reports {
        if r.ec_total != r.p_tx + r.p_p {
            return fail(format!("step {}: EC {} != P_tx + P_p", r.step, r.ec_total));
        }
    }
    let secf: &Secf = bus.service(SECF_ID).expect("registered");
    if secf.store().ledger().records() != ledger.records() {
        return fail("SECF store differs from the energy ledger".into());
    }
    let end = reports.last().map_or(0, |r| r.step + 1);
    let a = secf.store().assess(task, 0..end.max(1))?;
    if a.breakdown != ledger.ec_sensing_window(task, 0..end.max(1)) {
        return fail("SECF assessment differs from ledger window sums".into());
    }
    if summary.af_deliveries != results as u64 {
        return fail(format!(
            "AF received {} results, {} were published",
            summary.af_deliveries, results
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn lines<'a>(header: &str, rows: impl Iterator<Item = String> + 'a) -> String {
    let mut s = String::new();
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for i in items {
        let _ = writeln!(s, "{}", serde_json::to_string(i).expect("serializable"));
    }
    s
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("serializable");
    s.push('\n');
    s
}

/// Writes the run's traces into `dir`; returns the files written.
pub fn export(out: &RunOutput, dir: &Path, formats: &[ExportFormat]) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, data: String| -> Result<(), RunError> {
        let p = dir.join(name);
        write_file(&p, data.as_bytes())?;
        written.push(p);
        Ok(())
    };
    if formats.contains(&ExportFormat::Csv) {
        let mut energy = Vec::new();
        write_csv(&mut energy, &out.energy).expect("in-memory write");
        put("energy.csv", String::from_utf8(energy).expect("utf8"))?;
        put(
            "results.csv",
            lines(RESULTS_CSV_HEADER, out.results.iter().map(SensingResult::csv_line)),
        )?;
        put(
            "ee.csv",
            lines(EE_CSV_HEADER, out.reports.iter().map(EeReport::csv_line)),
        )?;
        put(
            "plans.csv",
            lines(PLANS_CSV_HEADER, out.plans.iter().flat_map(|p| p.csv_lines())),
        )?;
    }
    if formats.contains(&ExportFormat::Json) {
        put("energy.jsonl", jsonl(&out.energy))?;
        put("results.jsonl", jsonl(&out.results))?;
        put("ee.jsonl", jsonl(&out.reports))?;
        put("plans.jsonl", jsonl(&out.plans))?;
    }
    put("summary.json", summary_json(&out.summary))?;
    Ok(written)
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub coordinator: Coordinator,
    pub total_ec: f64,
    pub mean_ee: Option<f64>,
    pub p_tx: f64,
    pub p_p: f64,
    pub requirements_met: bool,
    pub requirement_violations: usize,
    pub result_violations: u64,
    /// `1 − EC / EC_all_on` when the all-on baseline was run.
    pub savings_vs_all_on: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema: String,
    pub seed: u64,
    pub steps: u64,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_CSV_HEADER: &str =
    "coordinator,total_ec,mean_ee,p_tx,p_p,requirements_met,requirement_violations,result_violations,savings_vs_all_on";

impl Comparison {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        lines(
            COMPARISON_CSV_HEADER,
            self.rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.coordinator,
                    r.total_ec,
                    opt(r.mean_ee),
                    r.p_tx,
                    r.p_p,
                    r.requirements_met,
                    r.requirement_violations,
                    r.result_violations,
                    opt(r.savings_vs_all_on)
                )
            }),
        )
    }
}

/// Runs each coordinator with the same configuration. Logs, if any, get the
/// coordinator name appended.
pub fn compare(
    scenario: &Scenario,
    cfg: &RunConfig,
    coordinators: &[Coordinator],
) -> Result<(Comparison, Vec<RunOutput>), RunError> {
    if coordinators.len() < 2 {
        return Err(RunError::Config("compare needs at least two coordinators".into()));
    }
    let mut outs = Vec::new();
    for &c in coordinators {
        let mut cc = cfg.clone();
        cc.coordinator = c;
        cc.secf_log = cfg.secf_log.as_ref().map(|p| {
            let mut name = p.file_stem().unwrap_or_default().to_os_string();
            name.push(format!("-{c}.csv"));
            p.with_file_name(name)
        });
        outs.push(run(scenario, &cc)?);
    }
    let baseline = outs
        .iter()
        .find(|o| o.summary.coordinator == Coordinator::AllOn)
        .map(|o| o.summary.total_ec);
    let rows = outs
        .iter()
        .map(|o| {
            let s = &o.summary;
            ComparisonRow {
                coordinator: s.coordinator,
                total_ec: s.total_ec,
                mean_ee: s.mean_ee,
                p_tx: s.p_tx,
                p_p: s.p_p,
                requirements_met: s.requirements_met,
                requirement_violations: s.requirement_violations.len(),
                result_violations: s.result_violations.values().sum(),
                savings_vs_all_on: baseline.filter(|&b| b > 0.0).map(|b| 1.0 - s.total_ec / b),
            }
        })
        .collect();
    Ok((
        Comparison {
            schema: "eesim.comparison/1".into(),
            seed: cfg.seed,
            steps: cfg.steps,
            rows,
        },
        outs,
    ))
}

pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = dir.join("comparison.csv");
    write_file(&csv, cmp.csv().as_bytes())?;
    let json = dir.join("comparison.json");
    let mut f = std::fs::File::create(&json).map_err(io_err(&json))?;
    writeln!(f, "{}", serde_json::to_string_pretty(cmp).expect("serializable")).map_err(io_err(&json))?;
    Ok(vec![csv, json])
}
