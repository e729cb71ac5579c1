//! Sensing energy consumption: collection, long-term storage, assessment
//! and feedback to the coordinator.
//!
//! Records are appended to a CSV log with the energy-ledger schema and
//! flushed once per step. The useful sensing output of each epoch (the
//! accuracy sum) goes to a sidecar file next to it, `<stem>.output.csv`, so a
//! reload can rebuild every aggregate including the EE series.

use crate::bus::{body, parse_body, Bus, BusError, NetworkFunction, NfDescriptor, NfError, NfKind, NfMessage};
use crate::energy::{csv_line, read_csv, EcBreakdown, EnergyError, EnergyLedger, EnergyRecord, CSV_HEADER};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::any::Any;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENERGY_TOPIC: &str = "energy_records";
pub const ENERGY_RECORDS: &str = "secf.energy_records/1";
pub const GET_ASSESSMENT: &str = "secf.get_assessment/1";
pub const ASSESSMENT: &str = "secf.assessment/1";
/// Assessments for task `t` are published on `energy_feedback/t`.
pub const FEEDBACK_TOPIC_PREFIX: &str = "energy_feedback/";

const OUTPUT_HEADER: &str = "step,task,useful";

#[derive(Debug, Error)]
pub enum SecfError {
    #[error("storage failure at step {step}: {message}")]
    Storage { step: u64, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("cannot read `{path}`: {message}")]
    Reload { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAssessment {
    pub task: String,
    /// Half-open step window `[window_start, window_end)`.
    pub window_start: u64,
    pub window_end: u64,
    pub breakdown: EcBreakdown,
    /// Mean of the per-epoch EE values in the window.
    pub mean_ee: Option<f64>,
    /// Least-squares slope of per-epoch EE against step.
    pub trend: f64,
    /// Epochs with both energy and output in the window.
    pub epochs: usize,
}

impl EnergyAssessment {
    pub fn empty(task: &str, window_start: u64, window_end: u64) -> Self {
        Self {
            task: task.into(),
            window_start,
            window_end,
            breakdown: EcBreakdown::default(),
            mean_ee: None,
            trend: 0.0,
            epochs: 0,
        }
    }
}

/// Least-squares slope of `y` against `x`; 0 for fewer than two points or a
/// constant series.
pub fn trend(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 || points.iter().all(|p| p.1 == points[0].1) {
        return 0.0;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Energy records of one sensing epoch and the output they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBatch {
    pub step: u64,
    pub task: String,
    pub records: Vec<EnergyRecord>,
    /// Σ (a_pos + a_vel) over the task's vehicles.
    pub useful: f64,
}

struct LogFiles {
    energy: BufWriter<File>,
    output: BufWriter<File>,
}

/// Path of the output sidecar for an energy log.
pub fn output_log_path(energy_log: &Path) -> PathBuf {
    energy_log.with_extension("output.csv")
}

/// In-memory ledger plus optional on-disk log.
pub struct SecfStore {
    ledger: EnergyLedger,
    useful: BTreeMap<(String, u64), f64>,
    log: Option<LogFiles>,
}

impl std::fmt::Debug for SecfStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecfStore")
            .field("records", &self.ledger.len())
            .field("logging", &self.log.is_some())
            .finish()
    }
}

impl Default for SecfStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl SecfStore {
    pub fn in_memory() -> Self {
        Self {
            ledger: EnergyLedger::new(),
            useful: BTreeMap::new(),
            log: None,
        }
    }

    /// Creates (truncating) the log and its sidecar, and any missing parent directories.
    pub fn with_log(path: &Path) -> Result<Self, SecfError> {
        let open = |p: &Path, header: &str| -> Result<BufWriter<File>, SecfError> {
            let storage = |e: std::io::Error| SecfError::Storage {
                step: 0,
                message: format!("{}: {e}", p.display()),
            };
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(storage)?;
            }
            let mut w = BufWriter::new(File::create(p).map_err(storage)?);
            writeln!(w, "{header}").and_then(|_| w.flush()).map_err(storage)?;
            Ok(w)
        };
        Ok(Self {
            log: Some(LogFiles {
                energy: open(path, CSV_HEADER)?,
                output: open(&output_log_path(path), OUTPUT_HEADER)?,
            }),
            ..Self::in_memory()
        })
    }

    /// Rebuilds a store from a log written by [`SecfStore::with_log`].
    pub fn reload(path: &Path) -> Result<Self, SecfError> {
        let reload_err = |p: &Path, m: String| SecfError::Reload {
            path: p.display().to_string(),
            message: m,
        };
        let f = File::open(path).map_err(|e| reload_err(path, e.to_string()))?;
        let mut store = Self::in_memory();
        for r in read_csv(BufReader::new(f))? {
            store.ledger.record(r)?;
        }
        let out_path = output_log_path(path);
        if let Ok(f) = File::open(&out_path) {
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| reload_err(&out_path, e.to_string()))?;
                if i == 0 {
                    if line.trim_end() != OUTPUT_HEADER {
                        return Err(reload_err(&out_path, format!("bad header `{line}`")));
                    }
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                let parsed = match f.as_slice() {
                    [s, t, u] => s
                        .parse::<u64>()
                        .ok()
                        .zip(u.parse::<f64>().ok())
                        .map(|(s, u)| (s, *t, u)),
                    _ => None,
                };
                let (step, task, u) =
                    parsed.ok_or_else(|| reload_err(&out_path, format!("line {}: `{line}`", i + 1)))?;
                store.useful.insert((task.to_owned(), step), u);
            }
        }
        Ok(store)
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    /// Appends one epoch's batch and flushes the log.
    pub fn collect(&mut self, batch: &EnergyBatch) -> Result<(), SecfError> {
        for r in &batch.records {
            self.ledger.record(r.clone())?;
        }
        self.useful.insert((batch.task.clone(), batch.step), batch.useful);
        if let Some(log) = &mut self.log {
            let storage = |e: std::io::Error| SecfError::Storage {
                step: batch.step,
                message: e.to_string(),
            };
            for r in &batch.records {
                writeln!(log.energy, "{}", csv_line(r)).map_err(storage)?;
            }
            writeln!(log.output, "{},{},{}", batch.step, batch.task, batch.useful).map_err(storage)?;
            log.energy.flush().map_err(storage)?;
            log.output.flush().map_err(storage)?;
        }
        Ok(())
    }

    pub fn assess(&self, task: &str, window: Range<u64>) -> Result<EnergyAssessment, SecfError> {
        if window.is_empty() {
            return Err(SecfError::InsufficientData(format!(
                "empty window {}..{}",
                window.start, window.end
            )));
        }
        let breakdown = self.ledger.ec_sensing_window(task, window.clone());
        let mut points = Vec::new();
        for ((_, n), &u) in self
            .useful
            .range((task.to_owned(), window.start)..(task.to_owned(), window.end))
        {
            let ec = self.ledger.ec_sensing(task, *n).total;
            if ec > 0.0 {
                points.push((*n as f64, u / ec));
            }
        }
        let mean_ee = (!points.is_empty()).then(|| points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64);
        Ok(EnergyAssessment {
            task: task.into(),
            window_start: window.start,
            window_end: window.end,
            breakdown,
            mean_ee,
            trend: trend(&points),
            epochs: points.len(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AssessmentRequest {
    task: String,
    start: u64,
    end: u64,
}

/// SECF network function.
#[derive(Debug)]
pub struct Secf {
    id: String,
    store: SecfStore,
    /// End of the last feedback window per task.
    fed_back: BTreeMap<String, u64>,
    feedbacks: u64,
}

impl Secf {
    pub fn new(id: impl Into<String>, store: SecfStore) -> Self {
        Self {
            id: id.into(),
            store,
            fed_back: BTreeMap::new(),
            feedbacks: 0,
        }
    }

    pub fn store(&self) -> &SecfStore {
        &self.store
    }

    pub fn feedbacks(&self) -> u64 {
        self.feedbacks
    }

    pub fn batch_body(batch: &EnergyBatch) -> Value {
        body(ENERGY_RECORDS, batch)
    }

    pub fn assess_via(
        bus: &mut Bus,
        sender: &str,
        secf: &str,
        task: &str,
        window: Range<u64>,
    ) -> Result<EnergyAssessment, BusError> {
        let req = AssessmentRequest {
            task: task.into(),
            start: window.start,
            end: window.end,
        };
        let resp = bus.request(sender, secf, body(GET_ASSESSMENT, &req))?;
        parse_body(&resp, ASSESSMENT).map_err(|e| BusError::Codec(e.0))
    }
}

impl NetworkFunction for Secf {
    fn descriptor(&self) -> NfDescriptor {
        NfDescriptor::new(self.id.clone(), NfKind::Secf, &["nsecf-collection", "nsecf-assessment"])
    }

    fn handle_request(&mut self, _bus: &mut Bus, msg: &NfMessage) -> Result<Value, NfError> {
        let req: AssessmentRequest = parse_body(&msg.body, GET_ASSESSMENT)?;
        let a = self.store.assess(&req.task, req.start..req.end).map_err(NfError::new)?;
        Ok(body(ASSESSMENT, &a))
    }

    /// Collects a batch, then feeds back the assessment of the epochs since
    /// the previous feedback.
    fn handle_notification(&mut self, bus: &mut Bus, msg: &NfMessage) -> Result<(), NfError> {
        let batch: EnergyBatch = parse_body(&msg.body, ENERGY_RECORDS)?;
        self.store.collect(&batch).map_err(NfError::new)?;
        let start = self.fed_back.get(&batch.task).copied().unwrap_or(0);
        let end = batch.step + 1;
        let a = self.store.assess(&batch.task, start..end).map_err(NfError::new)?;
        self.fed_back.insert(batch.task.clone(), end);
        self.feedbacks += 1;
        bus.notify(
            &self.id,
            &format!("{FEEDBACK_TOPIC_PREFIX}{}", batch.task),
            body(ASSESSMENT, &a),
        );
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
