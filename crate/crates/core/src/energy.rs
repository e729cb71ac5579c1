//! Categorized energy bookkeeping.
//!
//! Every joule spent on sensing is attributed to a node, a task and a step,
//! and falls into exactly one [`EnergyCategory`]. Per-step consumption
//! decomposes into a transmission part and a processing part:
//!
//! ```text
//! EC(n) = P_tx(n) + P_p(n)
//! P_tx  = rf_frontend + data_transfer
//! P_p   = data_process
//! ```
//!
//! All aggregates are computed by summing records in insertion order, so two
//! ledgers holding the same records produce bit-identical totals.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("energy value must be a finite non-negative number of joules, got {0}")]
    NegativeEnergy(f64),
    #[error("record for ({node}, {task}) at step {step} precedes step {last} already recorded")]
    StepRegression {
        node: String,
        task: String,
        step: u64,
        last: u64,
    },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// The three kinds of sensing energy expenditure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyCategory {
    /// RF transceiver chains that perform sensing or carry sensing data over the air.
    RfFrontend,
    /// Wired transceiver chains moving sensing data between compute nodes.
    DataTransfer,
    /// Software components processing sensing data.
    DataProcess,
}

impl EnergyCategory {
    pub const ALL: [EnergyCategory; 3] = [
        EnergyCategory::RfFrontend,
        EnergyCategory::DataTransfer,
        EnergyCategory::DataProcess,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnergyCategory::RfFrontend => "rf_frontend",
            EnergyCategory::DataTransfer => "data_transfer",
            EnergyCategory::DataProcess => "data_process",
        }
    }

    /// Whether the category counts towards the transmission term.
    pub fn is_transmission(self) -> bool {
        !matches!(self, EnergyCategory::DataProcess)
    }
}

impl fmt::Display for EnergyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnergyCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rf_frontend" => Ok(EnergyCategory::RfFrontend),
            "data_transfer" => Ok(EnergyCategory::DataTransfer),
            "data_process" => Ok(EnergyCategory::DataProcess),
            other => Err(format!("unknown energy category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: u64,
    pub node: String,
    pub task: String,
    pub category: EnergyCategory,
    pub joules: f64,
}

impl EnergyRecord {
    pub fn new(
        step: u64,
        node: impl Into<String>,
        task: impl Into<String>,
        category: EnergyCategory,
        joules: f64,
    ) -> Self {
        Self {
            step,
            node: node.into(),
            task: task.into(),
            category,
            joules,
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.joules.is_finite() && self.joules >= 0.0) {
            return Err(EnergyError::NegativeEnergy(self.joules));
        }
        Ok(())
    }
}

/// Processing capability of an edge or central compute node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeProfile {
    /// Energy per processed bit on bare hardware.
    pub j_per_bit: f64,
    /// Multiplicative overhead of the virtualization layer (1.0 = none).
    #[serde(default = "one")]
    pub virtualization_overhead: f64,
    /// Processing time per bit.
    pub s_per_bit: f64,
}

fn one() -> f64 {
    1.0
}

impl ComputeProfile {
    pub fn is_valid(&self) -> bool {
        self.j_per_bit.is_finite()
            && self.j_per_bit >= 0.0
            && self.virtualization_overhead.is_finite()
            && self.virtualization_overhead >= 1.0
            && self.s_per_bit.is_finite()
            && self.s_per_bit >= 0.0
    }

    pub fn compute_latency(&self, bits: f64) -> f64 {
        bits * self.s_per_bit
    }
}

/// Energy to move `bits` over a link costing `per_bit_cost` joules per bit.
pub fn tx_energy(bits: f64, per_bit_cost: f64) -> f64 {
    bits * per_bit_cost
}

/// Energy to process `bits` on the given compute node.
pub fn proc_energy(bits: f64, profile: &ComputeProfile) -> f64 {
    bits * profile.j_per_bit * profile.virtualization_overhead
}

/// Per-step decomposition of sensing energy for one task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcBreakdown {
    pub rf_frontend: f64,
    pub data_transfer: f64,
    pub data_process: f64,
    pub p_tx: f64,
    pub p_p: f64,
    pub total: f64,
}

impl EcBreakdown {
    fn from_categories(rf_frontend: f64, data_transfer: f64, data_process: f64) -> Self {
        let p_tx = rf_frontend + data_transfer;
        let p_p = data_process;
        Self {
            rf_frontend,
            data_transfer,
            data_process,
            p_tx,
            p_p,
            total: p_tx + p_p,
        }
    }

    pub fn category(&self, c: EnergyCategory) -> f64 {
        match c {
            EnergyCategory::RfFrontend => self.rf_frontend,
            EnergyCategory::DataTransfer => self.data_transfer,
            EnergyCategory::DataProcess => self.data_process,
        }
    }
}

/// Append-only sequence of energy records.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    records: Vec<EnergyRecord>,
    by_task_step: HashMap<(String, u64), Vec<usize>>,
    last_step: HashMap<(String, String), u64>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, record: EnergyRecord) -> Result<(), EnergyError> {
        record.validate()?;
        let key = (record.node.clone(), record.task.clone());
        if let Some(&last) = self.last_step.get(&key) {
            if record.step < last {
                return Err(EnergyError::StepRegression {
                    node: record.node,
                    task: record.task,
                    step: record.step,
                    last,
                });
            }
        }
        self.last_step.insert(key, record.step);
        self.by_task_step
            .entry((record.task.clone(), record.step))
            .or_default()
            .push(self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EnergyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sum of all recorded joules, in insertion order.
    pub fn total(&self) -> f64 {
        self.records.iter().map(|r| r.joules).sum()
    }

    /// Transmission/processing decomposition for `task` at step `n`.
    pub fn ec_sensing(&self, task: &str, n: u64) -> EcBreakdown {
        let mut cats = [0.0f64; 3];
        if let Some(idx) = self.by_task_step.get(&(task.to_owned(), n)) {
            for &i in idx {
                let r = &self.records[i];
                cats[r.category as usize] += r.joules;
            }
        }
        EcBreakdown::from_categories(cats[0], cats[1], cats[2])
    }

    /// Aggregate over a step window: per-step breakdowns summed in step order.
    pub fn ec_sensing_window(&self, task: &str, window: Range<u64>) -> EcBreakdown {
        let mut cats = [0.0f64; 3];
        for n in window {
            let b = self.ec_sensing(task, n);
            cats[0] += b.rf_frontend;
            cats[1] += b.data_transfer;
            cats[2] += b.data_process;
        }
        EcBreakdown::from_categories(cats[0], cats[1], cats[2])
    }

    /// Distinct task ids in first-seen order.
    pub fn tasks(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for r in &self.records {
            if !seen.contains(&r.task) {
                seen.push(r.task.clone());
            }
        }
        seen
    }
}

pub const CSV_HEADER: &str = "step,node,task,category,joules";

/// One CSV line (without newline). Joules use Rust's shortest round-trip formatting.
pub fn csv_line(r: &EnergyRecord) -> String {
    format!("{},{},{},{},{}", r.step, r.node, r.task, r.category, r.joules)
}

pub fn write_csv<W: Write>(mut w: W, records: &[EnergyRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", csv_line(r))?;
    }
    Ok(())
}

pub fn parse_csv_line(line: &str, lineno: usize) -> Result<EnergyRecord, EnergyError> {
    let err = |message: String| EnergyError::Csv { line: lineno, message };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 fields, found {}", fields.len())));
    }
    let step = fields[0].parse::<u64>().map_err(|e| err(format!("step: {e}")))?;
    let category = fields[3].parse::<EnergyCategory>().map_err(err)?;
    let joules = fields[4].parse::<f64>().map_err(|e| err(format!("joules: {e}")))?;
    Ok(EnergyRecord::new(step, fields[1], fields[2], category, joules))
}

/// Reads a ledger CSV (header required) back into records.
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<EnergyRecord>, EnergyError> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == CSV_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(EnergyError::Csv {
                line: 1,
                message: format!("bad header `{h}`"),
            })
        }
        Some((_, Err(e))) => {
            return Err(EnergyError::Csv {
                line: 1,
                message: e.to_string(),
            })
        }
        None => {
            return Err(EnergyError::Csv {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    for (i, line) in lines {
        let line = line.map_err(|e| EnergyError::Csv {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        out.push(parse_csv_line(&line, i + 1)?);
    }
    Ok(out)
}
