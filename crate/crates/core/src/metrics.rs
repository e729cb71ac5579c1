//! Energy-efficiency KPI, requirement checks and detection statistics.
//!
//! The KPI is useful sensing output per joule:
//!
//! ```text
//! EE(n) = Σ_i (a_pos_i(n) + a_vel_i(n)) / EC(n)
//! ```
//!
//! where the sum runs over the vehicles in the sensing region and `EC(n)` is
//! the task's total sensing energy at step `n`, shared by every term.

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("EE KPI undefined: energy consumption must be positive, got {0} J")]
    UndefinedKpi(f64),
    #[error("accuracy fraction {0} outside [0, 1]")]
    AccuracyRange(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),
    #[error("invalid requirements: {0}")]
    InvalidRequirements(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    #[default]
    Outdoor,
    Indoor,
}

/// Bounds a sensing service must meet, with detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingRequirements {
    pub environment: Environment,
    /// Horizontal position error bound (m).
    pub pos_bound_h: f64,
    /// Vertical position error bound (m).
    pub pos_bound_v: f64,
    /// Horizontal velocity error bound (m/s).
    pub vel_bound_h: f64,
    pub range_resolution: f64,
    pub vel_resolution: f64,
    /// Maximum end-to-end sensing service latency (s).
    pub max_latency: f64,
    /// Steps between consecutive sensing results.
    pub refresh_interval: u64,
    pub confidence_min: f64,
    pub missed_max: f64,
    pub false_alarm_max: f64,
}

impl SensingRequirements {
    /// Collision-avoidance defaults for the given sensing service area.
    pub fn v2x(environment: Environment) -> Self {
        let (pos_bound_h, max_latency) = match environment {
            Environment::Outdoor => (1.3, 0.050),
            Environment::Indoor => (2.6, 0.020),
        };
        Self {
            environment,
            pos_bound_h,
            pos_bound_v: 0.5,
            vel_bound_h: 0.12,
            range_resolution: 0.4,
            vel_resolution: 0.6,
            max_latency,
            refresh_interval: 1,
            confidence_min: 0.95,
            missed_max: 0.10,
            false_alarm_max: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let positive = [
            ("pos_bound_h", self.pos_bound_h),
            ("pos_bound_v", self.pos_bound_v),
            ("vel_bound_h", self.vel_bound_h),
            ("range_resolution", self.range_resolution),
            ("vel_resolution", self.vel_resolution),
            ("max_latency", self.max_latency),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MetricsError::InvalidRequirements(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("confidence_min", self.confidence_min),
            ("missed_max", self.missed_max),
            ("false_alarm_max", self.false_alarm_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::InvalidRequirements(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        if self.refresh_interval == 0 {
            return Err(MetricsError::InvalidRequirements(
                "refresh_interval must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-vehicle accuracy pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub a_pos: f64,
    pub a_vel: f64,
}

impl Accuracy {
    pub fn new(a_pos: f64, a_vel: f64) -> Self {
        Self { a_pos, a_vel }
    }

    pub fn sum(&self) -> f64 {
        self.a_pos + self.a_vel
    }
}

/// Linear accuracy fraction: 1 at zero error, 0 at twice the bound and beyond.
pub fn accuracy_fraction(error: f64, bound: f64) -> f64 {
    (1.0 - error / (2.0 * bound)).max(0.0)
}

fn check_accuracies(acc: &[Accuracy]) -> Result<(), MetricsError> {
    for a in acc {
        for v in [a.a_pos, a.a_vel] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MetricsError::AccuracyRange(v));
            }
        }
    }
    Ok(())
}

/// EE KPI with the task's total energy as the shared denominator.
pub fn ee_kpi(acc: &[Accuracy], ec_total: f64) -> Result<f64, MetricsError> {
    if !(ec_total > 0.0 && ec_total.is_finite()) {
        return Err(MetricsError::UndefinedKpi(ec_total));
    }
    check_accuracies(acc)?;
    let useful: f64 = acc.iter().map(Accuracy::sum).sum();
    Ok(useful / ec_total)
}

/// EE KPI with energy attributed to each vehicle in proportion to the data
/// volume of the observations that produced its result.
pub fn ee_kpi_per_vehicle(acc: &[Accuracy], data_volumes: &[f64], ec_total: f64) -> Result<f64, MetricsError> {
    if !(ec_total > 0.0 && ec_total.is_finite()) {
        return Err(MetricsError::UndefinedKpi(ec_total));
    }
    check_accuracies(acc)?;
    assert_eq!(acc.len(), data_volumes.len(), "one data volume per vehicle");
    let volume: f64 = data_volumes.iter().sum();
    if volume <= 0.0 {
        return Err(MetricsError::InsufficientData("no attributed data volume"));
    }
    let mut ee = 0.0;
    for (a, v) in acc.iter().zip(data_volumes) {
        let share = ec_total * v / volume;
        if share > 0.0 {
            ee += a.sum() / share;
        }
    }
    Ok(ee)
}

/// Requirement fields that can be violated by a single sensing result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementField {
    PosH,
    PosV,
    VelH,
    Latency,
    Confidence,
    MissedDetection,
    FalseAlarm,
}

impl fmt::Display for RequirementField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequirementField::PosH => "pos_h",
            RequirementField::PosV => "pos_v",
            RequirementField::VelH => "vel_h",
            RequirementField::Latency => "latency",
            RequirementField::Confidence => "confidence",
            RequirementField::MissedDetection => "missed_detection",
            RequirementField::FalseAlarm => "false_alarm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: RequirementField,
    pub observed: f64,
    pub bound: f64,
}

/// Errors of one result against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservedErrors {
    pub pos_h: f64,
    pub pos_v: f64,
    pub vel_h: f64,
    pub latency: f64,
}

impl ObservedErrors {
    pub fn from_estimates(est_pos: Vec3, true_pos: Vec3, est_vel: Vec3, true_vel: Vec3, latency: f64) -> Self {
        let dp = est_pos - true_pos;
        let dv = est_vel - true_vel;
        Self {
            pos_h: dp.horizontal_norm(),
            pos_v: dp.z.abs(),
            vel_h: dv.horizontal_norm(),
            latency,
        }
    }
}

/// One violation per exceeded bound; bounds are inclusive.
pub fn check_requirements(obs: &ObservedErrors, req: &SensingRequirements) -> Vec<Violation> {
    [
        (RequirementField::PosH, obs.pos_h, req.pos_bound_h),
        (RequirementField::PosV, obs.pos_v, req.pos_bound_v),
        (RequirementField::VelH, obs.vel_h, req.vel_bound_h),
        (RequirementField::Latency, obs.latency, req.max_latency),
    ]
    .into_iter()
    .filter(|(_, observed, bound)| !(observed <= bound))
    .map(|(field, observed, bound)| Violation { field, observed, bound })
    .collect()
}

/// Whether the accuracy bounds (not latency) hold for a result.
pub fn within_accuracy_bounds(obs: &ObservedErrors, req: &SensingRequirements) -> bool {
    obs.pos_h <= req.pos_bound_h && obs.pos_v <= req.pos_bound_v && obs.vel_h <= req.vel_bound_h
}

/// Detection outcome counts for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    /// Vehicles present in the sensing region.
    pub targets: u64,
    /// Targets that produced no result.
    pub misses: u64,
    /// Results reported for real vehicles.
    pub true_detections: u64,
    /// True detections whose estimate met every accuracy bound.
    pub within_bounds: u64,
    /// Reported detections that correspond to no vehicle.
    pub false_alarms: u64,
}

impl std::ops::AddAssign for DetectionCounts {
    fn add_assign(&mut self, o: Self) {
        self.targets += o.targets;
        self.misses += o.misses;
        self.true_detections += o.true_detections;
        self.within_bounds += o.within_bounds;
        self.false_alarms += o.false_alarms;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub confidence: f64,
    pub missed_rate: f64,
    pub false_alarm_rate: f64,
    pub confidence_ok: bool,
    pub missed_ok: bool,
    pub false_alarm_ok: bool,
}

impl DetectionStats {
    pub fn all_ok(&self) -> bool {
        self.confidence_ok && self.missed_ok && self.false_alarm_ok
    }

    pub fn violations(&self, req: &SensingRequirements) -> Vec<Violation> {
        let mut v = Vec::new();
        if !self.confidence_ok {
            v.push(Violation {
                field: RequirementField::Confidence,
                observed: self.confidence,
                bound: req.confidence_min,
            });
        }
        if !self.missed_ok {
            v.push(Violation {
                field: RequirementField::MissedDetection,
                observed: self.missed_rate,
                bound: req.missed_max,
            });
        }
        if !self.false_alarm_ok {
            v.push(Violation {
                field: RequirementField::FalseAlarm,
                observed: self.false_alarm_rate,
                bound: req.false_alarm_max,
            });
        }
        v
    }
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Confidence, missed-detection and false-alarm rates over a window of steps.
///
/// A window whose every step is empty (no targets and no reports) carries no
/// information and is rejected. Rates whose denominator is zero are 0, and
/// confidence with no true detections is 1.
pub fn detection_stats(window: &[DetectionCounts], req: &SensingRequirements) -> Result<DetectionStats, MetricsError> {
    let mut total = DetectionCounts::default();
    for c in window {
        total += *c;
    }
    if total.targets == 0 && total.true_detections == 0 && total.false_alarms == 0 {
        return Err(MetricsError::InsufficientData("empty detection window"));
    }
    let confidence = ratio(total.within_bounds, total.true_detections, 1.0);
    let missed_rate = ratio(total.misses, total.targets, 0.0);
    let false_alarm_rate = ratio(total.false_alarms, total.true_detections + total.false_alarms, 0.0);
    Ok(DetectionStats {
        confidence,
        missed_rate,
        false_alarm_rate,
        confidence_ok: confidence >= req.confidence_min,
        missed_ok: missed_rate <= req.missed_max,
        false_alarm_ok: false_alarm_rate <= req.false_alarm_max,
    })
}

/// KPI and requirement status for one sensing step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeReport {
    pub step: u64,
    /// `None` when the step consumed no energy.
    pub ee_value: Option<f64>,
    pub per_vehicle: Vec<(String, Accuracy)>,
    pub ec_total: f64,
    pub p_tx: f64,
    pub p_p: f64,
    pub violations: Vec<Violation>,
    pub detection: Option<DetectionStats>,
}

pub const EE_CSV_HEADER: &str = "step,ee,ec_total,p_tx,p_p,violations,confidence,missed,false_alarm";

impl EeReport {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            opt(self.ee_value),
            self.ec_total,
            self.p_tx,
            self.p_p,
            self.violations.len(),
            opt(self.detection.map(|d| d.confidence)),
            opt(self.detection.map(|d| d.missed_rate)),
            opt(self.detection.map(|d| d.false_alarm_rate)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outdoor() -> SensingRequirements {
        SensingRequirements::v2x(Environment::Outdoor)
    }

    fn errors(pos_h: f64, pos_v: f64, vel_h: f64, latency: f64) -> ObservedErrors {
        ObservedErrors {
            pos_h,
            pos_v,
            vel_h,
            latency,
        }
    }

    #[test]
    fn ee_direct_substitution() {
        assert_eq!(ee_kpi(&[Accuracy::new(0.5, 0.5)], 1.0).unwrap(), 1.0);
        let two = [Accuracy::new(1.0, 1.0), Accuracy::new(1.0, 1.0)];
        assert_eq!(ee_kpi(&two, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn ee_undefined_without_energy() {
        let a = [Accuracy::new(1.0, 1.0)];
        assert_eq!(ee_kpi(&a, 0.0), Err(MetricsError::UndefinedKpi(0.0)));
        assert!(ee_kpi(&a, -1.0).is_err());
        assert!(ee_kpi(&[Accuracy::new(1.5, 0.0)], 1.0).is_err());
    }

    #[test]
    fn ee_per_vehicle_attribution() {
        // Equal volumes: each vehicle carries half the energy.
        let a = [Accuracy::new(1.0, 1.0), Accuracy::new(0.5, 0.5)];
        let ee = ee_kpi_per_vehicle(&a, &[1.0, 1.0], 2.0).unwrap();
        assert_eq!(ee, 2.0 / 1.0 + 1.0 / 1.0);
    }

    #[test]
    fn requirement_defaults_match_collision_avoidance_table() {
        let o = outdoor();
        assert_eq!(
            (o.pos_bound_h, o.pos_bound_v, o.vel_bound_h, o.max_latency),
            (1.3, 0.5, 0.12, 0.050)
        );
        let i = SensingRequirements::v2x(Environment::Indoor);
        assert_eq!(
            (i.pos_bound_h, i.pos_bound_v, i.vel_bound_h, i.max_latency),
            (2.6, 0.5, 0.12, 0.020)
        );
        assert_eq!((o.range_resolution, o.vel_resolution), (0.4, 0.6));
    }

    #[test]
    fn outdoor_bound_is_inclusive() {
        assert!(check_requirements(&errors(1.3, 0.0, 0.0, 0.0), &outdoor()).is_empty());
    }

    #[test]
    fn outdoor_latency_violation() {
        let v = check_requirements(&errors(0.0, 0.0, 0.0, 0.060), &outdoor());
        assert_eq!(
            v,
            vec![Violation {
                field: RequirementField::Latency,
                observed: 0.060,
                bound: 0.050
            }]
        );
    }

    #[test]
    fn indoor_example_passes() {
        let req = SensingRequirements::v2x(Environment::Indoor);
        assert!(check_requirements(&errors(2.0, 0.4, 0.10, 0.019), &req).is_empty());
    }

    #[test]
    fn nan_errors_are_violations() {
        assert_eq!(
            check_requirements(&errors(f64::NAN, 0.0, 0.0, 0.0), &outdoor()).len(),
            1
        );
    }

    #[test]
    fn observed_errors_split_horizontal_vertical() {
        let e = ObservedErrors::from_estimates(
            Vec3::new(3.0, 4.0, 0.5),
            Vec3::ZERO,
            Vec3::new(0.0, 0.1, 7.0),
            Vec3::ZERO,
            0.01,
        );
        assert_eq!((e.pos_h, e.pos_v, e.vel_h), (5.0, 0.5, 0.1));
    }

    #[test]
    fn detection_perfect_window() {
        let w = [DetectionCounts {
            targets: 100,
            misses: 0,
            true_detections: 100,
            within_bounds: 100,
            false_alarms: 0,
        }];
        let s = detection_stats(&w, &outdoor()).unwrap();
        assert_eq!((s.confidence, s.missed_rate, s.false_alarm_rate), (1.0, 0.0, 0.0));
        assert!(s.all_ok());
    }

    #[test]
    fn detection_missed_threshold() {
        let w = [DetectionCounts {
            targets: 100,
            misses: 11,
            true_detections: 89,
            within_bounds: 89,
            false_alarms: 0,
        }];
        let s = detection_stats(&w, &outdoor()).unwrap();
        assert_eq!(s.missed_rate, 0.11);
        assert!(!s.missed_ok);
        assert_eq!(s.violations(&outdoor())[0].field, RequirementField::MissedDetection);
    }

    #[test]
    fn detection_false_alarm_threshold() {
        let w = [DetectionCounts {
            targets: 197,
            misses: 0,
            true_detections: 197,
            within_bounds: 197,
            false_alarms: 3,
        }];
        let s = detection_stats(&w, &outdoor()).unwrap();
        assert_eq!(s.false_alarm_rate, 0.015);
        assert!(!s.false_alarm_ok);
    }

    #[test]
    fn detection_empty_window() {
        assert!(matches!(
            detection_stats(&[], &outdoor()),
            Err(MetricsError::InsufficientData(_))
        ));
        assert!(detection_stats(&[DetectionCounts::default()], &outdoor()).is_err());
    }

    #[test]
    fn requirements_validation() {
        let mut r = outdoor();
        assert!(r.validate().is_ok());
        r.pos_bound_h = 0.0;
        assert!(r.validate().is_err());
        let mut r = outdoor();
        r.missed_max = 1.5;
        assert!(r.validate().is_err());
        let mut r = outdoor();
        r.refresh_interval = 0;
        assert!(r.validate().is_err());
    }

    fn acc_strategy() -> impl Strategy<Value = Vec<Accuracy>> {
        prop::collection::vec(
            (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(p, v)| Accuracy::new(p, v)),
            0..20,
        )
    }

    proptest! {
        #[test]
        fn ee_scales_inversely_with_energy(acc in acc_strategy(), ec in 1e-6f64..1e6, c in 1e-3f64..1e3) {
            let base = ee_kpi(&acc, ec).unwrap();
            let scaled = ee_kpi(&acc, c * ec).unwrap();
            prop_assert!((scaled - base / c).abs() <= 1e-12 * (base / c).max(1e-300));
        }

        #[test]
        fn ee_monotone(acc in acc_strategy(), ec in 1e-3f64..1e3, i in 0usize..20, bump in 0.0f64..1.0) {
            let base = ee_kpi(&acc, ec).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(ee_kpi(&acc, ec * 1.5).unwrap() <= base);
            if !acc.is_empty() {
                let mut more = acc.clone();
                let k = i % more.len();
                more[k].a_pos = (more[k].a_pos + bump).min(1.0);
                prop_assert!(ee_kpi(&more, ec).unwrap() >= base);
            }
        }

        #[test]
        fn checker_is_threshold_function(ph in 0.0f64..3.0, pv in 0.0f64..1.0, vh in 0.0f64..0.3, l in 0.0f64..0.1) {
            let req = outdoor();
            let e = errors(ph, pv, vh, l);
            let empty = check_requirements(&e, &req).is_empty();
            prop_assert_eq!(empty, ph <= 1.3 && pv <= 0.5 && vh <= 0.12 && l <= 0.050);
        }

        #[test]
        fn rates_are_fractions(t in 0u64..500, m in 0u64..500, fa in 0u64..50, wb in 0u64..500) {
            let misses = m.min(t);
            let det = t - misses;
            let c = DetectionCounts { targets: t, misses, true_detections: det, within_bounds: wb.min(det), false_alarms: fa };
            if let Ok(s) = detection_stats(&[c], &outdoor()) {
                for r in [s.confidence, s.missed_rate, s.false_alarm_rate] {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }
}
