//! Statistical models of video, RF and LiDAR sensing sources.
//!
//! A source observes every vehicle inside its coverage box and range. Each
//! observation misses with a fixed probability; otherwise the estimate is the
//! true state plus zero-mean Gaussian error along the vehicle's direction of
//! travel, with standard deviation
//!
//! ```text
//! σ_eff = σ_base · (1 + k · (d / max_range)²) · weather · mode
//! ```
//!
//! Estimates are map-matched to the road, so the error is one-dimensional
//! and `|est − truth| = |N(0, σ_eff)|`. This keeps the expected accuracy
//! analytic (see [`expected_accuracy`]) for the coordinator's predictions.

use crate::geometry::{Aabb, Vec3};
use crate::metrics::accuracy_fraction;
use crate::scenario::{GroundTruthState, Weather};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("mode {mode} is not supported by {kind} source `{source_id}`")]
    UnsupportedMode {
        source_id: String,
        kind: SourceKind,
        mode: SensingMode,
    },
    #[error("invalid source `{0}`: {1}")]
    InvalidSource(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Video,
    Rf,
    Lidar,
}

impl SourceKind {
    /// Raw stream rate used when a source does not configure one (bits/s).
    pub fn default_data_rate(self) -> f64 {
        match self {
            SourceKind::Lidar => 2e9,
            SourceKind::Video => 1e7,
            SourceKind::Rf => 1e6,
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Video => "video",
            SourceKind::Rf => "rf",
            SourceKind::Lidar => "lidar",
        })
    }
}

/// Sensing geometry. Non-RF sources only have the implicit mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    Implicit,
    Mono,
    Bi,
    Multi,
}

impl SensingMode {
    pub const RF: [SensingMode; 3] = [SensingMode::Mono, SensingMode::Bi, SensingMode::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            SensingMode::Implicit => "implicit",
            SensingMode::Mono => "mono",
            SensingMode::Bi => "bi",
            SensingMode::Multi => "multi",
        }
    }
}

impl fmt::Display for SensingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "implicit" => Ok(SensingMode::Implicit),
            "mono" => Ok(SensingMode::Mono),
            "bi" => Ok(SensingMode::Bi),
            "multi" => Ok(SensingMode::Multi),
            other => Err(format!("unknown sensing mode `{other}`")),
        }
    }
}

/// Noise and energy multipliers for one RF mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCharacteristics {
    pub noise: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTable {
    pub mono: ModeCharacteristics,
    pub bi: ModeCharacteristics,
    pub multi: ModeCharacteristics,
}

impl Default for ModeTable {
    fn default() -> Self {
        Self {
            mono: ModeCharacteristics { noise: 1.0, cost: 1.0 },
            bi: ModeCharacteristics { noise: 0.7, cost: 1.6 },
            multi: ModeCharacteristics { noise: 0.5, cost: 2.5 },
        }
    }
}

impl ModeTable {
    fn get(&self, mode: SensingMode) -> Option<ModeCharacteristics> {
        match mode {
            SensingMode::Mono => Some(self.mono),
            SensingMode::Bi => Some(self.bi),
            SensingMode::Multi => Some(self.multi),
            SensingMode::Implicit => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coverage {
    pub region: Aabb,
    pub max_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub position_sigma: f64,
    pub velocity_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degradation {
    /// Noise multiplier under adverse weather.
    #[serde(default = "unit")]
    pub adverse_weather: f64,
    /// Quadratic range falloff coefficient `k`.
    #[serde(default)]
    pub range_falloff: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self {
            adverse_weather: 1.0,
            range_falloff: 0.0,
        }
    }
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionModel {
    #[serde(default)]
    pub miss_probability: f64,
    /// Probability of one spurious detection per sensing step.
    #[serde(default)]
    pub false_alarm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSource {
    pub id: String,
    pub kind: SourceKind,
    /// Base-station or vehicle id.
    pub host: String,
    pub coverage: Coverage,
    pub modes: Vec<SensingMode>,
    pub noise: NoiseModel,
    pub degradation: Degradation,
    pub detection: DetectionModel,
    /// Raw stream rate (bits/s).
    pub data_rate: f64,
    /// Front-end energy per acquired bit (J/bit).
    pub tx_cost: f64,
    /// On-sensor processing energy per bit (J/bit).
    pub proc_cost: f64,
    /// Time to acquire one sensing frame (s).
    pub acquisition_latency: f64,
    pub mode_table: ModeTable,
}

impl SensorSource {
    pub fn validate(&self) -> Result<(), SensorError> {
        let bad = |m: String| Err(SensorError::InvalidSource(self.id.clone(), m));
        let nonneg = [
            ("position_sigma", self.noise.position_sigma),
            ("velocity_sigma", self.noise.velocity_sigma),
            ("data_rate", self.data_rate),
            ("tx_cost", self.tx_cost),
            ("proc_cost", self.proc_cost),
            ("acquisition_latency", self.acquisition_latency),
            ("range_falloff", self.degradation.range_falloff),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.degradation.adverse_weather.is_finite() && self.degradation.adverse_weather > 0.0) {
            return bad("adverse_weather multiplier must be > 0".into());
        }
        for (name, p) in [
            ("miss_probability", self.detection.miss_probability),
            ("false_alarm_rate", self.detection.false_alarm_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !self.coverage.region.is_well_formed() {
            return bad("coverage region is not a well-formed box".into());
        }
        if !(self.coverage.max_range.is_finite() && self.coverage.max_range > 0.0) {
            return bad("max_range must be > 0".into());
        }
        match self.kind {
            SourceKind::Rf => {
                if self.modes.is_empty() {
                    return bad("rf sources need at least one mode".into());
                }
                if self.modes.contains(&SensingMode::Implicit) {
                    return bad("rf sources cannot use the implicit mode".into());
                }
                let mut sorted = self.modes.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != self.modes.len() {
                    return bad("duplicate modes".into());
                }
            }
            _ => {
                if !self.modes.is_empty() {
                    return bad(format!("{} sources take no mode list", self.kind));
                }
            }
        }
        for m in SensingMode::RF {
            let c = self.mode_table.get(m).expect("rf mode");
            if !(c.noise > 0.0 && c.noise.is_finite() && c.cost >= 0.0 && c.cost.is_finite()) {
                return bad(format!("mode table entry for {m} must be positive"));
            }
        }
        Ok(())
    }

    /// Modes the source can be activated in.
    pub fn available_modes(&self) -> Vec<SensingMode> {
        match self.kind {
            SourceKind::Rf => self.modes.clone(),
            _ => vec![SensingMode::Implicit],
        }
    }

    /// Mode with the lowest noise multiplier.
    pub fn most_accurate_mode(&self) -> SensingMode {
        self.available_modes()
            .into_iter()
            .min_by(|a, b| {
                let na = self.noise_multiplier(*a).unwrap_or(f64::INFINITY);
                let nb = self.noise_multiplier(*b).unwrap_or(f64::INFINITY);
                na.total_cmp(&nb)
            })
            .unwrap_or(SensingMode::Implicit)
    }

    pub fn check_mode(&self, mode: SensingMode) -> Result<(), SensorError> {
        let ok = match self.kind {
            SourceKind::Rf => mode != SensingMode::Implicit && self.modes.contains(&mode),
            _ => mode == SensingMode::Implicit,
        };
        if ok {
            Ok(())
        } else {
            Err(SensorError::UnsupportedMode {
                source_id: self.id.clone(),
                kind: self.kind,
                mode,
            })
        }
    }

    pub fn noise_multiplier(&self, mode: SensingMode) -> Result<f64, SensorError> {
        self.check_mode(mode)?;
        mode_multiplier(self.kind, mode, &self.mode_table).map_err(|_| SensorError::UnsupportedMode {
            source_id: self.id.clone(),
            kind: self.kind,
            mode,
        })
    }

    /// Multiplier applied to front-end energy in the given mode.
    pub fn cost_multiplier(&self, mode: SensingMode) -> Result<f64, SensorError> {
        self.check_mode(mode)?;
        Ok(self.mode_table.get(mode).map_or(1.0, |c| c.cost))
    }

    pub fn covers(&self, source_position: Vec3, target: Vec3) -> bool {
        self.coverage.region.contains(target) && source_position.distance(target) <= self.coverage.max_range
    }

    fn range_factor(&self, distance: f64) -> f64 {
        let r = distance / self.coverage.max_range;
        1.0 + self.degradation.range_falloff * r * r
    }

    /// Effective (position, velocity) noise standard deviations at `distance`.
    pub fn effective_sigma(
        &self,
        mode: SensingMode,
        distance: f64,
        weather: Weather,
    ) -> Result<(f64, f64), SensorError> {
        let weather_factor = match weather {
            Weather::Adverse => self.degradation.adverse_weather,
            Weather::Clear => 1.0,
        };
        let f = self.range_factor(distance) * weather_factor * self.noise_multiplier(mode)?;
        Ok((self.noise.position_sigma * f, self.noise.velocity_sigma * f))
    }

    /// Bits produced by the raw stream over `duration_s`.
    pub fn data_volume(&self, duration_s: f64) -> f64 {
        data_volume(self.data_rate, duration_s)
    }
}

/// Noise multiplier of a mode. RF modes read the table; other kinds only
/// accept the implicit mode and return 1.
pub fn mode_multiplier(kind: SourceKind, mode: SensingMode, table: &ModeTable) -> Result<f64, SensorError> {
    let invalid = || SensorError::UnsupportedMode {
        source_id: String::new(),
        kind,
        mode,
    };
    match (kind, mode) {
        (SourceKind::Rf, SensingMode::Implicit) => Err(invalid()),
        (SourceKind::Rf, m) => Ok(table.get(m).expect("rf mode").noise),
        (_, SensingMode::Implicit) => Ok(1.0),
        _ => Err(invalid()),
    }
}

pub fn data_volume(rate_bps: f64, duration_s: f64) -> f64 {
    rate_bps * duration_s
}

/// What an observation refers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Vehicle(String),
    FalseAlarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingObservation {
    pub step: u64,
    pub source: String,
    pub mode: SensingMode,
    pub target: Target,
    pub est_position: Vec3,
    pub est_velocity: Vec3,
    /// Absent for false alarms.
    pub a_pos: Option<f64>,
    pub a_vel: Option<f64>,
    pub pos_sigma: f64,
    pub vel_sigma: f64,
    pub data_volume: f64,
    pub acquisition_latency: f64,
}

impl SensingObservation {
    pub fn vehicle(&self) -> Option<&str> {
        match &self.target {
            Target::Vehicle(id) => Some(id),
            Target::FalseAlarm => None,
        }
    }
}

/// Inputs shared by every source at one sensing step.
#[derive(Debug, Clone, Copy)]
pub struct SensingContext {
    pub source_position: Vec3,
    pub step_duration: f64,
    pub weather: Weather,
    /// Bounds that normalize accuracy fractions.
    pub pos_bound: f64,
    pub vel_bound: f64,
}

/// Observations produced by one activation of `source` against `truth`.
///
/// Per covered vehicle (in id order) the stream yields a miss draw followed
/// by two standard normals; the false-alarm draw comes last.
pub fn sense<R: Rng + ?Sized>(
    source: &SensorSource,
    mode: SensingMode,
    ctx: &SensingContext,
    truth: &GroundTruthState,
    rng: &mut R,
) -> Result<Vec<SensingObservation>, SensorError> {
    source.check_mode(mode)?;
    let volume = source.data_volume(ctx.step_duration);
    let mut out = Vec::new();
    for v in &truth.vehicles {
        if !source.covers(ctx.source_position, v.position) {
            continue;
        }
        let d = ctx.source_position.distance(v.position);
        let (sp, sv) = source.effective_sigma(mode, d, ctx.weather)?;
        let u: f64 = rng.random();
        let zp: f64 = StandardNormal.sample(rng);
        let zv: f64 = StandardNormal.sample(rng);
        if u < source.detection.miss_probability {
            continue;
        }
        let est_position = v.position + v.heading * (sp * zp);
        let est_velocity = v.velocity + v.heading * (sv * zv);
        out.push(SensingObservation {
            step: truth.step,
            source: source.id.clone(),
            mode,
            target: Target::Vehicle(v.id.clone()),
            a_pos: Some(accuracy_fraction((est_position - v.position).norm(), ctx.pos_bound)),
            a_vel: Some(accuracy_fraction((est_velocity - v.velocity).norm(), ctx.vel_bound)),
            est_position,
            est_velocity,
            pos_sigma: sp,
            vel_sigma: sv,
            data_volume: volume,
            acquisition_latency: source.acquisition_latency,
        });
    }
    let u: f64 = rng.random();
    if u < source.detection.false_alarm_rate {
        let b = source.coverage.region;
        let e = b.extent();
        let p = Vec3::new(
            b.min.x + e.x * rng.random::<f64>(),
            b.min.y + e.y * rng.random::<f64>(),
            b.min.z + e.z * rng.random::<f64>(),
        );
        let (sp, sv) = source.effective_sigma(mode, ctx.source_position.distance(p), ctx.weather)?;
        out.push(SensingObservation {
            step: truth.step,
            source: source.id.clone(),
            mode,
            target: Target::FalseAlarm,
            est_position: p,
            est_velocity: Vec3::ZERO,
            a_pos: None,
            a_vel: None,
            pos_sigma: sp,
            vel_sigma: sv,
            data_volume: volume,
            acquisition_latency: source.acquisition_latency,
        });
    }
    Ok(out)
}

/// `E[max(0, 1 − |X| / (2·bound))]` for `X ~ N(0, σ²)`.
///
/// With `c = 2·bound` and `t = c / (σ√2)`:
/// `erf(t) − (2σ / (c√(2π))) · (1 − exp(−t²))`.
pub fn expected_accuracy(sigma: f64, bound: f64) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    let c = 2.0 * bound;
    let t = c / (sigma * std::f64::consts::SQRT_2);
    let folded = 2.0 * sigma / (c * (2.0 * std::f64::consts::PI).sqrt());
    (libm::erf(t) - folded * (1.0 - (-t * t).exp())).clamp(0.0, 1.0)
}

/// `P(|X| <= bound)` for `X ~ N(0, σ²)`.
pub fn prob_within(sigma: f64, bound: f64) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    libm::erf(bound / (sigma * std::f64::consts::SQRT_2))
}


#[cfg(test)]
mod tests {
    use super::test_support::source;
    use super::*;
    use crate::rng;
    use crate::scenario::VehicleTruth;
    use proptest::prelude::*;

    fn truth_one(pos: Vec3) -> GroundTruthState {
        GroundTruthState {
            step: 0,
            vehicles: vec![VehicleTruth {
                id: "v1".into(),
                position: pos,
                velocity: Vec3::new(10.0, 0.0, 0.0),
                heading: Vec3::new(1.0, 0.0, 0.0),
            }],
        }
    }

    fn ctx() -> SensingContext {
        SensingContext {
            source_position: Vec3::ZERO,
            step_duration: 0.05,
            weather: Weather::Clear,
            pos_bound: 1.3,
            vel_bound: 0.12,
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut s = source(SourceKind::Lidar);
        s.noise = NoiseModel {
            position_sigma: 0.0,
            velocity_sigma: 0.0,
        };
        let t = truth_one(Vec3::new(10.0, 5.0, 0.0));
        let obs = sense(&s, SensingMode::Implicit, &ctx(), &t, &mut rng::stream(1, "x", 0)).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].est_position, t.vehicles[0].position);
        assert_eq!(obs[0].est_velocity, t.vehicles[0].velocity);
        assert_eq!((obs[0].a_pos, obs[0].a_vel), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn out_of_range_vehicle_not_observed() {
        let mut s = source(SourceKind::Video);
        s.coverage.max_range = 5.0;
        let t = truth_one(Vec3::new(10.0, 0.0, 0.0));
        let obs = sense(&s, SensingMode::Implicit, &ctx(), &t, &mut rng::stream(1, "x", 0)).unwrap();
        assert!(obs.is_empty());
    }

    #[test]
    fn unsupported_modes_rejected() {
        let mut rf = source(SourceKind::Rf);
        rf.modes = vec![SensingMode::Mono];
        let t = truth_one(Vec3::ZERO);
        let mut r = rng::stream(1, "x", 0);
        assert!(matches!(
            sense(&rf, SensingMode::Multi, &ctx(), &t, &mut r),
            Err(SensorError::UnsupportedMode { .. })
        ));
        assert!(sense(&rf, SensingMode::Implicit, &ctx(), &t, &mut r).is_err());
        let v = source(SourceKind::Video);
        assert!(sense(&v, SensingMode::Mono, &ctx(), &t, &mut r).is_err());
    }

    #[test]
    fn mode_multiplier_table() {
        let t = ModeTable::default();
        assert_eq!(mode_multiplier(SourceKind::Rf, SensingMode::Mono, &t).unwrap(), 1.0);
        assert_eq!(
            mode_multiplier(SourceKind::Video, SensingMode::Implicit, &t).unwrap(),
            1.0
        );
        assert_eq!(
            mode_multiplier(SourceKind::Lidar, SensingMode::Implicit, &t).unwrap(),
            1.0
        );
        let multi = mode_multiplier(SourceKind::Rf, SensingMode::Multi, &t).unwrap();
        let bi = mode_multiplier(SourceKind::Rf, SensingMode::Bi, &t).unwrap();
        let mono = mode_multiplier(SourceKind::Rf, SensingMode::Mono, &t).unwrap();
        assert!(multi < bi && bi < mono);
        assert!(mode_multiplier(SourceKind::Rf, SensingMode::Implicit, &t).is_err());
        assert!(mode_multiplier(SourceKind::Lidar, SensingMode::Bi, &t).is_err());
    }

    #[test]
    fn data_volume_arithmetic() {
        assert_eq!(data_volume(2e9, 0.05), 1e8);
        assert_eq!(data_volume(2e9, 0.0), 0.0);
        assert_eq!(data_volume(1e6, 1.0), 1e6);
    }

    #[test]
    fn default_rates() {
        assert_eq!(SourceKind::Lidar.default_data_rate(), 2e9);
        assert_eq!(SourceKind::Video.default_data_rate(), 1e7);
        assert_eq!(SourceKind::Rf.default_data_rate(), 1e6);
    }

    #[test]
    fn weather_and_range_degrade_lidar() {
        let mut s = source(SourceKind::Lidar);
        s.degradation = Degradation {
            adverse_weather: 2.0,
            range_falloff: 1.0,
        };
        let (clear, _) = s.effective_sigma(SensingMode::Implicit, 0.0, Weather::Clear).unwrap();
        let (bad, _) = s.effective_sigma(SensingMode::Implicit, 0.0, Weather::Adverse).unwrap();
        let (far, _) = s.effective_sigma(SensingMode::Implicit, 200.0, Weather::Clear).unwrap();
        assert_eq!(bad, 2.0 * clear);
        assert_eq!(far, 2.0 * clear);
    }

    #[test]
    fn false_alarm_lands_in_coverage_without_accuracy() {
        let mut s = source(SourceKind::Rf);
        s.detection.false_alarm_rate = 1.0;
        let t = GroundTruthState {
            step: 4,
            vehicles: vec![],
        };
        let obs = sense(&s, SensingMode::Mono, &ctx(), &t, &mut rng::stream(3, "fa", 4)).unwrap();
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].target, Target::FalseAlarm);
        assert!(obs[0].a_pos.is_none() && obs[0].a_vel.is_none());
        assert!(s.coverage.region.contains(obs[0].est_position));
        assert_eq!(obs[0].step, 4);
    }

    #[test]
    fn certain_miss_yields_nothing() {
        let mut s = source(SourceKind::Video);
        s.detection.miss_probability = 1.0;
        let obs = sense(
            &s,
            SensingMode::Implicit,
            &ctx(),
            &truth_one(Vec3::ZERO),
            &mut rng::stream(3, "m", 0),
        )
        .unwrap();
        assert!(obs.is_empty());
    }

    #[test]
    fn expected_accuracy_edges() {
        assert_eq!(expected_accuracy(0.0, 1.3), 1.0);
        assert!(expected_accuracy(1e9, 1.3) < 1e-6);
        assert_eq!(prob_within(0.0, 1.0), 1.0);
        assert!((prob_within(1.0, 1.959963984540054) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_parameters() {
        let mut s = source(SourceKind::Video);
        assert!(s.validate().is_ok());
        s.modes = vec![SensingMode::Mono];
        assert!(s.validate().is_err());
        let mut s = source(SourceKind::Rf);
        s.modes.clear();
        assert!(s.validate().is_err());
        let mut s = source(SourceKind::Rf);
        s.detection.miss_probability = 1.1;
        assert!(s.validate().is_err());
        let mut s = source(SourceKind::Lidar);
        s.noise.position_sigma = -0.1;
        assert!(s.validate().is_err());
    }

    /// Monte-Carlo mean of `max(0, 1 − |N(0, σ)| / (2·bound))`, drawn with a
    /// Box–Muller transform on a plain uniform stream.
    fn monte_carlo_accuracy(sigma: f64, bound: f64, draws: usize, seed: u64) -> f64 {
        use rand::{Rng as _, SeedableRng};
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..draws {
            let u1: f64 = 1.0 - r.random::<f64>();
            let u2: f64 = r.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            acc += (1.0 - (sigma * z).abs() / (2.0 * bound)).max(0.0);
        }
        acc / draws as f64
    }

    #[test]
    fn closed_form_matches_monte_carlo_reference_case() {
        // σ = 0.65 m against the 1.3 m outdoor bound.
        let mc = monte_carlo_accuracy(0.65, 1.3, 100_000, 2024);
        // Frozen from adaptive quadrature of the same integrand (abs err 1e-11).
        const QUADRATURE: f64 = 0.800_532_432_428_5;
        assert!((mc - QUADRATURE).abs() < 0.01, "oracle drifted: {mc}");
        assert!((expected_accuracy(0.65, 1.3) - mc).abs() < 0.01);
        assert!((expected_accuracy(0.65, 1.3) - QUADRATURE).abs() < 1e-12);
    }

    #[test]
    fn sensed_accuracy_matches_closed_form() {
        let s = source(SourceKind::Rf);
        let t = truth_one(Vec3::new(3.0, 4.0, 0.0));
        let mut sum = 0.0;
        let n = 100_000;
        let mut r = rng::stream(99, "mc", 0);
        for _ in 0..n {
            let obs = sense(&s, SensingMode::Mono, &ctx(), &t, &mut r).unwrap();
            sum += obs[0].a_pos.unwrap();
        }
        assert!((sum / n as f64 - expected_accuracy(0.65, 1.3)).abs() < 0.01);
    }

    #[test]
    fn mode_ordering_in_expectation() {
        let s = source(SourceKind::Rf);
        let t = truth_one(Vec3::new(3.0, 4.0, 0.0));
        let mean = |mode| {
            let mut r = rng::stream(5, "order", 0);
            let n = 20_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += sense(&s, mode, &ctx(), &t, &mut r).unwrap()[0].a_pos.unwrap();
            }
            sum / n as f64
        };
        let (mono, bi, multi) = (mean(SensingMode::Mono), mean(SensingMode::Bi), mean(SensingMode::Multi));
        assert!(multi >= bi && bi >= mono, "{multi} {bi} {mono}");
    }

    proptest! {
        #[test]
        fn seeded_determinism(seed in any::<u64>(), x in -50.0f64..50.0) {
            let mut s = source(SourceKind::Rf);
            s.detection = DetectionModel { miss_probability: 0.2, false_alarm_rate: 0.3 };
            let t = truth_one(Vec3::new(x, 1.0, 0.0));
            let a = sense(&s, SensingMode::Bi, &ctx(), &t, &mut rng::stream(seed, "d", 1)).unwrap();
            let b = sense(&s, SensingMode::Bi, &ctx(), &t, &mut rng::stream(seed, "d", 1)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn accuracy_monotone_in_sigma(seed in any::<u64>(), s1 in 0.0f64..3.0, s2 in 0.0f64..3.0) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let t = truth_one(Vec3::new(1.0, 1.0, 0.0));
            let run = |sigma: f64| {
                let mut s = source(SourceKind::Lidar);
                s.noise = NoiseModel { position_sigma: sigma, velocity_sigma: sigma / 10.0 };
                let o = sense(&s, SensingMode::Implicit, &ctx(), &t, &mut rng::stream(seed, "m", 0)).unwrap();
                (o[0].a_pos.unwrap(), o[0].a_vel.unwrap())
            };
            let (pl, vl) = run(lo);
            let (ph, vh) = run(hi);
            prop_assert!(ph <= pl + 1e-12 && vh <= vl + 1e-12);
        }

        #[test]
        fn accuracy_fraction_extremes(err in 0.0f64..10.0, bound in 0.01f64..5.0) {
            let a = accuracy_fraction(err, bound);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a == 1.0, err == 0.0);
            if err >= 2.0 * bound { prop_assert_eq!(a, 0.0); }
        }
    }
}
