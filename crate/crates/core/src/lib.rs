//! Energy-aware sensing coordination in a simulated mobile network.
//!
//! The crate models a road scene observed by base-station sensors (video, RF,
//! LiDAR), a service-based control plane with coordination (SCF), analytics
//! (SAF) and energy (SECF) functions, and an energy-efficiency KPI that
//! rates sensing output per joule.
//!
//! ```no_run
//! use eesim_core::{run, RunConfig, Scenario};
//!
//! let scenario = Scenario::bundled();
//! let out = run(&scenario, &RunConfig::for_scenario(&scenario)).unwrap();
//! println!("{} J, mean EE {:?}", out.summary.total_ec, out.summary.mean_ee);
//! ```

pub mod bus;
pub mod energy;
pub mod geometry;
pub mod metrics;
pub mod rng;
pub mod saf;
pub mod scenario;
pub mod scf;
pub mod secf;
pub mod sensors;
pub mod sim;

pub use bus::{Bus, BusError, EePolicy, NfDescriptor, NfKind, NfMessage, PolicyMode, RegionGate};
pub use energy::{EcBreakdown, EnergyCategory, EnergyLedger, EnergyRecord};
pub use geometry::{Aabb, Vec3};
pub use metrics::{
    check_requirements, detection_stats, ee_kpi, Accuracy, DetectionCounts, DetectionStats, EeReport, Environment,
    ObservedErrors, SensingRequirements,
};
pub use saf::{fuse, SensingResult};
pub use scenario::{load_scenario, Scenario, ScenarioError, World};
pub use scf::{plan, Activation, Coordinator, Location, PlanningConfig, SensingPlan};
pub use secf::{EnergyAssessment, SecfStore};
pub use sensors::{SensingMode, SensorSource, SourceKind};
pub use sim::{compare, export, run, ExportFormat, RunConfig, RunError, RunOutput, Summary};
