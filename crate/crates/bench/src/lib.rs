//! Fixtures shared by the planning benchmarks.

use eesim_core::scenario::VehicleTruth;
use eesim_core::scf::{PlanningConfig, SensingTask, SourceSite};
use eesim_core::sensors::{SensingMode, SensingObservation, Target};
use eesim_core::sim::source_sites;
use eesim_core::{Scenario, Vec3};

/// Planning inputs taken from the bundled scenario after `steps` steps.
pub struct PlanningFixture {
    pub scenario: Scenario,
    pub sites: Vec<SourceSite>,
    pub targets: Vec<VehicleTruth>,
    pub config: PlanningConfig,
}

impl PlanningFixture {
    pub fn bundled_at(steps: u64) -> Self {
        let scenario = Scenario::bundled();
        let mut world = scenario.world.clone();
        for _ in 0..steps {
            world.step();
        }
        let sites = source_sites(&scenario, &world).expect("bundled sites");
        let task = SensingTask {
            id: scenario.task.id.clone(),
            regions: scenario.task.regions.clone(),
            requirements: scenario.task.requirements,
            policy: scenario.policy.clone(),
        };
        let targets = task.targets(&scenario.policy, &world.ground_truth().vehicles);
        Self {
            config: scenario.planning,
            scenario,
            sites,
            targets,
        }
    }
}

/// `k` observations of one vehicle with spread deviations.
pub fn observations(k: usize) -> Vec<SensingObservation> {
    (0..k)
        .map(|i| {
            let f = i as f64;
            SensingObservation {
                step: 0,
                source: format!("s{i:02}"),
                mode: SensingMode::Implicit,
                target: Target::Vehicle("v01".into()),
                est_position: Vec3::new(100.0 + 0.1 * f, 0.05 * f, 0.0),
                est_velocity: Vec3::new(12.0 + 0.01 * f, 0.0, 0.0),
                a_pos: Some(1.0),
                a_vel: Some(1.0),
                pos_sigma: 0.1 + 0.05 * f,
                vel_sigma: 0.01 + 0.002 * f,
                data_volume: 1e6,
                acquisition_latency: 0.01,
            }
        })
        .collect()
}
