//! End-to-end runs over variants of the bundled scenario.

use eesim_core::scenario::BUNDLED_EMERGENCY;
use eesim_core::scf::SearchMode;
use eesim_core::{run, Coordinator, PolicyMode, RunConfig, RunOutput, Scenario};
use serde_json::{json, Value};

fn variant(steps: u64, patch: impl FnOnce(&mut Value)) -> Scenario {
    let mut doc: Value = serde_json::from_str(BUNDLED_EMERGENCY).unwrap();
    doc["sim"]["steps"] = json!(steps);
    patch(&mut doc);
    Scenario::from_json(&doc.to_string()).unwrap()
}

fn go(s: &Scenario, f: impl FnOnce(&mut RunConfig)) -> RunOutput {
    let mut cfg = RunConfig::for_scenario(s);
    f(&mut cfg);
    run(s, &cfg).unwrap()
}

#[test]
fn refresh_interval_spaces_epochs() {
    let s = variant(30, |d| d["requirements"]["refresh_interval"] = json!(3));
    let out = go(&s, |_| {});
    let plan_steps: Vec<u64> = out.plans.iter().map(|p| p.step).collect();
    assert_eq!(plan_steps, (0..30).step_by(3).collect::<Vec<_>>());
    assert_eq!(out.summary.epochs, 10);
    assert!(out.results.iter().all(|r| r.step % 3 == 0));
    assert!(out.energy.iter().all(|r| r.step % 3 == 0));
}

#[test]
fn metering_drift_triggers_one_recalibration() {
    let exact = go(
        &variant(60, |d| d["sim"]["energy_metering_factor"] = json!(1.0)),
        |_| {},
    );
    assert_eq!(exact.summary.recalibrations, 0);
    assert_eq!(exact.summary.final_cost_scale, 1.0);

    let drift = go(
        &variant(60, |d| d["sim"]["energy_metering_factor"] = json!(1.3)),
        |_| {},
    );
    assert_eq!(drift.summary.recalibrations, 1);
    assert!((drift.summary.final_cost_scale - 1.3).abs() < 1e-9);
    // Recalibration rescales predictions but never changes the chosen plans.
    let lists = |o: &RunOutput| o.plans.iter().map(|p| p.activation_list()).collect::<Vec<_>>();
    assert_eq!(lists(&exact), lists(&drift));
}

#[test]
fn disabled_gate_removes_targets() {
    let s = variant(40, |d| {
        d["policy"]["region_gates"] = json!([{
            "region": {"min": [-5.0, -10.0, -2.0], "max": [340.0, 10.0, 3.0]},
            "enabled": false
        }]);
    });
    let out = go(&s, |_| {});
    for p in &out.plans {
        assert!(
            p.activation_list().iter().all(|a| a.source != "lidar1"),
            "step {}",
            p.step
        );
    }
    let truth = s.world.ground_truth();
    let gated = truth.vehicles.iter().filter(|v| v.position.x <= 340.0).count();
    assert_eq!(out.plans[0].targets.len(), 50 - gated);
}

#[test]
fn energy_first_never_spends_more() {
    let s = variant(150, |_| {});
    let balanced = go(&s, |_| {});
    let energy = go(&s, |c| c.policy = Some(PolicyMode::EnergyFirst));
    let perf = go(&s, |c| c.policy = Some(PolicyMode::PerformanceFirst));
    for o in [&balanced, &energy, &perf] {
        assert_eq!(o.summary.infeasible_plans, 0);
    }
    assert!(energy.summary.total_ec <= balanced.summary.total_ec);
    assert!(energy.summary.total_ec <= perf.summary.total_ec);
    for n in 0..150 {
        let acc = |o: &RunOutput| {
            o.plans[n]
                .predicted
                .iter()
                .map(|v| v.accuracy.a_pos + v.accuracy.a_vel)
                .sum::<f64>()
        };
        assert!(acc(&perf) >= acc(&balanced) - 1e-9, "step {n}");
        assert!(
            energy.plans[n].predicted_ec <= balanced.plans[n].predicted_ec + 1e-12,
            "step {n}"
        );
    }
}

#[test]
fn greedy_and_oracle_coordinators_run() {
    let s = variant(40, |_| {});
    let ee = go(&s, |_| {});
    let greedy = go(&s, |c| c.coordinator = Coordinator::Greedy);
    let oracle = go(&s, |c| c.coordinator = Coordinator::Oracle);
    assert!(greedy.plans.iter().all(|p| p.search == SearchMode::Greedy));
    assert!(oracle.plans.iter().all(|p| p.search == SearchMode::Oracle));
    assert!(greedy.summary.requirements_met);
    let lists = |o: &RunOutput| o.plans.iter().map(|p| p.activation_list()).collect::<Vec<_>>();
    assert_eq!(lists(&ee), lists(&oracle));
}

#[test]
fn per_vehicle_denominator_changes_only_the_kpi() {
    let shared = go(&variant(50, |_| {}), |_| {});
    let per = go(
        &variant(50, |d| d["policy"]["planning"]["ee_denominator"] = json!("per_vehicle")),
        |_| {},
    );
    assert_eq!(shared.summary.total_ec, per.summary.total_ec);
    assert_ne!(shared.summary.mean_ee, per.summary.mean_ee);
    assert!(per.reports.iter().all(|r| r.ee_value.is_some()));
}

#[test]
fn adverse_weather_is_reported_not_fatal() {
    let out = go(&variant(30, |d| d["sim"]["weather"] = json!("adverse")), |_| {});
    assert_eq!(out.plans.len(), 30);
    for p in &out.plans {
        if let Some(inf) = &p.infeasible {
            assert!(inf.unsatisfied > 0);
        }
    }
}

#[test]
fn results_only_for_planned_targets() {
    let out = go(&variant(25, |_| {}), |_| {});
    for r in &out.results {
        let plan = &out.plans[r.step as usize];
        assert!(plan.targets.contains(&r.vehicle));
        assert!(!r.sources.is_empty());
        for src in &r.sources {
            assert!(plan.activation_list().iter().any(|a| &a.source == src));
        }
    }
}
