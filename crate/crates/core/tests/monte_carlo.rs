use std::sync::Arc;

use armshield::config::RunConfig;
use armshield::scenario::metrics::{compute_metrics, MetricsReport};
use armshield::scenario::monte_carlo::{monte_carlo, run_metrics};
use armshield::scenario::world::{Setup, Simulation};
use armshield::scenario::ScenarioId;

fn setup_with(cfg: &RunConfig, id: ScenarioId) -> Arc<Setup> {
    Setup::build(cfg, &cfg.scenario_config(id)).unwrap()
}

fn short(horizon: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.horizon = horizon;
    cfg
}

#[test]
fn single_run_aggregate_equals_the_run() {
    let s = setup_with(&short(400), ScenarioId::A2);
    let mc = monte_carlo(&s, "A2", 17, 1).unwrap();
    let single = run_metrics(&s, "A2", 17).unwrap();
    assert_eq!(mc.succeeded, 1);
    assert_eq!(mc.mean, single);
    assert_eq!(mc.runs, vec![single]);
    assert_eq!(mc.rms_nominal_stderr, 0.0);
}

#[test]
fn neighbouring_seeds_differ_but_agree_in_aggregate() {
    let s = setup_with(&short(5000), ScenarioId::A1);
    let a = run_metrics(&s, "A1", 0).unwrap();
    let b = run_metrics(&s, "A1", 1).unwrap();
    assert_ne!(a.rms_nominal, b.rms_nominal);
    assert!((a.rms_nominal / b.rms_nominal).ln().abs() < 2.0_f64.ln());
}

#[test]
fn a1_rms_is_stable_across_disjoint_seed_batches() {
    let s = setup_with(&RunConfig::default(), ScenarioId::A1);
    let first = monte_carlo(&s, "A1", 0, 40).unwrap();
    let second = monte_carlo(&s, "A1", 10_000, 40).unwrap();
    let gap = (first.mean.rms_nominal - second.mean.rms_nominal).abs();
    let se = first.rms_nominal_stderr.hypot(second.rms_nominal_stderr);
    assert!(gap <= 3.0 * se, "gap {gap:e} vs 3 se {:e}", 3.0 * se);
}

#[test]
fn aggregate_is_the_per_run_mean() {
    let s = setup_with(&short(300), ScenarioId::A3);
    let mc = monte_carlo(&s, "A3", 100, 4).unwrap();
    let mean = mc.runs.iter().map(|m| m.rms_nominal).sum::<f64>() / 4.0;
    assert!((mc.mean.rms_nominal - mean).abs() <= 1e-15 * mean);
    let alarms: usize = mc.runs.iter().map(|m| m.alarm_count).sum();
    assert_eq!(mc.mean.alarm_count, alarms);
}

#[test]
fn manipulability_settings_do_not_touch_a1_a2() {
    let base = short(600);
    let mut tweaked = base.clone();
    tweaked.manip.alpha = 50.0;
    tweaked.manip.quota = 0.6;
    tweaked.manip.blend = true;
    for id in [ScenarioId::A1, ScenarioId::A2] {
        let a = Simulation::new(setup_with(&base, id), 4).run().unwrap();
        let b = Simulation::new(setup_with(&tweaked, id), 4).run().unwrap();
        assert_eq!(a, b, "{id}");
    }
}

#[test]
fn metric_reductions_match_definitions() {
    let s = setup_with(&short(200), ScenarioId::A2);
    let recs = Simulation::new(Arc::clone(&s), 2).run().unwrap();
    let m: MetricsReport = compute_metrics("A2", 2, &recs, s.model.ts, s.damping.rho_y);
    let errs: Vec<f64> = recs
        .iter()
        .map(|r| (0..3).map(|i| (r.p_ref[i] - r.p[i]).powi(2)).sum::<f64>().sqrt())
        .collect();
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    assert!((m.rms_nominal - rms).abs() <= 1e-15);
    assert!(m.mnd_nominal >= errs.iter().copied().fold(f64::INFINITY, f64::min));
    assert!(m.mnd_nominal >= m.rms_nominal);
    let (mut inj, mut diss) = (0.0, 0.0);
    for r in &recs {
        let p: f64 = r.qd.iter().zip(&r.u_d).map(|(a, b)| a * b).sum();
        inj += p.max(0.0) * s.model.ts;
        diss += (-p).max(0.0) * s.model.ts;
    }
    assert!((m.e_inj - inj).abs() <= 1e-15 && (m.e_diss - diss).abs() <= 1e-15);
    assert!(m.rms_attacker.is_none());
    for v in [
        m.rms_nominal,
        m.mnd_nominal,
        m.mean_qdot_norm,
        m.max_p_tot,
        m.path_length,
        m.e_inj,
        m.e_diss,
        m.max_z,
    ] {
        assert!(v >= 0.0);
    }
}
