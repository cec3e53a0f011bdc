//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use armshield::config::RunConfig;
use armshield::detector::chi2_inv_cdf;
use armshield::kinematics::{forward_kinematics, geometric_jacobian, manip_cost, manip_cost_gradient, KinematicChain};
use armshield::qcqp::{self, QcqpProblem};
use armshield::scenario::metrics::{compute_metrics, MetricsReport};
use armshield::scenario::monte_carlo::monte_carlo;
use armshield::scenario::world::{Setup, Simulation, StepRecord};
use armshield::scenario::{ScenarioConfig, ScenarioId, TaskKind};

const FIG_QUANTILE: f64 = 29.1412;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct ScenarioRun {
    id: ScenarioId,
    records: Vec<StepRecord>,
    metrics: MetricsReport,
    tau: f64,
    radius: Option<f64>,
}

fn run_scenario(cfg: &RunConfig, id: ScenarioId) -> ScenarioRun {
    let sc = cfg.scenario_config(id);
    let setup = Setup::build(cfg, &sc).expect("setup");
    let mut sim = Simulation::new(Arc::clone(&setup), sc.seed);
    let records = sim.run().expect("scenario run");
    let mut metrics = compute_metrics(id.as_str(), sc.seed, &records, setup.model.ts, setup.damping.rho_y);
    metrics.richardson_gap = sim.richardson_gap;
    ScenarioRun {
        id,
        records,
        metrics,
        tau: setup.detector.tau,
        radius: setup.attacker_task.as_ref().and_then(|t| t.radius()),
    }
}

fn still_h0(cfg: &RunConfig, horizon: usize) -> Arc<Setup> {
    let mut sc = ScenarioConfig::named(ScenarioId::A1, horizon, 0, 1);
    sc.id = None;
    sc.flags.nominal = TaskKind::Still;
    sc.flags.chi2_on = true;
    Setup::build(cfg, &sc).expect("H0 setup")
}

fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn criterion_1() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.detector.tau = None;
    cfg.detector.alpha_f = Some(0.01);
    cfg.scenario.resync_interval = Some(1000);
    let steps = 100_000;
    let setup = still_h0(&cfg, steps);
    let oracle_tau = ChiSquared::new(14.0).unwrap().inverse_cdf(0.99);
    let tau = setup.detector.tau;
    let mut sim = Simulation::new(setup, 7);
    let mut alarms = 0usize;
    sim.run_with(|r| alarms += usize::from(r.z > tau)).expect("H0 run");
    let rate = alarms as f64 / steps as f64;
    let q = chi2_inv_cdf(0.99, 14).unwrap();
    let pass = (0.007..=0.013).contains(&rate) && (q - FIG_QUANTILE).abs() <= 1e-3 && (tau - oracle_tau).abs() < 1e-6;
    outcome(
        pass,
        format!(
            "alarm rate {rate:.5} over {steps} steps (tau {tau:.4}, oracle {oracle_tau:.4}); F^-1(0.99,14) = {q:.5}"
        ),
    )
}

/// Residuals `r̃_k` at the probed steps for many independent H0 closed loops.
fn residual_samples(setup: &Arc<Setup>, runs: usize, probes: &[usize]) -> Vec<Vec<DVector<f64>>> {
    let last = *probes.iter().max().unwrap();
    let per_run: Vec<Vec<DVector<f64>>> = (0..runs as u64)
        .into_par_iter()
        .map(|seed| {
            let mut sim = Simulation::new(Arc::clone(setup), 1_000_000 + seed);
            let mut out = Vec::with_capacity(probes.len());
            for k in 1..=last {
                sim.step().expect("H0 step");
                if probes.contains(&k) {
                    out.push(&sim.world.est.x_hat - &sim.world.proj.x_tilde);
                }
            }
            out
        })
        .collect();
    (0..probes.len())
        .map(|i| per_run.iter().map(|r| r[i].clone()).collect())
        .collect()
}

fn criteria_2_3() -> (Outcome, Outcome) {
    let cfg = RunConfig::default();
    let probes = [1usize, 5, 20];
    let runs = 20_000;
    let setup = still_h0(&cfg, 20);
    let samples = residual_samples(&setup, runs, &probes);

    let l = &setup.gains.l;
    let closed_form = l * &setup.gains.sigma * l.transpose();
    let k1_err = rel_frob(setup.table.cov(1).unwrap(), &closed_form);

    let mut cov_ok = k1_err <= 1e-10;
    let mut prob_ok = true;
    let mut cov_detail = format!("k=1 closed form rel err {k1_err:.2e};");
    let mut prob_detail = String::new();
    for (i, &k) in probes.iter().enumerate() {
        let sigma = setup.table.cov(k).unwrap();
        let dim = sigma.nrows();
        let mut emp = DMatrix::zeros(dim, dim);
        for r in &samples[i] {
            emp += r * r.transpose();
        }
        emp /= runs as f64;
        let err = rel_frob(&emp, sigma);
        cov_ok &= err <= 0.15;
        cov_detail.push_str(&format!(" k={k} rel err {err:.3}"));

        let lu = sigma.clone().lu();
        let inside = samples[i]
            .iter()
            .filter(|r| r.dot(&lu.solve(r).unwrap()) <= FIG_QUANTILE)
            .count() as f64
            / runs as f64;
        prob_ok &= (0.985..=0.995).contains(&inside);
        prob_detail.push_str(&format!(" k={k} P={inside:.4}"));
    }
    (
        outcome(cov_ok, format!("{cov_detail} ({runs} runs)")),
        outcome(prob_ok, format!("P(z~_k <= {FIG_QUANTILE}):{prob_detail}")),
    )
}

fn claim1_steps(records: &[StepRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.u_d.iter().zip(&r.qd_tilde).any(|(u, v)| u * v > 0.0))
        .count()
}

fn criterion_4(runs: &[ScenarioRun], mc: &[(ScenarioId, Vec<MetricsReport>)]) -> Outcome {
    let single: usize = runs.iter().map(|r| claim1_steps(&r.records)).sum();
    let mc_viol: usize = mc.iter().flat_map(|(_, v)| v.iter()).map(|m| m.claim1_violations).sum();
    let mut freq_ok = true;
    let mut detail = format!("claim 1 violating steps: {single} in scenario runs, {mc_viol} in Monte Carlo runs; claim 2 frequency pooled over H0 steps");
    for (id, reports) in mc
        .iter()
        .filter(|(id, _)| matches!(id, ScenarioId::A2 | ScenarioId::A3))
    {
        let hits: f64 = reports.iter().map(|m| m.claim2_frequency * m.steps as f64).sum();
        let steps: usize = reports.iter().map(|m| m.steps).sum();
        let pooled = hits / steps as f64;
        let min = reports.iter().map(|m| m.claim2_frequency).fold(1.0, f64::min);
        freq_ok &= pooled >= 0.98;
        detail.push_str(&format!(" {id} {pooled:.4} (single-run min {min:.4})"));
    }
    outcome(single == 0 && mc_viol == 0 && freq_ok, detail)
}

fn find(runs: &[ScenarioRun], id: ScenarioId) -> &ScenarioRun {
    runs.iter().find(|r| r.id == id).expect("scenario present")
}

fn criterion_5(runs: &[ScenarioRun]) -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for id in [ScenarioId::B3, ScenarioId::B4] {
        let m = &find(runs, id).metrics;
        pass &= m.e_inj <= 0.1 * m.e_diss;
        detail.push_str(&format!("{id}: E_inj {:.3e} E_diss {:.3e}; ", m.e_inj, m.e_diss));
    }
    outcome(pass, detail.trim_end_matches("; ").to_string())
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.transpose() * a + DMatrix::identity(n, n) * shift
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Ellipsoid constraint `(Δ − c)ᵀ Qc (Δ − c) ≤ ρ²` in the solver's form.
fn ellipsoid_problem(
    h: DMatrix<f64>,
    g: DVector<f64>,
    qc: DMatrix<f64>,
    center: &DVector<f64>,
    rho: f64,
) -> QcqpProblem {
    let q_lin = -(&qc * center) * 2.0;
    let c0 = center.dot(&(&qc * center)) - rho * rho;
    QcqpProblem { h, g, qc, q_lin, c0 }
}

/// Accelerated projected gradient in whitened coordinates `y = R(Δ − c)`,
/// where the feasible set is the ball `‖y‖ ≤ ρ`.
fn fista_oracle(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    qc: &DMatrix<f64>,
    center: &DVector<f64>,
    rho: f64,
) -> DVector<f64> {
    let r = qc.clone().cholesky().unwrap().l().transpose();
    let r_inv = r.clone().try_inverse().unwrap();
    let hy = r_inv.transpose() * h * &r_inv;
    let gy = r_inv.transpose() * (h * center + g);
    let lip = hy.clone().symmetric_eigen().eigenvalues.max();
    let project = |y: DVector<f64>| {
        let n = y.norm();
        if n > rho {
            y * (rho / n)
        } else {
            y
        }
    };
    let f = |y: &DVector<f64>| 0.5 * y.dot(&(&hy * y)) + gy.dot(y);
    let mut y = DVector::zeros(g.len());
    let mut v = y.clone();
    let mut t: f64 = 1.0;
    for _ in 0..200_000 {
        let next = project(&v - (&hy * &v + &gy) / lip);
        if f(&next) > f(&y) {
            // adaptive restart
            v = y.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &next + (&next - &y) * ((t - 1.0) / t_next);
        let step = (&next - &y).norm();
        y = next;
        t = t_next;
        if step <= 1e-15 * (1.0 + y.norm()) {
            break;
        }
    }
    center + r_inv * y
}

fn criterion_6() -> Outcome {
    let n = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_obj = 0.0f64;
    let mut worst_viol = f64::NEG_INFINITY;
    let mut active = 0;
    for _ in 0..100 {
        let h = random_spd(&mut rng, n, 0.1);
        let qc = random_spd(&mut rng, n, 0.1);
        let center = random_vec(&mut rng, n, 1.0);
        let rho = rng.random_range(0.2..2.0);
        let g = random_vec(&mut rng, n, 5.0);
        let prob = ellipsoid_problem(h.clone(), g.clone(), qc.clone(), &center, rho);
        let sol = qcqp::solve(&prob, qcqp::DEFAULT_TOL).expect("feasible instance");
        active += usize::from(sol.active);
        let oracle = fista_oracle(&h, &g, &qc, &center, rho);
        let fo = prob.objective(&oracle);
        let fs = prob.objective(&sol.delta);
        worst_obj = worst_obj.max((fs - fo).abs() / fo.abs().max(1e-12));
        worst_viol = worst_viol.max(prob.constraint(&sol.delta));
    }
    let mut worst_inactive = 0.0f64;
    for _ in 0..20 {
        let h = random_spd(&mut rng, n, 0.1);
        let qc = random_spd(&mut rng, n, 0.1);
        let center = random_vec(&mut rng, n, 1.0);
        let rho = 1.0;
        let r_inv = qc.clone().cholesky().unwrap().l().transpose().try_inverse().unwrap();
        let dir = random_vec(&mut rng, n, 1.0).normalize();
        let inner = &center + r_inv * dir * 0.5;
        let g = -(&h * &inner);
        let prob = ellipsoid_problem(h.clone(), g.clone(), qc, &center, rho);
        let sol = qcqp::solve(&prob, qcqp::DEFAULT_TOL).expect("inactive instance");
        let exact = -h.lu().solve(&g).unwrap();
        let err = (&sol.delta - &exact).norm() / exact.norm();
        worst_inactive = worst_inactive.max(if sol.active || sol.lambda != 0.0 {
            f64::INFINITY
        } else {
            err
        });
    }
    let pass = worst_obj <= 1e-6 && worst_viol <= 1e-8 && worst_inactive <= 1e-12;
    outcome(
        pass,
        format!(
            "100 instances ({active} active): max objective rel gap {worst_obj:.2e}, max constraint {worst_viol:.2e}; inactive max rel err {worst_inactive:.2e}"
        ),
    )
}

fn mc_reports(cfg: &RunConfig, id: ScenarioId, runs: usize) -> Vec<MetricsReport> {
    let sc = cfg.scenario_config(id);
    let setup = Setup::build(cfg, &sc).expect("setup");
    let report = monte_carlo(&setup, id.as_str(), sc.seed, runs).expect("monte carlo");
    assert_eq!(report.succeeded, runs, "{id}: failed runs {:?}", report.failures);
    report.runs
}

fn criterion_7(mc: &[(ScenarioId, Vec<MetricsReport>)]) -> Outcome {
    let mean = |id: ScenarioId| {
        let v = &mc.iter().find(|(i, _)| *i == id).unwrap().1;
        v.iter().map(|m| m.rms_nominal).sum::<f64>() / v.len() as f64
    };
    let a1 = mean(ScenarioId::A1);
    let a2 = mean(ScenarioId::A2);
    let a3 = mean(ScenarioId::A3);
    let pass = a2 - a1 <= 1e-4 && a3 - a1 <= 1e-4;
    outcome(
        pass,
        format!("mean RMS over 20 runs: A1 {a1:.3e} A2 {a2:.3e} A3 {a3:.3e} m"),
    )
}

fn criterion_8(runs: &[ScenarioRun]) -> Outcome {
    let b1 = find(runs, ScenarioId::B1);
    let b2 = find(runs, ScenarioId::B2);
    let b3 = find(runs, ScenarioId::B3);
    let b4 = find(runs, ScenarioId::B4);
    let ra = |r: &ScenarioRun| r.metrics.rms_attacker.expect("attacker RMS");
    let radius = b1.radius.expect("circle radius");
    let a = ra(b1) < 0.5 * radius;
    let b = b2.metrics.alarm_count == 0 && (ra(b2) - ra(b1)).abs() <= 0.2 * ra(b1);
    let c = ra(b3) >= 2.0 * ra(b1);
    let d = ra(b4) > ra(b3) && b4.metrics.path_length < b3.metrics.path_length;
    let flag = |x: bool| if x { "ok" } else { "FAIL" };
    let b_runs = [b1, b2, b3, b4];
    let modeled_ok = b_runs.iter().all(|r| r.metrics.max_modeled_z <= r.tau);
    let live_margin = b_runs
        .iter()
        .map(|r| r.tau - r.metrics.max_z)
        .fold(f64::INFINITY, f64::min);
    outcome(
        a && b && c && d && modeled_ok,
        format!(
            "RMS_att B1 {:.3e} B2 {:.3e} B3 {:.3e} B4 {:.3e} (radius {radius:.3}); path B3 {:.4} B4 {:.4}; B2 alarms {}; (a) {} (b) {} (c) {} (d) {}; modeled z <= tau {}; min live tau - z {live_margin:.3e}",
            ra(b1),
            ra(b2),
            ra(b3),
            ra(b4),
            b3.metrics.path_length,
            b4.metrics.path_length,
            b2.metrics.alarm_count,
            flag(a),
            flag(b),
            flag(c),
            flag(d),
            flag(modeled_ok),
        ),
    )
}

fn criterion_9(runs: &[ScenarioRun]) -> Outcome {
    let b3 = find(runs, ScenarioId::B3);
    let b4 = find(runs, ScenarioId::B4);
    let mean_w = |r: &ScenarioRun| r.records.iter().map(|s| s.w).sum::<f64>() / r.records.len() as f64;
    let (w3, w4) = (mean_w(b3), mean_w(b4));
    let jstar = b4.records.iter().map(|s| s.jstar_error).fold(0.0, f64::max);
    let purity = b4.records.iter().map(|s| s.null_purity).fold(0.0, f64::max);
    outcome(
        w4 < w3 && jstar <= 1e-6 && purity <= 1e-8,
        format!("mean w B3 {w3:.5} B4 {w4:.5}; max |J J* - I| {jstar:.2e}; max null purity {purity:.2e}"),
    )
}

fn vee_rate(r_plus: &Matrix3<f64>, r_minus: &Matrix3<f64>, r: &Matrix3<f64>, h: f64) -> Vector3<f64> {
    let s = (r_plus - r_minus) / (2.0 * h) * r.transpose();
    Vector3::new(s[(2, 1)] - s[(1, 2)], s[(0, 2)] - s[(2, 0)], s[(1, 0)] - s[(0, 1)]) * 0.5
}

fn criterion_10(runs: &[ScenarioRun]) -> Outcome {
    let chain = KinematicChain::gen3();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut jac_err = 0.0f64;
    let mut grad_err = 0.0f64;
    for _ in 0..20 {
        let q = DVector::from_fn(7, |_, _| rng.random_range(-2.5..2.5));
        let j = geometric_jacobian(&chain, &q);
        let h = 1e-6;
        let base = forward_kinematics(&chain, &q);
        for i in 0..7 {
            let mut qp = q.clone();
            qp[i] += h;
            let mut qm = q.clone();
            qm[i] -= h;
            let fp = forward_kinematics(&chain, &qp);
            let fm = forward_kinematics(&chain, &qm);
            let lin = (fp.p - fm.p) / (2.0 * h);
            let ang = vee_rate(&fp.rot, &fm.rot, &base.rot, h);
            for r in 0..3 {
                jac_err = jac_err.max((j[(r, i)] - lin[r]).abs());
                jac_err = jac_err.max((j[(r + 3, i)] - ang[r]).abs());
            }
        }
        let d = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        )
        .normalize();
        let grad = manip_cost_gradient(&chain, &q, &d);
        // fourth-order central stencil
        let s = 1e-3;
        let fd = DVector::from_fn(7, |i, _| {
            let at = |k: f64| {
                let mut qq = q.clone();
                qq[i] += k * s;
                manip_cost(&chain, &qq, &d)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * s)
        });
        grad_err = grad_err.max((&grad - &fd).norm() / fd.norm().max(1e-12));
    }
    let gaps: Vec<f64> = runs.iter().filter_map(|r| r.metrics.richardson_gap).collect();
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let pass = jac_err <= 1e-6 && grad_err <= 1e-5 && gaps.len() == 4 && max_gap <= 0.01;
    outcome(
        pass,
        format!(
            "Jacobian vs FD max abs {jac_err:.2e}; gradient vs FD max rel {grad_err:.2e}; Richardson gap max {max_gap:.2e} over {} attacked runs",
            gaps.len()
        ),
    )
}

fn report(id: &str, name: &str, o: &Outcome, secs: f64) -> bool {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name}: {} ({secs:.1} s)", o.detail);
    o.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn main() {
    let cfg = RunConfig::default();
    let mut ok = true;

    let (o, s) = timed(criterion_1);
    ok &= report("1", "chi-square calibration", &o, s);

    let ((o2, o3), s) = timed(criteria_2_3);
    ok &= report("2", "residual covariance recursion", &o2, s);
    ok &= report("3", "projected score distribution", &o3, s);

    let (runs, s_runs) = timed(|| {
        ScenarioId::ALL
            .par_iter()
            .map(|&id| run_scenario(&cfg, id))
            .collect::<Vec<_>>()
    });
    let (mc, s_mc) = timed(|| {
        [ScenarioId::A1, ScenarioId::A2, ScenarioId::A3]
            .iter()
            .map(|&id| (id, mc_reports(&cfg, id, 20)))
            .collect::<Vec<_>>()
    });

    ok &= report("4", "damping passivity", &criterion_4(&runs, &mc), s_runs + s_mc);
    ok &= report("5", "energy bookkeeping", &criterion_5(&runs), s_runs);
    let (o, s) = timed(criterion_6);
    ok &= report("6", "QCQP solver", &o, s);
    ok &= report("7", "nominal non-invasiveness", &criterion_7(&mc), s_mc);
    ok &= report("8", "attack effectiveness ordering", &criterion_8(&runs), s_runs);
    ok &= report("9", "manipulability defense mechanics", &criterion_9(&runs), s_runs);
    let (o, s) = timed(|| criterion_10(&runs));
    ok &= report("10", "numerical hygiene", &o, s);

    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
