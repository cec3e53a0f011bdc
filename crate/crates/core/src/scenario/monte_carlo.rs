//! Independent seeded runs in parallel and their averaged metrics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::metrics::{compute_metrics, MetricsReport};
use super::world::{Setup, Simulation};

/// Run one seeded simulation and reduce it to metrics.
pub fn run_metrics(setup: &Arc<Setup>, label: &str, seed: u64) -> Result<MetricsReport> {
    let mut sim = Simulation::new(Arc::clone(setup), seed);
    let records = sim.run()?;
    let mut m = compute_metrics(label, seed, &records, setup.model.ts, setup.damping.rho_y);
    m.richardson_gap = sim.richardson_gap;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub requested: usize,
    pub succeeded: usize,
    pub failures: Vec<(u64, String)>,
    pub mean: MetricsReport,
    /// Standard error of the nominal RMS across runs.
    pub rms_nominal_stderr: f64,
    pub runs: Vec<MetricsReport>,
}

fn average(label: &str, runs: &[MetricsReport]) -> MetricsReport {
    let n = runs.len() as f64;
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = runs.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / n)
    };
    let max = |f: &dyn Fn(&MetricsReport) -> f64| runs.iter().map(f).fold(0.0, f64::max);
    MetricsReport {
        scenario: label.to_string(),
        seed: runs[0].seed,
        steps: runs[0].steps,
        rms_nominal: avg(&|m| m.rms_nominal),
        mnd_nominal: avg(&|m| m.mnd_nominal),
        rms_attacker: avg_opt(&|m| m.rms_attacker),
        mnd_attacker: avg_opt(&|m| m.mnd_attacker),
        mean_qdot_norm: avg(&|m| m.mean_qdot_norm),
        max_qdot_norm: avg(&|m| m.max_qdot_norm),
        mean_p_tot: avg(&|m| m.mean_p_tot),
        max_p_tot: avg(&|m| m.max_p_tot),
        path_length: avg(&|m| m.path_length),
        e_inj: avg(&|m| m.e_inj),
        e_diss: avg(&|m| m.e_diss),
        alarm_count: runs.iter().map(|m| m.alarm_count).sum(),
        max_z: max(&|m| m.max_z),
        max_z_tilde: max(&|m| m.max_z_tilde),
        mean_w: avg(&|m| m.mean_w),
        claim1_violations: runs.iter().map(|m| m.claim1_violations).sum(),
        claim2_frequency: avg(&|m| m.claim2_frequency),
        max_jstar_error: max(&|m| m.max_jstar_error),
        max_null_purity: max(&|m| m.max_null_purity),
        qcqp_fallbacks: runs.iter().map(|m| m.qcqp_fallbacks).sum(),
        max_modeled_z: max(&|m| m.max_modeled_z),
        richardson_gap: runs.iter().filter_map(|m| m.richardson_gap).reduce(f64::max),
    }
}

/// Seeds `seed0, seed0+1, …`; the aggregate covers successful runs.
pub fn monte_carlo(setup: &Arc<Setup>, label: &str, seed0: u64, runs: usize) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least one run".into()));
    }
    let results: Vec<(u64, Result<MetricsReport>)> = (0..runs as u64)
        .into_par_iter()
        .map(|i| (seed0 + i, run_metrics(setup, label, seed0 + i)))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if ok.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "all {runs} runs failed; first: {}",
            failures.first().map_or("", |f| f.1.as_str())
        )));
    }
    let mean = average(label, &ok);
    let rms_nominal_stderr = if ok.len() > 1 {
        let m = mean.rms_nominal;
        let var = ok.iter().map(|r| (r.rms_nominal - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
        (var / ok.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloReport {
        scenario: label.to_string(),
        requested: runs,
        succeeded: ok.len(),
        failures,
        mean,
        rms_nominal_stderr,
        runs: ok,
    })
}
