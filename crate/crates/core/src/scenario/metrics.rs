//! Per-run metrics computed from a step trace.

use serde::{Deserialize, Serialize};

use super::world::StepRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    pub rms_nominal: f64,
    pub mnd_nominal: f64,
    pub rms_attacker: Option<f64>,
    pub mnd_attacker: Option<f64>,
    pub mean_qdot_norm: f64,
    pub max_qdot_norm: f64,
    pub mean_p_tot: f64,
    pub max_p_tot: f64,
    pub path_length: f64,
    pub e_inj: f64,
    pub e_diss: f64,
    pub alarm_count: usize,
    pub max_z: f64,
    pub max_z_tilde: f64,
    pub mean_w: f64,
    /// Steps with some `u_d_j q̇̃_j > 0`.
    pub claim1_violations: usize,
    /// Fraction of steps with `Σ|u_d q̇̃| ≤ ρ_y Σ|P^nom|`.
    pub claim2_frequency: f64,
    pub max_jstar_error: f64,
    pub max_null_purity: f64,
    pub qcqp_fallbacks: usize,
    pub max_modeled_z: f64,
    pub richardson_gap: Option<f64>,
}

/// Table row identifiers in report order.
pub const TABLE_ROWS: [(&str, &str); 11] = [
    ("M1.1", "RMS(p_ref, p) [m]"),
    ("M1.2", "MND(p_ref, p) [m]"),
    ("M2.1", "RMS(p_ref_A, p) [m]"),
    ("M2.2", "MND(p_ref_A, p) [m]"),
    ("M3.1", "mean qdot norm [rad/s]"),
    ("M3.2", "max qdot norm [rad/s]"),
    ("M3.3", "mean P_tot [W]"),
    ("M3.4", "max P_tot [W]"),
    ("M3.5", "path length [m]"),
    ("M3.6", "E_inj [J]"),
    ("M3.7", "E_diss [J]"),
];

impl MetricsReport {
    /// Value for a table row; `None` where the metric does not apply.
    pub fn table_value(&self, row: &str) -> Option<f64> {
        match row {
            "M1.1" => Some(self.rms_nominal),
            "M1.2" => Some(self.mnd_nominal),
            "M2.1" => self.rms_attacker,
            "M2.2" => self.mnd_attacker,
            "M3.1" => Some(self.mean_qdot_norm),
            "M3.2" => Some(self.max_qdot_norm),
            "M3.3" => Some(self.mean_p_tot),
            "M3.4" => Some(self.max_p_tot),
            "M3.5" => Some(self.path_length),
            "M3.6" => Some(self.e_inj),
            "M3.7" => Some(self.e_diss),
            _ => None,
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `sqrt(mean ‖e‖²)`
pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// `max ‖e‖`
pub fn mnd(errors: &[f64]) -> f64 {
    errors.iter().copied().fold(0.0, f64::max)
}

pub fn path_length(points: &[[f64; 3]]) -> f64 {
    points.windows(2).map(|w| dist(&w[0], &w[1])).sum()
}

/// `(E_inj, E_diss)` from per-step `q̇ᵀu_d`.
pub fn energies(defense_power: &[f64], ts: f64) -> (f64, f64) {
    defense_power.iter().fold((0.0, 0.0), |(inj, diss), &p| {
        (inj + p.max(0.0) * ts, diss + p.min(0.0).abs() * ts)
    })
}

pub fn compute_metrics(label: &str, seed: u64, records: &[StepRecord], ts: f64, rho_y: f64) -> MetricsReport {
    let steps = records.len();
    let nominal: Vec<f64> = records.iter().map(|r| dist(&r.p_ref, &r.p)).collect();
    let attacker: Option<Vec<f64>> = records
        .iter()
        .map(|r| r.p_ref_attacker.map(|a| dist(&a, &r.p)))
        .collect::<Option<Vec<f64>>>()
        .filter(|v| !v.is_empty());
    let qdot: Vec<f64> = records
        .iter()
        .map(|r| r.qd.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let p_tot: Vec<f64> = records.iter().map(|r| r.p_tot).collect();
    let points: Vec<[f64; 3]> = records.iter().map(|r| r.p).collect();
    let defense: Vec<f64> = records.iter().map(|r| r.defense_power).collect();
    let (e_inj, e_diss) = energies(&defense, ts);
    let w: Vec<f64> = records.iter().map(|r| r.w).collect();
    let claim2_hits = records
        .iter()
        .filter(|r| r.sum_abs_damping_power <= rho_y * r.sum_abs_pnom)
        .count();
    MetricsReport {
        scenario: label.to_string(),
        seed,
        steps,
        rms_nominal: rms(&nominal),
        mnd_nominal: mnd(&nominal),
        rms_attacker: attacker.as_deref().map(rms),
        mnd_attacker: attacker.as_deref().map(mnd),
        mean_qdot_norm: mean(&qdot),
        max_qdot_norm: max(&qdot),
        mean_p_tot: mean(&p_tot),
        max_p_tot: max(&p_tot),
        path_length: path_length(&points),
        e_inj,
        e_diss,
        alarm_count: records.iter().filter(|r| r.alarm).count(),
        max_z: records.iter().map(|r| r.z).fold(0.0, f64::max),
        max_z_tilde: records.iter().map(|r| r.z_tilde).fold(0.0, f64::max),
        mean_w: mean(&w),
        claim1_violations: records.iter().filter(|r| r.max_damping_power > 0.0).count(),
        claim2_frequency: if steps == 0 {
            1.0
        } else {
            claim2_hits as f64 / steps as f64
        },
        max_jstar_error: records.iter().map(|r| r.jstar_error).fold(0.0, f64::max),
        max_null_purity: records.iter().map(|r| r.null_purity).fold(0.0, f64::max),
        qcqp_fallbacks: records.iter().filter(|r| r.attack.fallback).count(),
        max_modeled_z: records.iter().map(|r| r.attack.modeled_z).fold(0.0, f64::max),
        richardson_gap: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_error_gives_equal_rms_and_mnd() {
        let e = vec![0.3; 50];
        assert!((rms(&e) - 0.3).abs() < 1e-15);
        assert_eq!(mnd(&e), 0.3);
        let mixed = [0.1, 0.5, 0.2];
        assert!(mnd(&mixed) >= rms(&mixed));
    }

    #[test]
    fn zero_damping_has_no_energy() {
        assert_eq!(energies(&[0.0; 10], 0.01), (0.0, 0.0));
        let (inj, diss) = energies(&[1.0, -2.0, 0.5], 0.1);
        assert!((inj - 0.15).abs() < 1e-15 && (diss - 0.2).abs() < 1e-15);
    }

    #[test]
    fn stationary_hand_has_zero_path() {
        assert_eq!(path_length(&[[0.1, 0.2, 0.3]; 20]), 0.0);
        assert!((path_length(&[[0.0; 3], [3.0, 4.0, 0.0]]) - 5.0).abs() < 1e-15);
    }
}
