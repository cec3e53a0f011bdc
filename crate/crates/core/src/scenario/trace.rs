//! CSV step traces.

use std::io::Write;

use crate::error::Result;

use super::world::StepRecord;

/// Header for an `n`-joint trace.
pub fn header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "samples",
        "gainActiveDissipation_q",
        "kinNrgTot",
        "costVal",
        "ADS_z",
        "handVelocity_l2",
        "z_tilde",
        "alarm",
        "manip_w",
        "p_x",
        "p_y",
        "p_z",
        "p_ref_x",
        "p_ref_y",
        "p_ref_z",
        "p_att_x",
        "p_att_y",
        "p_att_z",
        "p_tot",
        "defense_power",
        "sum_abs_pnom",
        "sum_abs_damping_power",
        "attack_norm",
        "delta_norm",
        "qcqp_lambda",
        "qcqp_fallback",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for name in ["q", "qd", "qd_tilde", "u", "u_d"] {
        h.extend((0..n).map(|j| format!("{name}_{j}")));
    }
    h
}

fn row(r: &StepRecord) -> Vec<String> {
    let hv = r.hand_vel;
    let att = r.p_ref_attacker;
    let opt = |i: usize| att.map_or_else(String::new, |a| a[i].to_string());
    let mut out = vec![
        r.k.to_string(),
        r.phi.to_string(),
        r.kinetic_energy.to_string(),
        r.cost.to_string(),
        r.z.to_string(),
        (hv[0] * hv[0] + hv[1] * hv[1] + hv[2] * hv[2]).sqrt().to_string(),
        r.z_tilde.to_string(),
        u8::from(r.alarm).to_string(),
        r.w.to_string(),
        r.p[0].to_string(),
        r.p[1].to_string(),
        r.p[2].to_string(),
        r.p_ref[0].to_string(),
        r.p_ref[1].to_string(),
        r.p_ref[2].to_string(),
        opt(0),
        opt(1),
        opt(2),
        r.p_tot.to_string(),
        r.defense_power.to_string(),
        r.sum_abs_pnom.to_string(),
        r.sum_abs_damping_power.to_string(),
        r.attack.attack_norm.to_string(),
        r.attack.delta_norm.to_string(),
        r.attack.lambda.to_string(),
        u8::from(r.attack.fallback).to_string(),
    ];
    for v in [&r.q, &r.qd, &r.qd_tilde, &r.u, &r.u_d] {
        out.extend(v.iter().map(|x| x.to_string()));
    }
    out
}

/// Write every `decimate`-th record, always including the first.
pub fn write_trace<W: Write>(out: W, records: &[StepRecord], decimate: usize) -> Result<()> {
    let n = records.first().map_or(0, |r| r.q.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(n))?;
    for r in records.iter().step_by(decimate.max(1)) {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}
