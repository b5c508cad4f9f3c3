//! Plan scoring: worst-case adjusted dose and homogeneity, EUD, DVH and
//! dose-volume compliance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_dose, InfluenceMatrix, Plan, StructureSet};
use crate::robust::pair_coefficients;
use crate::uncertainty::SpatialUncertainty;

/// Tolerance above the dose-volume bound before a voxel counts as violating.
pub const DV_TOL: f64 = 1e-7;

fn target_dose(dose: &[f64], unc: &SpatialUncertainty) -> Vec<f64> {
    unc.voxels().iter().map(|&v| dose[v]).collect()
}

/// min over φ in the set and v in T of φ_v d_v, which is min_v φ̲_v d_v.
pub fn worst_case_dose(dose: &[f64], unc: &SpatialUncertainty) -> Result<f64> {
    unc.ensure_nonempty()?;
    let dt = target_dose(dose, unc);
    Ok(dt.iter().zip(unc.lo()).map(|(d, l)| l * d).fold(f64::INFINITY, f64::min))
}

/// max over φ in the set and target pairs of φ_v d_v / (φ_u d_u), or +∞
/// when some target voxel gets no dose.
pub fn worst_case_homogeneity(dose: &[f64], unc: &SpatialUncertainty) -> Result<f64> {
    unc.ensure_nonempty()?;
    let dt = target_dose(dose, unc);
    let t = dt.len();
    if dt.iter().any(|&d| d <= 0.0) {
        return Ok(f64::INFINITY);
    }
    let hi_d: Vec<f64> = (0..t).map(|i| unc.hi()[i] * dt[i]).collect();
    let lo_d: Vec<f64> = (0..t).map(|i| unc.lo()[i] * dt[i]).collect();
    let mut nums: Vec<usize> = (0..t).collect();
    nums.sort_by(|&a, &b| hi_d[b].total_cmp(&hi_d[a]).then(a.cmp(&b)));
    let mut dens: Vec<usize> = (0..t).collect();
    dens.sort_by(|&a, &b| lo_d[a].total_cmp(&lo_d[b]).then(a.cmp(&b)));
    let mut best = 1.0f64;
    for &num in &nums {
        if hi_d[num] <= best * lo_d[dens[0]] {
            break;
        }
        for &den in &dens {
            if den == num {
                continue;
            }
            if hi_d[num] <= best * lo_d[den] {
                break;
            }
            let (rows, n) = pair_coefficients(unc, num, den);
            for &(a, b) in &rows[..n] {
                let r = a * dt[num] / (b * dt[den]);
                if r > best {
                    best = r;
                }
            }
        }
    }
    Ok(best)
}

/// Generalized mean (Σ d^a / N)^(1/a); the geometric mean at a = 0.
pub fn eud(doses: &[f64], a: f64) -> Result<f64> {
    if doses.is_empty() {
        return Err(Error::Invalid("EUD of an empty structure".into()));
    }
    if doses.iter().any(|&d| d < 0.0 || !d.is_finite()) {
        return Err(Error::Invalid("EUD needs finite nonnegative doses".into()));
    }
    let n = doses.len() as f64;
    if doses.iter().all(|&d| d == doses[0]) && (doses[0] > 0.0 || a > 0.0) {
        return Ok(doses[0]);
    }
    if a == 1.0 {
        return Ok(doses.iter().sum::<f64>() / n);
    }
    if doses.iter().any(|&d| d == 0.0) {
        if a <= 0.0 {
            return Err(Error::Invalid(format!("EUD with exponent {a} is undefined for a zero dose")));
        }
        return Ok((doses.iter().map(|d| d.powf(a)).sum::<f64>() / n).powf(1.0 / a));
    }
    let logs: Vec<f64> = doses.iter().map(|d| d.ln()).collect();
    if a == 0.0 {
        return Ok((logs.iter().sum::<f64>() / n).exp());
    }
    // log-sum-exp of a·ln d keeps a = -10 stable for large and small doses
    let m = logs.iter().map(|l| a * l).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logs.iter().map(|l| (a * l - m).exp()).sum();
    Ok(((m + (s / n).ln()) / a).exp())
}

/// Cumulative histogram: fraction of voxels with dose ≥ t for t = 0, w,
/// 2w, … up to the first bin above the maximum.
pub fn dvh(doses: &[f64], bin_width: f64) -> Result<Vec<(f64, f64)>> {
    if doses.is_empty() {
        return Err(Error::Invalid("DVH of an empty structure".into()));
    }
    if !(bin_width > 0.0) {
        return Err(Error::Invalid(format!("DVH bin width must be positive, got {bin_width}")));
    }
    let mut sorted = doses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let max = sorted[sorted.len() - 1];
    let bins = (max / bin_width).floor() as usize + 1;
    Ok((0..=bins)
        .map(|k| {
            let t = k as f64 * bin_width;
            let below = sorted.partition_point(|&d| d < t);
            (t, (sorted.len() - below) as f64 / n)
        })
        .collect())
}

/// Fraction of the dose-volume OAR above its bound.
pub fn dv_violation(dose: &[f64], structures: &StructureSet) -> Result<f64> {
    let spec = structures.dv().ok_or_else(|| Error::Invalid("no dose-volume requirement".into()))?;
    let o = &structures.oars()[spec.oar];
    let over = o.voxels.iter().filter(|&&v| dose[v] > o.dbar + DV_TOL).count();
    Ok(over as f64 / o.voxels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    pub structure: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    /// Worst-case adjusted minimum target dose.
    pub worst_case_dose: f64,
    /// Worst-case adjusted homogeneity; +∞ for zero-dose plans.
    pub worst_case_homogeneity: Option<f64>,
    /// Nominal adjusted minimum, min φ̂_v d_v.
    pub nominal_dose: f64,
    pub nominal_homogeneity: Option<f64>,
    pub min_target_dose: f64,
    pub max_target_dose: f64,
    pub physical_homogeneity: Option<f64>,
    /// EUD of the nominal adjusted target dose.
    pub eud: Option<f64>,
    pub eud_exponent: f64,
    pub dvh: Vec<DvhCurve>,
    pub dv_violation: Option<f64>,
    pub zero_dose: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Scores `plan` under `unc`; nominal figures use the measured φ̂.
pub fn evaluate_plan(
    plan: &Plan,
    structures: &StructureSet,
    influence: &InfluenceMatrix,
    unc: &SpatialUncertainty,
    eud_exponent: f64,
    dvh_bin: f64,
) -> Result<PlanReport> {
    let dose = compute_dose(influence, &plan.x)?;
    let dt = target_dose(&dose, unc);
    let adjusted: Vec<f64> = dt.iter().zip(unc.phi_hat()).map(|(d, p)| d * p).collect();
    let zero = plan.is_zero_dose() || dt.iter().any(|&d| d <= 0.0);
    let nominal_dose = adjusted.iter().cloned().fold(f64::INFINITY, f64::min);
    let nominal_max = adjusted.iter().cloned().fold(0.0, f64::max);
    let min_target_dose = dt.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_target_dose = dt.iter().cloned().fold(0.0, f64::max);
    let mut curves = vec![DvhCurve { structure: "target".into(), points: dvh(&dt, dvh_bin)? }];
    for o in structures.oars() {
        let d: Vec<f64> = o.voxels.iter().map(|&v| dose[v]).collect();
        curves.push(DvhCurve { structure: o.name.clone(), points: dvh(&d, dvh_bin)? });
    }
    Ok(PlanReport {
        worst_case_dose: worst_case_dose(&dose, unc)?,
        worst_case_homogeneity: finite(worst_case_homogeneity(&dose, unc)?),
        nominal_dose,
        nominal_homogeneity: if nominal_dose > 0.0 { Some(nominal_max / nominal_dose) } else { None },
        min_target_dose,
        max_target_dose,
        physical_homogeneity: if min_target_dose > 0.0 { Some(max_target_dose / min_target_dose) } else { None },
        eud: eud(&adjusted, eud_exponent).ok(),
        eud_exponent,
        dvh: curves,
        dv_violation: structures.dv().map(|_| dv_violation(&dose, structures)).transpose()?,
        zero_dose: zero,
    })
}

/// `structure,dose_bin,fraction` lines.
pub fn dvh_csv(curves: &[DvhCurve]) -> String {
    let mut s = String::from("structure,dose_bin,fraction\n");
    for c in curves {
        for (t, f) in &c.points {
            s.push_str(&format!("{},{},{}\n", c.structure, t, f));
        }
    }
    s
}
