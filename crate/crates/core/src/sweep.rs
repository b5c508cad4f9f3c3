//! Parameter sweeps over (μ, δ, γ) grids.

use serde::{Deserialize, Serialize};

use crate::biomarker::GammaModel;
use crate::error::{Error, Result};
use crate::evaluation::{eud, worst_case_dose, worst_case_homogeneity};
use crate::io::Case;
use crate::model::{compute_dose, ModelKind, Plan};
use crate::robust::{row_generation, RobustInstance, RowGenParams};
use crate::uncertainty::{GammaSource, SpatialUncertainty};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub mu: Vec<f64>,
    pub delta: Vec<f64>,
    /// Offsets added to the base model's own Γ offset.
    pub gamma: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("mu", &self.mu), ("delta", &self.delta), ("gamma", &self.gamma)] {
            if g.is_empty() {
                return Err(Error::Invalid(format!("sweep grid {name} is empty")));
            }
        }
        Ok(())
    }

    /// Grid points in row order: μ outermost, γ innermost.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.mu.len() * self.delta.len() * self.gamma.len());
        for &m in &self.mu {
            for &d in &self.delta {
                for &g in &self.gamma {
                    out.push((m, d, g));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub delta: f64,
    pub gamma: f64,
    pub objective: f64,
    /// Worst-case adjusted minimum dose.
    pub dmin_hat: f64,
    /// Worst-case adjusted homogeneity; +∞ for zero-dose plans.
    pub mu_hat: f64,
    /// Minimum adjusted dose under φ̂.
    pub nominal_dmin: f64,
    pub eud: f64,
    pub zero_dose: bool,
    pub failed: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(mu: f64, delta: f64, gamma: f64, e: &Error) -> Self {
        Self {
            mu,
            delta,
            gamma,
            objective: f64::NAN,
            dmin_hat: f64::NAN,
            mu_hat: f64::NAN,
            nominal_dmin: f64::NAN,
            eud: f64::NAN,
            zero_dose: false,
            failed: true,
            error: Some(e.to_string()),
        }
    }
}

/// Uncertainty set for one grid point.
pub fn point_uncertainty(case: &Case, mode: ModelKind, base: &GammaModel, delta: f64, gamma: f64) -> Result<SpatialUncertainty> {
    SpatialUncertainty::new(mode, delta, GammaSource::Model(base.with_offset(base.gamma_offset + gamma)), &case.phi, &case.grid)
}

/// Solves one point by row generation and scores the plan under its own
/// uncertainty set.
pub fn solve_point(
    case: &Case,
    mode: ModelKind,
    base: &GammaModel,
    params: &RowGenParams,
    (mu, delta, gamma): (f64, f64, f64),
) -> Result<(Plan, SweepRow)> {
    let unc = point_uncertainty(case, mode, base, delta, gamma)?;
    let inst = RobustInstance::new(&case.structures, &case.influence, &unc, mu)?;
    let plan = row_generation(&inst, params)?;
    let dose = compute_dose(&case.influence, &plan.x)?;
    let adjusted: Vec<f64> = unc.voxels().iter().zip(unc.phi_hat()).map(|(&v, p)| p * dose[v]).collect();
    let zero = plan.is_zero_dose() || adjusted.iter().any(|&d| d <= 0.0);
    let row = SweepRow {
        mu,
        delta,
        gamma,
        objective: plan.objective,
        dmin_hat: worst_case_dose(&dose, &unc)?,
        mu_hat: worst_case_homogeneity(&dose, &unc)?,
        nominal_dmin: adjusted.iter().cloned().fold(f64::INFINITY, f64::min),
        eud: eud(&adjusted, -10.0).unwrap_or(f64::NAN),
        zero_dose: zero,
        failed: false,
        error: None,
    };
    Ok((plan, row))
}

/// Runs every grid point on a pool of `workers` threads. A failing point
/// is marked and the sweep continues. Rows come back in grid order.
pub fn run_sweep(
    case: &Case,
    mode: ModelKind,
    base: &GammaModel,
    grid: &SweepGrid,
    params: &RowGenParams,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    grid.validate()?;
    params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    let points = grid.points();
    Ok(pool.install(|| {
        points
            .par_iter()
            .map(|&p| match solve_point(case, mode, base, params, p) {
                Ok((_, row)) => row,
                Err(e) => {
                    log::warn!("sweep point mu={} delta={} gamma={} failed: {e}", p.0, p.1, p.2);
                    SweepRow::failed(p.0, p.1, p.2, &e)
                }
            })
            .collect()
    }))
}

pub fn results_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("mu,delta,gamma,objective,dmin_hat,mu_hat,nominal_dmin,eud,zero_dose,failed\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.mu, r.delta, r.gamma, r.objective, r.dmin_hat, r.mu_hat, r.nominal_dmin, r.eud, r.zero_dose as u8, r.failed as u8
        ));
    }
    s
}
