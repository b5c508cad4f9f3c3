//! A single dose-volume requirement "at most θ voxels of organ K above d̄_K,
//! none above d̂_K", handled through a deviation penalty β·Σy with a
//! parametric search for the smallest β that meets the voxel count.

use std::collections::HashMap;

use rayon::prelude::*;
use rfmo_lp::{adjacent, objective_ranging, Basis, Cmp, LinearProgram, RowSpec, Status};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{compute_dose, Plan};
use crate::robust::{
    base_program, hom_row, min_row, oar_row, pair_coefficients, scaled_row, Master, RobustInstance, RowGenParams,
    SoftOrgan,
};

/// Deviations at or below this many Gy do not count as exceeding.
pub const Y_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct PenaltyInstance<'a> {
    pub robust: RobustInstance<'a>,
    /// Index of the dose-volume organ.
    pub k: usize,
    pub dbar: f64,
    pub dhat: f64,
    pub alpha: f64,
    pub theta: usize,
    pub beta: f64,
}

impl<'a> PenaltyInstance<'a> {
    /// Reads the requirement from the structure set.
    pub fn new(robust: RobustInstance<'a>, beta: f64) -> Result<Self> {
        let spec = *robust
            .structures
            .dv()
            .ok_or_else(|| Error::Invalid("structure set has no dose-volume requirement".into()))?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("penalty weight must be finite and nonnegative, got {beta}")));
        }
        Ok(Self {
            robust,
            k: spec.oar,
            dbar: robust.structures.oars()[spec.oar].dbar,
            dhat: spec.dhat,
            alpha: spec.alpha,
            theta: robust.structures.theta().unwrap_or(0),
            beta,
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Upper bound of every deviation, d̂ − d̄.
    pub fn cap(&self) -> f64 {
        self.dhat - self.dbar
    }

    pub fn organ(&self) -> &'a [usize] {
        &self.robust.structures.oars()[self.k].voxels
    }

    fn soft(&self, budget: Option<f64>) -> SoftOrgan {
        SoftOrgan { k: self.k, cap: self.cap(), budget }
    }

    /// Deviations max(d_v − d̄, 0) over the organ for a physical dose.
    pub fn deviations(&self, dose: &[f64]) -> Vec<f64> {
        self.organ().iter().map(|&v| (dose[v] - self.dbar).max(0.0)).collect()
    }
}

/// (‖y‖₁, ‖y‖₀) of the deviations implied by `dose`.
pub fn deviation_norms(pi: &PenaltyInstance, dose: &[f64]) -> (f64, usize) {
    let y = pi.deviations(dose);
    (y.iter().sum(), y.iter().filter(|&&v| v > Y_TOL).count())
}

fn full_program(pi: &PenaltyInstance, budget: Option<f64>) -> Result<LinearProgram> {
    let inst = &pi.robust;
    inst.uncertainty.ensure_nonempty()?;
    let mut lp = base_program(inst)?;
    let first_y = lp.num_vars();
    for _ in pi.organ() {
        let j = lp.add_var(0.0, 0.0, pi.cap())?;
        lp.set_direction(j, -1.0)?;
    }
    let t = inst.target().len();
    let lo = inst.uncertainty.lo();
    let mut rows: Vec<RowSpec> = (0..t).map(|p| min_row(inst, p, lo[p])).collect();
    for num in 0..t {
        for den in 0..t {
            if num != den {
                let (pair, n) = pair_coefficients(inst.uncertainty, num, den);
                rows.extend(pair[..n].iter().map(|&(a, b)| hom_row(inst, num, den, a, b)));
            }
        }
    }
    for (k, o) in inst.structures.oars().iter().enumerate() {
        if k == pi.k {
            for (i, &v) in o.voxels.iter().enumerate() {
                let mut e = scaled_row(inst.influence, v, 1.0);
                e.push((first_y + i, -1.0));
                rows.push(RowSpec::new(e, Cmp::Le, pi.dbar));
            }
        } else {
            rows.extend(o.voxels.iter().map(|&v| oar_row(inst, v, o.dbar)));
        }
    }
    if let Some(theta) = budget {
        let e = (0..pi.organ().len()).map(|i| (first_y + i, 1.0)).collect();
        rows.push(RowSpec::new(e, Cmp::Le, theta));
    }
    lp.add_rows(rows)?;
    lp.set_beta(if budget.is_some() { 0.0 } else { pi.beta });
    Ok(lp)
}

/// Full penalty program: columns x, d̲, then one deviation y_v per organ
/// voxel in organ order; objective d̲ − β Σ y with direction −Σ e_y.
pub fn build_penalty_lp(pi: &PenaltyInstance) -> Result<LinearProgram> {
    full_program(pi, None)
}

/// The penalty program at β = 0 with the budget row Σ y ≤ Θ appended last.
pub fn build_budget_lp(pi: &PenaltyInstance, budget: f64) -> Result<LinearProgram> {
    if !(budget >= 0.0) {
        return Err(Error::Invalid(format!("deviation budget must be nonnegative, got {budget}")));
    }
    full_program(pi, Some(budget))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBounds {
    pub lower: f64,
    pub upper: f64,
}

fn master<'a>(pi: &PenaltyInstance<'a>, params: &RowGenParams, budget: Option<f64>) -> Result<Master<'a>> {
    Master::build(pi.robust, params.clone(), Some(pi.soft(budget)))
}

fn budget_dual(m: &Master) -> f64 {
    let r = m.budget_row().expect("budget master");
    m.result().map_or(0.0, |res| res.duals[r].max(0.0))
}

/// Penalty weights bracketing the smallest β that meets the voxel count:
/// the budget-row dual at Θ = 0 from above and at Θ = θ(d̂ − d̄) + ε from
/// below, with ε = 1e-6·(d̂ − d̄).
pub fn compute_beta_bounds(pi: &PenaltyInstance, params: &RowGenParams) -> Result<BetaBounds> {
    let cap = pi.cap();
    let mut m = master(pi, params, Some(0.0))?;
    m.set_beta(0.0);
    m.run().map_err(|e| match e {
        Error::Infeasible(_) => Error::Infeasible("hard dose bounds cannot be met even without deviations".into()),
        e => e,
    })?;
    let mut upper = budget_dual(&m);
    m.set_budget(pi.theta as f64 * cap + 1e-6 * cap)?;
    m.run()?;
    let lower = budget_dual(&m).min(upper);

    // the dual at Θ = 0 can be degenerate; push it up until y meets θ
    let mut check = master(pi, params, None)?;
    let mut step = (1e-9 * upper.abs()).max(1e-12);
    for _ in 0..200 {
        check.set_beta(upper);
        check.run()?;
        if deviation_norms(pi, check.dose()).1 <= pi.theta {
            break;
        }
        log::debug!("beta upper bound {upper} still leaves too many deviations; raising it");
        upper += step;
        step *= 2.0;
    }
    log::info!("beta bounds [{lower}, {upper}]");
    Ok(BetaBounds { lower, upper })
}

/// Solution of the penalty program at one β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySolution {
    pub beta: f64,
    pub plan: Plan,
    pub dmin: f64,
    pub y_l1: f64,
    pub y_l0: usize,
}

fn solution(pi: &PenaltyInstance, m: &Master, beta: f64) -> PenaltySolution {
    let (y_l1, y_l0) = deviation_norms(pi, m.dose());
    let mut plan = m.plan();
    let dmin = m.dmin();
    plan.objective = dmin;
    plan.params.insert("beta".into(), beta.into());
    plan.params.insert("theta".into(), pi.theta.into());
    plan.params.insert("y_l1".into(), y_l1.into());
    plan.params.insert("y_l0".into(), y_l0.into());
    PenaltySolution { beta, plan, dmin, y_l1, y_l0 }
}

/// Row-and-column generation on the penalty program at `pi.beta`.
pub fn row_column_generation(pi: &PenaltyInstance, params: &RowGenParams) -> Result<PenaltySolution> {
    let mut m = master(pi, params, None)?;
    m.set_beta(pi.beta);
    m.run()?;
    Ok(solution(pi, &m, pi.beta))
}

/// Independent solves over a β grid, in grid order.
pub fn penalty_grid(pi: &PenaltyInstance, betas: &[f64], params: &RowGenParams) -> Result<Vec<PenaltySolution>> {
    betas.par_iter().map(|&b| row_column_generation(&pi.with_beta(b), params)).collect()
}

/// First point of an increasing β grid whose solution meets the voxel
/// count, with its index. Solves are warm-started in grid order; points
/// strictly inside the ranging interval of the last optimal basis reuse
/// its solution, since the warm-started resolve would stop there at once.
pub fn first_meeting_count(
    pi: &PenaltyInstance,
    betas: &[f64],
    params: &RowGenParams,
) -> Result<Option<(usize, PenaltySolution)>> {
    if betas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Invalid("beta grid must be nondecreasing".into()));
    }
    let mut m = master(pi, params, None)?;
    let mut i = 0;
    while i < betas.len() {
        m.set_beta(betas[i]);
        m.run()?;
        let res = m.result().expect("solved master");
        let range = objective_ranging(m.lp(), res, m.lp().direction())?;
        let sol = solution(pi, &m, betas[i]);
        if sol.y_l0 <= pi.theta {
            return Ok(Some((i, sol)));
        }
        i += 1;
        while i < betas.len() && betas[i] < range.upper {
            i += 1;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub beta: f64,
    pub dmin: f64,
    pub y_l1: f64,
    pub y_l0: usize,
    pub basis_id: u64,
    pub range_lo: f64,
    pub range_hi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParametricTrace {
    pub points: Vec<TracePoint>,
}

impl ParametricTrace {
    pub fn csv(&self) -> String {
        let mut s = String::from("beta,dbar,y_l1,y_l0,basis_id,range_lo,range_hi\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{},{:016x},{},{}\n",
                p.beta, p.dmin, p.y_l1, p.y_l0, p.basis_id, p.range_lo, p.range_hi
            ));
        }
        s
    }

    /// Largest increase of d̲, ‖y‖₁ or d̲ − β‖y‖₁ between points taken in
    /// increasing β order; zero for a monotone trace.
    pub fn monotonicity_gap(&self) -> f64 {
        let mut pts: Vec<&TracePoint> = self.points.iter().collect();
        pts.sort_by(|a, b| a.beta.total_cmp(&b.beta));
        monotonicity_gap(pts.iter().map(|p| (p.beta, p.dmin, p.y_l1)))
    }
}

/// Largest increase along increasing β of any of d̲, ‖y‖₁, d̲ − β‖y‖₁ for
/// points given in increasing β order.
pub fn monotonicity_gap(points: impl IntoIterator<Item = (f64, f64, f64)>) -> f64 {
    let mut gap = 0.0f64;
    let mut prev: Option<(f64, f64, f64)> = None;
    for (b, d, y) in points {
        if let Some((pb, pd, py)) = prev {
            gap = gap.max(d - pd).max(y - py).max((d - b * y) - (pd - pb * py));
        }
        prev = Some((b, d, y));
    }
    gap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricOptions {
    /// Ranging nudge; `None` picks max(1e-7, 1e-3·(β_u − β_l)).
    pub eps: Option<f64>,
    pub max_iter: usize,
}

impl Default for ParametricOptions {
    fn default() -> Self {
        Self { eps: None, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricResult {
    pub beta: f64,
    pub solution: PenaltySolution,
    pub trace: ParametricTrace,
    pub iterations: usize,
}

/// Walks the optimal bases of the penalty program in β: past the upper
/// ranging end while too many voxels deviate, below the lower end while
/// the count is met, until a feasible basis neighbours the previous one.
/// Returns the lowest β at which the best feasible basis stays optimal.
pub fn parametric_penalty(
    pi: &PenaltyInstance,
    bounds: BetaBounds,
    params: &RowGenParams,
    opts: &ParametricOptions,
) -> Result<ParametricResult> {
    let (beta_l, mut beta_u) = (bounds.lower, bounds.upper);
    if !(beta_l >= 0.0 && beta_l <= beta_u) {
        return Err(Error::Invalid(format!("bad beta bracket [{beta_l}, {beta_u}]")));
    }
    let mut eps = opts.eps.unwrap_or_else(|| (1e-3 * (beta_u - beta_l)).max(1e-7));
    let mut m = master(pi, params, None)?;
    let n = pi.robust.num_beamlets();
    let mut trace = ParametricTrace::default();
    let mut beta = beta_l;
    let mut beta_prev = beta_l - eps;
    let mut prev_basis: Option<Basis> = None;
    let mut best: Option<(f64, PenaltySolution)> = None;
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for it in 1..=opts.max_iter {
        m.set_beta(beta);
        m.run()?;
        let res = m.result().expect("solved master");
        let range = objective_ranging(m.lp(), res, m.lp().direction())?;
        let basis = res.basis.clone();
        let sol = solution(pi, &m, beta);
        let id = basis.fingerprint();
        trace.points.push(TracePoint {
            beta,
            dmin: sol.dmin,
            y_l1: sol.y_l1,
            y_l0: sol.y_l0,
            basis_id: id,
            range_lo: range.lower,
            range_hi: range.upper,
        });
        log::debug!("beta {beta}: dmin {} |y|0 {} range [{}, {}]", sol.dmin, sol.y_l0, range.lower, range.upper);
        let visits = seen.entry(id).or_insert(0);
        *visits += 1;
        if *visits > 2 {
            eps /= 10.0;
            *visits = 0;
            log::debug!("basis {id:016x} revisited; nudge reduced to {eps}");
        }
        let mut next;
        if sol.y_l0 > pi.theta {
            if beta >= beta_u {
                // the bracket's upper end should already meet the count
                log::warn!("beta {beta_u} leaves {} deviating voxels; doubling the upper bound", sol.y_l0);
                beta_u = 2.0 * beta_u.max(eps);
            }
            next = (range.upper + eps).min(beta_u);
            if next <= beta {
                next = (beta + eps).min(beta_u);
            }
        } else {
            let lowest = range.lower.max(beta_l);
            if best.as_ref().map_or(true, |(b, _)| lowest < *b) {
                best = Some((lowest, sol.clone()));
            }
            let mut cols: Vec<usize> = (0..n).collect();
            cols.extend(m.deviation_columns().iter().map(|c| c.col));
            let adj = match &prev_basis {
                None => true,
                Some(pb) => adjacent(pb, &basis, &cols)?,
            };
            if (beta > beta_prev && adj) || beta <= beta_l {
                let (b, s) = best.expect("feasible point recorded");
                return Ok(ParametricResult { beta: b, solution: s, trace, iterations: it });
            }
            next = (range.lower - eps).max(beta_l);
        }
        beta_prev = beta;
        beta = next;
        prev_basis = Some(basis);
    }
    Err(Error::IterationGuard(opts.max_iter))
}

/// Bisection on β: returns (lo, hi) with the count violated at lo and met
/// at hi, or (β_l, β_l) when β_l already meets it. A heuristic narrowing.
pub fn bisection_narrow(
    pi: &PenaltyInstance,
    bounds: BetaBounds,
    iters: usize,
    params: &RowGenParams,
) -> Result<BetaBounds> {
    let mut m = master(pi, params, None)?;
    let mut meets = |beta: f64| -> Result<bool> {
        m.set_beta(beta);
        m.run()?;
        Ok(deviation_norms(pi, m.dose()).1 <= pi.theta)
    };
    let (mut lo, mut hi) = (bounds.lower, bounds.upper);
    if meets(lo)? {
        return Ok(BetaBounds { lower: lo, upper: lo });
    }
    if !meets(hi)? {
        return Ok(bounds);
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(BetaBounds { lower: lo, upper: hi })
}

/// Exact optimum of the voxel-count problem by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipResult {
    pub plan: Plan,
    pub objective: f64,
    /// Organ voxels allowed up to d̂ in the best solution.
    pub support: Vec<usize>,
    pub subsets: usize,
}

/// Largest organ handled by [`mip_oracle`].
pub const MIP_MAX_VOXELS: usize = 20;

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates the organ subsets of size min(θ, |H_K|) allowed to reach d̂
/// (larger supports only relax the program) and solves each induced LP.
pub fn mip_oracle(pi: &PenaltyInstance) -> Result<MipResult> {
    let organ = pi.organ();
    let h = organ.len();
    if h > MIP_MAX_VOXELS {
        return Err(Error::TooLarge(format!("dose-volume organ has {h} voxels (limit {MIP_MAX_VOXELS})")));
    }
    let size = pi.theta.min(h);
    let mut lp = build_penalty_lp(&pi.with_beta(0.0))?;
    let n = pi.robust.num_beamlets();
    let first_y = n + 1;
    for i in 0..h {
        lp.set_col_bounds(first_y + i, 0.0, 0.0)?;
    }
    let mut comb: Vec<usize> = (0..size).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    let mut subsets = 0;
    loop {
        subsets += 1;
        for &i in &comb {
            lp.set_col_bounds(first_y + i, 0.0, pi.cap())?;
        }
        let res = rfmo_lp::solve(&lp, None)?;
        match res.status {
            Status::Optimal => {
                if best.as_ref().map_or(true, |b| res.objective > b.0) {
                    best = Some((res.objective, res.x[..n].to_vec(), comb.iter().map(|&i| organ[i]).collect()));
                }
            }
            Status::Unbounded => return Err(Error::Unbounded("dose-volume program is unbounded".into())),
            Status::Infeasible => {}
        }
        for &i in &comb {
            lp.set_col_bounds(first_y + i, 0.0, 0.0)?;
        }
        if !next_combination(&mut comb, h) {
            break;
        }
    }
    let (objective, x, support) =
        best.ok_or_else(|| Error::Infeasible("no support yields a feasible program".into()))?;
    let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
    let mut plan = Plan::new(x, objective, pi.robust.uncertainty.mode());
    plan.params.insert("theta".into(), pi.theta.into());
    Ok(MipResult { plan, objective, support, subsets })
}

/// Largest violation of the voxel-count program by intensities `x`, in Gy
/// for dose rows and voxels for the count; zero when feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvFeasibility {
    pub excess_count: usize,
    pub over_cap: f64,
    pub oar_violation: f64,
}

impl DvFeasibility {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.excess_count == 0 && self.over_cap <= tol && self.oar_violation <= tol
    }
}

/// Checks the voxel count, the d̂ cap and the other organs' bounds.
pub fn dv_feasibility(pi: &PenaltyInstance, x: &[f64]) -> Result<DvFeasibility> {
    let dose = compute_dose(pi.robust.influence, x)?;
    let (_, l0) = deviation_norms(pi, &dose);
    let over_cap = pi.organ().iter().map(|&v| dose[v] - pi.dhat).fold(0.0f64, f64::max);
    let mut oar_violation = 0.0f64;
    for (k, o) in pi.robust.structures.oars().iter().enumerate() {
        if k != pi.k {
            for &v in &o.voxels {
                oar_violation = oar_violation.max(dose[v] - o.dbar);
            }
        }
    }
    Ok(DvFeasibility { excess_count: l0.saturating_sub(pi.theta), over_cap, oar_violation })
}

/// Contents of dv.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvReport {
    pub beta_star: f64,
    pub theta: usize,
    pub y_l0: usize,
    pub plan: Plan,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut c, 4) {
            count += 1;
        }
        assert_eq!(count, 6);
        let mut e: Vec<usize> = Vec::new();
        assert!(!next_combination(&mut e, 3));
    }

    #[test]
    fn gap_detects_increase() {
        assert_eq!(monotonicity_gap([(0.0, 2.0, 1.0), (1.0, 1.5, 0.5)]), 0.0);
        assert!(monotonicity_gap([(0.0, 2.0, 1.0), (1.0, 2.5, 0.5)]) > 0.4);
    }
}
