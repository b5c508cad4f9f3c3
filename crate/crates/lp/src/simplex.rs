use crate::basis::{Basis, VarStatus};
use crate::error::LpError;
use crate::lu::KernelInverse;
use crate::problem::LinearProgram;

const NONE: usize = usize::MAX;
/// Kernel inverse updates between fresh factorizations.
const REFACTOR_INTERVAL: usize = 100;
/// Dual iterations without objective progress before giving up on the
/// dual phase.
const DUAL_STALL_LIMIT: usize = 200;

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Unbounded,
    Infeasible,
}

/// Primal/dual solution with basis information.
///
/// `duals[i]` is the rate of change of the optimal objective per unit
/// increase of the binding bound of row `i` (zero for non-tight rows);
/// `reduced_costs[j]` is `c_j - sum_i duals[i] a_ij` (zero for basic
/// columns).
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    pub row_activity: Vec<f64>,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub basis: Basis,
    /// Improving direction over the columns when unbounded.
    pub ray: Option<Vec<f64>>,
    pub iterations: usize,
    /// Parameter value of the program that was solved.
    pub beta: f64,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Dual objective `sum_i duals[i] * bound_i + sum_j rc_j * bound_j` over
    /// binding bounds; equals `objective` at optimality.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let mut z = 0.0;
        for (i, &y) in self.duals.iter().enumerate() {
            if y != 0.0 {
                let r = lp.row(i);
                z += y * match self.basis.rows[i] {
                    VarStatus::AtUpper => r.upper(),
                    _ => r.lower(),
                };
            }
        }
        for (j, &d) in self.reduced_costs.iter().enumerate() {
            if d != 0.0 {
                z += d * self.x[j];
            }
        }
        z
    }
}

/// Tolerances and limits of the reference engine.
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub harris_tol: f64,
    /// Zero selects a size-dependent default.
    pub max_iterations: usize,
    /// Primal values are recomputed from scratch this often.
    pub refresh_interval: usize,
    /// Perturb bounds of basic variables after a run of degenerate pivots.
    pub perturbation: bool,
    pub degenerate_trigger: usize,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            optimality_tol: 1e-7,
            pivot_tol: 1e-9,
            harris_tol: 1e-9,
            max_iterations: 0,
            refresh_interval: 100,
            perturbation: true,
            degenerate_trigger: 20,
            seed: 0x9e37_79b9_7f4a_7c15,
        }
    }
}

impl SimplexOptions {
    pub fn solve(&self, lp: &LinearProgram, warm: Option<&Basis>) -> Result<SolveResult, LpError> {
        let mut e = Engine::new(lp, self, warm)?;
        e.run()
    }
}

/// Seam for plugging in another LP engine.
pub trait LpEngine: Send + Sync {
    fn solve(&self, lp: &LinearProgram, warm: Option<&Basis>) -> Result<SolveResult, LpError>;
}

/// The built-in revised simplex.
#[derive(Debug, Clone, Default)]
pub struct ReferenceEngine {
    pub options: SimplexOptions,
}

impl LpEngine for ReferenceEngine {
    fn solve(&self, lp: &LinearProgram, warm: Option<&Basis>) -> Result<SolveResult, LpError> {
        self.options.solve(lp, warm)
    }
}

/// Solves `lp` with default options, optionally warm-started from `warm`.
/// A basis from a smaller program is extended with new columns at a bound
/// and new rows basic.
pub fn solve(lp: &LinearProgram, warm: Option<&Basis>) -> Result<SolveResult, LpError> {
    SimplexOptions::default().solve(lp, warm)
}

struct Direction {
    q: usize,
    sigma: f64,
    dx: Vec<f64>,
    dr: Vec<(usize, f64)>,
}

enum Step {
    Unbounded,
    Flip(f64),
    Pivot { leave: usize, t: f64, to_upper: bool },
}

enum PrimalOutcome {
    Optimal,
    Infeasible,
    Unbounded(Vec<f64>),
    LostFeasibility,
}

enum DualOutcome {
    Optimal,
    Infeasible,
    Stalled,
}

struct Snapshot {
    status: Vec<VarStatus>,
    val: Vec<f64>,
    kcols: Vec<usize>,
    krows: Vec<usize>,
    kpos: Vec<usize>,
}

struct Engine<'a> {
    lp: &'a LinearProgram,
    o: &'a SimplexOptions,
    n: usize,
    m: usize,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    orig_lo: Vec<f64>,
    orig_up: Vec<f64>,
    status: Vec<VarStatus>,
    val: Vec<f64>,
    kcols: Vec<usize>,
    krows: Vec<usize>,
    kpos: Vec<usize>,
    lu: KernelInverse,
    iterations: usize,
    max_iter: usize,
    perturbed: bool,
    perturb_allowed: bool,
    shifted: Vec<bool>,
    degenerate: usize,
    bland: bool,
    since_refresh: usize,
    rng: u64,
    warm_installed: bool,
}

impl<'a> Engine<'a> {
    fn new(lp: &'a LinearProgram, o: &'a SimplexOptions, warm: Option<&Basis>) -> Result<Self, LpError> {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let cost: Vec<f64> = (0..n).map(|j| lp.cost(j)).collect();
        for (j, c) in cost.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::NonFinite(format!("objective of column {j} at beta {}", lp.beta())));
            }
        }
        let mut lo = lp.col_lower().to_vec();
        let mut up = lp.col_upper().to_vec();
        for r in lp.rows() {
            lo.push(r.lower());
            up.push(r.upper());
        }
        let max_iter = if o.max_iterations > 0 { o.max_iterations } else { 50_000 + 50 * (n + m) };
        let mut e = Engine {
            lp,
            o,
            n,
            m,
            cost,
            orig_lo: lo.clone(),
            orig_up: up.clone(),
            lo,
            up,
            status: Vec::new(),
            val: vec![0.0; n + m],
            kcols: Vec::new(),
            krows: Vec::new(),
            kpos: vec![NONE; n + m],
            lu: KernelInverse::empty(),
            iterations: 0,
            max_iter,
            perturbed: false,
            perturb_allowed: o.perturbation,
            shifted: vec![false; n + m],
            degenerate: 0,
            bland: false,
            since_refresh: 0,
            rng: o.seed | 1,
            warm_installed: false,
        };
        let installed = match warm {
            Some(b) if b.cols.len() <= n && b.rows.len() <= m => e.install_warm(b),
            _ => false,
        };
        e.warm_installed = installed;
        if !installed {
            e.install_slack();
        }
        e.recompute_primal();
        Ok(e)
    }

    fn default_nonbasic(&self, v: usize) -> VarStatus {
        if self.lo[v].is_finite() {
            VarStatus::AtLower
        } else if self.up[v].is_finite() {
            VarStatus::AtUpper
        } else {
            VarStatus::Free
        }
    }

    fn install_slack(&mut self) {
        self.status = (0..self.n).map(|j| self.default_nonbasic(j)).collect();
        self.status.extend(std::iter::repeat(VarStatus::Basic).take(self.m));
        self.rebuild_kernel_lists();
        self.lu = KernelInverse::empty();
    }

    fn install_warm(&mut self, b: &Basis) -> bool {
        let mut status = Vec::with_capacity(self.n + self.m);
        for j in 0..self.n {
            status.push(b.cols.get(j).copied().unwrap_or_else(|| self.default_nonbasic(j)));
        }
        for i in 0..self.m {
            status.push(b.rows.get(i).copied().unwrap_or(VarStatus::Basic));
        }
        for (v, s) in status.iter_mut().enumerate() {
            let bad = match *s {
                VarStatus::AtLower => !self.lo[v].is_finite(),
                VarStatus::AtUpper => !self.up[v].is_finite(),
                VarStatus::Free => self.lo[v].is_finite() || self.up[v].is_finite(),
                VarStatus::Basic => false,
            };
            if bad {
                *s = self.default_nonbasic(v);
            }
        }
        if status.iter().filter(|s| s.is_basic()).count() != self.m {
            return false;
        }
        self.status = status;
        self.rebuild_kernel_lists();
        if self.kcols.len() != self.krows.len() {
            return false;
        }
        self.factor().is_ok()
    }

    fn rebuild_kernel_lists(&mut self) {
        self.kcols.clear();
        self.krows.clear();
        self.kpos.iter_mut().for_each(|p| *p = NONE);
        for j in 0..self.n {
            if self.status[j].is_basic() {
                self.kpos[j] = self.kcols.len();
                self.kcols.push(j);
            }
        }
        for i in 0..self.m {
            if !self.status[self.n + i].is_basic() {
                self.kpos[self.n + i] = self.krows.len();
                self.krows.push(i);
            }
        }
    }

    fn factor(&mut self) -> Result<(), LpError> {
        let k = self.kcols.len();
        let mut mat = vec![0.0; k * k];
        for (t, &i) in self.krows.iter().enumerate() {
            for (j, a) in self.lp.row(i).entries() {
                let p = self.kpos[j];
                if p != NONE {
                    mat[t * k + p] = a;
                }
            }
        }
        self.lu = KernelInverse::factor(k, mat)?;
        Ok(())
    }

    fn nb_value(&self, v: usize) -> f64 {
        match self.status[v] {
            VarStatus::AtLower => self.lo[v],
            VarStatus::AtUpper => self.up[v],
            VarStatus::Free => 0.0,
            VarStatus::Basic => self.val[v],
        }
    }

    fn recompute_primal(&mut self) {
        let n = self.n;
        for j in 0..n {
            if !self.status[j].is_basic() {
                self.val[j] = self.nb_value(j);
            }
        }
        let mut rhs: Vec<f64> = Vec::with_capacity(self.krows.len());
        for &i in &self.krows {
            let mut s = self.nb_value(n + i);
            for (j, a) in self.lp.row(i).entries() {
                if self.kpos[j] == NONE {
                    s -= a * self.val[j];
                }
            }
            rhs.push(s);
        }
        self.lu.solve(&mut rhs);
        for (s, &j) in self.kcols.iter().enumerate() {
            self.val[j] = rhs[s];
        }
        for i in 0..self.m {
            let v = n + i;
            self.val[v] = if self.status[v].is_basic() { self.lp.row(i).dot(&self.val[..n]) } else { self.nb_value(v) };
        }
        self.since_refresh = 0;
    }

    /// +1 when a basic variable lies below its lower bound, -1 above its
    /// upper bound, 0 otherwise.
    fn infeasibility_sign(&self, v: usize) -> f64 {
        let x = self.val[v];
        if x < self.lo[v] - self.o.feasibility_tol {
            1.0
        } else if x > self.up[v] + self.o.feasibility_tol {
            -1.0
        } else {
            0.0
        }
    }

    fn basic_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.kcols
            .iter()
            .copied()
            .chain((0..self.m).map(move |i| self.n + i).filter(move |&v| self.status[v].is_basic()))
    }

    fn primal_feasible(&self) -> bool {
        self.basic_vars().all(|v| self.infeasibility_sign(v) == 0.0)
    }

    /// Row multipliers as (row, value) pairs. The first `k` entries belong
    /// to the tight rows in kernel order.
    fn duals(&self, phase1: bool) -> Vec<(usize, f64)> {
        let k = self.kcols.len();
        let mut g = vec![0.0; k];
        let mut extra = Vec::new();
        if phase1 {
            for (s, &j) in self.kcols.iter().enumerate() {
                g[s] = self.infeasibility_sign(j);
            }
            for i in 0..self.m {
                let v = self.n + i;
                if !self.status[v].is_basic() {
                    continue;
                }
                let c = self.infeasibility_sign(v);
                if c != 0.0 {
                    extra.push((i, -c));
                    for (j, a) in self.lp.row(i).entries() {
                        let p = self.kpos[j];
                        if p != NONE {
                            g[p] += c * a;
                        }
                    }
                }
            }
        } else {
            for (s, &j) in self.kcols.iter().enumerate() {
                g[s] = self.cost[j];
            }
        }
        self.lu.solve_transpose(&mut g);
        let mut pi: Vec<(usize, f64)> = self.krows.iter().copied().zip(g).collect();
        pi.extend(extra);
        pi
    }

    fn reduced_costs(&self, pi: &[(usize, f64)], phase1: bool) -> Vec<f64> {
        let mut d = if phase1 { vec![0.0; self.n] } else { self.cost.clone() };
        for &(i, p) in pi {
            if p != 0.0 {
                for (j, a) in self.lp.row(i).entries() {
                    d[j] -= p * a;
                }
            }
        }
        d
    }

    fn improving(&self, v: usize, d: f64) -> Option<(f64, f64)> {
        if self.lo[v] == self.up[v] {
            return None;
        }
        let tol = self.o.optimality_tol;
        match self.status[v] {
            VarStatus::AtLower if d > tol => Some((1.0, d)),
            VarStatus::AtUpper if d < -tol => Some((-1.0, -d)),
            VarStatus::Free if d.abs() > tol => Some((d.signum(), d.abs())),
            _ => None,
        }
    }

    fn price(&self, d: &[f64], pi: &[(usize, f64)], rejected: &[usize]) -> Option<(usize, f64)> {
        let k = self.kcols.len();
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n {
            if self.status[j].is_basic() || rejected.contains(&j) {
                continue;
            }
            if let Some((sigma, score)) = self.improving(j, d[j]) {
                if self.bland {
                    return Some((j, sigma));
                }
                if best.map_or(true, |b| score > b.2) {
                    best = Some((j, sigma, score));
                }
            }
        }
        for &(i, p) in &pi[..k] {
            let v = self.n + i;
            if rejected.contains(&v) {
                continue;
            }
            if let Some((sigma, score)) = self.improving(v, p) {
                let better = if self.bland { best.map_or(true, |b| v < b.0) } else { best.map_or(true, |b| score > b.2) };
                if better {
                    best = Some((v, sigma, score));
                }
            }
        }
        best.map(|b| (b.0, b.1))
    }

    fn direction(&self, q: usize, sigma: f64) -> Direction {
        let n = self.n;
        let k = self.kcols.len();
        let mut dx = vec![0.0; k];
        if q < n {
            for (t, &i) in self.krows.iter().enumerate() {
                dx[t] = -sigma * self.lp.row(i).coeff(q);
            }
        } else {
            dx[self.kpos[q]] = sigma;
        }
        self.lu.solve(&mut dx);
        let mut dcol = vec![0.0; n];
        let mut touched = false;
        for (s, &j) in self.kcols.iter().enumerate() {
            if dx[s] != 0.0 {
                dcol[j] = dx[s];
                touched = true;
            }
        }
        if q < n {
            dcol[q] = sigma;
            touched = true;
        }
        let mut dr = Vec::new();
        if touched {
            for i in 0..self.m {
                if !self.status[n + i].is_basic() {
                    continue;
                }
                let r = self.lp.row(i);
                let mut s = 0.0;
                for (j, a) in r.entries() {
                    s += a * dcol[j];
                }
                if s != 0.0 {
                    dr.push((i, s));
                }
            }
        }
        Direction { q, sigma, dx, dr }
    }

    fn block(&self, v: usize, alpha: f64, phase1: bool) -> Option<(f64, bool)> {
        let x = self.val[v];
        let (lo, up) = (self.lo[v], self.up[v]);
        let ftol = self.o.feasibility_tol;
        if phase1 && x < lo - ftol {
            (alpha > 0.0).then(|| (lo - x, false))
        } else if phase1 && x > up + ftol {
            (alpha < 0.0).then(|| (x - up, true))
        } else if alpha > 0.0 && up.is_finite() {
            Some((up - x, true))
        } else if alpha < 0.0 && lo.is_finite() {
            Some((x - lo, false))
        } else {
            None
        }
    }

    fn ratio(&self, dir: &Direction, phase1: bool) -> Step {
        let q = dir.q;
        let t_flip = if self.lo[q].is_finite() && self.up[q].is_finite() { self.up[q] - self.lo[q] } else { f64::INFINITY };
        let piv = self.o.pivot_tol;
        let mut cands: Vec<(usize, f64, f64, bool)> = Vec::new();
        let mut consider = |v: usize, alpha: f64| {
            if alpha.abs() > piv {
                if let Some((slack, to_upper)) = self.block(v, alpha, phase1) {
                    cands.push((v, alpha.abs(), slack, to_upper));
                }
            }
        };
        for (s, &j) in self.kcols.iter().enumerate() {
            consider(j, dir.dx[s]);
        }
        for &(i, a) in &dir.dr {
            consider(self.n + i, a);
        }
        if cands.is_empty() {
            return if t_flip.is_finite() { Step::Flip(t_flip) } else { Step::Unbounded };
        }
        let chosen = if self.bland {
            let mut best: Option<(usize, f64, bool)> = None;
            for &(v, a, slack, up) in &cands {
                let r = (slack / a).max(0.0);
                let better = match best {
                    None => true,
                    Some((bv, br, _)) => r < br - 1e-12 || ((r - br).abs() <= 1e-12 && v < bv),
                };
                if better {
                    best = Some((v, r, up));
                }
            }
            best.unwrap()
        } else {
            let htol = self.o.harris_tol;
            let tmax = cands.iter().map(|&(_, a, slack, _)| (slack + htol) / a).fold(f64::INFINITY, f64::min);
            let mut best: Option<(usize, f64, bool, f64)> = None;
            for &(v, a, slack, up) in &cands {
                let r = slack / a;
                if r <= tmax {
                    let better = match best {
                        None => true,
                        Some((_, br, _, ba)) => a > ba || (a == ba && r < br),
                    };
                    if better {
                        best = Some((v, r, up, a));
                    }
                }
            }
            let b = best.expect("harris pass keeps the minimizer");
            (b.0, b.1.max(0.0), b.2)
        };
        if t_flip <= chosen.1 {
            Step::Flip(t_flip)
        } else {
            Step::Pivot { leave: chosen.0, t: chosen.1, to_upper: chosen.2 }
        }
    }

    fn apply(&mut self, dir: &Direction, t: f64) {
        if t == 0.0 {
            return;
        }
        self.val[dir.q] += dir.sigma * t;
        for (s, &j) in self.kcols.iter().enumerate() {
            self.val[j] += t * dir.dx[s];
        }
        for &(i, a) in &dir.dr {
            self.val[self.n + i] += t * a;
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            status: self.status.clone(),
            val: self.val.clone(),
            kcols: self.kcols.clone(),
            krows: self.krows.clone(),
            kpos: self.kpos.clone(),
        }
    }

    fn restore_snapshot(&mut self, s: Snapshot) -> Result<(), LpError> {
        self.status = s.status;
        self.val = s.val;
        self.kcols = s.kcols;
        self.krows = s.krows;
        self.kpos = s.kpos;
        self.factor()
    }

    fn remove_kcol(&mut self, v: usize) {
        let s = self.kpos[v];
        self.kcols.swap_remove(s);
        if s < self.kcols.len() {
            self.kpos[self.kcols[s]] = s;
        }
        self.kpos[v] = NONE;
    }

    fn remove_krow(&mut self, v: usize) {
        let t = self.kpos[v];
        self.krows.swap_remove(t);
        if t < self.krows.len() {
            self.kpos[self.n + self.krows[t]] = t;
        }
        self.kpos[v] = NONE;
    }

    /// Coefficients of structural column `j` on the tight rows.
    fn kernel_col(&self, j: usize) -> Vec<f64> {
        self.krows.iter().map(|&i| self.lp.row(i).coeff(j)).collect()
    }

    /// Coefficients of row `i` on the kernel columns.
    fn kernel_row(&self, i: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.kcols.len()];
        for (j, a) in self.lp.row(i).entries() {
            let p = self.kpos[j];
            if p != NONE {
                r[p] = a;
            }
        }
        r
    }

    fn pivot(&mut self, q: usize, p: usize, to_upper: bool) -> Result<(), LpError> {
        let n = self.n;
        self.status[p] = if to_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
        self.val[p] = if to_upper { self.up[p] } else { self.lo[p] };
        self.status[q] = VarStatus::Basic;
        let update = match (q < n, p < n) {
            (true, true) => {
                let s = self.kpos[p];
                let u = self.kernel_col(q);
                self.kcols[s] = q;
                self.kpos[q] = s;
                self.kpos[p] = NONE;
                self.lu.replace_col(s, &u)
            }
            (true, false) => {
                let u = self.kernel_col(q);
                let r = self.kernel_row(p - n);
                let c = self.lp.row(p - n).coeff(q);
                self.kpos[q] = self.kcols.len();
                self.kcols.push(q);
                self.kpos[p] = self.krows.len();
                self.krows.push(p - n);
                self.lu.grow(&u, &r, c)
            }
            (false, true) => {
                let (t, s) = (self.kpos[q], self.kpos[p]);
                self.remove_krow(q);
                self.remove_kcol(p);
                self.lu.shrink(t, s)
            }
            (false, false) => {
                let t = self.kpos[q];
                let r = self.kernel_row(p - n);
                self.krows[t] = p - n;
                self.kpos[p] = t;
                self.kpos[q] = NONE;
                self.lu.replace_row(t, &r)
            }
        };
        if self.perturbed {
            self.shift_bounds(q);
        }
        if update.is_err() || self.lu.updates() >= REFACTOR_INTERVAL {
            self.factor()?;
        }
        Ok(())
    }

    fn next_unit(&mut self) -> f64 {
        // xorshift64*
        let mut x = self.rng;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.rng = x;
        (x.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn shift_bounds(&mut self, v: usize) {
        if self.shifted[v] || self.lo[v] == self.up[v] {
            return;
        }
        self.shifted[v] = true;
        if self.lo[v].is_finite() {
            let xi = 1e-6 * (1.0 + self.lo[v].abs()) * (0.5 + self.next_unit());
            self.lo[v] -= xi;
        }
        if self.up[v].is_finite() {
            let xi = 1e-6 * (1.0 + self.up[v].abs()) * (0.5 + self.next_unit());
            self.up[v] += xi;
        }
    }

    fn perturb(&mut self) {
        self.perturbed = true;
        let basics: Vec<usize> = self.basic_vars().collect();
        for v in basics {
            self.shift_bounds(v);
        }
    }

    fn unperturb(&mut self) {
        self.lo.copy_from_slice(&self.orig_lo);
        self.up.copy_from_slice(&self.orig_up);
        self.shifted.iter_mut().for_each(|s| *s = false);
        self.perturbed = false;
        self.perturb_allowed = false;
        self.recompute_primal();
    }

    fn note_step(&mut self, t: f64) {
        if t <= 1e-12 {
            self.degenerate += 1;
            if self.degenerate > 10 * (self.n + self.m) {
                self.bland = true;
            }
        } else {
            self.degenerate = 0;
            self.bland = false;
        }
    }

    fn tick(&mut self) -> Result<(), LpError> {
        self.iterations += 1;
        if self.iterations > self.max_iter {
            return Err(LpError::IterationLimit(self.max_iter));
        }
        self.since_refresh += 1;
        if self.since_refresh >= self.o.refresh_interval {
            self.recompute_primal();
        }
        Ok(())
    }

    fn ray(&self, dir: &Direction) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        if dir.q < self.n {
            r[dir.q] = dir.sigma;
        }
        for (s, &j) in self.kcols.iter().enumerate() {
            r[j] = dir.dx[s];
        }
        r
    }

    fn primal(&mut self, phase1: bool) -> Result<PrimalOutcome, LpError> {
        let mut rejected: Vec<usize> = Vec::new();
        loop {
            if phase1 && self.primal_feasible() {
                return Ok(PrimalOutcome::Optimal);
            }
            if !phase1 && self.since_refresh == 0 && !self.primal_feasible() {
                return Ok(PrimalOutcome::LostFeasibility);
            }
            let pi = self.duals(phase1);
            let d = self.reduced_costs(&pi, phase1);
            let Some((q, sigma)) = self.price(&d, &pi, &rejected) else {
                return Ok(if phase1 { PrimalOutcome::Infeasible } else { PrimalOutcome::Optimal });
            };
            let dir = self.direction(q, sigma);
            match self.ratio(&dir, phase1) {
                Step::Unbounded => {
                    if phase1 {
                        rejected.push(q);
                        continue;
                    }
                    return Ok(PrimalOutcome::Unbounded(self.ray(&dir)));
                }
                Step::Flip(t) => {
                    self.apply(&dir, t);
                    let (st, x) = if self.status[q] == VarStatus::AtLower {
                        (VarStatus::AtUpper, self.up[q])
                    } else {
                        (VarStatus::AtLower, self.lo[q])
                    };
                    self.status[q] = st;
                    self.val[q] = x;
                    rejected.clear();
                    self.note_step(t);
                }
                Step::Pivot { leave, t, to_upper } => {
                    let snap = self.snapshot();
                    self.apply(&dir, t);
                    if self.pivot(q, leave, to_upper).is_err() {
                        self.restore_snapshot(snap)?;
                        rejected.push(q);
                        continue;
                    }
                    rejected.clear();
                    self.note_step(t);
                }
            }
            self.tick()?;
            if !phase1 && self.perturb_allowed && !self.perturbed && self.degenerate >= self.o.degenerate_trigger {
                self.perturb();
            }
        }
    }

    fn dual_feasible(&self) -> bool {
        let pi = self.duals(false);
        let d = self.reduced_costs(&pi, false);
        for j in 0..self.n {
            if !self.status[j].is_basic() && self.improving(j, d[j]).is_some() {
                return false;
            }
        }
        let k = self.kcols.len();
        pi[..k].iter().all(|&(i, p)| self.improving(self.n + i, p).is_none())
    }

    fn dual(&mut self) -> Result<DualOutcome, LpError> {
        let n = self.n;
        let otol = self.o.optimality_tol;
        // dual degeneracy can cycle; hand over to the primal phases when the
        // objective stops falling
        let mut best = f64::INFINITY;
        let mut stall = 0usize;
        loop {
            let obj: f64 = (0..n).map(|j| self.cost[j] * self.val[j]).sum();
            if obj < best - 1e-12 * (1.0 + best.abs().min(1e300)) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall > DUAL_STALL_LIMIT {
                    return Ok(DualOutcome::Stalled);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for v in self.basic_vars() {
                let x = self.val[v];
                let inf = (self.lo[v] - x).max(x - self.up[v]);
                if inf > self.o.feasibility_tol && leave.map_or(true, |l| inf > l.1) {
                    leave = Some((v, inf));
                }
            }
            let Some((p, _)) = leave else {
                return Ok(DualOutcome::Optimal);
            };
            let below = self.val[p] < self.lo[p];
            let target = if below { self.lo[p] } else { self.up[p] };
            let delta = target - self.val[p];

            let pi = self.duals(false);
            let d = self.reduced_costs(&pi, false);
            let k = self.kcols.len();
            let mut w = vec![0.0; k];
            if p < n {
                w[self.kpos[p]] = 1.0;
            } else {
                for (j, a) in self.lp.row(p - n).entries() {
                    let s = self.kpos[j];
                    if s != NONE {
                        w[s] = a;
                    }
                }
            }
            self.lu.solve_transpose(&mut w);
            let mut acc = vec![0.0; n];
            for (t, &i) in self.krows.iter().enumerate() {
                if w[t] != 0.0 {
                    for (j, a) in self.lp.row(i).entries() {
                        acc[j] += w[t] * a;
                    }
                }
            }
            if p >= n {
                for (j, a) in self.lp.row(p - n).entries() {
                    acc[j] -= a;
                }
            }
            // alpha_j = -acc[j] for structurals, w_t for tight rows
            let mut cands: Vec<(usize, f64, f64, f64)> = Vec::new();
            let mut consider = |v: usize, alpha: f64, dj: f64| {
                if self.lo[v] == self.up[v] {
                    return;
                }
                let sigma = match self.status[v] {
                    VarStatus::AtLower => 1.0,
                    VarStatus::AtUpper => -1.0,
                    VarStatus::Free => (alpha * delta).signum(),
                    VarStatus::Basic => return,
                };
                if alpha * sigma * delta > 0.0 && alpha.abs() > self.o.pivot_tol {
                    cands.push((v, sigma, alpha.abs(), (-dj * sigma).max(0.0)));
                }
            };
            for j in 0..n {
                if !self.status[j].is_basic() {
                    consider(j, -acc[j], d[j]);
                }
            }
            for (t, &(i, p_i)) in pi[..k].iter().enumerate() {
                consider(n + i, w[t], p_i);
            }
            if cands.is_empty() {
                return Ok(DualOutcome::Infeasible);
            }
            let tmax = cands.iter().map(|c| (c.3 + otol) / c.2).fold(f64::INFINITY, f64::min);
            let mut best: Option<(usize, f64, f64)> = None;
            for &(v, sigma, a, dd) in &cands {
                if dd / a <= tmax && best.map_or(true, |b| a > b.2) {
                    best = Some((v, sigma, a));
                }
            }
            let (q, sigma, _) = best.expect("harris pass keeps the minimizer");
            let dir = self.direction(q, sigma);
            let dp = if p < n {
                dir.dx[self.kpos[p]]
            } else {
                dir.dr.iter().find(|e| e.0 == p - n).map_or(0.0, |e| e.1)
            };
            if dp.abs() <= self.o.pivot_tol || dp * delta <= 0.0 {
                return Ok(DualOutcome::Stalled);
            }
            let t = delta / dp;
            let snap = self.snapshot();
            self.apply(&dir, t);
            if self.pivot(q, p, !below).is_err() {
                self.restore_snapshot(snap)?;
                return Ok(DualOutcome::Stalled);
            }
            self.note_step(t);
            self.tick()?;
        }
    }

    fn run(&mut self) -> Result<SolveResult, LpError> {
        for _round in 0..50 {
            if !self.primal_feasible() {
                if self.dual_feasible() {
                    self.dual()?;
                }
                if !self.primal_feasible() {
                    match self.primal(true)? {
                        PrimalOutcome::Infeasible => {
                            if self.perturbed {
                                self.unperturb();
                                continue;
                            }
                            return Ok(self.result(Status::Infeasible, None));
                        }
                        PrimalOutcome::LostFeasibility => continue,
                        _ => {}
                    }
                }
            }
            match self.primal(false)? {
                PrimalOutcome::Unbounded(ray) => {
                    if self.perturbed {
                        self.unperturb();
                    }
                    return Ok(self.result(Status::Unbounded, Some(ray)));
                }
                PrimalOutcome::LostFeasibility | PrimalOutcome::Infeasible => {
                    if self.perturbed {
                        self.unperturb();
                    }
                    continue;
                }
                PrimalOutcome::Optimal => {}
            }
            if self.perturbed {
                self.unperturb();
                continue;
            }
            self.recompute_primal();
            if self.primal_feasible() && self.dual_feasible() {
                return Ok(self.result(Status::Optimal, None));
            }
        }
        Err(LpError::Numerical("simplex did not settle on a feasible optimal basis".into()))
    }

    fn result(&self, status: Status, ray: Option<Vec<f64>>) -> SolveResult {
        let n = self.n;
        let pi = self.duals(false);
        let d = self.reduced_costs(&pi, false);
        let k = self.kcols.len();
        let mut duals = vec![0.0; self.m];
        for &(i, p) in &pi[..k] {
            duals[i] = p;
        }
        let reduced_costs: Vec<f64> = (0..n).map(|j| if self.status[j].is_basic() { 0.0 } else { d[j] }).collect();
        let x = self.val[..n].to_vec();
        let objective = (0..n).map(|j| self.cost[j] * x[j]).sum();
        SolveResult {
            status,
            objective,
            x,
            row_activity: self.val[n..].to_vec(),
            duals,
            reduced_costs,
            basis: Basis { cols: self.status[..n].to_vec(), rows: self.status[n..].to_vec() },
            ray,
            iterations: self.iterations,
            beta: self.lp.beta(),
        }
    }
}

/// Reduced costs of every nonbasic variable of `basis` at the current
/// objective and along `dir`: (status, lower == upper, d0, d_dir).
pub(crate) fn basis_reduced_costs(
    lp: &LinearProgram,
    basis: &Basis,
    dir: &[f64],
) -> Result<Vec<(VarStatus, bool, f64, f64)>, LpError> {
    let opts = SimplexOptions::default();
    let e = Engine::new(lp, &opts, Some(basis))?;
    if !e.warm_installed || e.status[..e.n] != basis.cols[..] || e.status[e.n..] != basis.rows[..] {
        return Err(LpError::Numerical("basis cannot be factored for ranging".into()));
    }
    let k = e.kcols.len();
    let pi0 = e.duals(false);
    let d0 = e.reduced_costs(&pi0, false);
    let mut g: Vec<f64> = e.kcols.iter().map(|&j| dir[j]).collect();
    e.lu.solve_transpose(&mut g);
    let pid: Vec<(usize, f64)> = e.krows.iter().copied().zip(g).collect();
    let mut dd = dir.to_vec();
    for &(i, p) in &pid {
        if p != 0.0 {
            for (j, a) in lp.row(i).entries() {
                dd[j] -= p * a;
            }
        }
    }
    let mut out = Vec::new();
    for j in 0..e.n {
        if !e.status[j].is_basic() {
            out.push((e.status[j], e.lo[j] == e.up[j], d0[j], dd[j]));
        }
    }
    for t in 0..k {
        let v = e.n + e.krows[t];
        out.push((e.status[v], e.lo[v] == e.up[v], pi0[t].1, pid[t].1));
    }
    Ok(out)
}
