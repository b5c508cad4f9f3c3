//! Nominal and robust formulations and their solution by row generation.
//!
//! Column layout of every program built here: beamlet intensities in
//! `0..n`, the worst-case adjusted dose d̲ at `n`, then dose-volume
//! deviation columns in generation order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use rfmo_lp::{Basis, Cmp, ColumnSpec, LinearProgram, LpError, RowSpec, SimplexOptions, SolveResult, Status};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{compute_dose, Diagnostics, InfluenceMatrix, Plan, StructureSet, TraceRecord};
use crate::uncertainty::SpatialUncertainty;

/// Problem data shared by all formulations.
#[derive(Debug, Clone, Copy)]
pub struct RobustInstance<'a> {
    pub structures: &'a StructureSet,
    pub influence: &'a InfluenceMatrix,
    pub uncertainty: &'a SpatialUncertainty,
    pub mu: f64,
}

impl<'a> RobustInstance<'a> {
    pub fn new(
        structures: &'a StructureSet,
        influence: &'a InfluenceMatrix,
        uncertainty: &'a SpatialUncertainty,
        mu: f64,
    ) -> Result<Self> {
        if !(mu > 1.0 && mu.is_finite()) {
            return Err(Error::Invalid(format!("homogeneity parameter mu must exceed 1, got {mu}")));
        }
        if influence.num_voxels() != structures.num_voxels() {
            return Err(Error::Dimension(format!(
                "influence has {} voxels, structures {}",
                influence.num_voxels(),
                structures.num_voxels()
            )));
        }
        if uncertainty.voxels() != structures.target() {
            return Err(Error::Dimension("uncertainty set is not defined on the target".into()));
        }
        uncertainty.ensure_nonempty()?;
        Ok(Self { structures, influence, uncertainty, mu })
    }

    pub fn num_beamlets(&self) -> usize {
        self.influence.num_beamlets()
    }

    pub fn target(&self) -> &'a [usize] {
        self.structures.target()
    }

    /// Column of d̲.
    pub fn dmin_col(&self) -> usize {
        self.influence.num_beamlets()
    }
}

/// A row count that may be unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    All,
    N(usize),
}

impl Count {
    pub fn limit(self) -> usize {
        match self {
            Count::All => usize::MAX,
            Count::N(n) => n,
        }
    }
}

impl Serialize for Count {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Count::All => s.serialize_str("all"),
            Count::N(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Count::N(n)),
            Raw::S(s) if s == "all" => Ok(Count::All),
            Raw::S(s) => Err(serde::de::Error::custom(format!("expected a count or \"all\", got {s:?}"))),
        }
    }
}

impl std::str::FromStr for Count {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Count::All);
        }
        s.parse().map(Count::N).map_err(|_| Error::Invalid(format!("expected a count or \"all\", got {s:?}")))
    }
}

/// Row-generation schedule and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RowGenParams {
    pub n0: Count,
    pub n_h: Count,
    pub n_s: Count,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau_z: f64,
    pub x0: Option<Vec<f64>>,
    /// Guard on outer rounds.
    pub max_rounds: usize,
    /// Largest program `solve_full` will materialize.
    pub row_cap: usize,
}

impl Default for RowGenParams {
    fn default() -> Self {
        Self {
            n0: Count::N(2000),
            n_h: Count::N(2000),
            n_s: Count::N(2000),
            tau1: 10.0,
            tau2: 0.0,
            tau3: 1e-2,
            tau_z: 1e-2,
            x0: None,
            max_rounds: 100_000,
            row_cap: 2_000_000,
        }
    }
}

impl RowGenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > self.tau2 && self.tau2 >= 0.0) {
            return Err(Error::Invalid(format!("need tau1 > tau2 >= 0, got {} and {}", self.tau1, self.tau2)));
        }
        if !(self.tau3 >= 0.0 && self.tau_z > 0.0) {
            return Err(Error::Invalid("need tau3 >= 0 and tau_z > 0".into()));
        }
        for (name, c) in [("n0", self.n0), ("n_h", self.n_h), ("n_s", self.n_s)] {
            if c == Count::N(0) {
                return Err(Error::Invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Identity of a generated constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKey {
    Oar { organ: usize, voxel: usize },
    /// `family` 0 is the row through (φ̄_v, max{φ̄_v−γ, φ̲_u}), 1 the row
    /// through (min{φ̲_u+γ, φ̄_v}, φ̲_u); `num` and `den` are target
    /// positions of v and u.
    Hom { num: usize, den: usize, family: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub key: RowKey,
    /// Deterministic tie-break index.
    pub index: u64,
    pub value: f64,
}

impl Eq for Violation {}

impl Ord for Violation {
    /// Greater means more violated, then lower index.
    fn cmp(&self, o: &Self) -> Ordering {
        self.value.total_cmp(&o.value).then(o.index.cmp(&self.index))
    }
}

impl PartialOrd for Violation {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Oar(usize),
    Homogeneity,
}

/// "Violated by at least ε": strict when ε is zero.
pub fn passes(value: f64, eps: f64) -> bool {
    if eps == 0.0 {
        value > 0.0
    } else {
        value >= eps
    }
}

/// Coefficients (a, b) of the one or two homogeneity rows
/// a·d_v − μ·b·d_u ≤ 0 for numerator v and denominator u.
pub fn pair_coefficients(u: &SpatialUncertainty, num: usize, den: usize) -> ([(f64, f64); 2], usize) {
    let g = u.gamma(den, num);
    let (hi_v, lo_u) = (u.hi()[num], u.lo()[den]);
    let c = (hi_v, (hi_v - g).max(lo_u));
    let d = ((lo_u + g).min(hi_v), lo_u);
    if c == d {
        ([c, d], 1)
    } else {
        ([c, d], 2)
    }
}

fn hom_index(t: usize, num: usize, den: usize, family: u8) -> u64 {
    ((num * t + den) as u64) * 2 + family as u64
}

/// Keeps the best `q` items seen.
struct TopQ {
    q: usize,
    heap: BinaryHeap<Reverse<Violation>>,
}

impl TopQ {
    fn new(q: usize) -> Self {
        Self { q, heap: BinaryHeap::new() }
    }

    fn full(&self) -> bool {
        self.heap.len() >= self.q
    }

    /// Smallest value that could still enter.
    fn floor(&self) -> Option<f64> {
        if self.full() {
            self.heap.peek().map(|r| r.0.value)
        } else {
            None
        }
    }

    fn push(&mut self, v: Violation) {
        if self.q == 0 {
            return;
        }
        if !self.full() {
            self.heap.push(Reverse(v));
        } else if let Some(w) = self.heap.peek() {
            if v > w.0 {
                self.heap.pop();
                self.heap.push(Reverse(v));
            }
        }
    }

    fn merge(mut self, other: TopQ) -> TopQ {
        for Reverse(v) in other.heap {
            self.push(v);
        }
        self
    }

    fn into_sorted(self) -> Vec<Violation> {
        let mut v: Vec<Violation> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

/// Most violated OAR rows of organ `k` at dose `dose`, skipping voxels for
/// which `skip` holds.
pub(crate) fn scan_oar(
    structures: &StructureSet,
    k: usize,
    bound: f64,
    dose: &[f64],
    q: usize,
    eps: f64,
    skip: &dyn Fn(usize) -> bool,
) -> Vec<Violation> {
    let mut top = TopQ::new(q);
    for &v in &structures.oars()[k].voxels {
        if skip(v) {
            continue;
        }
        let value = dose[v] - bound;
        if passes(value, eps) {
            top.push(Violation { key: RowKey::Oar { organ: k, voxel: v }, index: v as u64, value });
        }
    }
    top.into_sorted()
}

/// Most violated homogeneity rows at target dose `dt` (by target
/// position). Pairs are visited per numerator in increasing order of
/// φ̲_u d_u and the scan stops once φ̄_v d_v − μ φ̲_u d_u, an upper bound on
/// both rows of the pair, can no longer qualify.
pub(crate) fn scan_hom(
    u: &SpatialUncertainty,
    mu: f64,
    dt: &[f64],
    q: usize,
    eps: f64,
    generated: &HashSet<u64>,
) -> Vec<Violation> {
    let t = dt.len();
    let lo_d: Vec<f64> = (0..t).map(|i| u.lo()[i] * dt[i]).collect();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| lo_d[a].total_cmp(&lo_d[b]).then(a.cmp(&b)));
    let chunk = (t / (4 * rayon::current_num_threads().max(1))).max(16);
    let nums: Vec<usize> = (0..t).collect();
    nums.par_chunks(chunk)
        .fold(
            || TopQ::new(q),
            |mut top, part| {
                for &num in part {
                    let hv = u.hi()[num] * dt[num];
                    for &den in &order {
                        let bound = hv - mu * lo_d[den];
                        let qualifies = passes(bound, eps) && top.floor().map_or(true, |f| bound >= f);
                        if !qualifies {
                            break;
                        }
                        if den == num {
                            continue;
                        }
                        let (rows, nrows) = pair_coefficients(u, num, den);
                        for (f, &(a, b)) in rows[..nrows].iter().enumerate() {
                            let idx = hom_index(t, num, den, f as u8);
                            if generated.contains(&idx) {
                                continue;
                            }
                            let value = a * dt[num] - mu * b * dt[den];
                            if passes(value, eps) {
                                top.push(Violation { key: RowKey::Hom { num, den, family: f as u8 }, index: idx, value });
                            }
                        }
                    }
                }
                top
            },
        )
        .reduce(|| TopQ::new(q), TopQ::merge)
        .into_sorted()
}

/// The `q` most violated constraints of one kind at intensities `x`,
/// sorted by violation descending then index ascending.
pub fn most_violated(
    inst: &RobustInstance,
    x: &[f64],
    kind: ConstraintKind,
    q: Count,
    eps: f64,
) -> Result<Vec<Violation>> {
    let dose = compute_dose(inst.influence, x)?;
    Ok(match kind {
        ConstraintKind::Oar(k) => {
            let o = inst
                .structures
                .oars()
                .get(k)
                .ok_or_else(|| Error::Invalid(format!("OAR index {k} out of range")))?;
            scan_oar(inst.structures, k, o.dbar, &dose, q.limit(), eps, &|_| false)
        }
        ConstraintKind::Homogeneity => {
            let dt: Vec<f64> = inst.target().iter().map(|&v| dose[v]).collect();
            scan_hom(inst.uncertainty, inst.mu, &dt, q.limit(), eps, &HashSet::new())
        }
    })
}

pub(crate) fn scaled_row(d: &InfluenceMatrix, v: usize, a: f64) -> Vec<(usize, f64)> {
    d.row_entries(v).map(|(j, x)| (j, a * x)).collect()
}

pub(crate) fn min_row(inst: &RobustInstance, pos: usize, phi: f64) -> RowSpec {
    let mut e = scaled_row(inst.influence, inst.target()[pos], phi);
    e.push((inst.dmin_col(), -1.0));
    RowSpec::new(e, Cmp::Ge, 0.0)
}

pub(crate) fn hom_row(inst: &RobustInstance, num: usize, den: usize, a: f64, b: f64) -> RowSpec {
    let t = inst.target();
    let mut e = scaled_row(inst.influence, t[num], a);
    e.extend(scaled_row(inst.influence, t[den], -inst.mu * b));
    RowSpec::new(e, Cmp::Le, 0.0)
}

pub(crate) fn oar_row(inst: &RobustInstance, v: usize, bound: f64) -> RowSpec {
    RowSpec::new(scaled_row(inst.influence, v, 1.0), Cmp::Le, bound)
}

fn hom_row_for(inst: &RobustInstance, num: usize, den: usize, family: u8) -> RowSpec {
    let (rows, _) = pair_coefficients(inst.uncertainty, num, den);
    let (a, b) = rows[family as usize];
    hom_row(inst, num, den, a, b)
}

pub(crate) fn base_program(inst: &RobustInstance) -> Result<LinearProgram> {
    let mut lp = LinearProgram::new();
    for _ in 0..inst.num_beamlets() {
        lp.add_var(0.0, 0.0, f64::INFINITY)?;
    }
    lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY)?;
    Ok(lp)
}

/// Upper bound on the rows of the full compact program.
pub fn full_row_count(structures: &StructureSet) -> usize {
    let t = structures.target().len();
    t + 2 * t * t.saturating_sub(1) + structures.oars().iter().map(|o| o.voxels.len()).sum::<usize>()
}

/// Epigraph form of the nominal model: φ̂_v d_v ≥ d̲, μ d̲ ≥ φ̂_v d_v,
/// d_v ≤ d̄_k.
pub fn build_nominal(inst: &RobustInstance) -> Result<LinearProgram> {
    let mut lp = base_program(inst)?;
    let phi = inst.uncertainty.phi_hat();
    let mut rows = Vec::new();
    for pos in 0..phi.len() {
        rows.push(min_row(inst, pos, phi[pos]));
    }
    for (pos, &p) in phi.iter().enumerate() {
        let mut e = scaled_row(inst.influence, inst.target()[pos], -p);
        e.push((inst.dmin_col(), inst.mu));
        rows.push(RowSpec::new(e, Cmp::Ge, 0.0));
    }
    for o in inst.structures.oars() {
        for &v in &o.voxels {
            rows.push(oar_row(inst, v, o.dbar));
        }
    }
    lp.add_rows(rows)?;
    Ok(lp)
}

/// Compact robust program with every homogeneity pair row and every OAR row.
pub fn build_robust_compact(inst: &RobustInstance) -> Result<LinearProgram> {
    inst.uncertainty.ensure_nonempty()?;
    let mut lp = base_program(inst)?;
    let t = inst.target().len();
    let lo = inst.uncertainty.lo();
    let mut rows = Vec::new();
    for pos in 0..t {
        rows.push(min_row(inst, pos, lo[pos]));
    }
    for num in 0..t {
        for den in 0..t {
            if num == den {
                continue;
            }
            let (pair, n) = pair_coefficients(inst.uncertainty, num, den);
            for &(a, b) in &pair[..n] {
                rows.push(hom_row(inst, num, den, a, b));
            }
        }
    }
    for o in inst.structures.oars() {
        for &v in &o.voxels {
            rows.push(oar_row(inst, v, o.dbar));
        }
    }
    lp.add_rows(rows)?;
    Ok(lp)
}

/// The compact robust program lifted with one dose column t_v = d_v(x)
/// per target voxel, placed after d̲. Pair rows then have two entries,
/// which keeps simplex iterations cheap on the full program.
pub fn build_robust_lifted(inst: &RobustInstance) -> Result<LinearProgram> {
    inst.uncertainty.ensure_nonempty()?;
    let mut lp = base_program(inst)?;
    let t = inst.target().len();
    let first = lp.num_vars();
    for _ in 0..t {
        lp.add_var(0.0, 0.0, f64::INFINITY)?;
    }
    let lo = inst.uncertainty.lo();
    let mut rows = Vec::new();
    for (pos, &v) in inst.target().iter().enumerate() {
        let mut e = scaled_row(inst.influence, v, -1.0);
        e.push((first + pos, 1.0));
        rows.push(RowSpec::new(e, Cmp::Eq, 0.0));
    }
    for pos in 0..t {
        rows.push(RowSpec::new(vec![(first + pos, lo[pos]), (inst.dmin_col(), -1.0)], Cmp::Ge, 0.0));
    }
    for num in 0..t {
        for den in 0..t {
            if num == den {
                continue;
            }
            let (pair, n) = pair_coefficients(inst.uncertainty, num, den);
            for &(a, b) in &pair[..n] {
                rows.push(RowSpec::new(vec![(first + num, a), (first + den, -inst.mu * b)], Cmp::Le, 0.0));
            }
        }
    }
    for o in inst.structures.oars() {
        for &v in &o.voxels {
            rows.push(oar_row(inst, v, o.dbar));
        }
    }
    lp.add_rows(rows)?;
    Ok(lp)
}

/// Dose-volume setup of a master: organ `k` has soft rows with deviation
/// columns y_v ∈ [0, cap] costing β per Gy, optionally with a budget row.
#[derive(Debug, Clone)]
pub(crate) struct SoftOrgan {
    pub k: usize,
    pub cap: f64,
    pub budget: Option<f64>,
}

/// Deviation column of one dose-volume voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationColumn {
    pub voxel: usize,
    pub col: usize,
}

/// Restricted master program with its generated constraint sets.
pub struct Master<'a> {
    inst: RobustInstance<'a>,
    params: RowGenParams,
    lp: LinearProgram,
    engine: SimplexOptions,
    basis: Option<Basis>,
    result: Option<SolveResult>,
    dose: Vec<f64>,
    oar_done: Vec<bool>,
    hom_done: HashSet<u64>,
    soft: Option<SoftOrgan>,
    ycols: Vec<DeviationColumn>,
    budget_row: Option<usize>,
    diag: Diagnostics,
    started: Instant,
}

fn rel_decrease(prev: f64, z: f64) -> f64 {
    if prev.is_infinite() {
        f64::INFINITY
    } else if prev == 0.0 {
        if z < 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        (prev - z) / prev.abs()
    }
}

impl<'a> Master<'a> {
    /// Master for the plain robust (or nominal) model, initialized from x0.
    pub fn new(inst: RobustInstance<'a>, params: RowGenParams) -> Result<Self> {
        Self::build(inst, params, None)
    }

    pub(crate) fn build(inst: RobustInstance<'a>, params: RowGenParams, soft: Option<SoftOrgan>) -> Result<Self> {
        params.validate()?;
        let n = inst.num_beamlets();
        let mut lp = base_program(&inst)?;
        let lo = inst.uncertainty.lo();
        let rows: Vec<RowSpec> = (0..lo.len()).map(|p| min_row(&inst, p, lo[p])).collect();
        lp.add_rows(rows)?;
        let budget_row = match soft.as_ref().and_then(|s| s.budget) {
            Some(theta) => Some(lp.add_row(Vec::new(), Cmp::Le, theta)?),
            None => None,
        };
        let mut m = Self {
            inst,
            params,
            lp,
            engine: SimplexOptions::default(),
            basis: None,
            result: None,
            dose: vec![0.0; inst.structures.num_voxels()],
            oar_done: vec![false; inst.structures.num_voxels()],
            hom_done: HashSet::new(),
            soft,
            ycols: Vec::new(),
            budget_row,
            diag: Diagnostics::default(),
            started: Instant::now(),
        };
        let x0 = match &m.params.x0 {
            Some(x) if x.len() == n => x.clone(),
            Some(x) => return Err(Error::Dimension(format!("x0 has {} entries, need {n}", x.len()))),
            None => default_x0(&inst)?,
        };
        let dose = compute_dose(inst.influence, &x0)?;
        let n0 = m.params.n0.limit();
        for k in 0..inst.structures.oars().len() {
            let bound = inst.structures.oars()[k].dbar;
            let pick = scan_oar(inst.structures, k, bound, &dose, n0, f64::NEG_INFINITY, &|_| false);
            let voxels: Vec<usize> = pick.iter().map(|v| v.index as usize).collect();
            if m.is_soft(k) {
                m.add_columns(&voxels)?;
            } else {
                m.add_oar_rows(k, &voxels)?;
            }
        }
        Ok(m)
    }

    fn is_soft(&self, k: usize) -> bool {
        self.soft.as_ref().is_some_and(|s| s.k == k)
    }

    pub fn instance(&self) -> &RobustInstance<'a> {
        &self.inst
    }

    pub fn params(&self) -> &RowGenParams {
        &self.params
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn result(&self) -> Option<&SolveResult> {
        self.result.as_ref()
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    pub fn deviation_columns(&self) -> &[DeviationColumn] {
        &self.ycols
    }

    pub fn budget_row(&self) -> Option<usize> {
        self.budget_row
    }

    /// Physical dose of the current solution.
    pub fn dose(&self) -> &[f64] {
        &self.dose
    }

    pub fn set_engine(&mut self, engine: SimplexOptions) {
        self.engine = engine;
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.lp.set_beta(beta);
    }

    pub fn beta(&self) -> f64 {
        self.lp.beta()
    }

    pub(crate) fn set_budget(&mut self, theta: f64) -> Result<()> {
        let r = self.budget_row.ok_or_else(|| Error::Invalid("master has no budget row".into()))?;
        self.lp.set_row_bounds(r, f64::NEG_INFINITY, theta)?;
        Ok(())
    }

    fn add_oar_rows(&mut self, k: usize, voxels: &[usize]) -> Result<()> {
        let bound = self.inst.structures.oars()[k].dbar;
        let rows: Vec<RowSpec> = voxels.iter().map(|&v| oar_row(&self.inst, v, bound)).collect();
        self.lp.add_rows(rows)?;
        for &v in voxels {
            self.oar_done[v] = true;
        }
        self.diag.rows_oar += voxels.len();
        Ok(())
    }

    /// Adds soft rows d_v − y_v ≤ d̄_K with their deviation columns.
    fn add_columns(&mut self, voxels: &[usize]) -> Result<()> {
        let soft = self.soft.clone().expect("soft organ configured");
        let bound = self.inst.structures.oars()[soft.k].dbar;
        let rows: Vec<RowSpec> = voxels.iter().map(|&v| oar_row(&self.inst, v, bound)).collect();
        let first_row = self.lp.add_rows(rows)?.start;
        let specs: Vec<ColumnSpec> = voxels
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut entries = vec![(first_row + i, -1.0)];
                if let Some(b) = self.budget_row {
                    entries.push((b, 1.0));
                }
                ColumnSpec { obj: 0.0, direction: -1.0, lower: 0.0, upper: soft.cap, entries }
            })
            .collect();
        let cols = self.lp.add_columns(specs)?;
        for (&v, col) in voxels.iter().zip(cols) {
            self.oar_done[v] = true;
            self.ycols.push(DeviationColumn { voxel: v, col });
        }
        self.diag.rows_oar += voxels.len();
        self.diag.columns += voxels.len();
        Ok(())
    }

    fn add_hom_rows(&mut self, list: &[Violation]) -> Result<()> {
        let mut rows = Vec::with_capacity(list.len());
        let t = self.inst.target().len();
        for v in list {
            if let RowKey::Hom { num, den, family } = v.key {
                rows.push(hom_row_for(&self.inst, num, den, family));
                self.hom_done.insert(hom_index(t, num, den, family));
            }
        }
        self.lp.add_rows(rows)?;
        self.diag.rows_hom += list.len();
        Ok(())
    }

    fn target_dose(&self, dose: &[f64]) -> Vec<f64> {
        self.inst.target().iter().map(|&v| dose[v]).collect()
    }

    fn record(&mut self, phase: &str, objective: f64) {
        let rec = TraceRecord {
            iter: self.diag.lp_solves,
            phase: phase.to_string(),
            rows_oar: self.diag.rows_oar,
            rows_hom: self.diag.rows_hom,
            objective,
        };
        log::debug!("{}", rec.csv_line());
        self.diag.trace.push(rec);
    }

    /// Solves the current master. Unbounded masters are cut off along the
    /// improving ray by the ungenerated rows it violates.
    pub fn solve(&mut self, phase: &str) -> Result<f64> {
        loop {
            let res = match self.engine.solve(&self.lp, self.basis.as_ref()) {
                Ok(r) => r,
                Err(LpError::IterationLimit(_)) if self.basis.is_some() => {
                    log::warn!("warm-started master hit the iteration limit; retrying from the slack basis");
                    self.engine.solve(&self.lp, None)?
                }
                Err(e) => return Err(e.into()),
            };
            self.diag.lp_solves += 1;
            self.diag.simplex_iterations += res.iterations;
            match res.status {
                Status::Optimal => {
                    let n = self.inst.num_beamlets();
                    let x: Vec<f64> = res.x[..n].iter().map(|v| v.max(0.0)).collect();
                    self.dose = compute_dose(self.inst.influence, &x)?;
                    self.basis = Some(res.basis.clone());
                    let z = res.objective;
                    self.result = Some(res);
                    self.record(phase, z);
                    return Ok(z);
                }
                Status::Infeasible => {
                    return Err(Error::Infeasible("restricted master has no feasible point".into()));
                }
                Status::Unbounded => {
                    let ray = res.ray.clone().ok_or_else(|| Error::Unbounded("no ray reported".into()))?;
                    self.basis = Some(res.basis.clone());
                    log::debug!("master unbounded after {} solves; cutting the ray", self.diag.lp_solves);
                    if !self.cut_ray(&ray)? {
                        return Err(Error::Unbounded(
                            "intensities can grow without bound after all OAR rows are generated".into(),
                        ));
                    }
                }
            }
        }
    }

    fn cut_ray(&mut self, ray: &[f64]) -> Result<bool> {
        let n = self.inst.num_beamlets();
        let rx: Vec<f64> = ray[..n].iter().map(|v| v.max(0.0)).collect();
        let rd = compute_dose(self.inst.influence, &rx)?;
        let scale = rd.iter().cloned().fold(0.0f64, f64::max);
        let eps = 1e-12 * scale.max(1e-300);
        let q = self.params.n_h.limit();
        let mut added = 0;
        for k in 0..self.inst.structures.oars().len() {
            let done = &self.oar_done;
            let pick = scan_oar(self.inst.structures, k, 0.0, &rd, q, eps, &|v| done[v]);
            let voxels: Vec<usize> = pick.iter().map(|v| v.index as usize).collect();
            added += voxels.len();
            if self.is_soft(k) {
                self.add_columns(&voxels)?;
            } else {
                self.add_oar_rows(k, &voxels)?;
            }
        }
        if added == 0 {
            let dt = self.target_dose(&rd);
            let list = scan_hom(self.inst.uncertainty, self.inst.mu, &dt, self.params.n_s.limit(), eps, &self.hom_done);
            added += list.len();
            self.add_hom_rows(&list)?;
        }
        Ok(added > 0)
    }

    /// Ungenerated hard OAR violations and dose-volume candidates at the
    /// current solution.
    fn scan_oars(&self, q: usize, eps: f64) -> Vec<(usize, Vec<usize>)> {
        let done = &self.oar_done;
        (0..self.inst.structures.oars().len())
            .map(|k| {
                let bound = self.inst.structures.oars()[k].dbar;
                let pick = scan_oar(self.inst.structures, k, bound, &self.dose, q, eps, &|v| done[v]);
                (k, pick.iter().map(|v| v.index as usize).collect())
            })
            .collect()
    }

    fn scan_homogeneity(&self, q: usize, eps: f64) -> Vec<Violation> {
        let dt = self.target_dose(&self.dose);
        scan_hom(self.inst.uncertainty, self.inst.mu, &dt, q, eps, &self.hom_done)
    }

    /// Row generation, or row-and-column generation when the master has a
    /// dose-volume organ; returns the final objective.
    pub fn run(&mut self) -> Result<f64> {
        let p = self.params.clone();
        let hom_tau = if self.soft.is_some() { p.tau2 } else { p.tau3 };
        let mut z_prev = f64::INFINITY;
        let mut z = f64::NAN;
        let mut m_s = 1usize;
        let mut m_h = 0usize;
        let mut rounds = 0usize;
        while m_h + m_s > 0 {
            rounds += 1;
            if rounds > p.max_rounds {
                return Err(Error::IterationGuard(p.max_rounds));
            }
            if m_s > 0 || self.result.is_none() {
                z = self.solve("hom")?;
            }
            loop {
                let big = self.scan_oars(1, p.tau1).iter().any(|(_, v)| !v.is_empty());
                if !(big || rel_decrease(z_prev, z) > p.tau_z || (m_s == 0 && m_h > 0)) {
                    break;
                }
                z_prev = z;
                m_h = 0;
                for (k, voxels) in self.scan_oars(p.n_h.limit(), p.tau2) {
                    m_h += voxels.len();
                    if self.is_soft(k) {
                        self.add_columns(&voxels)?;
                    } else {
                        self.add_oar_rows(k, &voxels)?;
                    }
                }
                if m_h > 0 {
                    z = self.solve("oar")?;
                }
            }
            let list = self.scan_homogeneity(p.n_s.limit(), hom_tau);
            m_s = list.len();
            self.add_hom_rows(&list)?;
        }
        self.diag.wall_time_s = self.started.elapsed().as_secs_f64();
        Ok(z)
    }

    /// Current intensities, clipped to be nonnegative.
    pub fn x(&self) -> Vec<f64> {
        let n = self.inst.num_beamlets();
        self.result.as_ref().map_or(vec![0.0; n], |r| r.x[..n].iter().map(|v| v.max(0.0)).collect())
    }

    /// Current d̲.
    pub fn dmin(&self) -> f64 {
        self.result.as_ref().map_or(0.0, |r| r.x[self.inst.dmin_col()])
    }

    /// Deviation values by voxel for the generated columns.
    pub fn y(&self) -> Vec<(usize, f64)> {
        let Some(r) = &self.result else { return Vec::new() };
        self.ycols.iter().map(|c| (c.voxel, r.x[c.col])).collect()
    }

    pub fn plan(&self) -> Plan {
        let mut plan = Plan::new(self.x(), self.dmin(), self.inst.uncertainty.mode());
        plan.diagnostics = self.diag.clone();
        plan.diagnostics.zero_dose = plan.is_zero_dose();
        plan.params.insert("mu".into(), self.inst.mu.into());
        plan.params.insert("delta".into(), self.inst.uncertainty.delta().into());
        plan
    }
}

/// All-ones intensities scaled so the largest OAR dose-to-bound ratio is 1.
pub fn default_x0(inst: &RobustInstance) -> Result<Vec<f64>> {
    let n = inst.num_beamlets();
    let ones = vec![1.0; n];
    let dose = compute_dose(inst.influence, &ones)?;
    let mut ratio = 0.0f64;
    for o in inst.structures.oars() {
        for &v in &o.voxels {
            ratio = ratio.max(dose[v] / o.dbar);
        }
    }
    let s = if ratio > 0.0 { 1.0 / ratio } else { 1.0 };
    Ok(vec![s; n])
}

/// Row generation on the compact robust program (or its nominal and box
/// special cases).
pub fn row_generation(inst: &RobustInstance, params: &RowGenParams) -> Result<Plan> {
    let mut m = Master::new(*inst, params.clone())?;
    m.run()?;
    let plan = m.plan();
    log::info!(
        "row generation: objective {} after {} solves, {} OAR rows, {} homogeneity rows",
        plan.objective,
        plan.diagnostics.lp_solves,
        plan.diagnostics.rows_oar,
        plan.diagnostics.rows_hom
    );
    Ok(plan)
}

/// Solves the full compact program in one go.
pub fn solve_full(inst: &RobustInstance, row_cap: usize) -> Result<Plan> {
    let rows = full_row_count(inst.structures);
    if rows > row_cap {
        return Err(Error::TooLarge(format!("full program would have up to {rows} rows (cap {row_cap})")));
    }
    let started = Instant::now();
    let lp = build_robust_lifted(inst)?;
    let res = rfmo_lp::solve(&lp, None)?;
    match res.status {
        Status::Optimal => {}
        Status::Unbounded => return Err(Error::Unbounded("full robust program is unbounded".into())),
        Status::Infeasible => return Err(Error::Infeasible("full robust program is infeasible".into())),
    }
    let n = inst.num_beamlets();
    let x: Vec<f64> = res.x[..n].iter().map(|v| v.max(0.0)).collect();
    let mut plan = Plan::new(x, res.x[n], inst.uncertainty.mode());
    let rows_oar = oar_count(inst.structures);
    let rows_hom = lp.num_rows() - 2 * inst.target().len() - rows_oar;
    plan.diagnostics = Diagnostics {
        lp_solves: 1,
        simplex_iterations: res.iterations,
        rows_oar,
        rows_hom,
        columns: 0,
        zero_dose: false,
        trace: vec![TraceRecord { iter: 1, phase: "full".into(), rows_oar, rows_hom, objective: res.objective }],
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    plan.diagnostics.zero_dose = plan.is_zero_dose();
    plan.params.insert("mu".into(), inst.mu.into());
    plan.params.insert("delta".into(), inst.uncertainty.delta().into());
    Ok(plan)
}

fn oar_count(s: &StructureSet) -> usize {
    s.oars().iter().map(|o| o.voxels.len()).sum()
}

/// Number of homogeneity rows of the full compact program after merging
/// coincident pair rows.
pub fn full_hom_rows(u: &SpatialUncertainty) -> usize {
    let t = u.len();
    (0..t)
        .into_par_iter()
        .map(|num| (0..t).filter(|&den| den != num).map(|den| pair_coefficients(u, num, den).1).sum::<usize>())
        .sum()
}
