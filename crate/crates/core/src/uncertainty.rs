//! Spatially bound uncertainty set: box around the measured radiosensitivity
//! intersected with pairwise difference bounds |φ_u − φ_v| ≤ γ_uv.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biomarker::{validate_gamma_assumption, GammaModel};
use crate::error::{Error, Result};
use crate::model::{ceil_sqrt, voxel_distance, ModelKind, RadiosensitivityMap, VoxelGrid};

/// Absolute tolerance for membership and emptiness checks.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Where γ_uv comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSource {
    /// Γ applied to the voxel distance.
    Model(GammaModel),
    /// The same γ for every pair of distinct voxels.
    Uniform(f64),
    /// Dense row-major |T|×|T| matrix, indexed by target position. Not
    /// checked for the metric property.
    Explicit(Vec<f64>),
}

/// Size above which a validated Γ model uses the plateau neighbourhood
/// for bound tightening instead of the all-pairs scan.
const NEIGHBOURHOOD_MIN: usize = 2048;

#[derive(Debug, Clone)]
pub struct SpatialUncertainty {
    mode: ModelKind,
    delta: f64,
    gamma: GammaSource,
    validated: bool,
    voxels: Vec<usize>,
    coords: Vec<[i64; 3]>,
    phi_hat: Vec<f64>,
    lo0: Vec<f64>,
    hi0: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SpatialUncertainty {
    /// `Box` forces γ ≡ 1; `Nominal` forces δ = 0 and γ ≡ 1.
    pub fn new(
        mode: ModelKind,
        delta: f64,
        gamma: GammaSource,
        phi: &RadiosensitivityMap,
        grid: &VoxelGrid,
    ) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Invalid(format!("delta must be nonnegative, got {delta}")));
        }
        let (delta, gamma) = match mode {
            ModelKind::Spatial => (delta, gamma),
            ModelKind::Box => (delta, GammaSource::Uniform(1.0)),
            ModelKind::Nominal => (0.0, GammaSource::Uniform(1.0)),
        };
        let t = phi.len();
        let validated = match &gamma {
            GammaSource::Model(g) => {
                let report = validate_gamma_assumption(g, 2 * g.plateau_distance() + 2)?;
                if !report.passed() {
                    log::warn!("Γ model fails the metric assumption: {:?}", report.violations);
                }
                report.passed()
            }
            GammaSource::Uniform(c) => {
                if !(*c >= 0.0) {
                    return Err(Error::Invalid(format!("uniform gamma must be nonnegative, got {c}")));
                }
                *c > 0.0 || t <= 1
            }
            GammaSource::Explicit(m) => {
                if m.len() != t * t {
                    return Err(Error::Dimension(format!("explicit gamma has {} entries, need {}", m.len(), t * t)));
                }
                if m.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Invalid("explicit gamma entries must be nonnegative".into()));
                }
                log::debug!("explicit pairwise gamma supplied; metric property not checked");
                false
            }
        };
        let phi_hat = phi.values().to_vec();
        let lo0: Vec<f64> = phi_hat.iter().map(|p| (p - delta).max(0.0)).collect();
        let hi0: Vec<f64> = phi_hat.iter().map(|p| (p + delta).min(1.0)).collect();
        let mut u = Self {
            mode,
            delta,
            gamma,
            validated,
            voxels: phi.voxels().to_vec(),
            coords: phi.voxels().iter().map(|&v| grid.coords(v)).collect(),
            phi_hat,
            lo0,
            hi0,
            lo: Vec::new(),
            hi: Vec::new(),
        };
        let (lo, hi) = u.tighten_bounds();
        u.lo = lo;
        u.hi = hi;
        Ok(u)
    }

    pub fn mode(&self) -> ModelKind {
        self.mode
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma_source(&self) -> &GammaSource {
        &self.gamma
    }

    /// Whether γ is known to be a metric (validated Γ model or positive
    /// uniform value).
    pub fn is_validated(&self) -> bool {
        self.validated
    }

    pub fn len(&self) -> usize {
        self.phi_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_hat.is_empty()
    }

    /// Target voxel ids in position order.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn phi_hat(&self) -> &[f64] {
        &self.phi_hat
    }

    pub fn lo0(&self) -> &[f64] {
        &self.lo0
    }

    pub fn hi0(&self) -> &[f64] {
        &self.hi0
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// γ between target positions `i` and `j`.
    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.gamma {
            GammaSource::Model(g) => g.eval(voxel_distance(self.coords[i], self.coords[j]) as f64),
            GammaSource::Uniform(c) => *c,
            GammaSource::Explicit(m) => m[i * self.len() + j],
        }
    }

    /// lo_v = max_u {lo0_u − γ_uv}, hi_v = min_u {hi0_u + γ_uv}.
    pub fn tighten_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let t = self.len();
        match &self.gamma {
            GammaSource::Uniform(c) => {
                let (lo_a, lo_i, lo_b) = top_two(&self.lo0, |a, b| a > b);
                let (hi_a, hi_i, hi_b) = top_two(&self.hi0, |a, b| a < b);
                let lo = (0..t)
                    .map(|i| {
                        let other = if i == lo_i { lo_b } else { lo_a };
                        self.lo0[i].max(other - c)
                    })
                    .collect();
                let hi = (0..t)
                    .map(|i| {
                        let other = if i == hi_i { hi_b } else { hi_a };
                        self.hi0[i].min(other + c)
                    })
                    .collect();
                (lo, hi)
            }
            GammaSource::Model(g) if self.validated && t >= NEIGHBOURHOOD_MIN => self.tighten_neighbourhood(g),
            _ => (0..t)
                .into_par_iter()
                .map(|i| {
                    let mut lo = self.lo0[i];
                    let mut hi = self.hi0[i];
                    for j in 0..t {
                        let g = self.gamma(i, j);
                        lo = lo.max(self.lo0[j] - g);
                        hi = hi.min(self.hi0[j] + g);
                    }
                    (lo, hi)
                })
                .unzip(),
        }
    }

    /// Exact for nondecreasing Γ: voxels beyond the plateau distance enter
    /// through one global term with the plateau value, which never exceeds
    /// the true γ of a nearer voxel.
    fn tighten_neighbourhood(&self, g: &GammaModel) -> (Vec<f64>, Vec<f64>) {
        let p = g.plateau_distance() as i64;
        let plateau = g.eval((p + 1) as f64);
        let mut offsets = Vec::new();
        for dz in -p..=p {
            for dy in -p..=p {
                for dx in -p..=p {
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 > 0 && d2 <= p * p {
                        offsets.push(([dx, dy, dz], g.eval(ceil_sqrt(d2 as u64) as f64)));
                    }
                }
            }
        }
        let mut mn = [i64::MAX; 3];
        let mut mx = [i64::MIN; 3];
        for c in &self.coords {
            for a in 0..3 {
                mn[a] = mn[a].min(c[a]);
                mx[a] = mx[a].max(c[a]);
            }
        }
        let ext = [(mx[0] - mn[0] + 1) as usize, (mx[1] - mn[1] + 1) as usize, (mx[2] - mn[2] + 1) as usize];
        let mut index = vec![usize::MAX; ext[0] * ext[1] * ext[2]];
        let flat = |c: [i64; 3]| -> Option<usize> {
            let r = [c[0] - mn[0], c[1] - mn[1], c[2] - mn[2]];
            if (0..3).any(|a| r[a] < 0 || r[a] as usize >= ext[a]) {
                return None;
            }
            Some(r[0] as usize + ext[0] * (r[1] as usize + ext[1] * r[2] as usize))
        };
        for (i, &c) in self.coords.iter().enumerate() {
            index[flat(c).expect("inside bounding box")] = i;
        }
        let glob_lo = self.lo0.iter().cloned().fold(f64::MIN, f64::max) - plateau;
        let glob_hi = self.hi0.iter().cloned().fold(f64::MAX, f64::min) + plateau;
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let c = self.coords[i];
                let mut lo = self.lo0[i].max(glob_lo);
                let mut hi = self.hi0[i].min(glob_hi);
                for (o, gv) in &offsets {
                    if let Some(f) = flat([c[0] + o[0], c[1] + o[1], c[2] + o[2]]) {
                        let j = index[f];
                        if j != usize::MAX {
                            lo = lo.max(self.lo0[j] - gv);
                            hi = hi.min(self.hi0[j] + gv);
                        }
                    }
                }
                (lo, hi)
            })
            .unzip()
    }

    /// First target position whose tightened interval is empty.
    pub fn first_empty(&self) -> Option<usize> {
        (0..self.len()).find(|&i| self.lo[i] > self.hi[i] + MEMBERSHIP_TOL)
    }

    /// Nonempty iff lo ≤ hi componentwise; `lo` is then a member.
    pub fn is_nonempty(&self) -> bool {
        self.first_empty().is_none()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        match self.first_empty() {
            Some(i) => Err(Error::EmptyUncertainty(self.voxels[i])),
            None => Ok(()),
        }
    }

    /// Largest violation of any box or pairwise constraint by `phi`.
    pub fn max_violation(&self, phi: &[f64]) -> f64 {
        let t = self.len();
        let mut worst = 0.0f64;
        for i in 0..t {
            worst = worst.max(self.lo0[i] - phi[i]).max(phi[i] - self.hi0[i]);
            for j in i + 1..t {
                worst = worst.max((phi[i] - phi[j]).abs() - self.gamma(i, j));
            }
        }
        worst
    }

    pub fn contains(&self, phi: &[f64]) -> bool {
        phi.len() == self.len() && self.max_violation(phi) <= MEMBERSHIP_TOL
    }

    /// Two-dimensional projection onto coordinates (φ_v, φ_u), by target
    /// position.
    pub fn project_pair(&self, u: usize, v: usize) -> Result<PairProjection> {
        self.ensure_nonempty()?;
        Ok(PairProjection {
            u,
            v,
            lo_u: self.lo[u],
            hi_u: self.hi[u],
            lo_v: self.lo[v],
            hi_v: self.hi[v],
            gamma: self.gamma(u, v),
        })
    }

    /// Extends a point of the (u, v) projection to a full member:
    /// φ_w = max{φ_v − γ_vw, φ_u − γ_uw, lo_w}.
    pub fn extend_pair_point(&self, u: usize, v: usize, phi_u: f64, phi_v: f64) -> Result<Vec<f64>> {
        let p = self.project_pair(u, v)?;
        if !p.contains(phi_v, phi_u, MEMBERSHIP_TOL) {
            return Err(Error::Invalid(format!("point ({phi_v}, {phi_u}) lies outside the projection of ({v}, {u})")));
        }
        Ok((0..self.len())
            .map(|w| {
                if w == u {
                    phi_u
                } else if w == v {
                    phi_v
                } else {
                    (phi_v - self.gamma(v, w)).max(phi_u - self.gamma(u, w)).max(self.lo[w])
                }
            })
            .collect())
    }
}

fn top_two(x: &[f64], better: impl Fn(f64, f64) -> bool) -> (f64, usize, f64) {
    let mut best = (f64::NAN, usize::MAX);
    let mut second = f64::NAN;
    for (i, &v) in x.iter().enumerate() {
        if best.1 == usize::MAX || better(v, best.0) {
            second = best.0;
            best = (v, i);
        } else if second.is_nan() || better(v, second) {
            second = v;
        }
    }
    // With a single voxel there is no other term; use the voxel itself.
    if second.is_nan() {
        second = best.0;
    }
    (best.0, best.1, second)
}

/// The polygon {lo_v ≤ φ_v ≤ hi_v, lo_u ≤ φ_u ≤ hi_u, |φ_v − φ_u| ≤ γ}.
/// Points are written (φ_v, φ_u).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProjection {
    pub u: usize,
    pub v: usize,
    pub lo_u: f64,
    pub hi_u: f64,
    pub lo_v: f64,
    pub hi_v: f64,
    pub gamma: f64,
}

impl PairProjection {
    pub fn contains(&self, phi_v: f64, phi_u: f64, tol: f64) -> bool {
        phi_v >= self.lo_v - tol
            && phi_v <= self.hi_v + tol
            && phi_u >= self.lo_u - tol
            && phi_u <= self.hi_u + tol
            && (phi_v - phi_u).abs() <= self.gamma + tol
    }

    /// The two points maximizing φ_v d_v − μ φ_u d_u for any nonnegative
    /// d_v, d_u, μ: (hi_v, max{hi_v − γ, lo_u}) and (min{lo_u + γ, hi_v}, lo_u).
    pub fn dominant_vertices(&self) -> [(f64, f64); 2] {
        [(self.hi_v, (self.hi_v - self.gamma).max(self.lo_u)), ((self.lo_u + self.gamma).min(self.hi_v), self.lo_u)]
    }

    /// Extreme points in counter-clockwise order (fewer than three when the
    /// polygon is degenerate).
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let mut poly =
            vec![(self.lo_v, self.lo_u), (self.hi_v, self.lo_u), (self.hi_v, self.hi_u), (self.lo_v, self.hi_u)];
        // a·p ≤ b half-planes of the band
        for (a, b) in [((1.0, -1.0), self.gamma), ((-1.0, 1.0), self.gamma)] {
            poly = clip(&poly, a, b);
        }
        convex_hull(poly)
    }
}

fn clip(poly: &[(f64, f64)], a: (f64, f64), b: f64) -> Vec<(f64, f64)> {
    let side = |p: (f64, f64)| a.0 * p.0 + a.1 * p.1 - b;
    let mut out = Vec::new();
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let (sp, sq) = (side(p), side(q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
        }
    }
    out
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= MEMBERSHIP_TOL && (a.1 - b.1).abs() <= MEMBERSHIP_TOL);
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 1e-15 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 2 {
        // All points collinear and folded back onto one end.
        return vec![pts[0], pts[pts.len() - 1]];
    }
    hull
}

/// `uncertainty.json`: `gamma` may be an inline model or a path to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub delta: f64,
    pub gamma: GammaRef,
    pub mode: ModelKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaRef {
    Inline(GammaModel),
    Path(String),
}

impl GammaRef {
    pub fn resolve(&self, base: &std::path::Path) -> Result<GammaModel> {
        match self {
            GammaRef::Inline(g) => Ok(*g),
            GammaRef::Path(p) => crate::io::read_json(&base.join(p)),
        }
    }
}
