//! Radiosensitivity from imaging, pairwise difference statistics and the Γ
//! distance model.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{voxel_distance, RadiosensitivityMap, VoxelGrid};

/// Γ(Δ) = γ + α0 + α1 Δ + α2 ln Δ on (0, cutoff], constant beyond the
/// cutoff, zero at zero, clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaModel {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default)]
    pub gamma_offset: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_cutoff() -> f64 {
    10.0
}

impl GammaModel {
    pub const DEFAULT: GammaModel =
        GammaModel { alpha0: 0.0292761, alpha1: -0.0013514, alpha2: 0.0128265, gamma_offset: 0.0, cutoff: 10.0 };

    pub fn new(alpha0: f64, alpha1: f64, alpha2: f64) -> Self {
        Self { alpha0, alpha1, alpha2, gamma_offset: 0.0, cutoff: 10.0 }
    }

    pub fn with_offset(mut self, gamma: f64) -> Self {
        self.gamma_offset = gamma;
        self
    }

    /// Unclamped curve without the offset.
    pub fn curve(&self, delta: f64) -> f64 {
        let t = delta.min(self.cutoff);
        self.alpha0 + self.alpha1 * t + self.alpha2 * t.ln()
    }

    pub fn eval(&self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        (self.gamma_offset + self.curve(delta)).clamp(0.0, 1.0)
    }

    /// Largest distance at which Γ still varies; beyond it Γ is constant.
    pub fn plateau_distance(&self) -> u32 {
        self.cutoff.ceil().max(1.0) as u32
    }
}

/// Which rule of the non-decreasing, subadditive, positive-definite
/// requirements failed first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GammaViolation {
    NonzeroAtZero { value: f64 },
    NotPositive { delta: u32, value: f64 },
    Decreasing { delta: u32, prev: f64, value: f64 },
    NotSubadditive { x: u32, y: u32, lhs: f64, rhs: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaReport {
    pub delta_max: u32,
    /// First violation of each kind, in check order.
    pub violations: Vec<GammaViolation>,
}

impl GammaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const GAMMA_TOL: f64 = 1e-12;

/// Checks the distance grid 0..=`delta_max`.
pub fn validate_gamma_assumption(g: &GammaModel, delta_max: u32) -> Result<GammaReport> {
    if delta_max < 2 {
        return Err(Error::Invalid(format!("delta_max must be at least 2, got {delta_max}")));
    }
    let vals: Vec<f64> = (0..=delta_max).map(|d| g.eval(d as f64)).collect();
    let mut violations = Vec::new();
    if vals[0] != 0.0 {
        violations.push(GammaViolation::NonzeroAtZero { value: vals[0] });
    }
    if let Some(d) = (1..=delta_max).find(|&d| vals[d as usize] <= 0.0) {
        violations.push(GammaViolation::NotPositive { delta: d, value: vals[d as usize] });
    }
    if let Some(d) = (2..=delta_max).find(|&d| vals[d as usize] < vals[d as usize - 1] - GAMMA_TOL) {
        violations.push(GammaViolation::Decreasing { delta: d, prev: vals[d as usize - 1], value: vals[d as usize] });
    }
    'sub: for x in 1..delta_max {
        for y in x..=delta_max - x {
            let (lhs, rhs) = (vals[(x + y) as usize], vals[x as usize] + vals[y as usize]);
            if lhs > rhs + GAMMA_TOL {
                violations.push(GammaViolation::NotSubadditive { x, y, lhs, rhs });
                break 'sub;
            }
        }
    }
    Ok(GammaReport { delta_max, violations })
}

/// Conversion constants from normalized SUV to oxygen modification factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmfConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub k: f64,
    pub m: f64,
    /// When set, OMF is OER relative to the OER at this oxygen pressure
    /// (capped at 1) instead of relative to the image maximum.
    #[serde(default)]
    pub po2_ref: Option<f64>,
}

impl Default for OmfConstants {
    fn default() -> Self {
        Self { a: 10.9, b: 10.7, c: 2.5, k: 3.0, m: 3.0, po2_ref: None }
    }
}

impl OmfConstants {
    /// Reference pressure used by the literature normalization.
    pub const REFERENCE_PO2: f64 = 26.0;

    pub fn po2(&self, suv: f64) -> Result<f64> {
        let den = suv - self.a + self.b;
        if !(den > 0.0) {
            return Err(Error::Invalid(format!("SUV {suv} gives nonpositive denominator {den}")));
        }
        if suv > self.a {
            return Err(Error::Invalid(format!("SUV {suv} above {} gives negative oxygen pressure", self.a)));
        }
        Ok((self.a - suv) * self.c / den)
    }

    pub fn oer(&self, po2: f64) -> f64 {
        (self.m * po2 + self.k) / (po2 + self.k)
    }
}

pub fn suv_to_omf(voxels: &[usize], suv: &[f64], consts: &OmfConstants) -> Result<RadiosensitivityMap> {
    if voxels.len() != suv.len() {
        return Err(Error::Dimension(format!("{} voxels but {} SUV values", voxels.len(), suv.len())));
    }
    if suv.is_empty() {
        return Err(Error::Invalid("empty SUV image".into()));
    }
    let oer: Vec<f64> = suv.iter().map(|&s| consts.po2(s).map(|p| consts.oer(p))).collect::<Result<_>>()?;
    let norm = match consts.po2_ref {
        Some(p) => consts.oer(p),
        None => oer.iter().cloned().fold(f64::MIN, f64::max),
    };
    let omf = oer.iter().map(|&o| (o / norm).min(1.0)).collect();
    RadiosensitivityMap::new(voxels.to_vec(), omf)
}

/// One distance bin of pairwise radiosensitivity differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBin {
    pub delta_bin: u32,
    pub percentile: f64,
    pub max: f64,
    pub count: u64,
}

const HIST_BUCKETS: usize = 4096;

fn bucket(x: f64) -> usize {
    ((x * HIST_BUCKETS as f64) as usize).min(HIST_BUCKETS - 1)
}

struct Pass1 {
    counts: Vec<u64>,
    max: Vec<f64>,
    hist: Vec<u64>,
}

/// Nearest-rank percentile of |φ_u − φ_v| per distance bin, over unordered
/// pairs of distinct target voxels.
pub fn pairwise_stats(phi: &RadiosensitivityMap, grid: &VoxelGrid, p: f64) -> Result<Vec<StatsBin>> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Invalid(format!("percentile {p} outside (0, 100]")));
    }
    let t = phi.len();
    if t < 2 {
        return Err(Error::Invalid("pairwise statistics need at least two target voxels".into()));
    }
    let pos: Vec<[i64; 3]> = phi.voxels().iter().map(|&v| grid.coords(v)).collect();
    let vals = phi.values();
    let dims = grid.dims();
    let nb = (((dims[0] * dims[0] + dims[1] * dims[1] + dims[2] * dims[2]) as f64).sqrt().ceil() as usize) + 2;

    let each_pair = |i: usize, f: &mut dyn FnMut(usize, f64)| {
        for j in i + 1..t {
            f(voxel_distance(pos[i], pos[j]) as usize, (vals[i] - vals[j]).abs());
        }
    };

    let first = (0..t)
        .into_par_iter()
        .fold(
            || Pass1 { counts: vec![0; nb], max: vec![0.0; nb], hist: vec![0; nb * HIST_BUCKETS] },
            |mut acc, i| {
                each_pair(i, &mut |b, x| {
                    acc.counts[b] += 1;
                    acc.max[b] = acc.max[b].max(x);
                    acc.hist[b * HIST_BUCKETS + bucket(x)] += 1;
                });
                acc
            },
        )
        .reduce(
            || Pass1 { counts: vec![0; nb], max: vec![0.0; nb], hist: vec![0; nb * HIST_BUCKETS] },
            |mut a, b| {
                for k in 0..nb {
                    a.counts[k] += b.counts[k];
                    a.max[k] = a.max[k].max(b.max[k]);
                }
                for (x, y) in a.hist.iter_mut().zip(&b.hist) {
                    *x += y;
                }
                a
            },
        );

    // Locate the bucket holding the nearest-rank element and its rank within it.
    let mut target_bucket = vec![usize::MAX; nb];
    let mut rank_in_bucket = vec![0u64; nb];
    for b in 0..nb {
        let n = first.counts[b];
        if n == 0 {
            continue;
        }
        let rank = ((p / 100.0 * n as f64).ceil() as u64).clamp(1, n);
        let mut acc = 0u64;
        for k in 0..HIST_BUCKETS {
            let c = first.hist[b * HIST_BUCKETS + k];
            if acc + c >= rank {
                target_bucket[b] = k;
                rank_in_bucket[b] = rank - acc;
                break;
            }
            acc += c;
        }
    }

    let mut picked: Vec<Vec<f64>> = (0..t)
        .into_par_iter()
        .fold(
            || vec![Vec::new(); nb],
            |mut acc, i| {
                each_pair(i, &mut |b, x| {
                    if bucket(x) == target_bucket[b] {
                        acc[b].push(x);
                    }
                });
                acc
            },
        )
        .reduce(
            || vec![Vec::new(); nb],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.extend(y);
                }
                a
            },
        );

    let mut out = Vec::new();
    for b in 0..nb {
        if first.counts[b] == 0 {
            continue;
        }
        let v = &mut picked[b];
        v.sort_by(f64::total_cmp);
        out.push(StatsBin {
            delta_bin: b as u32,
            percentile: v[rank_in_bucket[b] as usize - 1],
            max: first.max[b],
            count: first.counts[b],
        });
    }
    Ok(out)
}

/// Constrained least-squares fit of the Γ curve to the percentile column.
///
/// Minimizes the squared residual over bins 1..=10 subject to the curve
/// lying on or above every such bin, then raises α0 so the plateau value
/// covers bins beyond the cutoff, then attaches `gamma_offset`.
pub fn fit_gamma_model(stats: &[StatsBin], gamma_offset: f64) -> Result<GammaModel> {
    let cutoff = default_cutoff();
    let fit_bins: Vec<&StatsBin> =
        stats.iter().filter(|s| s.delta_bin >= 1 && s.delta_bin as f64 <= cutoff && s.count > 0).collect();
    if fit_bins.len() < 3 {
        return Err(Error::Invalid(format!("Γ fit needs at least 3 bins in 1..=10, got {}", fit_bins.len())));
    }
    let k = fit_bins.len();
    let m = DMatrix::from_fn(k, 3, |i, j| {
        let d = fit_bins[i].delta_bin as f64;
        [1.0, d, d.ln()][j]
    });
    let q = DVector::from_iterator(k, fit_bins.iter().map(|s| s.percentile));
    let mtm = m.transpose() * &m;
    let mtq = m.transpose() * &q;

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |active: &[usize]| {
        let a = active.len();
        let mut kkt = DMatrix::zeros(3 + a, 3 + a);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&mtm);
        let mut rhs = DVector::zeros(3 + a);
        rhs.rows_mut(0, 3).copy_from(&mtq);
        for (r, &i) in active.iter().enumerate() {
            for c in 0..3 {
                kkt[(3 + r, c)] = m[(i, c)];
                kkt[(c, 3 + r)] = m[(i, c)];
            }
            rhs[3 + r] = q[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { return };
        let alpha = sol.rows(0, 3).into_owned();
        if alpha.iter().any(|v| !v.is_finite()) {
            return;
        }
        let fitted = &m * &alpha;
        if (0..k).any(|i| fitted[i] < q[i] - 1e-12) {
            return;
        }
        let obj = (&fitted - &q).norm_squared();
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, alpha));
        }
    };
    consider(&[]);
    for i in 0..k {
        consider(&[i]);
        for j in i + 1..k {
            consider(&[i, j]);
            for l in j + 1..k {
                consider(&[i, j, l]);
            }
        }
    }
    let (_, alpha) = best.ok_or_else(|| Error::Invalid("no feasible Γ fit".into()))?;
    let mut g = GammaModel::new(alpha[0], alpha[1], alpha[2]);
    let plateau = g.curve(cutoff);
    let lift = stats
        .iter()
        .filter(|s| s.delta_bin as f64 > cutoff && s.count > 0)
        .map(|s| s.percentile - plateau)
        .fold(0.0f64, f64::max);
    g.alpha0 += lift;
    Ok(g.with_offset(gamma_offset))
}

/// Synthetic radiosensitivity from a Gaussian density fitted to the target
/// shape: voxels near the centre get the lowest value 0.85, the periphery
/// approaches 1.
pub fn synth_radiosensitivity(grid: &VoxelGrid, target: &[usize]) -> Result<RadiosensitivityMap> {
    let t = target.len();
    if t < 4 {
        return Err(Error::Invalid(format!("synthetic radiosensitivity needs at least 4 voxels, got {t}")));
    }
    let pts: Vec<Vector3<f64>> = target
        .iter()
        .map(|&v| {
            let c = grid.coords(v);
            Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
        })
        .collect();
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / t as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov *= 50.0 / t as f64;
    let det = cov.determinant();
    let inv = cov
        .try_inverse()
        .filter(|_| det > 1e-12 * cov.norm().powi(3).max(1e-300))
        .ok_or_else(|| Error::Invalid("target positions are coplanar or collinear (singular covariance)".into()))?;
    let norm = (2.0 * std::f64::consts::PI).powf(-1.5) / det.sqrt();
    let f: Vec<f64> = pts
        .iter()
        .map(|p| {
            let d = p - mean;
            norm * (-0.5 * (d.transpose() * inv * d)[0]).exp()
        })
        .collect();
    let fmax = f.iter().cloned().fold(f64::MIN, f64::max);
    let fmin = f.iter().cloned().fold(f64::MAX, f64::min);
    let span = fmax - fmin;
    let phi = f
        .iter()
        .map(|&fv| if span > 0.0 { 0.85 + 0.15 * (fmax - fv) / span } else { 0.85 })
        .collect();
    RadiosensitivityMap::new(target.to_vec(), phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omf_limits() {
        let c = OmfConstants::default();
        assert_eq!(c.po2(10.9).unwrap(), 0.0);
        assert_eq!(c.oer(0.0), 1.0);
        assert!((c.oer(15.0) - 48.0 / 18.0).abs() < 1e-15);
        assert!(c.po2(11.0).is_err());
        assert!(c.po2(0.2).is_err());
        let flat = suv_to_omf(&[0, 1, 2], &[5.0; 3], &c).unwrap();
        assert!(flat.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn omf_monotone_in_po2() {
        let c = OmfConstants::default();
        let suv: Vec<f64> = (0..50).map(|i| 10.9 - 0.2 * i as f64).filter(|&s| s > 0.25).collect();
        let vox: Vec<usize> = (0..suv.len()).collect();
        let omf = suv_to_omf(&vox, &suv, &c).unwrap();
        for w in omf.values().windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(omf.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn default_gamma_at_one() {
        assert!((GammaModel::DEFAULT.eval(1.0) - 0.0279247).abs() < 1e-12);
        assert_eq!(GammaModel::DEFAULT.eval(0.0), 0.0);
        assert_eq!(GammaModel::DEFAULT.eval(25.0), GammaModel::DEFAULT.eval(10.0));
    }

    #[test]
    fn gamma_validation_cases() {
        let linear = GammaModel::new(0.0, 0.01, 0.0);
        assert!(validate_gamma_assumption(&linear, 50).unwrap().passed());
        assert!(validate_gamma_assumption(&GammaModel::DEFAULT, 50).unwrap().passed());
        let steep = GammaModel::new(0.2, -0.05, 0.0);
        let r = validate_gamma_assumption(&steep, 50).unwrap();
        assert!(r.violations.iter().any(|v| matches!(v, GammaViolation::Decreasing { delta: 2, .. })), "{r:?}");
        let neg = GammaModel::new(-0.1, 0.0, 0.0);
        let r = validate_gamma_assumption(&neg, 5).unwrap();
        assert!(r.violations.iter().any(|v| matches!(v, GammaViolation::NotPositive { delta: 1, .. })));
    }

    #[test]
    fn stats_single_pair_and_constant() {
        let grid = VoxelGrid::full([2, 1, 1], [1.0; 3]).unwrap();
        let phi = RadiosensitivityMap::new(vec![0, 1], vec![0.8, 0.9]).unwrap();
        for p in [1.0, 50.0, 100.0] {
            let s = pairwise_stats(&phi, &grid, p).unwrap();
            assert_eq!(s.len(), 1);
            assert_eq!(s[0].delta_bin, 1);
            assert!((s[0].percentile - 0.1).abs() < 1e-15);
        }
        let grid = VoxelGrid::full([3, 3, 1], [1.0; 3]).unwrap();
        let phi = RadiosensitivityMap::new((0..9).collect(), vec![0.9; 9]).unwrap();
        assert!(pairwise_stats(&phi, &grid, 98.0).unwrap().iter().all(|b| b.percentile == 0.0 && b.max == 0.0));
    }

    #[test]
    fn fit_recovers_planted_curve() {
        let (a, b, c) = (0.021, -0.0011, 0.0135);
        let stats: Vec<StatsBin> = (1..=10)
            .map(|d| StatsBin { delta_bin: d, percentile: a + b * d as f64 + c * (d as f64).ln(), max: 1.0, count: 5 })
            .collect();
        let g = fit_gamma_model(&stats, 0.0).unwrap();
        assert!((g.alpha0 - a).abs() < 1e-8 && (g.alpha1 - b).abs() < 1e-8 && (g.alpha2 - c).abs() < 1e-8);
    }

    #[test]
    fn fit_needs_three_bins() {
        let stats: Vec<StatsBin> =
            (1..=2).map(|d| StatsBin { delta_bin: d, percentile: 0.01, max: 0.01, count: 1 }).collect();
        assert!(fit_gamma_model(&stats, 0.0).is_err());
    }

    #[test]
    fn synth_centroid_is_minimum() {
        let grid = VoxelGrid::full([3, 3, 3], [1.0; 3]).unwrap();
        let target: Vec<usize> = (0..27).collect();
        let phi = synth_radiosensitivity(&grid, &target).unwrap();
        assert_eq!(phi.values()[13], 0.85);
        assert!(phi.values().iter().all(|&v| (0.85..=1.0).contains(&v)));
        assert!(synth_radiosensitivity(&grid, &[0, 1, 2, 9]).is_err());
    }
}
