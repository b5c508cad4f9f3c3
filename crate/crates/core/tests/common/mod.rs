//! Oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rfmo_core::biomarker::{validate_gamma_assumption, GammaModel};
use rfmo_core::io::Case;
use rfmo_core::model::{compute_dose, DoseVolumeSpec, InfluenceMatrix, Oar, RadiosensitivityMap, StructureSet, VoxelGrid};
use rfmo_core::phantom::{generate, PhantomSpec};
use rfmo_core::robust::RobustInstance;
use rfmo_core::uncertainty::SpatialUncertainty;
use rfmo_lp::{Cmp, LinearProgram, Status};

/// φ_i − φ_j ≤ w, where index `t` (one past the last voxel) is the
/// constant zero.
#[derive(Debug, Clone, Copy)]
pub struct Diff {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Every box and pairwise row of the uncertainty set as difference rows.
pub fn difference_system(u: &SpatialUncertainty) -> Vec<Diff> {
    let t = u.len();
    let mut c = Vec::new();
    for i in 0..t {
        c.push(Diff { i, j: t, w: u.hi0()[i] });
        c.push(Diff { i: t, j: i, w: -u.lo0()[i] });
        for j in 0..t {
            if i != j {
                c.push(Diff { i, j, w: u.gamma(i, j) });
            }
        }
    }
    c
}

fn reduce(sys: Vec<Diff>) -> Vec<Diff> {
    let mut best: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for d in sys {
        let e = best.entry((d.i, d.j)).or_insert(f64::INFINITY);
        *e = e.min(d.w);
    }
    best.into_iter().map(|((i, j), w)| Diff { i, j, w }).collect()
}

/// Fourier–Motzkin elimination of every voxel not in `keep`. `None` when a
/// contradiction 0 ≤ w < 0 shows up, i.e. the set is empty.
pub fn fourier_motzkin(sys: Vec<Diff>, t: usize, keep: &[usize]) -> Option<Vec<Diff>> {
    let mut sys = reduce(sys);
    for k in 0..t {
        if keep.contains(&k) {
            continue;
        }
        let (with_k, mut next): (Vec<Diff>, Vec<Diff>) = sys.into_iter().partition(|d| d.i == k || d.j == k);
        for up in with_k.iter().filter(|d| d.i == k) {
            for down in with_k.iter().filter(|d| d.j == k) {
                let (i, j, w) = (down.i, up.j, up.w + down.w);
                if i == j {
                    if w < -1e-12 {
                        return None;
                    }
                    continue;
                }
                next.push(Diff { i, j, w });
            }
        }
        sys = reduce(next);
    }
    Some(sys)
}

/// Per-coordinate [min, max] of the set from Fourier–Motzkin.
pub fn fm_bounds(u: &SpatialUncertainty) -> Option<(Vec<f64>, Vec<f64>)> {
    let t = u.len();
    let sys = difference_system(u);
    let mut lo = vec![f64::NEG_INFINITY; t];
    let mut hi = vec![f64::INFINITY; t];
    for i in 0..t {
        for d in fourier_motzkin(sys.clone(), t, &[i])? {
            if d.i == i && d.j == t {
                hi[i] = hi[i].min(d.w);
            }
            if d.i == t && d.j == i {
                lo[i] = lo[i].max(-d.w);
            }
        }
    }
    Some((lo, hi))
}

/// Vertices, as (φ_v, φ_u), of the projection onto positions (u, v)
/// obtained by Fourier–Motzkin and brute-force line intersection.
pub fn fm_pair_vertices(u: &SpatialUncertainty, pu: usize, pv: usize) -> Option<Vec<(f64, f64)>> {
    let t = u.len();
    let sys = fourier_motzkin(difference_system(u), t, &[pu, pv])?;
    // a·(φ_v, φ_u) ≤ b
    let coef = |k: usize| -> (f64, f64) {
        if k == pv {
            (1.0, 0.0)
        } else if k == pu {
            (0.0, 1.0)
        } else {
            (0.0, 0.0)
        }
    };
    let rows: Vec<((f64, f64), f64)> = sys
        .iter()
        .map(|d| {
            let (a, b) = (coef(d.i), coef(d.j));
            ((a.0 - b.0, a.1 - b.1), d.w)
        })
        .collect();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for x in 0..rows.len() {
        for y in x + 1..rows.len() {
            let ((a1, b1), c1) = rows[x];
            let ((a2, b2), c2) = rows[y];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-14 {
                continue;
            }
            let p = ((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det);
            if rows.iter().all(|((a, b), c)| a * p.0 + b * p.1 <= c + 1e-11)
                && !pts.iter().any(|q| (q.0 - p.0).abs() < 1e-10 && (q.1 - p.1).abs() < 1e-10)
            {
                pts.push(p);
            }
        }
    }
    Some(pts)
}

/// True when both point sets agree within `tol`.
pub fn same_points(a: &[(f64, f64)], b: &[(f64, f64)], tol: f64) -> bool {
    let covers = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        x.iter().all(|p| y.iter().any(|q| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol))
    };
    covers(a, b) && covers(b, a)
}

/// The set as a linear program over φ with a zero objective.
pub fn membership_lp(u: &SpatialUncertainty) -> LinearProgram {
    let t = u.len();
    let mut lp = LinearProgram::new();
    for i in 0..t {
        lp.add_var(0.0, u.lo0()[i], u.hi0()[i]).unwrap();
    }
    for i in 0..t {
        for j in i + 1..t {
            let g = u.gamma(i, j);
            lp.add_row(vec![(i, 1.0), (j, -1.0)], Cmp::Le, g).unwrap();
            lp.add_row(vec![(i, 1.0), (j, -1.0)], Cmp::Ge, -g).unwrap();
        }
    }
    lp
}

/// max over the set of Σ c_i φ_i, or `None` when the set is empty.
pub fn lp_max(u: &SpatialUncertainty, c: &[(usize, f64)]) -> Option<f64> {
    let mut lp = membership_lp(u);
    for &(i, v) in c {
        lp.set_objective(i, v).unwrap();
    }
    let r = rfmo_lp::solve(&lp, None).unwrap();
    match r.status {
        Status::Optimal => Some(r.objective),
        Status::Infeasible => None,
        Status::Unbounded => panic!("bounded set reported unbounded"),
    }
}

/// Members drawn by coordinate sweeps from the lower bound vector; about
/// a third of the moves jump to an end of the feasible interval so that
/// vertices are visited too.
pub fn sample_members<R: Rng>(u: &SpatialUncertainty, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let t = u.len();
    let mut phi = u.lo().to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for i in 0..t {
            let mut a = u.lo0()[i];
            let mut b = u.hi0()[i];
            for j in 0..t {
                if j != i {
                    a = a.max(phi[j] - u.gamma(i, j));
                    b = b.min(phi[j] + u.gamma(i, j));
                }
            }
            if b < a {
                continue;
            }
            let r: f64 = rng.gen();
            phi[i] = if r < 0.2 {
                a
            } else if r < 0.4 {
                b
            } else {
                rng.gen_range(a..=b)
            };
        }
        out.push(phi.clone());
    }
    out
}

/// A random Γ model that passes the metric check.
pub fn random_gamma<R: Rng>(rng: &mut R) -> GammaModel {
    loop {
        let g = GammaModel::new(rng.gen_range(0.0..0.08), rng.gen_range(-0.004..0.0), rng.gen_range(0.0..0.03))
            .with_offset(rng.gen_range(0.0..0.04));
        if validate_gamma_assumption(&g, 2 * g.plateau_distance() + 2).unwrap().passed() {
            return g;
        }
    }
}

/// Distinct random coordinates in a `side`³ box.
pub fn random_coords<R: Rng>(rng: &mut R, count: usize, side: usize) -> Vec<[i64; 3]> {
    assert!(count <= side * side * side);
    let mut out: Vec<[i64; 3]> = Vec::with_capacity(count);
    while out.len() < count {
        let c = [rng.gen_range(0..side as i64), rng.gen_range(0..side as i64), rng.gen_range(0..side as i64)];
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Random radiosensitivity on `t` voxels of a small grid, kept close
/// together so that moderate δ gives a nonempty set.
pub fn random_phi_case<R: Rng>(rng: &mut R, t: usize) -> (VoxelGrid, RadiosensitivityMap) {
    let side = 4;
    let grid = VoxelGrid::new([side; 3], [1.0; 3], random_coords(rng, t, side)).unwrap();
    let base = rng.gen_range(0.6..0.95);
    let phi: Vec<f64> = (0..t).map(|_| (base + rng.gen_range(-0.08..0.08f64)).clamp(0.0, 1.0)).collect();
    (grid, RadiosensitivityMap::new((0..t).collect(), phi).unwrap())
}

/// A random case: target voxels 0..t, a dose-volume capable organ of `h`
/// voxels, an optional body of `body` voxels, and `n` beamlets.
pub fn random_case<R: Rng>(rng: &mut R, t: usize, h: usize, body: usize, n: usize) -> Case {
    let m = t + h + body;
    let side = (m as f64).cbrt().ceil() as usize + 2;
    let grid = VoxelGrid::new([side; 3], [1.0; 3], random_coords(rng, m, side)).unwrap();
    let mut triplets = Vec::new();
    for v in 0..m {
        let mut any = false;
        for j in 0..n {
            let p = if v < t { 0.8 } else { 0.5 };
            if rng.gen_bool(p) {
                triplets.push((v, j, rng.gen_range(0.1..1.0)));
                any = true;
            }
        }
        if !any && v < t {
            triplets.push((v, rng.gen_range(0..n), rng.gen_range(0.1..1.0)));
        }
    }
    let influence = InfluenceMatrix::from_triplets(m, n, &triplets).unwrap();
    let mean_target = {
        let d = compute_dose(&influence, &vec![1.0; n]).unwrap();
        d[..t].iter().sum::<f64>() / t as f64
    };
    let mut oars = vec![Oar { name: "organ".into(), voxels: (t..t + h).collect(), dbar: 0.5 * mean_target }];
    if body > 0 {
        oars.push(Oar { name: "body".into(), voxels: (t + h..m).collect(), dbar: 0.8 * mean_target });
    }
    let structures = StructureSet::new(m, (0..t).collect(), oars, None).unwrap();
    let base = rng.gen_range(0.7..0.95);
    let phi: Vec<f64> = (0..t).map(|_| (base + rng.gen_range(-0.05..0.05f64)).clamp(0.0, 1.0)).collect();
    let phi = RadiosensitivityMap::new((0..t).collect(), phi).unwrap();
    Case { grid, structures, influence, phi }
}

/// `random_case` with a body, redrawn until every beamlet reaches an OAR
/// so that the programs are bounded.
pub fn bounded_case<R: Rng>(rng: &mut R, t: usize, h: usize, n: usize) -> Case {
    loop {
        let c = random_case(rng, t, h, 4, n);
        let covered = (0..n).all(|j| {
            c.structures.oars().iter().any(|o| o.voxels.iter().any(|&v| c.influence.row(v).0.contains(&j)))
        });
        if covered {
            return c;
        }
    }
}

/// Adds a dose-volume requirement on OAR 0 allowing exactly `theta` voxels
/// above the bound, capped at `dhat_factor` times the bound.
pub fn with_theta(case: &Case, theta: usize, dhat_factor: f64) -> Case {
    let o = &case.structures.oars()[0];
    let h = o.voxels.len();
    let alpha = (theta as f64 + 0.5) / h as f64;
    let dv = DoseVolumeSpec { oar: 0, alpha, dhat: dhat_factor * o.dbar };
    let structures = case.structures.with_dv(Some(dv)).unwrap();
    assert_eq!(structures.theta(), Some(theta));
    Case { structures, ..case.clone() }
}

/// Small phantom with a dose-volume ring, varied by `seed`.
pub fn dv_phantom(seed: u64) -> Case {
    let spec = PhantomSpec {
        dims: [10, 10, 3],
        target_radius: 2.5,
        ring_width: 1.5,
        beams: 5 + (seed % 3) as usize,
        beamlets_per_beam: 5,
        beamlet_rows: 3,
        lateral_sigma: 0.8,
        cutoff: 1e-2,
        dbar_ring: 0.65 + 0.05 * (seed % 3) as f64,
        dbar_body: 0.6,
        dv: Some((0.1, 1.0)),
        seed,
        ..Default::default()
    };
    generate(&spec).unwrap()
}

pub fn instance<'a>(case: &'a Case, unc: &'a SpatialUncertainty, mu: f64) -> RobustInstance<'a> {
    RobustInstance::new(&case.structures, &case.influence, unc, mu).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Robust program with one homogeneity row per vertex of every pair
/// projection (found by Fourier–Motzkin) and one minimum row per voxel
/// lower end, over the original dose rows. Equivalent to enumerating the
/// scenarios each row depends on.
pub fn vertex_robust_lp(inst: &RobustInstance) -> LinearProgram {
    let u = inst.uncertainty;
    let t = u.len();
    let n = inst.num_beamlets();
    let (lo, _) = fm_bounds(u).expect("nonempty set");
    let mut lp = LinearProgram::new();
    for _ in 0..n {
        lp.add_var(0.0, 0.0, f64::INFINITY).unwrap();
    }
    let dmin = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
    let dose_row = |v: usize, s: f64| -> Vec<(usize, f64)> {
        let (cols, vals) = inst.influence.row(v);
        cols.iter().zip(vals).map(|(&j, &a)| (j, s * a)).collect()
    };
    let target = inst.target();
    for p in 0..t {
        let mut e = dose_row(target[p], lo[p]);
        e.push((dmin, -1.0));
        lp.add_row(e, Cmp::Ge, 0.0).unwrap();
    }
    for num in 0..t {
        for den in 0..t {
            if num == den {
                continue;
            }
            for (phi_num, phi_den) in fm_pair_vertices(u, den, num).unwrap() {
                let mut e = dose_row(target[num], phi_num);
                for (j, a) in dose_row(target[den], -inst.mu * phi_den) {
                    e.push((j, a));
                }
                lp.add_row(merge(e), Cmp::Le, 0.0).unwrap();
            }
        }
    }
    for o in inst.structures.oars() {
        for &v in &o.voxels {
            lp.add_row(dose_row(v, 1.0), Cmp::Le, o.dbar).unwrap();
        }
    }
    lp
}

fn merge(mut e: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    e.sort_by_key(|p| p.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(e.len());
    for (j, a) in e {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out
}
