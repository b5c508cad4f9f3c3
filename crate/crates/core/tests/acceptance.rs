//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! a gated criterion fails.

mod common;

use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfmo_core::biomarker::{fit_gamma_model, validate_gamma_assumption, GammaModel, StatsBin};
use rfmo_core::dose_volume::{
    compute_beta_bounds, dv_feasibility, first_meeting_count, mip_oracle, monotonicity_gap, parametric_penalty,
    penalty_grid, row_column_generation, ParametricOptions, PenaltyInstance,
};
use rfmo_core::evaluation::{eud, worst_case_dose, worst_case_homogeneity};
use rfmo_core::io::Case;
use rfmo_core::model::{compute_dose, ModelKind};
use rfmo_core::phantom::{generate, PhantomSpec};
use rfmo_core::robust::{build_nominal, build_robust_compact, full_hom_rows, row_generation, solve_full, RowGenParams};
use rfmo_core::sweep::{run_sweep, SweepGrid};
use rfmo_core::uncertainty::{GammaSource, SpatialUncertainty};
use rfmo_lp::{Cmp, LinearProgram, Status};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn spatial(case: &Case, delta: f64, g: GammaSource) -> SpatialUncertainty {
    SpatialUncertainty::new(ModelKind::Spatial, delta, g, &case.phi, &case.grid).unwrap()
}

fn optimum(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
    let r = rfmo_lp::solve(lp, None).unwrap();
    (r.status == Status::Optimal).then_some((r.objective, r.x))
}

fn projection() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut instances, mut nonempty, mut pairs) = (0, 0, 0);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    while instances < 120 {
        instances += 1;
        let t = rng.gen_range(2..=12);
        let (grid, phi) = random_phi_case(&mut rng, t);
        let delta = rng.gen_range(0.0..=0.2);
        let u = SpatialUncertainty::new(ModelKind::Spatial, delta, GammaSource::Model(random_gamma(&mut rng)), &phi, &grid)
            .unwrap();
        let fm = fm_bounds(&u);
        if fm.is_some() != u.is_nonempty() {
            bad.push(format!("instance {instances}: emptiness disagrees"));
            continue;
        }
        let Some((flo, fhi)) = fm else { continue };
        nonempty += 1;
        for i in 0..t {
            let max = lp_max(&u, &[(i, 1.0)]).unwrap();
            let min = -lp_max(&u, &[(i, -1.0)]).unwrap();
            for e in [u.lo()[i] - min, u.hi()[i] - max, u.lo()[i] - flo[i], u.hi()[i] - fhi[i]] {
                worst = worst.max(e.abs());
            }
        }
        for a in 0..t {
            for b in 0..t {
                if a != b {
                    pairs += 1;
                    let got = u.project_pair(a, b).unwrap().vertices();
                    if !same_points(&got, &fm_pair_vertices(&u, a, b).unwrap(), 1e-9) {
                        bad.push(format!("instance {instances}: pair ({a},{b}) vertices differ"));
                    }
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = bad.is_empty() && worst <= 1e-9 && nonempty >= 100 && secs < 30.0;
    outcome(
        pass,
        format!(
            "{instances} instances ({nonempty} nonempty), {pairs} pair projections, max bound error {worst:.1e}, {secs:.1}s{}",
            bad.first().map(|b| format!("; {b}")).unwrap_or_default()
        ),
    )
}

fn reformulation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let (mut done, mut positive) = (0, 0);
    let (mut worst_rel, mut worst_sample) = (0.0f64, 0.0f64);
    while done < 60 {
        let (t, h, n) = (rng.gen_range(2..=6), rng.gen_range(1..=16), rng.gen_range(2..=8));
        let case = bounded_case(&mut rng, t, h, n);
        let u = spatial(&case, rng.gen_range(0.0..0.15), GammaSource::Model(random_gamma(&mut rng)));
        if !u.is_nonempty() {
            continue;
        }
        let mu = rng.gen_range(1.1..2.5);
        let inst = instance(&case, &u, mu);
        let (z, x) = optimum(&build_robust_compact(&inst).unwrap()).unwrap();
        let (zv, _) = optimum(&vertex_robust_lp(&inst)).unwrap();
        worst_rel = worst_rel.max(rel_diff(z, zv));
        if z > 1e-9 {
            positive += 1;
        }
        let dose = compute_dose(&case.influence, &x[..inst.num_beamlets()]).unwrap();
        let dt: Vec<f64> = inst.target().iter().map(|&v| dose[v]).collect();
        for phi in sample_members(&u, 1000, &mut rng) {
            let adj: Vec<f64> = phi.iter().zip(&dt).map(|(p, d)| p * d).collect();
            let lo = adj.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = adj.iter().cloned().fold(0.0, f64::max);
            worst_sample = worst_sample.max(z - lo).max(hi - mu * lo);
        }
        done += 1;
    }
    let pass = worst_rel <= 1e-6 && worst_sample <= 1e-6;
    outcome(
        pass,
        format!(
            "{done} instances ({positive} with positive dose), max relative gap {worst_rel:.1e}, max sampled violation {:.1e}",
            worst_sample.max(0.0)
        ),
    )
}

fn row_generation_exactness() -> Outcome {
    let started = Instant::now();
    let spec = PhantomSpec {
        dims: [20, 20, 14],
        target_radius: 4.9,
        beams: 7,
        beamlets_per_beam: 7,
        beamlet_rows: 7,
        lateral_sigma: 1.0,
        cutoff: 1e-2,
        dbar_ring: 0.9,
        dbar_body: 0.6,
        ring_width: 2.0,
        ..Default::default()
    };
    let case = generate(&spec).unwrap();
    let u = spatial(&case, 0.05, GammaSource::Model(GammaModel::DEFAULT.with_offset(0.04)));
    let inst = instance(&case, &u, 1.6);
    let total = full_hom_rows(&u);
    let rg = row_generation(&inst, &RowGenParams::default()).unwrap();
    let full = solve_full(&inst, usize::MAX).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let rel = rel_diff(rg.objective, full.objective);
    let share = rg.diagnostics.rows_hom as f64 / total as f64;
    let oars: usize = case.structures.oars().iter().map(|o| o.voxels.len()).sum();
    outcome(
        rel <= 1e-6 && share < 0.2 && secs < 300.0,
        format!(
            "|T| {} OAR voxels {oars}, objective {:.10} vs full {:.10} (rel {rel:.1e}), {} of {total} homogeneity rows ({:.3}%), {secs:.1}s",
            inst.target().len(),
            rg.objective,
            full.objective,
            rg.diagnostics.rows_hom,
            100.0 * share
        ),
    )
}

fn same_rows(a: &LinearProgram, b: &LinearProgram, rows: std::ops::Range<usize>) -> bool {
    rows.into_iter().all(|i| {
        let (p, q) = (a.row(i), b.row(i));
        p.cols() == q.cols() && p.vals() == q.vals() && p.lower() == q.lower() && p.upper() == q.upper()
    })
}

fn special_cases() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut cases: Vec<Case> = (0..10)
        .map(|_| {
            let (t, h, n) = (rng.gen_range(2..=8), rng.gen_range(2..=10), rng.gen_range(2..=6));
            bounded_case(&mut rng, t, h, n)
        })
        .collect();
    cases.push(dv_phantom(0));
    let (mut box_ok, mut nom_ok, mut worst) = (0, 0, 0.0f64);
    for case in &cases {
        let s = spatial(case, 0.1, GammaSource::Uniform(1.0));
        let b = SpatialUncertainty::new(ModelKind::Box, 0.1, GammaSource::Uniform(1.0), &case.phi, &case.grid).unwrap();
        let (ls, lb) = (build_robust_compact(&instance(case, &s, 1.5)).unwrap(), build_robust_compact(&instance(case, &b, 1.5)).unwrap());
        if ls.num_rows() == lb.num_rows() && same_rows(&ls, &lb, 0..ls.num_rows()) {
            box_ok += 1;
        }

        // δ = 0 with γ ≡ 1: the set is the point φ̂
        let z = spatial(case, 0.0, GammaSource::Uniform(1.0));
        let nom = SpatialUncertainty::new(ModelKind::Nominal, 0.0, GammaSource::Uniform(1.0), &case.phi, &case.grid).unwrap();
        let mu = 1.5;
        let lz = build_robust_compact(&instance(case, &z, mu)).unwrap();
        let ln = build_nominal(&instance(case, &nom, mu)).unwrap();
        let t = case.structures.target().len();
        let phi = case.phi.values();
        let target = case.structures.target();
        let mut want = LinearProgram::new();
        for _ in 0..lz.num_vars() {
            want.add_var(0.0, 0.0, f64::INFINITY).unwrap();
        }
        for num in 0..t {
            for den in 0..t {
                if num != den {
                    let mut e: Vec<(usize, f64)> =
                        case.influence.row_entries(target[num]).map(|(j, a)| (j, phi[num] * a)).collect();
                    e.extend(case.influence.row_entries(target[den]).map(|(j, a)| (j, -mu * phi[den] * a)));
                    want.add_row(e, Cmp::Le, 0.0).unwrap();
                }
            }
        }
        // compact: minimum rows, pair rows, OAR rows; nominal: minimum rows,
        // epigraph rows, OAR rows
        let pairs = want.num_rows();
        let oars = ln.num_rows() - 2 * t;
        let layout_ok = lz.num_rows() == t + pairs + oars;
        let hom_ok = layout_ok
            && (0..pairs).all(|i| {
                let (p, q) = (lz.row(t + i), want.row(i));
                p.cols() == q.cols() && p.vals() == q.vals() && p.upper() == q.upper()
            });
        let oar_ok = layout_ok
            && (0..oars).all(|k| {
                let (p, q) = (lz.row(t + pairs + k), ln.row(2 * t + k));
                p.cols() == q.cols() && p.vals() == q.vals() && p.upper() == q.upper()
            });
        let (oz, _) = optimum(&lz).unwrap();
        let (on, _) = optimum(&ln).unwrap();
        worst = worst.max(rel_diff(oz, on));
        if same_rows(&lz, &ln, 0..t) && hom_ok && oar_ok {
            nom_ok += 1;
        }
    }
    let n = cases.len();
    outcome(
        box_ok == n && nom_ok == n && worst <= 1e-9,
        format!(
            "γ≡1 rows identical to box on {box_ok}/{n}; δ=0 minimum and OAR rows identical to nominal, pair rows identical to φ̂_v D_v − μ φ̂_u D_u on {nom_ok}/{n}; objective gap {worst:.1e}"
        ),
    )
}

struct DvFixture {
    label: String,
    gap_trace: f64,
    gap_grid: f64,
    bracket: bool,
    meets: bool,
    beta: f64,
    grid_beta: Option<f64>,
    error: Option<String>,
}

fn dv_fixture(seed: u64, theta: usize) -> DvFixture {
    let case = with_theta(&dv_phantom(seed), theta, 1.4);
    let label = format!("seed {seed} θ {theta}");
    let u = spatial(&case, 0.05, GammaSource::Model(GammaModel::DEFAULT.with_offset(0.02)));
    let pi = PenaltyInstance::new(instance(&case, &u, 1.6), 0.0).unwrap();
    let p = RowGenParams::default();
    let mut f = DvFixture {
        label,
        gap_trace: 0.0,
        gap_grid: 0.0,
        bracket: false,
        meets: false,
        beta: f64::NAN,
        grid_beta: None,
        error: None,
    };
    let run = |f: &mut DvFixture| -> rfmo_core::Result<()> {
        let b = compute_beta_bounds(&pi, &p)?;
        let upper_meets = row_column_generation(&pi.with_beta(b.upper), &p)?.y_l0 <= pi.theta;
        let lower_tight = b.lower == 0.0 || row_column_generation(&pi.with_beta(b.lower * (1.0 - 1e-3)), &p)?.y_l0 > pi.theta;
        let r = parametric_penalty(&pi, b, &p, &ParametricOptions::default())?;
        f.beta = r.beta;
        f.gap_trace = r.trace.monotonicity_gap();
        f.meets = r.solution.y_l0 <= pi.theta;
        let step = 1e-4 * (b.upper - b.lower);
        let grid: Vec<f64> = if step > 0.0 { (0..=10_000).map(|k| b.lower + k as f64 * step).collect() } else { vec![b.lower] };
        f.grid_beta = first_meeting_count(&pi, &grid, &p)?.map(|(_, s)| s.beta);
        f.bracket = upper_meets && lower_tight && f.grid_beta.is_some();
        let top = 1.2 * b.upper.max(1e-3);
        let betas: Vec<f64> = (0..50).map(|k| top * k as f64 / 49.0).collect();
        let sols = penalty_grid(&pi, &betas, &p)?;
        f.gap_grid = monotonicity_gap(sols.iter().map(|s| (s.beta, s.dmin, s.y_l1)));
        Ok(())
    };
    if let Err(e) = run(&mut f) {
        f.error = Some(e.to_string());
    }
    f
}

fn monotonicity(fx: &[DvFixture]) -> Outcome {
    let trace = fx.iter().map(|f| f.gap_trace).fold(0.0, f64::max);
    let grid = fx.iter().map(|f| f.gap_grid).fold(0.0, f64::max);
    let errors = fx.iter().filter(|f| f.error.is_some()).count();
    outcome(
        errors == 0 && trace <= 1e-9 && grid <= 1e-9,
        format!("{} fixtures, max increase along trace {trace:.1e}, along 50-point grid {grid:.1e}", fx.len()),
    )
}

fn bracket_and_termination(fx: &[DvFixture]) -> Outcome {
    let mut bad = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for f in fx {
        if let Some(e) = &f.error {
            bad.push(format!("{}: {e}", f.label));
            continue;
        }
        let g = f.grid_beta.unwrap_or(f64::NAN);
        worst = worst.max(f.beta - g);
        if !(f.bracket && f.meets && f.beta <= g + 1e-12 * (1.0 + g.abs())) {
            bad.push(format!("{}: bracket {} meets {} β {} grid {g}", f.label, f.bracket, f.meets, f.beta));
        }
    }
    outcome(
        fx.len() >= 20 && bad.is_empty(),
        format!(
            "{} fixtures, all bracketed and terminated with ‖y‖₀ ≤ θ: {}, max β − grid β {worst:.2e}{}",
            fx.len(),
            bad.is_empty(),
            bad.first().map(|b| format!("; {b}")).unwrap_or_default()
        ),
    )
}

fn mip_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let (mut done, mut skipped) = (0, 0);
    let mut bad = Vec::new();
    let (mut max_gap, mut sum_gap) = (0.0f64, 0.0f64);
    while done < 12 {
        let (t, h) = (rng.gen_range(2..=4), rng.gen_range(4..=12));
        let base = random_case(&mut rng, t, h, 3, 4);
        let theta = rng.gen_range(1..h);
        let case = with_theta(&base, theta, 1.6);
        let u = spatial(&case, 0.05, GammaSource::Model(GammaModel::DEFAULT.with_offset(0.02)));
        if !u.is_nonempty() {
            continue;
        }
        let pi = PenaltyInstance::new(instance(&case, &u, 1.8), 0.0).unwrap();
        let p = RowGenParams::default();
        // unbounded or hard-infeasible draws have no penalty solution
        let Ok(b) = compute_beta_bounds(&pi, &p) else {
            skipped += 1;
            continue;
        };
        let r = match parametric_penalty(&pi, b, &p, &ParametricOptions::default()) {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("parametric failed: {e}"));
                done += 1;
                continue;
            }
        };
        let mip = mip_oracle(&pi).unwrap();
        let gap = mip.objective - r.solution.dmin;
        max_gap = max_gap.max(gap);
        sum_gap += gap;
        if gap < -1e-7 * (1.0 + mip.objective.abs()) {
            bad.push(format!("mip {} below parametric {}", mip.objective, r.solution.dmin));
        }
        if !dv_feasibility(&pi, &r.solution.plan.x).unwrap().is_feasible(1e-6) {
            bad.push("parametric plan violates the dose-volume constraints".into());
        }
        done += 1;
    }
    outcome(
        bad.is_empty(),
        format!(
            "{done} fixtures ({skipped} draws skipped), gap mean {:.3e} max {max_gap:.3e}, parametric plans feasible{}",
            sum_gap / done as f64,
            bad.first().map(|b| format!("; {b}")).unwrap_or_default()
        ),
    )
}

fn gamma_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = GammaModel::new(rng.gen_range(0.0..0.1), rng.gen_range(-0.01..0.0), rng.gen_range(0.0..0.05));
        let stats: Vec<StatsBin> = (1..=10)
            .map(|d| StatsBin { delta_bin: d, percentile: g.curve(d as f64), max: g.curve(d as f64), count: 7 })
            .collect();
        let f = fit_gamma_model(&stats, 0.0).unwrap();
        worst = worst.max((f.alpha0 - g.alpha0).abs()).max((f.alpha1 - g.alpha1).abs()).max((f.alpha2 - g.alpha2).abs());
    }
    let report = validate_gamma_assumption(&GammaModel::DEFAULT, 50).unwrap();
    outcome(
        worst <= 1e-8 && report.passed(),
        format!("100 planted curves, max coefficient error {worst:.1e}; default coefficients metric on Δ ≤ 50: {}", report.passed()),
    )
}

fn evaluation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let mut done = 0;
    let (mut wd_err, mut wh_err, mut sample_err) = (0.0f64, 0.0f64, 0.0f64);
    while done < 60 {
        let t = rng.gen_range(2..=8);
        let (grid, phi) = random_phi_case(&mut rng, t);
        let u = SpatialUncertainty::new(
            ModelKind::Spatial,
            rng.gen_range(0.0..0.15),
            GammaSource::Model(random_gamma(&mut rng)),
            &phi,
            &grid,
        )
        .unwrap();
        if !u.is_nonempty() {
            continue;
        }
        let dt: Vec<f64> = (0..t).map(|_| rng.gen_range(0.5..2.0)).collect();
        let wd = worst_case_dose(&dt, &u).unwrap();
        let lp = (0..t).map(|v| -lp_max(&u, &[(v, -dt[v])]).unwrap()).fold(f64::INFINITY, f64::min);
        wd_err = wd_err.max((wd - lp).abs());
        let wh = worst_case_homogeneity(&dt, &u).unwrap();
        let mut best = 1.0f64;
        for v in 0..t {
            for w in 0..t {
                if v != w {
                    for (pv, pw) in fm_pair_vertices(&u, w, v).unwrap() {
                        best = best.max(pv * dt[v] / (pw * dt[w]));
                    }
                }
            }
        }
        wh_err = wh_err.max((wh - best).abs());
        for s in sample_members(&u, 200, &mut rng) {
            let adj: Vec<f64> = s.iter().zip(&dt).map(|(p, d)| p * d).collect();
            let lo = adj.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = adj.iter().cloned().fold(0.0, f64::max);
            sample_err = sample_err.max(wd - lo).max(hi / lo - wh);
        }
        done += 1;
    }
    let e = eud(&[60.0, 30.0], -10.0).unwrap();
    let uniform = eud(&[37.5; 11], -10.0).unwrap();
    outcome(
        wd_err <= 1e-9 && wh_err <= 1e-9 && sample_err <= 1e-9 && (e - 32.15).abs() <= 1e-2 && uniform == 37.5,
        format!(
            "{done} sets, worst dose error {wd_err:.1e}, homogeneity error {wh_err:.1e}, sampled excess {:.1e}; EUD(60,30; -10) = {e:.4}, uniform EUD exact: {}",
            sample_err.max(0.0),
            uniform == 37.5
        ),
    )
}

/// Returns the gated outcome and the soft spatial-versus-box report.
fn trends() -> (Outcome, String) {
    let case = dv_phantom(1);
    let base = GammaModel::DEFAULT.with_offset(0.02);
    let p = RowGenParams { tau3: 0.0, ..Default::default() };
    let grid = SweepGrid { mu: vec![1.3, 1.6, 2.0], delta: vec![0.05, 0.07, 0.09, 0.11], gamma: vec![0.0, 0.02, 0.04] };
    let rows = run_sweep(&case, ModelKind::Spatial, &base, &grid, &p, 1).unwrap();
    let failed = rows.iter().filter(|r| r.failed).count();
    let (nd, ng) = (grid.delta.len(), grid.gamma.len());
    let at = |m: usize, d: usize, g: usize| &rows[(m * nd + d) * ng + g];
    let mut delta_rise = 0.0f64;
    for m in 0..grid.mu.len() {
        for g in 0..ng {
            for d in 1..nd {
                delta_rise = delta_rise.max(at(m, d, g).objective - at(m, d - 1, g).objective);
            }
        }
    }

    // fixed plan scored under growing γ
    let mut gamma_drop = 0.0f64;
    for m in 0..grid.mu.len() {
        for d in 0..nd {
            let u0 = spatial(&case, grid.delta[d], GammaSource::Model(base));
            let plan = row_generation(&instance(&case, &u0, grid.mu[m]), &p).unwrap();
            let dose = compute_dose(&case.influence, &plan.x).unwrap();
            let mut prev = 0.0f64;
            for &g in &[0.0, 0.01, 0.02, 0.04, 0.08] {
                let u = spatial(&case, grid.delta[d], GammaSource::Model(base.with_offset(base.gamma_offset + g)));
                let h = worst_case_homogeneity(&dose, &u).unwrap();
                gamma_drop = gamma_drop.max(prev - h);
                prev = h;
            }
        }
    }

    let box_grid = SweepGrid { gamma: vec![0.0], ..grid.clone() };
    let boxes = run_sweep(&case, ModelKind::Box, &base, &box_grid, &p, 1).unwrap();
    let (mut wins, mut total) = (0, 0);
    for r in rows.iter().filter(|r| !r.failed) {
        if let Some(b) = boxes.iter().find(|b| b.mu == r.mu && b.delta == r.delta && !b.failed) {
            total += 1;
            if r.nominal_dmin >= b.nominal_dmin - 1e-9 {
                wins += 1;
            }
        }
    }
    let share = wins as f64 / total.max(1) as f64;
    let soft = format!(
        "spatial nominal d̲̂ ≥ box nominal d̲̂ at matched μ on {wins}/{total} points ({:.0}%, target 70%)",
        100.0 * share
    );
    (
        outcome(
            failed == 0 && delta_rise <= 1e-7 && gamma_drop <= 1e-12,
            format!(
                "{} sweep points, max objective rise along δ {:.1e}, max μ̂ drop along γ {:.1e}",
                rows.len(),
                delta_rise.max(0.0),
                gamma_drop
            ),
        ),
        soft,
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, o: Outcome| {
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report("1", "projection correctness", projection());
    report("2", "reformulation equivalence", reformulation());
    report("3", "row generation exactness", row_generation_exactness());
    report("4", "special-case collapses", special_cases());
    let fixtures: Vec<DvFixture> =
        (0..7u64).flat_map(|s| [1usize, 2, 5].into_iter().map(move |t| (s, t))).map(|(s, t)| dv_fixture(s, t)).collect();
    report("5", "penalty monotonicity", monotonicity(&fixtures));
    report("6", "β bracket and termination", bracket_and_termination(&fixtures));
    report("7", "enumeration dominance", mip_dominance());
    report("8", "Γ pipeline", gamma_pipeline());
    report("9", "evaluation oracles", evaluation_oracles());
    let (gated, soft) = trends();
    report("10", "phantom trends", gated);
    println!("INFO 10 (soft, not gated) {soft}");
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
