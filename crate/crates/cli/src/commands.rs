use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rfmo_core::biomarker::{fit_gamma_model, pairwise_stats, suv_to_omf, validate_gamma_assumption};
use rfmo_core::dose_volume::{
    bisection_narrow, compute_beta_bounds, dv_feasibility, parametric_penalty, DvReport, ParametricOptions,
    PenaltyInstance,
};
use rfmo_core::evaluation::{dvh_csv, evaluate_plan};
use rfmo_core::io::{load_plan, save_plan, write_atomic, write_case, write_json, Case};
use rfmo_core::model::{ModelKind, Plan};
use rfmo_core::phantom::generate;
use rfmo_core::robust::{build_robust_lifted, solve_full, Master, RobustInstance};
use rfmo_core::sweep::{results_csv, run_sweep};
use rfmo_core::uncertainty::{GammaSource, SpatialUncertainty};
use rfmo_lp::LinearProgram;
use serde::Serialize;

use crate::config::RunConfig;

/// What a command reports back to `main` for the exit code.
pub enum Outcome {
    Done,
    ZeroDose,
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn uncertainty(cfg: &RunConfig, case: &Case) -> Result<SpatialUncertainty> {
    Ok(SpatialUncertainty::new(cfg.mode, cfg.delta, cfg.gamma_source()?, &case.phi, &case.grid)?)
}

fn dump(lp: &LinearProgram, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    rfmo_lp::write_mps(lp, "rfmo", &mut buf)?;
    write_atomic(path, &buf)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn trace_csv(plan: &Plan) -> String {
    let mut s = String::from("iter,phase,rows_oar,rows_hom,objective\n");
    for r in &plan.diagnostics.trace {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct IngestSummary {
    voxels: usize,
    target: usize,
    oars: Vec<(String, usize, f64)>,
    beamlets: usize,
    nonzeros: usize,
    phi_min: f64,
    phi_max: f64,
}

pub fn ingest(cfg: &RunConfig) -> Result<Outcome> {
    let mut case = cfg.load_case()?;
    if let Some(path) = &cfg.suv {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let (mut voxels, mut suv) = (Vec::new(), Vec::new());
        for rec in r.deserialize::<(usize, f64)>() {
            let (v, s) = rec.with_context(|| format!("{}: bad voxel,suv record", path.display()))?;
            voxels.push(v);
            suv.push(s);
        }
        let phi = suv_to_omf(&voxels, &suv, &cfg.omf)?;
        if phi.voxels() != case.structures.target() {
            bail!("{}: voxels must be exactly the target", path.display());
        }
        case.phi = phi;
    }
    let out = out_dir(cfg)?;
    write_case(&case, out)?;
    let v = case.phi.values();
    let summary = IngestSummary {
        voxels: case.grid.num_voxels(),
        target: case.structures.target().len(),
        oars: case.structures.oars().iter().map(|o| (o.name.clone(), o.voxels.len(), o.dbar)).collect(),
        beamlets: case.influence.num_beamlets(),
        nonzeros: case.influence.nnz(),
        phi_min: v.iter().cloned().fold(f64::INFINITY, f64::min),
        phi_max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome::Done)
}

pub fn phantom(cfg: &RunConfig) -> Result<Outcome> {
    let spec = rfmo_core::phantom::PhantomSpec { seed: cfg.seed, ..cfg.phantom.clone() };
    let case = generate(&spec)?;
    write_case(&case, out_dir(cfg)?)?;
    log::info!(
        "phantom: {} voxels, {} target, {} beamlets",
        case.grid.num_voxels(),
        case.structures.target().len(),
        case.influence.num_beamlets()
    );
    Ok(Outcome::Done)
}

pub fn fit_gamma(cfg: &RunConfig) -> Result<Outcome> {
    let case = cfg.load_case()?;
    let stats = pairwise_stats(&case.phi, &case.grid, cfg.percentile)?;
    let model = fit_gamma_model(&stats, cfg.gamma_offset)?;
    let report = validate_gamma_assumption(&model, 2 * model.plateau_distance() + 2)?;
    if !report.passed() {
        log::warn!("fitted Γ fails the metric assumption: {:?}", report.violations);
    }
    let out = out_dir(cfg)?;
    write_json(&out.join("gamma.json"), &model)?;
    let mut s = String::from("distance,pairs,percentile,max\n");
    for b in &stats {
        s.push_str(&format!("{},{},{},{}\n", b.delta_bin, b.count, b.percentile, b.max));
    }
    write_atomic(&out.join("gamma_stats.csv"), s.as_bytes())?;
    Ok(Outcome::Done)
}

fn finish(plan: &Plan) -> Outcome {
    if plan.is_zero_dose() {
        log::warn!("the optimal plan delivers no dose");
        Outcome::ZeroDose
    } else {
        Outcome::Done
    }
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    cfg.rowgen.validate()?;
    let case = cfg.load_case()?;
    let unc = uncertainty(cfg, &case)?;
    let inst = RobustInstance::new(&case.structures, &case.influence, &unc, cfg.mu)?;
    let out = out_dir(cfg)?;
    let plan = if cfg.full {
        if cfg.dump_lp {
            dump(&build_robust_lifted(&inst)?, &out.join("model.mps"))?;
        }
        solve_full(&inst, cfg.rowgen.row_cap)?
    } else {
        let mut m = Master::new(inst, cfg.rowgen.clone())?;
        m.run()?;
        if cfg.dump_lp {
            dump(m.lp(), &out.join("model.mps"))?;
        }
        m.plan()
    };
    log::info!("objective {}", plan.objective);
    let report = evaluate_plan(&plan, &case.structures, &case.influence, &unc, cfg.eud_exponent, cfg.dvh_bin)?;
    save_plan(&plan, &out.join("plan.json"))?;
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("trace.csv"), trace_csv(&plan).as_bytes())?;
    Ok(finish(&plan))
}

pub fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.gamma_uniform.is_some() {
        bail!("sweeps vary the Γ offset; gamma_uniform is not supported here");
    }
    let case = cfg.load_case()?;
    let rows = run_sweep(&case, cfg.mode, &cfg.gamma_model()?, &cfg.grid(), &cfg.rowgen, cfg.workers)?;
    let failed = rows.iter().filter(|r| r.failed).count();
    if failed > 0 {
        log::warn!("{failed} of {} sweep points failed", rows.len());
    }
    write_atomic(&out_dir(cfg)?.join("results.csv"), results_csv(&rows).as_bytes())?;
    Ok(Outcome::Done)
}

pub fn dv(cfg: &RunConfig) -> Result<Outcome> {
    cfg.rowgen.validate()?;
    let case = cfg.load_case()?;
    let unc = uncertainty(cfg, &case)?;
    let inst = RobustInstance::new(&case.structures, &case.influence, &unc, cfg.mu)?;
    let mut pi = PenaltyInstance::new(inst, 0.0)?;
    if let Some(t) = cfg.theta {
        pi.theta = t;
    }
    let mut bounds = compute_beta_bounds(&pi, &cfg.rowgen)?;
    if cfg.bisection {
        bounds = bisection_narrow(&pi, bounds, cfg.bisection_iters, &cfg.rowgen)?;
        log::info!("bisection narrowed beta to [{}, {}]", bounds.lower, bounds.upper);
    }
    let opts = ParametricOptions { eps: cfg.dv_eps, max_iter: cfg.dv_max_iter };
    let res = parametric_penalty(&pi, bounds, &cfg.rowgen, &opts)?;
    let gap = res.trace.monotonicity_gap();
    if gap > 1e-9 {
        log::warn!("trace is not monotone in beta (gap {gap:e})");
    }
    let feas = dv_feasibility(&pi, &res.solution.plan.x)?;
    if !feas.is_feasible(1e-6) {
        log::warn!("returned plan misses the dose-volume requirement: {feas:?}");
    }
    log::info!("beta* {} after {} iterations, {} deviating voxels", res.beta, res.iterations, res.solution.y_l0);
    let out = out_dir(cfg)?;
    let plan = res.solution.plan.clone();
    let report = DvReport { beta_star: res.beta, theta: pi.theta, y_l0: res.solution.y_l0, plan };
    write_json(&out.join("dv.json"), &report)?;
    write_atomic(&out.join("trace.csv"), res.trace.csv().as_bytes())?;
    Ok(finish(&report.plan))
}

fn plan_and_case(cfg: &RunConfig) -> Result<(Plan, Case)> {
    let path = cfg.plan.as_ref().context("no plan given: set --plan")?;
    let plan = load_plan(path)?;
    let case = cfg.load_case()?;
    if plan.x.len() != case.influence.num_beamlets() {
        bail!("{}: plan has {} intensities, case has {} beamlets", path.display(), plan.x.len(), case.influence.num_beamlets());
    }
    Ok((plan, case))
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let (plan, case) = plan_and_case(cfg)?;
    let unc = uncertainty(cfg, &case)?;
    let report = evaluate_plan(&plan, &case.structures, &case.influence, &unc, cfg.eud_exponent, cfg.dvh_bin)?;
    write_json(&out_dir(cfg)?.join("report.json"), &report)?;
    Ok(Outcome::Done)
}

pub fn export_dvh(cfg: &RunConfig) -> Result<Outcome> {
    let (plan, case) = plan_and_case(cfg)?;
    // DVH needs no uncertainty set; use the nominal one so empty sets
    // cannot block the export
    let unc = SpatialUncertainty::new(ModelKind::Nominal, 0.0, GammaSource::Uniform(1.0), &case.phi, &case.grid)?;
    let report = evaluate_plan(&plan, &case.structures, &case.influence, &unc, cfg.eud_exponent, cfg.dvh_bin)?;
    write_atomic(&out_dir(cfg)?.join("dvh.csv"), dvh_csv(&report.dvh).as_bytes())?;
    Ok(Outcome::Done)
}
