//! Run configuration: a flat JSON file with a `version` field, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rfmo_core::biomarker::{GammaModel, OmfConstants};
use rfmo_core::io::{load_case, Case, CasePaths};
use rfmo_core::model::{DoseVolumeSpec, ModelKind};
use rfmo_core::phantom::PhantomSpec;
use rfmo_core::robust::RowGenParams;
use rfmo_core::sweep::SweepGrid;
use rfmo_core::uncertainty::{GammaRef, GammaSource};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    /// Case directory holding geometry.csv, structures.json, influence.csv
    /// and phi.csv. The single-file paths below take precedence.
    pub case: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub structures: Option<PathBuf>,
    pub influence: Option<PathBuf>,
    pub phi: Option<PathBuf>,
    /// `voxel,suv` file converted to φ̂ by `ingest`.
    pub suv: Option<PathBuf>,
    pub omf: OmfConstants,
    pub mode: ModelKind,
    pub mu: f64,
    pub delta: f64,
    pub gamma_offset: f64,
    /// Γ model inline or as a path; defaults to the default fit.
    pub gamma: Option<GammaRef>,
    /// Same γ for every pair, replacing the Γ model.
    pub gamma_uniform: Option<f64>,
    /// Percentile used by `fit-gamma`.
    pub percentile: f64,
    #[serde(flatten)]
    pub rowgen: RowGenParams,
    /// Solve the whole program at once instead of by row generation.
    pub full: bool,
    pub dv_oar: Option<String>,
    pub alpha: Option<f64>,
    pub dhat: Option<f64>,
    /// Overrides ⌊α|H_K|⌋.
    pub theta: Option<usize>,
    pub dv_eps: Option<f64>,
    pub bisection: bool,
    pub bisection_iters: usize,
    pub dv_max_iter: usize,
    pub mu_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub phantom: PhantomSpec,
    /// Plan to score for `evaluate` and `export-dvh`.
    pub plan: Option<PathBuf>,
    pub eud_exponent: f64,
    pub dvh_bin: f64,
    pub out: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub dump_lp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            case: None,
            geometry: None,
            structures: None,
            influence: None,
            phi: None,
            suv: None,
            omf: OmfConstants::default(),
            mode: ModelKind::Spatial,
            mu: 1.6,
            delta: 0.1,
            gamma_offset: 0.0,
            gamma: None,
            gamma_uniform: None,
            percentile: 95.0,
            rowgen: RowGenParams::default(),
            full: false,
            dv_oar: None,
            alpha: None,
            dhat: None,
            theta: None,
            dv_eps: None,
            bisection: false,
            bisection_iters: 20,
            dv_max_iter: 500,
            mu_grid: Vec::new(),
            delta_grid: Vec::new(),
            gamma_grid: Vec::new(),
            phantom: PhantomSpec::default(),
            plan: None,
            eud_exponent: -10.0,
            dvh_bin: 0.01,
            out: PathBuf::from("out"),
            workers: 1,
            seed: 1,
            dump_lp: false,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", path.display()))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => bail!("{}: config version {v}, expected {CONFIG_VERSION}", path.display()),
            None => bail!("{}: config has no version field", path.display()),
        }
        let mut c: RunConfig = serde_json::from_value(raw).with_context(|| format!("{}: bad config", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.case, &mut c.geometry, &mut c.structures, &mut c.influence, &mut c.phi, &mut c.suv, &mut c.plan] {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        }
        if let Some(GammaRef::Path(s)) = &c.gamma {
            if Path::new(s).is_relative() {
                c.gamma = Some(GammaRef::Path(base.join(s).to_string_lossy().into_owned()));
            }
        }
        Ok(c)
    }

    pub fn case_paths(&self) -> Result<CasePaths> {
        let base = match &self.case {
            Some(d) => CasePaths::in_dir(d),
            None if self.geometry.is_some()
                && self.structures.is_some()
                && self.influence.is_some()
                && self.phi.is_some() =>
            {
                CasePaths::in_dir(".")
            }
            None => bail!("no case given: set --case or the case paths in the config"),
        };
        Ok(CasePaths {
            geometry: self.geometry.clone().unwrap_or(base.geometry),
            structures: self.structures.clone().unwrap_or(base.structures),
            influence: self.influence.clone().unwrap_or(base.influence),
            phi: self.phi.clone().unwrap_or(base.phi),
        })
    }

    /// Loads the case and applies the dose-volume overrides.
    pub fn load_case(&self) -> Result<Case> {
        let mut case = load_case(&self.case_paths()?)?;
        if self.dv_oar.is_some() || self.alpha.is_some() || self.dhat.is_some() {
            let cur = case.structures.dv().copied();
            let oar = match &self.dv_oar {
                Some(name) => case.structures.oar_index(name).with_context(|| format!("no OAR named {name:?}"))?,
                None => cur.map(|d| d.oar).context("dose-volume overrides need dv_oar when the case has none")?,
            };
            let alpha = self.alpha.or(cur.map(|d| d.alpha)).context("dose-volume requirement needs alpha")?;
            let dhat = self.dhat.or(cur.map(|d| d.dhat)).context("dose-volume requirement needs dhat")?;
            case.structures = case.structures.with_dv(Some(DoseVolumeSpec { oar, alpha, dhat }))?;
        }
        Ok(case)
    }

    pub fn gamma_model(&self) -> Result<GammaModel> {
        let g = match &self.gamma {
            Some(r) => r.resolve(Path::new("."))?,
            None => GammaModel::DEFAULT,
        };
        Ok(g.with_offset(self.gamma_offset + g.gamma_offset))
    }

    pub fn gamma_source(&self) -> Result<GammaSource> {
        Ok(match self.gamma_uniform {
            Some(c) => GammaSource::Uniform(c),
            None => GammaSource::Model(self.gamma_model()?),
        })
    }

    pub fn grid(&self) -> SweepGrid {
        let or = |g: &Vec<f64>, v: f64| if g.is_empty() { vec![v] } else { g.clone() };
        SweepGrid {
            mu: or(&self.mu_grid, self.mu),
            delta: or(&self.delta_grid, self.delta),
            gamma: or(&self.gamma_grid, 0.0),
        }
    }
}
