//! Geometry, structures, the influence matrix and plans.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel grid with integer coordinates per voxel id.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    coords: Vec<[i64; 3]>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], coords: Vec<[i64; 3]>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("grid spacing must be positive, got {spacing:?}")));
        }
        let mut seen = HashSet::with_capacity(coords.len());
        for (v, c) in coords.iter().enumerate() {
            if (0..3).any(|a| c[a] < 0 || c[a] as usize >= dims[a]) {
                return Err(Error::Invalid(format!("voxel {v} coordinate {c:?} outside grid {dims:?}")));
            }
            if !seen.insert(*c) {
                return Err(Error::Invalid(format!("voxel {v} repeats coordinate {c:?}")));
            }
        }
        Ok(Self { dims, spacing, coords })
    }

    /// Every cell of the box, x fastest.
    pub fn full(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let mut coords = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    coords.push([x as i64, y as i64, z as i64]);
                }
            }
        }
        Self::new(dims, spacing, coords)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn num_voxels(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self, v: usize) -> [i64; 3] {
        self.coords[v]
    }

    pub fn all_coords(&self) -> &[[i64; 3]] {
        &self.coords
    }

    /// Voxel distance used by the Γ model and by the pairwise statistics.
    pub fn distance(&self, u: usize, v: usize) -> u32 {
        voxel_distance(self.coords[u], self.coords[v])
    }
}

/// Euclidean distance between grid coordinates in voxel units, rounded up
/// to the next integer.
pub fn voxel_distance(a: [i64; 3], b: [i64; 3]) -> u32 {
    let d2: i64 = (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum();
    ceil_sqrt(d2 as u64) as u32
}

pub(crate) fn ceil_sqrt(n: u64) -> u64 {
    let mut s = (n as f64).sqrt() as u64;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    if s * s == n {
        s
    } else {
        s + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oar {
    pub name: String,
    pub voxels: Vec<usize>,
    pub dbar: f64,
}

/// Dose-volume requirement on one OAR: at most `alpha` of its voxels may
/// exceed `dbar`, and none may exceed `dhat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseVolumeSpec {
    pub oar: usize,
    pub alpha: f64,
    pub dhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureSet {
    m: usize,
    target: Vec<usize>,
    oars: Vec<Oar>,
    dv: Option<DoseVolumeSpec>,
}

impl StructureSet {
    /// Validates that target and OARs partition `0..m` exactly.
    pub fn new(m: usize, mut target: Vec<usize>, mut oars: Vec<Oar>, dv: Option<DoseVolumeSpec>) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Partition("target is empty".into()));
        }
        let mut owner: Vec<Option<&str>> = vec![None; m];
        target.sort_unstable();
        for o in oars.iter_mut() {
            o.voxels.sort_unstable();
            if !(o.dbar > 0.0 && o.dbar.is_finite()) {
                return Err(Error::Invalid(format!("OAR {} has non-positive bound {}", o.name, o.dbar)));
            }
        }
        let groups = std::iter::once(("target", &target)).chain(oars.iter().map(|o| (o.name.as_str(), &o.voxels)));
        for (name, ids) in groups {
            for &v in ids {
                if v >= m {
                    return Err(Error::Partition(format!("{name} lists voxel {v} but m = {m}")));
                }
                if let Some(prev) = owner[v] {
                    return Err(Error::Partition(format!("voxel {v} is in both {prev} and {name}")));
                }
                owner[v] = Some(name);
            }
        }
        if let Some(v) = owner.iter().position(|o| o.is_none()) {
            return Err(Error::Partition(format!("voxel {v} belongs to no structure")));
        }
        if let Some(spec) = &dv {
            let o = oars
                .get(spec.oar)
                .ok_or_else(|| Error::Invalid(format!("dose-volume OAR index {} out of range", spec.oar)))?;
            if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
                return Err(Error::Invalid(format!("dose-volume alpha {} outside (0,1)", spec.alpha)));
            }
            if !(spec.dhat > o.dbar && spec.dhat.is_finite()) {
                return Err(Error::Invalid(format!("dose-volume cap {} must exceed bound {}", spec.dhat, o.dbar)));
            }
        }
        Ok(Self { m, target, oars, dv })
    }

    pub fn num_voxels(&self) -> usize {
        self.m
    }

    /// Sorted target voxel ids.
    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn oars(&self) -> &[Oar] {
        &self.oars
    }

    pub fn dv(&self) -> Option<&DoseVolumeSpec> {
        self.dv.as_ref()
    }

    pub fn oar_index(&self, name: &str) -> Option<usize> {
        self.oars.iter().position(|o| o.name == name)
    }

    /// Replaces the dose-volume requirement, revalidating it.
    pub fn with_dv(&self, dv: Option<DoseVolumeSpec>) -> Result<Self> {
        Self::new(self.m, self.target.clone(), self.oars.clone(), dv)
    }

    /// Replaces the bound of one OAR.
    pub fn with_dbar(&self, k: usize, dbar: f64) -> Result<Self> {
        let mut oars = self.oars.clone();
        oars[k].dbar = dbar;
        Self::new(self.m, self.target.clone(), oars, self.dv)
    }

    /// Number of dose-volume OAR voxels allowed above the bound, ⌊α|H_K|⌋.
    pub fn theta(&self) -> Option<usize> {
        self.dv.map(|s| (s.alpha * self.oars[s.oar].voxels.len() as f64).floor() as usize)
    }
}

/// Sparse nonnegative voxel-by-beamlet matrix stored by voxel rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl InfluenceMatrix {
    /// Builds from `(voxel, beamlet, value)` triplets. Explicit zeros are
    /// dropped.
    pub fn from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(v, j, val) in triplets {
            if v >= m || j >= n {
                return Err(Error::Dimension(format!("entry ({v},{j}) outside {m}x{n}")));
            }
            if !val.is_finite() {
                return Err(Error::Invalid(format!("non-finite influence at ({v},{j})")));
            }
            if val < 0.0 {
                return Err(Error::Negative { voxel: v, beamlet: j, value: val });
            }
            t.push((v, j, val));
        }
        t.sort_unstable_by_key(|&(v, j, _)| (v, j));
        for w in t.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Invalid(format!("duplicate influence entry ({},{})", w[0].0, w[0].1)));
            }
        }
        let mut row_ptr = vec![0usize; m + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals = Vec::with_capacity(t.len());
        for &(v, j, val) in &t {
            if val != 0.0 {
                row_ptr[v + 1] += 1;
                cols.push(j);
                vals.push(val);
            }
        }
        for v in 0..m {
            row_ptr[v + 1] += row_ptr[v];
        }
        Ok(Self { m, n, row_ptr, cols, vals })
    }

    pub fn num_voxels(&self) -> usize {
        self.m
    }

    pub fn num_beamlets(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, v: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[v]..self.row_ptr[v + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn row_entries(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (c, x) = self.row(v);
        c.iter().copied().zip(x.iter().copied())
    }

    pub fn dose_at(&self, v: usize, x: &[f64]) -> f64 {
        self.row_entries(v).map(|(j, a)| a * x[j]).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.m).flat_map(move |v| self.row_entries(v).map(move |(j, a)| (v, j, a)))
    }
}

/// `d = D x`.
pub fn compute_dose(d: &InfluenceMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != d.n {
        return Err(Error::Dimension(format!("intensity length {} but {} beamlets", x.len(), d.n)));
    }
    if let Some(j) = x.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Invalid(format!("intensity {j} is {} (must be nonnegative)", x[j])));
    }
    Ok((0..d.m).map(|v| d.dose_at(v, x)).collect())
}

/// Measured radiosensitivity per target voxel, aligned with a sorted
/// voxel list.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiosensitivityMap {
    voxels: Vec<usize>,
    values: Vec<f64>,
}

impl RadiosensitivityMap {
    pub fn new(voxels: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if voxels.len() != values.len() {
            return Err(Error::Dimension(format!("{} voxels but {} values", voxels.len(), values.len())));
        }
        let mut pairs: Vec<(usize, f64)> = voxels.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Invalid(format!("voxel {} listed twice", w[0].0)));
            }
        }
        if let Some((v, p)) = pairs.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid(format!("radiosensitivity {p} at voxel {v} outside [0,1]")));
        }
        Ok(Self { voxels: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Nominal,
    Box,
    Spatial,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Nominal => "nominal",
            ModelKind::Box => "box",
            ModelKind::Spatial => "spatial",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(ModelKind::Nominal),
            "box" => Ok(ModelKind::Box),
            "spatial" => Ok(ModelKind::Spatial),
            _ => Err(Error::Invalid(format!("unknown model {s:?} (expected nominal, box or spatial)"))),
        }
    }
}

/// One line of the row-generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub phase: String,
    pub rows_oar: usize,
    pub rows_hom: usize,
    pub objective: f64,
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.iter, self.phase, self.rows_oar, self.rows_hom, self.objective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub lp_solves: usize,
    pub simplex_iterations: usize,
    pub rows_oar: usize,
    pub rows_hom: usize,
    /// Dose-volume deviation columns generated.
    pub columns: usize,
    pub zero_dose: bool,
    pub trace: Vec<TraceRecord>,
    /// Not serialized so that plan files are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub version: u32,
    pub x: Vec<f64>,
    pub objective: f64,
    pub model: ModelKind,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl Plan {
    pub fn new(x: Vec<f64>, objective: f64, model: ModelKind) -> Self {
        Self { version: PLAN_VERSION, x, objective, model, params: BTreeMap::new(), diagnostics: Diagnostics::default() }
    }

    /// `‖x‖∞ ≤ 1e-9`.
    pub fn is_zero_dose(&self) -> bool {
        self.x.iter().all(|v| v.abs() <= ZERO_DOSE_TOL)
    }
}

pub const ZERO_DOSE_TOL: f64 = 1e-9;
