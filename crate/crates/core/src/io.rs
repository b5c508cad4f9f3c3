//! Case files, plan files and atomic writes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DoseVolumeSpec, InfluenceMatrix, Oar, Plan, RadiosensitivityMap, StructureSet, VoxelGrid, PLAN_VERSION,
};

/// A loaded planning case.
#[derive(Debug, Clone)]
pub struct Case {
    pub grid: VoxelGrid,
    pub structures: StructureSet,
    pub influence: InfluenceMatrix,
    pub phi: RadiosensitivityMap,
}

#[derive(Debug, Clone)]
pub struct CasePaths {
    pub geometry: PathBuf,
    pub structures: PathBuf,
    pub influence: PathBuf,
    pub phi: PathBuf,
}

impl CasePaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            geometry: d.join("geometry.csv"),
            structures: d.join("structures.json"),
            influence: d.join("influence.csv"),
            phi: d.join("phi.csv"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OarFile {
    name: String,
    ids: Vec<usize>,
    dbar: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DvFile {
    oar: String,
    alpha: f64,
    dhat: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StructuresFile {
    m: usize,
    target: Vec<usize>,
    oars: Vec<OarFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dv: Option<DvFile>,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(f))
}

fn check_header(path: &Path, r: &mut csv::Reader<fs::File>, want: &[&str]) -> Result<()> {
    let h = r.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = h.iter().collect();
    if got != want {
        return Err(parse_err(path, 1, format!("expected header {}, found {}", want.join(","), got.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let s = rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing column {}", i + 1)))?;
    s.parse().map_err(|_| parse_err(path, line, format!("cannot parse {s:?}")))
}

fn records(path: &Path, want: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv_reader(path)?;
    check_header(path, &mut r, want)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn read_spacing(path: &Path) -> Result<[f64; 3]> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("spacing") {
                let v: Vec<f64> = it
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(path, i as u64 + 1, "bad spacing comment"))?;
                if v.len() != 3 {
                    return Err(parse_err(path, i as u64 + 1, "spacing needs three values"));
                }
                return Ok([v[0], v[1], v[2]]);
            }
        } else if !t.is_empty() {
            break;
        }
    }
    Ok([1.0, 1.0, 1.0])
}

pub fn load_geometry(path: &Path) -> Result<VoxelGrid> {
    let spacing = read_spacing(path)?;
    let recs = records(path, &["voxel", "ix", "iy", "iz"])?;
    let mut coords: Vec<Option<[i64; 3]>> = vec![None; recs.len()];
    for rec in &recs {
        let line = rec.position().map_or(0, |p| p.line());
        let v: usize = field(path, rec, 0)?;
        let c = [field(path, rec, 1)?, field(path, rec, 2)?, field(path, rec, 3)?];
        if c.iter().any(|&x: &i64| x < 0) {
            return Err(parse_err(path, line, "negative grid coordinate"));
        }
        if v >= coords.len() || coords[v].is_some() {
            return Err(parse_err(path, line, format!("voxel id {v} repeated or not dense")));
        }
        coords[v] = Some(c);
    }
    let coords: Vec<[i64; 3]> = coords.into_iter().map(|c| c.expect("dense ids checked")).collect();
    let mut dims = [1usize; 3];
    for c in &coords {
        for a in 0..3 {
            dims[a] = dims[a].max(c[a] as usize + 1);
        }
    }
    VoxelGrid::new(dims, spacing, coords)
}

pub fn load_structures(path: &Path) -> Result<StructureSet> {
    let s: StructuresFile = read_json(path)?;
    let oars: Vec<Oar> = s.oars.into_iter().map(|o| Oar { name: o.name, voxels: o.ids, dbar: o.dbar }).collect();
    let dv = match s.dv {
        None => None,
        Some(d) => {
            let oar = oars
                .iter()
                .position(|o| o.name == d.oar)
                .ok_or_else(|| Error::Schema(format!("{}: dose-volume OAR {:?} not found", path.display(), d.oar)))?;
            Some(DoseVolumeSpec { oar, alpha: d.alpha, dhat: d.dhat })
        }
    };
    StructureSet::new(s.m, s.target, oars, dv)
}

/// Reads `influence.csv`; `n` is one past the largest beamlet id.
pub fn load_influence(path: &Path, m: usize) -> Result<InfluenceMatrix> {
    let recs = records(path, &["voxel", "beamlet", "value"])?;
    let mut t = Vec::with_capacity(recs.len());
    let mut n = 0;
    for rec in &recs {
        let line = rec.position().map_or(0, |p| p.line());
        let v: usize = field(path, rec, 0)?;
        let j: usize = field(path, rec, 1)?;
        let a: f64 = field(path, rec, 2)?;
        if a < 0.0 {
            return Err(Error::Negative { voxel: v, beamlet: j, value: a });
        }
        if v >= m {
            return Err(parse_err(path, line, format!("voxel {v} but m = {m}")));
        }
        n = n.max(j + 1);
        t.push((v, j, a));
    }
    InfluenceMatrix::from_triplets(m, n, &t).map_err(|e| match e {
        Error::Invalid(msg) => parse_err(path, 0, msg),
        other => other,
    })
}

pub fn load_phi(path: &Path) -> Result<RadiosensitivityMap> {
    let recs = records(path, &["voxel", "phi_hat"])?;
    let mut voxels = Vec::with_capacity(recs.len());
    let mut values = Vec::with_capacity(recs.len());
    for rec in &recs {
        voxels.push(field(path, rec, 0)?);
        values.push(field(path, rec, 1)?);
    }
    RadiosensitivityMap::new(voxels, values)
}

pub fn load_case(paths: &CasePaths) -> Result<Case> {
    let grid = load_geometry(&paths.geometry)?;
    let structures = load_structures(&paths.structures)?;
    if grid.num_voxels() != structures.num_voxels() {
        return Err(Error::Dimension(format!(
            "geometry has {} voxels but structures declare m = {}",
            grid.num_voxels(),
            structures.num_voxels()
        )));
    }
    let influence = load_influence(&paths.influence, structures.num_voxels())?;
    let phi = load_phi(&paths.phi)?;
    if phi.voxels() != structures.target() {
        return Err(Error::Invalid(format!("{}: voxels must be exactly the target", paths.phi.display())));
    }
    for &v in structures.target() {
        if influence.row(v).0.is_empty() {
            log::warn!("target voxel {v} receives no dose from any beamlet; the plan will be zero-dose");
        }
    }
    Ok(Case { grid, structures, influence, phi })
}

/// Writes all four case files into `dir`.
pub fn write_case(case: &Case, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = case.grid.spacing();
    let mut g = format!("# spacing {} {} {}\nvoxel,ix,iy,iz\n", s[0], s[1], s[2]);
    for (v, c) in case.grid.all_coords().iter().enumerate() {
        g.push_str(&format!("{v},{},{},{}\n", c[0], c[1], c[2]));
    }
    write_atomic(&dir.join("geometry.csv"), g.as_bytes())?;

    let st = &case.structures;
    let file = StructuresFile {
        m: st.num_voxels(),
        target: st.target().to_vec(),
        oars: st.oars().iter().map(|o| OarFile { name: o.name.clone(), ids: o.voxels.clone(), dbar: o.dbar }).collect(),
        dv: st.dv().map(|d| DvFile { oar: st.oars()[d.oar].name.clone(), alpha: d.alpha, dhat: d.dhat }),
    };
    write_json(&dir.join("structures.json"), &file)?;

    let mut inf = String::from("voxel,beamlet,value\n");
    for (v, j, a) in case.influence.triplets() {
        inf.push_str(&format!("{v},{j},{a}\n"));
    }
    write_atomic(&dir.join("influence.csv"), inf.as_bytes())?;

    let mut p = String::from("voxel,phi_hat\n");
    for (v, x) in case.phi.voxels().iter().zip(case.phi.values()) {
        p.push_str(&format!("{v},{x}\n"));
    }
    write_atomic(&dir.join("phi.csv"), p.as_bytes())
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))
}

pub fn save_plan(plan: &Plan, path: &Path) -> Result<()> {
    write_json(path, plan)
}

pub fn load_plan(path: &Path) -> Result<Plan> {
    let raw: serde_json::Value = read_json(path)?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == PLAN_VERSION as u64 => {}
        Some(v) => return Err(Error::Schema(format!("{}: plan version {v}, expected {PLAN_VERSION}", path.display()))),
        None => return Err(Error::Schema(format!("{}: plan has no version field", path.display()))),
    }
    serde_json::from_value(raw).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}
