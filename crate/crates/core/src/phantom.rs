//! Synthetic test cases: a spherical target, a surrounding ring OAR and
//! the remaining body, irradiated by pencil beamlets.
//!
//! The dose model is deliberately simple. Each beam is a lateral × axial
//! grid of beamlets travelling parallel to the axial plane; a voxel receives
//! `exp(-attenuation * depth) * exp(-r² / (2 σ²))`, where `depth` is the
//! distance travelled inside the grid's bounding sphere and `r` the
//! distance to the beamlet axis. Entries below `cutoff` are dropped.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biomarker::synth_radiosensitivity;
use crate::error::{Error, Result};
use crate::io::Case;
use crate::model::{DoseVolumeSpec, InfluenceMatrix, Oar, StructureSet, VoxelGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// In voxels.
    pub target_radius: f64,
    pub ring_width: f64,
    pub beams: usize,
    pub beamlets_per_beam: usize,
    /// Beamlet rows along the axial (z) direction.
    pub beamlet_rows: usize,
    /// Per voxel of depth.
    pub attenuation: f64,
    /// Beamlet lateral spread in voxels.
    pub lateral_sigma: f64,
    pub cutoff: f64,
    pub dbar_ring: f64,
    pub dbar_body: f64,
    /// Dose-volume requirement on the ring as (alpha, dhat).
    pub dv: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [10, 10, 3],
            spacing: [3.0, 3.0, 3.0],
            target_radius: 2.5,
            ring_width: 1.5,
            beams: 4,
            beamlets_per_beam: 2,
            beamlet_rows: 1,
            attenuation: 0.05,
            lateral_sigma: 2.0,
            cutoff: 1e-3,
            dbar_ring: 0.6,
            dbar_body: 0.4,
            dv: None,
            seed: 1,
        }
    }
}

pub fn generate(spec: &PhantomSpec) -> Result<Case> {
    if spec.dims.iter().any(|&d| d == 0) {
        return Err(Error::Invalid(format!("phantom dims must be positive, got {:?}", spec.dims)));
    }
    if !(spec.target_radius > 0.0) {
        return Err(Error::Invalid("phantom target radius must be positive".into()));
    }
    if spec.beams == 0 || spec.beamlets_per_beam == 0 || spec.beamlet_rows == 0 {
        return Err(Error::Invalid("phantom needs at least one beam and one beamlet".into()));
    }
    if !(spec.attenuation >= 0.0 && spec.lateral_sigma > 0.0 && spec.cutoff >= 0.0) {
        return Err(Error::Invalid("attenuation and cutoff must be nonnegative, sigma positive".into()));
    }
    let grid = VoxelGrid::full(spec.dims, spec.spacing)?;
    let centre = [
        (spec.dims[0] as f64 - 1.0) / 2.0,
        (spec.dims[1] as f64 - 1.0) / 2.0,
        (spec.dims[2] as f64 - 1.0) / 2.0,
    ];
    let rel = |v: usize| {
        let c = grid.coords(v);
        [c[0] as f64 - centre[0], c[1] as f64 - centre[1], c[2] as f64 - centre[2]]
    };
    let m = grid.num_voxels();
    let (mut target, mut ring, mut body) = (Vec::new(), Vec::new(), Vec::new());
    for v in 0..m {
        let r = rel(v);
        let dist = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        if dist <= spec.target_radius {
            target.push(v);
        } else if dist <= spec.target_radius + spec.ring_width {
            ring.push(v);
        } else {
            body.push(v);
        }
    }
    if target.is_empty() {
        return Err(Error::Invalid("phantom target contains no voxel".into()));
    }
    let mut oars = Vec::new();
    let mut dv = None;
    if !ring.is_empty() {
        if let Some((alpha, dhat)) = spec.dv {
            dv = Some(DoseVolumeSpec { oar: 0, alpha, dhat });
        }
        oars.push(Oar { name: "ring".into(), voxels: ring, dbar: spec.dbar_ring });
    } else if spec.dv.is_some() {
        return Err(Error::Invalid("dose-volume requirement needs a nonempty ring".into()));
    }
    if !body.is_empty() {
        oars.push(Oar { name: "body".into(), voxels: body, dbar: spec.dbar_body });
    }
    let structures = StructureSet::new(m, target.clone(), oars, dv)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half_diag = 0.5 * ((spec.dims[0] * spec.dims[0] + spec.dims[1] * spec.dims[1]) as f64).sqrt();
    let width = spec.target_radius + spec.ring_width;
    let mut triplets = Vec::new();
    let mut j = 0;
    for b in 0..spec.beams {
        let angle = 2.0 * PI * b as f64 / spec.beams as f64 + rng.gen_range(-0.1..0.1);
        let dir = [angle.cos(), angle.sin()];
        let perp = [-dir[1], dir[0]];
        for row in 0..spec.beamlet_rows {
            let zoff = if spec.beamlet_rows == 1 {
                0.0
            } else {
                -width + (row as f64 + 0.5) * 2.0 * width / spec.beamlet_rows as f64
            };
            for l in 0..spec.beamlets_per_beam {
                let offset = -width
                    + (l as f64 + 0.5) * 2.0 * width / spec.beamlets_per_beam as f64
                    + rng.gen_range(-0.1..0.1);
                for v in 0..m {
                    let r = rel(v);
                    let along = r[0] * dir[0] + r[1] * dir[1];
                    let across = r[0] * perp[0] + r[1] * perp[1] - offset;
                    let lat2 = across * across + (r[2] - zoff) * (r[2] - zoff);
                    let depth = (along + half_diag).max(0.0);
                    let val = (-spec.attenuation * depth).exp()
                        * (-lat2 / (2.0 * spec.lateral_sigma * spec.lateral_sigma)).exp();
                    if val >= spec.cutoff && val > 0.0 {
                        triplets.push((v, j, val));
                    }
                }
                j += 1;
            }
        }
    }
    let influence = InfluenceMatrix::from_triplets(m, j, &triplets)?;
    let phi = synth_radiosensitivity(&grid, &target)?;
    Ok(Case { grid, structures, influence, phi })
}
