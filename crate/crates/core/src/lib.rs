//! Spatially robust fluence map optimization.
//!
//! Builds the nominal, box and spatially bound robust linear programs over
//! a voxel case, solves them by row generation on top of [`rfmo_lp`],
//! enforces a single dose-volume constraint through a parametric penalty,
//! and scores plans under any of the three uncertainty models.

pub mod biomarker;
pub mod dose_volume;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod phantom;
pub mod robust;
pub mod sweep;
pub mod uncertainty;

pub use error::{Error, Result};
