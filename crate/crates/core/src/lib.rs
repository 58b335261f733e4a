//! Bounding-box tightness correction for box-supervised volumetric segmentation.
//!
//! A 3D bounding box drawn around an organ is tight in 3D, but its per-slice
//! cross-sections are usually far larger than the organ's cross-section on
//! that slice. This crate:
//!
//! - stores and normalizes volumes ([`volumes`]) and generates synthetic
//!   phantoms that reproduce the non-tightness by construction,
//! - provides half-open box geometry ([`boxgeom`]),
//! - tiles non-tight crops into overlapping patches ([`patchgrid`]) and trains a
//!   small VGG-style patch classifier on a few pixel-labeled volumes
//!   ([`patchclf`]),
//! - shrinks every per-slice box to the extent of its foreground patches
//!   ([`boxcorrect`]),
//! - trains a 2.5D residual UNet from boxes alone with a log-barrier
//!   constrained loss ([`weakseg`]),
//! - and runs the cross-validated comparison of tight, non-tight and corrected
//!   box supervision ([`evalexp`]).
//!
//! The neural-network layers live in [`nn`]; they are plain CPU code over
//! `matrixmultiply` GEMM, generic over `f32`/`f64` so gradients can be checked
//! against finite differences in double precision.

pub mod boxcorrect;
pub mod boxgeom;
pub mod config;
mod error;
pub mod evalexp;
pub mod nn;
pub mod patchclf;
pub mod patchgrid;
pub mod plane;
pub mod volumes;
pub mod weakseg;

pub use boxgeom::{Box2D, Box3D, BoxSeries};
pub use error::{Error, Result};
pub use plane::Plane;
pub use volumes::{MaskVolume, NormStats, Volume};
