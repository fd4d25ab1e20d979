//! Reconstruction of images from indirect, incomplete linear measurements
//! (sparse and limited-angle tomography, superresolution) regularized by a
//! time-discrete metamorphosis path towards a reference image.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: cell-centered images, staggered displacement fields,
//!   interpolation, warping and deformation composition.
//! * [`operators`]: measurement operators (parallel-beam Radon, block
//!   downsampling) with exact adjoints and per-level coarsening.
//! * [`energy`]: discrete energies and their gradients.
//! * [`convex`]: primal-dual solver for the L²-TV problem and its weighted variant.
//! * [`registration`]: Gauss–Newton registration of image pairs.
//! * [`morph`]: the image-path subproblem in substituted variables.
//! * [`multilevel`]: the coarse-to-fine alternating driver.
//! * [`palm`]: proximal alternating linearized minimization of the same objective.
//! * [`metrics`]: SSIM and PSNR.
//! * [`phantom`]: procedural test image pairs.
//! * [`io`]: PGM/PFM image files and sinogram geometry sidecars.

pub mod convex;
pub mod energy;
mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod morph;
pub mod multilevel;
pub mod operators;
pub mod palm;
pub mod phantom;
pub mod registration;

pub use error::{Error, Result};
pub use grid::{
    CellVectorField, DeformationPath, DisplacementField, Image, ImagePath, Interp, WeightField,
};
