//! Cell-centered images and staggered displacement fields.
//!
//! Coordinates are zero-based: pixel `(i, j)` has its center at `(i, j)` and
//! the image covers `[-1/2, n1 - 1/2] x [-1/2, n2 - 1/2]`. Axis 0 is `x1`,
//! axis 1 is `x2`.
//!
//! A [`DisplacementField`] lives on the staggered grids of the cell faces:
//! `v1` sits between horizontally adjacent cells `(i, j)`, `(i + 1, j)` and has
//! shape `(n1 - 1, n2)`, `v2` sits between `(i, j)`, `(i, j + 1)` and has shape
//! `(n1, n2 - 1)`. Components normal to the image boundary are zero and are not
//! stored.

mod interp;
mod ops;
mod pyramid;

pub(crate) use ops::compose_all;
pub use interp::{sample, sample_array, Interp};
pub use ops::{
    compose_path, jacobian_det, scattered_resample, stagger_average, stagger_average_adjoint,
    warp, warp_adjoint, warp_with_gradient,
};
pub use pyramid::{
    downsample_displacement, gaussian_downsample, upsample_cubic, upsample_displacement, upsample_image,
};

use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

/// Lower bound applied to Jacobian determinants.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// A cell-centered scalar image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    data: Array2<f64>,
}

impl Image {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n1, n2) = data.dim();
        if n1 < 2 || n2 < 2 {
            return Err(Error::TooSmall(format!("image {n1}x{n2}, need at least 2x2")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { data })
    }

    pub(crate) fn wrap(data: Array2<f64>) -> Self {
        debug_assert!(data.nrows() >= 1 && data.ncols() >= 1);
        Self { data }
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self::wrap(Array2::zeros((n1, n2)))
    }

    pub fn constant(n1: usize, n2: usize, value: f64) -> Self {
        Self::wrap(Array2::from_elem((n1, n2), value))
    }

    pub fn from_fn(n1: usize, n2: usize, f: impl FnMut((usize, usize)) -> f64) -> Self {
        Self::wrap(Array2::from_shape_fn((n1, n2), f))
    }

    pub fn n1(&self) -> usize {
        self.data.nrows()
    }

    pub fn n2(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn mean(&self) -> f64 {
        self.data.sum() / self.data.len() as f64
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(what, self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Displacement `v = (v1, v2)` on the staggered face grids.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub(crate) v1: Array2<f64>,
    pub(crate) v2: Array2<f64>,
}

impl DisplacementField {
    pub fn new(v1: Array2<f64>, v2: Array2<f64>) -> Result<Self> {
        let (a1, a2) = v1.dim();
        let (b1, b2) = v2.dim();
        if a1 + 1 != b1 || b2 + 1 != a2 || b1 < 2 || a2 < 2 {
            return Err(Error::Layout(format!(
                "v1 {a1}x{a2} and v2 {b1}x{b2} do not form a staggered pair"
            )));
        }
        if !v1.iter().chain(v2.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("displacement".into()));
        }
        Ok(Self { v1, v2 })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            v1: Array2::zeros((n1 - 1, n2)),
            v2: Array2::zeros((n1, n2 - 1)),
        }
    }

    /// Shape `(n1, n2)` of the cell-centered grid the field belongs to.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.v2.nrows(), self.v1.ncols())
    }

    pub fn v1(&self) -> &Array2<f64> {
        &self.v1
    }

    pub fn v2(&self) -> &Array2<f64> {
        &self.v2
    }

    pub fn v1_mut(&mut self) -> &mut Array2<f64> {
        &mut self.v1
    }

    pub fn v2_mut(&mut self) -> &mut Array2<f64> {
        &mut self.v2
    }

    pub fn len(&self) -> usize {
        self.v1.len() + self.v2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        (&self.v1 * &other.v1).sum() + (&self.v2 * &other.v2).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.v1
            .iter()
            .chain(self.v2.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Self) {
        self.v1.scaled_add(a, &other.v1);
        self.v2.scaled_add(a, &other.v2);
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            v1: &self.v1 * a,
            v2: &self.v2 * a,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v1.iter().chain(self.v2.iter()).all(|v| v.is_finite())
    }

    /// Iterates over all stored components, `v1` first.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.v1.iter().chain(self.v2.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.v1.iter_mut().chain(self.v2.iter_mut())
    }
}

/// A cell-centered vector field, either a displacement `(u1, u2)` or a map of
/// absolute positions.
#[derive(Clone, Debug, PartialEq)]
pub struct CellVectorField {
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
}

impl CellVectorField {
    pub fn new(u1: Array2<f64>, u2: Array2<f64>) -> Result<Self> {
        if u1.dim() != u2.dim() {
            return Err(shape_err("vector field components", u1.dim(), u2.dim()));
        }
        Ok(Self { u1, u2 })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            u1: Array2::zeros((n1, n2)),
            u2: Array2::zeros((n1, n2)),
        }
    }

    /// The identity map: every node holds its own position.
    pub fn identity(n1: usize, n2: usize) -> Self {
        Self {
            u1: Array2::from_shape_fn((n1, n2), |(i, _)| i as f64),
            u2: Array2::from_shape_fn((n1, n2), |(_, j)| j as f64),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u1.dim()
    }
}

/// Strictly positive per-pixel weights (Jacobian determinants of composed maps).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    w: Array2<f64>,
}

impl WeightField {
    /// Builds a weight field, clamping every entry below at [`WEIGHT_FLOOR`].
    pub fn clamped(mut w: Array2<f64>) -> Result<Self> {
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        w.mapv_inplace(|v| v.max(WEIGHT_FLOOR));
        Ok(Self { w })
    }

    /// Builds a weight field from strictly positive values without clamping.
    pub fn positive(w: Array2<f64>) -> Result<Self> {
        if !w.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Param("weights must be finite and positive".into()));
        }
        Ok(Self { w })
    }

    pub fn ones(n1: usize, n2: usize) -> Self {
        Self {
            w: Array2::ones((n1, n2)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.dim()
    }
}

/// Ordered deformation steps `(v_0, ..., v_{K-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationPath {
    steps: Vec<DisplacementField>,
}

impl DeformationPath {
    pub fn new(steps: Vec<DisplacementField>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Param("deformation path needs at least one step".into()))?;
        let shape = first.grid_shape();
        if let Some(bad) = steps.iter().find(|s| s.grid_shape() != shape) {
            return Err(shape_err("deformation path step", shape, bad.grid_shape()));
        }
        Ok(Self { steps })
    }

    pub fn zeros(k: usize, n1: usize, n2: usize) -> Self {
        Self {
            steps: vec![DisplacementField::zeros(n1, n2); k.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[DisplacementField] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [DisplacementField] {
        &mut self.steps
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.steps[0].grid_shape()
    }

    pub fn into_steps(self) -> Vec<DisplacementField> {
        self.steps
    }
}

/// Image sequence `(I_0, ..., I_K)` whose last frame is the fixed reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePath {
    frames: Vec<Image>,
}

impl ImagePath {
    /// Builds a path from the free frames `I_0..I_{K-1}` and the reference `I_K`.
    pub fn new(mut free: Vec<Image>, reference: Image) -> Result<Self> {
        if free.is_empty() {
            return Err(Error::Param("image path needs at least one free frame".into()));
        }
        if let Some(bad) = free.iter().find(|f| f.shape() != reference.shape()) {
            return Err(shape_err("image path frame", reference.shape(), bad.shape()));
        }
        free.push(reference);
        Ok(Self { frames: free })
    }

    /// Number of steps `K` (frames minus one).
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &Image {
        &self.frames[k]
    }

    pub fn reference(&self) -> &Image {
        self.frames.last().expect("path has frames")
    }

    pub fn first(&self) -> &Image {
        &self.frames[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    /// Replaces a free frame. The reference frame cannot be replaced.
    pub fn set_frame(&mut self, k: usize, image: Image) -> Result<()> {
        let last = self.steps();
        if k >= last {
            return Err(Error::Range(format!(
                "frame {k} is not free (path has {last} free frames)"
            )));
        }
        self.frames[0].check_same_shape(&image, "image path frame")?;
        self.frames[k] = image;
        Ok(())
    }

    /// Mutable access to the free frames `I_0..I_{K-1}`.
    pub fn free_frames_mut(&mut self) -> &mut [Image] {
        let last = self.steps();
        &mut self.frames[..last]
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }
}
