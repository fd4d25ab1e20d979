//! Linear measurement operators with exact adjoints.
//!
//! Every operator maps a cell-centered image to a data matrix (a sinogram or a
//! low-resolution image) and knows how to coarsen itself and its data for the
//! next level of a multilevel pyramid.

mod downsample;
mod radon;

pub use downsample::{BlockAverage, ScaledIdentity};
pub use radon::{default_rays, Radon};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::grid::Image;

/// Geometry of a measurement, enough to rebuild its operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Radon {
        grid: (usize, usize),
        angles_deg: Vec<f64>,
        rays: usize,
        /// Detector spacing in pixel units.
        spacing: f64,
    },
    Downsample {
        grid: (usize, usize),
        factor: usize,
    },
    Scaled {
        grid: (usize, usize),
        scale: f64,
    },
}

impl Geometry {
    pub fn grid(&self) -> (usize, usize) {
        match self {
            Self::Radon { grid, .. } | Self::Downsample { grid, .. } | Self::Scaled { grid, .. } => *grid,
        }
    }

    /// Rebuilds the operator described by this geometry.
    pub fn build(&self) -> Result<Box<dyn MeasurementOp>> {
        Ok(match self {
            Self::Radon {
                grid,
                angles_deg,
                rays,
                spacing,
            } => Box::new(Radon::with_spacing(*grid, angles_deg.clone(), *rays, *spacing)?),
            Self::Downsample { grid, factor } => Box::new(BlockAverage::new(*grid, *factor)?),
            Self::Scaled { grid, scale } => Box::new(ScaledIdentity::new(*grid, *scale)),
        })
    }
}

/// Measured (or simulated) data together with its geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementData {
    pub values: Array2<f64>,
    pub geometry: Geometry,
}

impl MeasurementData {
    pub fn new(values: Array2<f64>, geometry: Geometry) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("measurement data".into()));
        }
        Ok(Self { values, geometry })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A linear map `A` from images to measurement data.
pub trait MeasurementOp: std::fmt::Debug + Send + Sync {
    fn input_shape(&self) -> (usize, usize);
    fn output_shape(&self) -> (usize, usize);
    /// `A x` for an image-shaped array.
    fn forward(&self, x: &Array2<f64>) -> Array2<f64>;
    /// `A^T y` for a data-shaped array.
    fn backward(&self, y: &Array2<f64>) -> Array2<f64>;
    fn geometry(&self) -> Geometry;
    /// Operator and data for the next coarser level.
    fn coarsen(&self, data: &MeasurementData) -> Result<(Box<dyn MeasurementOp>, MeasurementData)>;
    fn box_clone(&self) -> Box<dyn MeasurementOp>;

    fn apply(&self, image: &Image) -> Result<MeasurementData> {
        if image.shape() != self.input_shape() {
            return Err(shape_err("operator input", self.input_shape(), image.shape()));
        }
        MeasurementData::new(self.forward(image.data()), self.geometry())
    }

    fn adjoint(&self, data: &MeasurementData) -> Result<Image> {
        if data.shape() != self.output_shape() {
            return Err(shape_err("operator output", self.output_shape(), data.shape()));
        }
        Image::new(self.backward(&data.values))
    }
}

impl Clone for Box<dyn MeasurementOp> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn check_data(op: &dyn MeasurementOp, data: &MeasurementData) -> Result<()> {
    if data.shape() != op.output_shape() {
        return Err(shape_err("measurement data", op.output_shape(), data.shape()));
    }
    Ok(())
}

fn standard_normal_array(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Adds i.i.d. Gaussian noise with standard deviation `level * RMS(data)`.
pub fn add_gaussian_noise(data: &MeasurementData, level: f64, seed: u64) -> Result<MeasurementData> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Param(format!("noise level must be nonnegative, got {level}")));
    }
    if level == 0.0 {
        return Ok(data.clone());
    }
    let rms = data.norm() / (data.values.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = standard_normal_array(data.shape(), &mut rng);
    MeasurementData::new(&data.values + &(noise * (level * rms)), data.geometry.clone())
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    ndarray::Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
}

fn norm(a: &Array2<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Largest relative mismatch `|<Ax, y> - <x, A^T y>| / (|Ax| |y| + eps)` over
/// random Gaussian pairs.
pub fn adjoint_check(op: &dyn MeasurementOp, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = standard_normal_array(op.input_shape(), &mut rng);
        let y = standard_normal_array(op.output_shape(), &mut rng);
        let ax = op.forward(&x);
        let aty = op.backward(&y);
        let mismatch = (dot(&ax, &y) - dot(&x, &aty)).abs();
        worst = worst.max(mismatch / (norm(&ax) * norm(&y) + f64::EPSILON));
    }
    worst
}

/// Power-method estimate of the spectral norm `|A|_2`, computed from `A^T A`.
/// The returned value is nondecreasing in `iters`.
pub fn op_norm_estimate(op: &dyn MeasurementOp, iters: usize, seed: u64) -> f64 {
    power_norm(
        op.input_shape(),
        |x| op.backward(&op.forward(x)),
        |x| norm(&op.forward(x)),
        iters,
        seed,
    )
}

/// Power iteration on a symmetric positive semidefinite `normal_op = B^T B`;
/// `apply_norm(x)` returns `|B x|`.
pub(crate) fn power_norm(
    shape: (usize, usize),
    normal_op: impl Fn(&Array2<f64>) -> Array2<f64>,
    apply_norm: impl Fn(&Array2<f64>) -> f64,
    iters: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal_array(shape, &mut rng);
    let mut best: f64 = 0.0;
    for _ in 0..iters.max(1) {
        let nx = norm(&x);
        if nx == 0.0 {
            break;
        }
        x /= nx;
        best = best.max(apply_norm(&x));
        x = normal_op(&x);
    }
    best
}
