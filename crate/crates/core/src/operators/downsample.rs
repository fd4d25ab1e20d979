use ndarray::Array2;

use super::{check_data, Geometry, MeasurementData, MeasurementOp};
use crate::error::{Error, Result};
use crate::grid::{gaussian_downsample, Image};

/// Superresolution forward model `B = P I P^T`, where `P` averages each run
/// of `factor` consecutive samples. A factor of 1 is the identity.
#[derive(Clone, Debug)]
pub struct BlockAverage {
    grid: (usize, usize),
    factor: usize,
}

impl BlockAverage {
    pub fn new(grid: (usize, usize), factor: usize) -> Result<Self> {
        if factor == 0 || grid.0 % factor != 0 || grid.1 % factor != 0 {
            return Err(Error::Param(format!(
                "grid {grid:?} is not divisible by the downsampling factor {factor}"
            )));
        }
        if grid.0 / factor < 2 || grid.1 / factor < 2 {
            return Err(Error::TooSmall(format!("grid {grid:?} with factor {factor}")));
        }
        Ok(Self { grid, factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl MeasurementOp for BlockAverage {
    fn input_shape(&self) -> (usize, usize) {
        self.grid
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.grid.0 / self.factor, self.grid.1 / self.factor)
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let f = self.factor;
        let scale = 1.0 / (f * f) as f64;
        Array2::from_shape_fn(self.output_shape(), |(a, b)| {
            let mut acc = 0.0;
            for i in a * f..(a + 1) * f {
                for j in b * f..(b + 1) * f {
                    acc += x[[i, j]];
                }
            }
            acc * scale
        })
    }

    fn backward(&self, y: &Array2<f64>) -> Array2<f64> {
        let f = self.factor;
        let scale = 1.0 / (f * f) as f64;
        Array2::from_shape_fn(self.grid, |(i, j)| y[[i / f, j / f]] * scale)
    }

    fn geometry(&self) -> Geometry {
        Geometry::Downsample {
            grid: self.grid,
            factor: self.factor,
        }
    }

    /// Halves the factor and keeps the data. Once the factor is 1 the
    /// operator stays the identity and the data is downsampled with the image
    /// pyramid instead.
    fn coarsen(&self, data: &MeasurementData) -> Result<(Box<dyn MeasurementOp>, MeasurementData)> {
        check_data(self, data)?;
        let grid = (self.grid.0.div_ceil(2), self.grid.1.div_ceil(2));
        if self.factor >= 2 {
            let coarse = BlockAverage::new(grid, self.factor / 2)?;
            let geometry = coarse.geometry();
            Ok((Box::new(coarse), MeasurementData::new(data.values.clone(), geometry)?))
        } else {
            let values = gaussian_downsample(&Image::new(data.values.clone())?)?.into_data();
            let coarse = BlockAverage::new(values.dim(), 1)?;
            let geometry = coarse.geometry();
            Ok((Box::new(coarse), MeasurementData::new(values, geometry)?))
        }
    }

    fn box_clone(&self) -> Box<dyn MeasurementOp> {
        Box::new(self.clone())
    }
}

/// `A = c I`; with `c = 1` this is the denoising operator.
#[derive(Clone, Debug)]
pub struct ScaledIdentity {
    grid: (usize, usize),
    scale: f64,
}

impl ScaledIdentity {
    pub fn new(grid: (usize, usize), scale: f64) -> Self {
        Self { grid, scale }
    }

    pub fn identity(grid: (usize, usize)) -> Self {
        Self::new(grid, 1.0)
    }
}

impl MeasurementOp for ScaledIdentity {
    fn input_shape(&self) -> (usize, usize) {
        self.grid
    }

    fn output_shape(&self) -> (usize, usize) {
        self.grid
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x * self.scale
    }

    fn backward(&self, y: &Array2<f64>) -> Array2<f64> {
        y * self.scale
    }

    fn geometry(&self) -> Geometry {
        Geometry::Scaled {
            grid: self.grid,
            scale: self.scale,
        }
    }

    fn coarsen(&self, data: &MeasurementData) -> Result<(Box<dyn MeasurementOp>, MeasurementData)> {
        check_data(self, data)?;
        let values = gaussian_downsample(&Image::new(data.values.clone())?)?.into_data();
        let coarse = ScaledIdentity::new(values.dim(), self.scale);
        let geometry = coarse.geometry();
        Ok((Box::new(coarse), MeasurementData::new(values, geometry)?))
    }

    fn box_clone(&self) -> Box<dyn MeasurementOp> {
        Box::new(self.clone())
    }
}
