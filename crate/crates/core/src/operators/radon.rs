use std::sync::Arc;

use ndarray::Array2;

use super::{check_data, Geometry, MeasurementData, MeasurementOp};
use crate::error::{Error, Result};

/// Default detector count: one and a half rays per pixel along the longer axis.
pub fn default_rays(grid: (usize, usize)) -> usize {
    (1.5 * grid.0.max(grid.1) as f64).ceil() as usize
}

#[derive(Clone, Copy, Debug)]
struct Direction {
    cos: f64,
    sin: f64,
}

/// Parallel-beam Radon transform discretized with Joseph's method.
///
/// A ray with normal angle `theta` and signed offset `s` is the line
/// `x1 cos(theta) + x2 sin(theta) = s` in coordinates centered on the image.
/// The ray is traversed one pixel row (or column) at a time along its
/// dominant axis and the image is linearly interpolated across the other
/// axis, with zero outside the image. Detectors are centered and span the
/// image diagonal by default. The adjoint is the exact transpose.
#[derive(Clone, Debug)]
pub struct Radon {
    grid: (usize, usize),
    angles_deg: Vec<f64>,
    directions: Vec<Direction>,
    rays: usize,
    spacing: f64,
    matrix: Arc<SparseRows>,
}

/// Ray weights in compressed-row form, one row per `(angle, ray)`.
#[derive(Debug)]
struct SparseRows {
    ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl Radon {
    /// `rays = None` selects [`default_rays`].
    pub fn new(grid: (usize, usize), angles_deg: Vec<f64>, rays: Option<usize>) -> Result<Self> {
        let rays = rays.unwrap_or_else(|| default_rays(grid));
        let diag = ((grid.0 * grid.0 + grid.1 * grid.1) as f64).sqrt();
        Self::with_spacing(grid, angles_deg, rays, diag / rays.max(1) as f64)
    }

    pub fn with_spacing(grid: (usize, usize), angles_deg: Vec<f64>, rays: usize, spacing: f64) -> Result<Self> {
        if angles_deg.is_empty() {
            return Err(Error::Param("Radon transform needs at least one angle".into()));
        }
        if rays < 2 {
            return Err(Error::Param(format!("need at least 2 rays, got {rays}")));
        }
        if grid.0 < 2 || grid.1 < 2 {
            return Err(Error::TooSmall(format!("Radon grid {grid:?}")));
        }
        if !(spacing > 0.0) || !angles_deg.iter().all(|a| a.is_finite()) {
            return Err(Error::Param("invalid detector spacing or angle".into()));
        }
        let directions = angles_deg
            .iter()
            .map(|a| {
                let t = a.to_radians();
                Direction { cos: t.cos(), sin: t.sin() }
            })
            .collect();
        let mut op = Self {
            grid,
            angles_deg,
            directions,
            rays,
            spacing,
            matrix: Arc::new(SparseRows {
                ptr: Vec::new(),
                col: Vec::new(),
                val: Vec::new(),
            }),
        };
        let n2 = grid.1;
        let mut m = SparseRows {
            ptr: vec![0],
            col: Vec::new(),
            val: Vec::new(),
        };
        for a in 0..op.angles_deg.len() {
            for r in 0..rays {
                op.for_each_weight(a, r, |i, j, w| {
                    m.col.push((i * n2 + j) as u32);
                    m.val.push(w);
                });
                m.ptr.push(m.col.len());
            }
        }
        op.matrix = Arc::new(m);
        Ok(op)
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn rays(&self) -> usize {
        self.rays
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Signed offset of detector `r` from the center, in pixel units.
    pub fn offset(&self, r: usize) -> f64 {
        (r as f64 - 0.5 * (self.rays as f64 - 1.0)) * self.spacing
    }

    /// Visits every `(pixel, weight)` pair of ray `(a, r)`.
    #[inline]
    fn for_each_weight(&self, a: usize, r: usize, mut f: impl FnMut(usize, usize, f64)) {
        let (n1, n2) = self.grid;
        let c1 = 0.5 * (n1 as f64 - 1.0);
        let c2 = 0.5 * (n2 as f64 - 1.0);
        let d = self.directions[a];
        let s = self.offset(r);
        if d.cos.abs() >= d.sin.abs() {
            // march along x2, interpolate in x1
            let step = 1.0 / d.cos.abs();
            for j in 0..n2 {
                let x2 = j as f64 - c2;
                let f1 = (s - x2 * d.sin) / d.cos + c1;
                let i0 = f1.floor();
                let t = f1 - i0;
                let i0 = i0 as isize;
                if i0 >= 0 && (i0 as usize) < n1 {
                    f(i0 as usize, j, (1.0 - t) * step);
                }
                if i0 + 1 >= 0 && ((i0 + 1) as usize) < n1 {
                    f((i0 + 1) as usize, j, t * step);
                }
            }
        } else {
            let step = 1.0 / d.sin.abs();
            for i in 0..n1 {
                let x1 = i as f64 - c1;
                let f2 = (s - x1 * d.cos) / d.sin + c2;
                let j0 = f2.floor();
                let t = f2 - j0;
                let j0 = j0 as isize;
                if j0 >= 0 && (j0 as usize) < n2 {
                    f(i, j0 as usize, (1.0 - t) * step);
                }
                if j0 + 1 >= 0 && ((j0 + 1) as usize) < n2 {
                    f(i, (j0 + 1) as usize, t * step);
                }
            }
        }
    }
}

impl MeasurementOp for Radon {
    fn input_shape(&self) -> (usize, usize) {
        self.grid
    }

    fn output_shape(&self) -> (usize, usize) {
        (self.angles_deg.len(), self.rays)
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let x = x.as_standard_layout();
        let x = x.as_slice().expect("standard layout");
        let m = &*self.matrix;
        let values = m
            .ptr
            .windows(2)
            .map(|w| (w[0]..w[1]).map(|e| m.val[e] * x[m.col[e] as usize]).sum())
            .collect();
        Array2::from_shape_vec(self.output_shape(), values).expect("row count matches output shape")
    }

    fn backward(&self, y: &Array2<f64>) -> Array2<f64> {
        let y = y.as_standard_layout();
        let y = y.as_slice().expect("standard layout");
        let m = &*self.matrix;
        let mut out = vec![0.0; self.grid.0 * self.grid.1];
        for (row, w) in m.ptr.windows(2).enumerate() {
            let v = y[row];
            if v != 0.0 {
                for e in w[0]..w[1] {
                    out[m.col[e] as usize] += m.val[e] * v;
                }
            }
        }
        Array2::from_shape_vec(self.grid, out).expect("pixel count matches grid")
    }

    fn geometry(&self) -> Geometry {
        Geometry::Radon {
            grid: self.grid,
            angles_deg: self.angles_deg.clone(),
            rays: self.rays,
            spacing: self.spacing,
        }
    }

    /// Half grid and half the rays; neighboring ray pairs are averaged and
    /// multiplied by 1/2, since line integrals in coarse pixel units are half
    /// as long.
    fn coarsen(&self, data: &MeasurementData) -> Result<(Box<dyn MeasurementOp>, MeasurementData)> {
        check_data(self, data)?;
        if self.rays % 2 != 0 {
            return Err(Error::Param(format!("cannot coarsen an odd ray count ({})", self.rays)));
        }
        let grid = (self.grid.0.div_ceil(2), self.grid.1.div_ceil(2));
        let coarse = Radon::with_spacing(grid, self.angles_deg.clone(), self.rays / 2, self.spacing)?;
        let values = Array2::from_shape_fn(coarse.output_shape(), |(a, r)| {
            0.25 * (data.values[[a, 2 * r]] + data.values[[a, 2 * r + 1]])
        });
        let geometry = coarse.geometry();
        Ok((Box::new(coarse), MeasurementData::new(values, geometry)?))
    }

    fn box_clone(&self) -> Box<dyn MeasurementOp> {
        Box::new(self.clone())
    }
}
