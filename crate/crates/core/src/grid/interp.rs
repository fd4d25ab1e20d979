use ndarray::Array2;

use super::{CellVectorField, Image};

/// Interpolation scheme used when images are evaluated off the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Interp {
    #[default]
    Bilinear,
    /// Catmull–Rom cubic convolution.
    Bicubic,
}

impl std::str::FromStr for Interp {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(crate::Error::Param(format!("unknown interpolation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Interp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        })
    }
}

/// One-dimensional interpolation weights at a query coordinate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisStencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    /// Derivatives of the weights with respect to the query coordinate.
    pub dw: [f64; 4],
    pub len: usize,
}

impl AxisStencil {
    /// Queries are clamped to `[0, n - 1]`; the derivative vanishes outside.
    pub fn new(p: f64, n: usize, scheme: Interp) -> Self {
        debug_assert!(n >= 2);
        let hi = (n - 1) as f64;
        let clamped = !(0.0..=hi).contains(&p);
        let p = p.clamp(0.0, hi);
        let i0 = (p.floor() as usize).min(n - 2);
        let t = p - i0 as f64;
        let mut s = match scheme {
            Interp::Bilinear => Self {
                idx: [i0, i0 + 1, 0, 0],
                w: [1.0 - t, t, 0.0, 0.0],
                dw: [-1.0, 1.0, 0.0, 0.0],
                len: 2,
            },
            Interp::Bicubic => {
                let last = n - 1;
                let t2 = t * t;
                let t3 = t2 * t;
                Self {
                    idx: [i0.saturating_sub(1), i0, i0 + 1, (i0 + 2).min(last)],
                    w: [
                        0.5 * (-t3 + 2.0 * t2 - t),
                        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                        0.5 * (t3 - t2),
                    ],
                    dw: [
                        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
                        0.5 * (9.0 * t2 - 10.0 * t),
                        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
                        0.5 * (3.0 * t2 - 2.0 * t),
                    ],
                    len: 4,
                }
            }
        };
        if clamped {
            s.dw = [0.0; 4];
        }
        s
    }
}

#[inline]
pub(crate) fn eval(data: &Array2<f64>, s1: &AxisStencil, s2: &AxisStencil) -> f64 {
    let mut acc = 0.0;
    for a in 0..s1.len {
        let mut row = 0.0;
        for b in 0..s2.len {
            row += s2.w[b] * data[[s1.idx[a], s2.idx[b]]];
        }
        acc += s1.w[a] * row;
    }
    acc
}

/// Value and gradient of the interpolant.
#[inline]
pub(crate) fn eval_grad(data: &Array2<f64>, s1: &AxisStencil, s2: &AxisStencil) -> (f64, f64, f64) {
    let (mut v, mut g1, mut g2) = (0.0, 0.0, 0.0);
    for a in 0..s1.len {
        let (mut row, mut drow) = (0.0, 0.0);
        for b in 0..s2.len {
            let x = data[[s1.idx[a], s2.idx[b]]];
            row += s2.w[b] * x;
            drow += s2.dw[b] * x;
        }
        v += s1.w[a] * row;
        g1 += s1.dw[a] * row;
        g2 += s1.w[a] * drow;
    }
    (v, g1, g2)
}

/// Adds `value * weights` into `out` (transpose of [`eval`]).
#[inline]
pub(crate) fn scatter(out: &mut Array2<f64>, s1: &AxisStencil, s2: &AxisStencil, value: f64) {
    for a in 0..s1.len {
        let wa = s1.w[a] * value;
        for b in 0..s2.len {
            out[[s1.idx[a], s2.idx[b]]] += wa * s2.w[b];
        }
    }
}

/// Interpolates `data` at the absolute positions `(p1, p2)`; output has the
/// shape of the position arrays.
pub fn sample_array(data: &Array2<f64>, p1: &Array2<f64>, p2: &Array2<f64>, scheme: Interp) -> Array2<f64> {
    let (n1, n2) = data.dim();
    let mut out = Array2::zeros(p1.dim());
    ndarray::Zip::from(&mut out)
        .and(p1)
        .and(p2)
        .for_each(|o, &a, &b| {
            let s1 = AxisStencil::new(a, n1, scheme);
            let s2 = AxisStencil::new(b, n2, scheme);
            *o = eval(data, &s1, &s2);
        });
    out
}

/// Evaluates `image` at the absolute positions held by `points`.
///
/// Positions outside the image are clamped to the nearest boundary
/// coordinate, so the result is linear in the image for fixed points.
pub fn sample(image: &Image, points: &CellVectorField, scheme: Interp) -> Image {
    Image::wrap(sample_array(image.data(), &points.u1, &points.u2, scheme))
}
