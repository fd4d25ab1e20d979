//! One-dimensional difference stencils applied along an axis of a matrix.

use ndarray::{Array2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stencil {
    /// Forward differences of a face-centered lane with zero boundary values
    /// at both ends; `m` inputs give `m + 1` outputs.
    ForwardPadded,
    /// Plain forward differences; `m` inputs give `m - 1` outputs.
    Forward,
    /// Second-order central differences, zero padded.
    Central2,
    /// Third-order central differences, zero padded.
    Central3,
}

impl Stencil {
    /// Stencil for a derivative of the given order in the third-order term.
    pub fn of_order(order: usize) -> Option<Self> {
        match order {
            0 => None,
            1 => Some(Self::Forward),
            2 => Some(Self::Central2),
            3 => Some(Self::Central3),
            _ => unreachable!("orders above three are not used"),
        }
    }

    pub fn out_len(self, m: usize) -> usize {
        match self {
            Self::ForwardPadded => m + 1,
            Self::Forward => m - 1,
            Self::Central2 | Self::Central3 => m,
        }
    }

    fn apply_lane(self, x: &[f64], y: &mut [f64]) {
        let m = x.len();
        let at = |k: isize| -> f64 {
            if k < 0 || k >= m as isize {
                0.0
            } else {
                x[k as usize]
            }
        };
        match self {
            Self::ForwardPadded => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let i = i as isize;
                    *yi = at(i) - at(i - 1);
                }
            }
            Self::Forward => {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = x[i + 1] - x[i];
                }
            }
            Self::Central2 => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let i = i as isize;
                    *yi = at(i + 1) - 2.0 * at(i) + at(i - 1);
                }
            }
            Self::Central3 => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let i = i as isize;
                    *yi = 0.5 * (at(i + 2) - 2.0 * at(i + 1) + 2.0 * at(i - 1) - at(i - 2));
                }
            }
        }
    }

    fn apply_transpose_lane(self, y: &[f64], x: &mut [f64]) {
        let n = y.len();
        let at = |k: isize| -> f64 {
            if k < 0 || k >= n as isize {
                0.0
            } else {
                y[k as usize]
            }
        };
        match self {
            Self::ForwardPadded => {
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = y[k] - y[k + 1];
                }
            }
            Self::Forward => {
                for (k, xk) in x.iter_mut().enumerate() {
                    let k = k as isize;
                    *xk = at(k - 1) - at(k);
                }
            }
            // symmetric
            Self::Central2 => self.apply_lane(y, x),
            // antisymmetric
            Self::Central3 => {
                self.apply_lane(y, x);
                x.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }

    fn in_len(self, n: usize) -> usize {
        match self {
            Self::ForwardPadded => n - 1,
            Self::Forward => n + 1,
            Self::Central2 | Self::Central3 => n,
        }
    }
}

fn map_lanes(a: &Array2<f64>, axis: usize, out_len: usize, f: impl Fn(&[f64], &mut [f64])) -> Array2<f64> {
    let mut shape = [a.nrows(), a.ncols()];
    shape[axis] = out_len;
    let mut out = Array2::zeros(shape);
    let mut xbuf = vec![0.0; a.shape()[axis]];
    let mut ybuf = vec![0.0; out_len];
    Zip::from(a.lanes(Axis(axis)))
        .and(out.lanes_mut(Axis(axis)))
        .for_each(|src, mut dst| {
            xbuf.iter_mut().zip(src.iter()).for_each(|(b, v)| *b = *v);
            f(&xbuf, &mut ybuf);
            dst.iter_mut().zip(&ybuf).for_each(|(d, v)| *d = *v);
        });
    out
}

pub(crate) fn apply(st: Stencil, axis: usize, a: &Array2<f64>) -> Array2<f64> {
    map_lanes(a, axis, st.out_len(a.shape()[axis]), |x, y| st.apply_lane(x, y))
}

pub(crate) fn apply_transpose(st: Stencil, axis: usize, a: &Array2<f64>) -> Array2<f64> {
    map_lanes(a, axis, st.in_len(a.shape()[axis]), |y, x| st.apply_transpose_lane(y, x))
}

/// A separable operator: an optional stencil along each axis.
pub(crate) type Term = [Option<Stencil>; 2];

pub(crate) fn apply_term(term: Term, a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for (axis, st) in term.iter().enumerate() {
        if let Some(st) = st {
            out = apply(*st, axis, &out);
        }
    }
    out
}

pub(crate) fn apply_term_transpose(term: Term, a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for (axis, st) in term.iter().enumerate().rev() {
        if let Some(st) = st {
            out = apply_transpose(*st, axis, &out);
        }
    }
    out
}
