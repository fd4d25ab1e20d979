use ndarray::{Array2, Zip};

use super::interp::{eval, eval_grad, scatter, sample_array, AxisStencil};
use super::{CellVectorField, DeformationPath, DisplacementField, Image, Interp, WeightField};
use crate::error::{shape_err, Error, Result};

/// Averages the staggered components onto cell centers.
///
/// Cells next to the boundary average the stored face value with the
/// implicit zero on the boundary face.
pub fn stagger_average(v: &DisplacementField) -> CellVectorField {
    let (n1, n2) = v.grid_shape();
    let u1 = Array2::from_shape_fn((n1, n2), |(i, j)| {
        let lo = if i > 0 { v.v1[[i - 1, j]] } else { 0.0 };
        let hi = if i + 1 < n1 { v.v1[[i, j]] } else { 0.0 };
        0.5 * (lo + hi)
    });
    let u2 = Array2::from_shape_fn((n1, n2), |(i, j)| {
        let lo = if j > 0 { v.v2[[i, j - 1]] } else { 0.0 };
        let hi = if j + 1 < n2 { v.v2[[i, j]] } else { 0.0 };
        0.5 * (lo + hi)
    });
    CellVectorField { u1, u2 }
}

/// Transpose of [`stagger_average`].
pub fn stagger_average_adjoint(u: &CellVectorField) -> DisplacementField {
    let (n1, n2) = u.shape();
    let v1 = Array2::from_shape_fn((n1 - 1, n2), |(i, j)| 0.5 * (u.u1[[i, j]] + u.u1[[i + 1, j]]));
    let v2 = Array2::from_shape_fn((n1, n2 - 1), |(i, j)| 0.5 * (u.u2[[i, j]] + u.u2[[i, j + 1]]));
    DisplacementField { v1, v2 }
}

fn check_field(image: (usize, usize), v: &DisplacementField) -> Result<()> {
    if image != v.grid_shape() {
        return Err(shape_err("image vs displacement", image, v.grid_shape()));
    }
    Ok(())
}

fn warped_positions(v: &DisplacementField) -> (Array2<f64>, Array2<f64>) {
    let mut pv = stagger_average(v);
    Zip::indexed(&mut pv.u1).for_each(|(i, _), u| *u = i as f64 - *u);
    Zip::indexed(&mut pv.u2).for_each(|(_, j), u| *u = j as f64 - *u);
    (pv.u1, pv.u2)
}

/// `I(x - Pv(x))` for every node `x`: the image transported by `id + v`.
pub fn warp(image: &Image, v: &DisplacementField, scheme: Interp) -> Result<Image> {
    check_field(image.shape(), v)?;
    let (p1, p2) = warped_positions(v);
    Ok(Image::wrap(sample_array(image.data(), &p1, &p2, scheme)))
}

/// Warped image together with the interpolant's gradient at the warped points.
pub fn warp_with_gradient(
    image: &Image,
    v: &DisplacementField,
    scheme: Interp,
) -> Result<(Image, CellVectorField)> {
    check_field(image.shape(), v)?;
    let (n1, n2) = image.shape();
    let (p1, p2) = warped_positions(v);
    let mut out = Array2::zeros((n1, n2));
    let mut g1 = Array2::zeros((n1, n2));
    let mut g2 = Array2::zeros((n1, n2));
    let data = image.data();
    for i in 0..n1 {
        for j in 0..n2 {
            let s1 = AxisStencil::new(p1[[i, j]], n1, scheme);
            let s2 = AxisStencil::new(p2[[i, j]], n2, scheme);
            let (val, d1, d2) = eval_grad(data, &s1, &s2);
            out[[i, j]] = val;
            g1[[i, j]] = d1;
            g2[[i, j]] = d2;
        }
    }
    Ok((Image::wrap(out), CellVectorField { u1: g1, u2: g2 }))
}

/// Transpose of the linear map `I -> warp(I, v)`.
pub fn warp_adjoint(residual: &Array2<f64>, v: &DisplacementField, scheme: Interp) -> Result<Array2<f64>> {
    check_field(residual.dim(), v)?;
    let (n1, n2) = residual.dim();
    let (p1, p2) = warped_positions(v);
    let mut out = Array2::zeros((n1, n2));
    for i in 0..n1 {
        for j in 0..n2 {
            let s1 = AxisStencil::new(p1[[i, j]], n1, scheme);
            let s2 = AxisStencil::new(p2[[i, j]], n2, scheme);
            scatter(&mut out, &s1, &s2, residual[[i, j]]);
        }
    }
    Ok(out)
}

/// All composed maps `psi_0 = id, ..., psi_K` of a deformation path,
/// evaluated at the grid nodes.
pub(crate) fn compose_all(path: &DeformationPath) -> Vec<CellVectorField> {
    let (n1, n2) = path.grid_shape();
    let mut maps = Vec::with_capacity(path.len() + 1);
    let mut psi = CellVectorField::identity(n1, n2);
    maps.push(psi.clone());
    for v in path.steps() {
        let pv = stagger_average(v);
        let mut next = psi.clone();
        for i in 0..n1 {
            for j in 0..n2 {
                let s1 = AxisStencil::new(psi.u1[[i, j]], n1, Interp::Bilinear);
                let s2 = AxisStencil::new(psi.u2[[i, j]], n2, Interp::Bilinear);
                next.u1[[i, j]] += eval(&pv.u1, &s1, &s2);
                next.u2[[i, j]] += eval(&pv.u2, &s1, &s2);
            }
        }
        psi = next;
        maps.push(psi.clone());
    }
    maps
}

/// The composed map `psi_k = phi_{k-1} o ... o phi_0` with `phi = id + v`,
/// evaluated at the grid nodes.
pub fn compose_path(path: &DeformationPath, upto: usize) -> Result<CellVectorField> {
    if upto > path.len() {
        return Err(Error::Range(format!(
            "composition up to {upto} requested, path has {} steps",
            path.len()
        )));
    }
    let truncated = DeformationPath::new(path.steps()[..upto.max(1)].to_vec())?;
    if upto == 0 {
        let (n1, n2) = path.grid_shape();
        return Ok(CellVectorField::identity(n1, n2));
    }
    Ok(compose_all(&truncated).pop().expect("non-empty"))
}

fn diff_axis0(u: &Array2<f64>) -> Array2<f64> {
    let n = u.nrows();
    Array2::from_shape_fn(u.dim(), |(i, j)| {
        if i == 0 {
            u[[1, j]] - u[[0, j]]
        } else if i == n - 1 {
            u[[n - 1, j]] - u[[n - 2, j]]
        } else {
            0.5 * (u[[i + 1, j]] - u[[i - 1, j]])
        }
    })
}

fn diff_axis1(u: &Array2<f64>) -> Array2<f64> {
    let n = u.ncols();
    Array2::from_shape_fn(u.dim(), |(i, j)| {
        if j == 0 {
            u[[i, 1]] - u[[i, 0]]
        } else if j == n - 1 {
            u[[i, n - 1]] - u[[i, n - 2]]
        } else {
            0.5 * (u[[i, j + 1]] - u[[i, j - 1]])
        }
    })
}

/// Determinant of the finite-difference Jacobian of a position map, clamped
/// below at [`super::WEIGHT_FLOOR`].
pub fn jacobian_det(psi: &CellVectorField) -> Result<WeightField> {
    let a = diff_axis0(&psi.u1);
    let b = diff_axis1(&psi.u1);
    let c = diff_axis0(&psi.u2);
    let d = diff_axis1(&psi.u2);
    WeightField::clamped(&a * &d - &b * &c)
}

/// Uniform bucket grid over scattered points.
struct Buckets {
    lo: (f64, f64),
    dims: (usize, usize),
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn new(p1: &[f64], p2: &[f64]) -> Self {
        let min = |p: &[f64]| p.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |p: &[f64]| p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = (min(p1), min(p2));
        let dims = (
            (max(p1) - lo.0).floor() as usize + 1,
            (max(p2) - lo.1).floor() as usize + 1,
        );
        let mut counts = vec![0usize; dims.0 * dims.1 + 1];
        let cells: Vec<usize> = p1
            .iter()
            .zip(p2)
            .map(|(&a, &b)| {
                let (c1, c2) = Self::cell_of(lo, dims, a, b);
                c1 * dims.1 + c2
            })
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; cells.len()];
        for (m, &c) in cells.iter().enumerate() {
            items[fill[c]] = m;
            fill[c] += 1;
        }
        Self { lo, dims, offsets: counts, items }
    }

    fn cell_of(lo: (f64, f64), dims: (usize, usize), a: f64, b: f64) -> (usize, usize) {
        let c1 = ((a - lo.0).floor().max(0.0) as usize).min(dims.0 - 1);
        let c2 = ((b - lo.1).floor().max(0.0) as usize).min(dims.1 - 1);
        (c1, c2)
    }

    fn bucket(&self, c1: usize, c2: usize) -> &[usize] {
        let k = c1 * self.dims.1 + c2;
        &self.items[self.offsets[k]..self.offsets[k + 1]]
    }
}

const NEIGHBORS: usize = 4;

/// Recovers `I` on the grid from samples `F(x) = I(psi(x))` by inverse
/// distance weighting over the four nearest scattered points `psi(x)`.
/// A node that coincides with a scattered point takes its value exactly.
pub fn scattered_resample(f: &Image, psi: &CellVectorField) -> Result<Image> {
    if f.shape() != psi.shape() {
        return Err(shape_err("scattered values vs positions", f.shape(), psi.shape()));
    }
    let (n1, n2) = f.shape();
    let p1: Vec<f64> = psi.u1.iter().copied().collect();
    let p2: Vec<f64> = psi.u2.iter().copied().collect();
    if !p1.iter().chain(&p2).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("scattered positions".into()));
    }
    let values: Vec<f64> = f.data().iter().copied().collect();
    let first = (p1[0], p2[0]);
    if p1.iter().zip(&p2).all(|(&a, &b)| a == first.0 && b == first.1) {
        return Err(Error::Singular("all scattered points coincide".into()));
    }
    let grid = Buckets::new(&p1, &p2);
    let mut out = Array2::zeros((n1, n2));
    let max_ring = grid.dims.0.max(grid.dims.1);
    for i in 0..n1 {
        for j in 0..n2 {
            let (y1, y2) = (i as f64, j as f64);
            let (c1, c2) = Buckets::cell_of(grid.lo, grid.dims, y1, y2);
            // (squared distance, index), sorted ascending
            let mut best: [(f64, usize); NEIGHBORS] = [(f64::INFINITY, usize::MAX); NEIGHBORS];
            let mut found = 0usize;
            for r in 0..=max_ring {
                let r1lo = c1.saturating_sub(r);
                let r1hi = (c1 + r).min(grid.dims.0 - 1);
                let r2lo = c2.saturating_sub(r);
                let r2hi = (c2 + r).min(grid.dims.1 - 1);
                for b1 in r1lo..=r1hi {
                    for b2 in r2lo..=r2hi {
                        if b1.abs_diff(c1).max(b2.abs_diff(c2)) != r {
                            continue;
                        }
                        for &m in grid.bucket(b1, b2) {
                            let d = (p1[m] - y1).powi(2) + (p2[m] - y2).powi(2);
                            let cand = (d, m);
                            if found < NEIGHBORS || cand < best[NEIGHBORS - 1] {
                                let mut k = found.min(NEIGHBORS - 1);
                                best[k] = cand;
                                while k > 0 && best[k] < best[k - 1] {
                                    best.swap(k, k - 1);
                                    k -= 1;
                                }
                                found = (found + 1).min(NEIGHBORS);
                            }
                        }
                    }
                }
                if found == NEIGHBORS && best[NEIGHBORS - 1].0 <= (r as f64).powi(2) {
                    break;
                }
            }
            out[[i, j]] = if best[0].0 < 1e-24 {
                values[best[0].1]
            } else {
                let (mut num, mut den) = (0.0, 0.0);
                for &(d, m) in &best[..found] {
                    let w = 1.0 / d;
                    num += w * values[m];
                    den += w;
                }
                num / den
            };
        }
    }
    Ok(Image::wrap(out))
}
