//! The image-path subproblem for fixed deformations.
//!
//! With `psi_k` the composition of the first `k` deformations, the substituted
//! frames `F_k = I_k o psi_k` turn the matching terms into a weighted chain
//! `sum_k w_{k+1} |F_k - F_{k+1}|^2` with `w_k = det D psi_k`. For fixed end
//! frames the chain has a closed-form minimizer.

use ndarray::{Array2, Zip};

use crate::convex::{solve_weighted_step_warm, PdDual, PdParams};
use crate::energy::tv_value;
use crate::error::{Error, Result};
use crate::grid::{
    compose_all, jacobian_det, sample, scattered_resample, CellVectorField, DeformationPath, Image, ImagePath,
    Interp, WeightField,
};
use crate::operators::{MeasurementData, MeasurementOp};

#[derive(Clone, Debug)]
pub struct SubstitutedPath {
    /// `F_0, ..., F_K`.
    pub frames: Vec<Image>,
    /// `w_1, ..., w_K`.
    pub weights: Vec<WeightField>,
    /// `psi_0 = id, ..., psi_K`.
    pub maps: Vec<CellVectorField>,
    pub reference: Image,
}

impl SubstitutedPath {
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }
}

/// Composes the deformations and pulls every frame back to the grid of `I_0`.
pub fn substitute(images: &ImagePath, fields: &DeformationPath, scheme: Interp) -> Result<SubstitutedPath> {
    if images.steps() != fields.len() {
        return Err(Error::Shape(format!(
            "image path has {} steps, deformation path has {}",
            images.steps(),
            fields.len()
        )));
    }
    let maps = compose_all(fields);
    let frames = images
        .frames()
        .iter()
        .zip(&maps)
        .enumerate()
        .map(|(k, (img, psi))| if k == 0 { img.clone() } else { sample(img, psi, scheme) })
        .collect();
    let weights = maps[1..].iter().map(jacobian_det).collect::<Result<_>>()?;
    Ok(SubstitutedPath {
        frames,
        weights,
        maps,
        reference: images.reference().clone(),
    })
}

/// Replaces the interior frames by the minimizer of the weighted chain:
/// `F_k = (1 - t_k) F_0 + t_k F_K` with `t_k = sum_{i<=k} 1/w_i / sum_i 1/w_i`.
pub fn interior_update(sub: &mut SubstitutedPath) {
    let k_total = sub.steps();
    if k_total < 2 {
        return;
    }
    let inv: Vec<Array2<f64>> = sub.weights.iter().map(|w| w.values().mapv(f64::recip)).collect();
    let mut total = inv[0].clone();
    for w in &inv[1..] {
        total += w;
    }
    let (f0, fk) = (sub.frames[0].data().clone(), sub.frames[k_total].data().clone());
    let mut partial = Array2::zeros(total.dim());
    for k in 1..k_total {
        partial += &inv[k - 1];
        let mut out = Array2::zeros(total.dim());
        Zip::from(&mut out)
            .and(&partial)
            .and(&total)
            .and(&f0)
            .and(&fk)
            .for_each(|o, s, t, a, b| {
                let t = s / t;
                *o = (1.0 - t) * a + t * b;
            });
        sub.frames[k] = Image::wrap(out);
    }
}

/// `beta sum_k |(F_k - F_{k+1}) sqrt(w_{k+1})|^2 + 1/2 |A F_0 - B|^2 + alpha TV(F_0)`.
pub fn coupled_objective(
    sub: &SubstitutedPath,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let chain: f64 = sub
        .frames
        .windows(2)
        .zip(&sub.weights)
        .map(|(pair, w)| {
            Zip::from(pair[0].data())
                .and(pair[1].data())
                .and(w.values())
                .fold(0.0, |acc, a, b, w| acc + w * (a - b) * (a - b))
        })
        .sum();
    let residual = op.apply(&sub.frames[0])?.values - &data.values;
    let fit: f64 = residual.iter().map(|r| r * r).sum();
    Ok(beta * chain + 0.5 * fit + alpha * tv_value(&sub.frames[0]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerParams {
    pub max_inner: usize,
    /// Relative objective decrease below which the alternation stops.
    pub tol: f64,
}

impl Default for InnerParams {
    fn default() -> Self {
        Self { max_inner: 10, tol: 1e-5 }
    }
}

/// Series weight `1 / sum_k 1/w_k`: the minimum of the chain over its
/// interior frames is `sum_x w_eff |F_0 - F_K|^2`.
pub fn series_weight(sub: &SubstitutedPath) -> Result<WeightField> {
    let mut total = Array2::<f64>::zeros(sub.frames[0].shape());
    for w in &sub.weights {
        total += &w.values().mapv(f64::recip);
    }
    WeightField::positive(total.mapv(f64::recip))
}

/// Block-coordinate descent over `F_0` and the interior frames. The `F_0`
/// block is minimized with the interior eliminated (a weighted L2-TV step
/// towards `F_K` with the series weight), then the interior is updated in
/// closed form. Repeated rounds only refine the inexact primal-dual solves.
/// Returns the coupled objective after the start and after every round.
#[allow(clippy::too_many_arguments)]
pub fn inner_alternation(
    sub: &mut SubstitutedPath,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    beta: f64,
    pd: &PdParams,
    inner: &InnerParams,
) -> Result<Vec<f64>> {
    inner_alternation_warm(sub, op, data, alpha, beta, pd, inner, &mut None)
}

/// [`inner_alternation`] whose primal-dual solves start from `dual` and leave
/// their final dual state in it. The steps in `pd` must stay fixed between
/// calls sharing a dual state.
#[allow(clippy::too_many_arguments)]
pub fn inner_alternation_warm(
    sub: &mut SubstitutedPath,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    beta: f64,
    pd: &PdParams,
    inner: &InnerParams,
    dual: &mut Option<PdDual>,
) -> Result<Vec<f64>> {
    let pd = pd.prepared(op)?;
    let k_total = sub.steps();
    let weight = series_weight(sub)?;
    let mut history = vec![coupled_objective(sub, op, data, alpha, beta)?];
    for _ in 0..inner.max_inner {
        let before = *history.last().unwrap();
        let sol = solve_weighted_step_warm(
            op,
            data,
            &sub.frames[k_total],
            &weight,
            alpha,
            beta,
            &sub.frames[0],
            &pd,
            dual.as_ref(),
        )?;
        let previous = std::mem::replace(&mut sub.frames[0], sol.image);
        *dual = Some(sol.dual);
        interior_update(sub);
        let after = coupled_objective(sub, op, data, alpha, beta)?;
        if after > before {
            // an inexact solve that did not pay off
            sub.frames[0] = previous;
            interior_update(sub);
            break;
        }
        history.push(after);
        if before - after <= inner.tol * before.abs() {
            break;
        }
    }
    Ok(history)
}

/// Maps the substituted frames back to the grid with scattered interpolation.
pub fn desubstitute(sub: &SubstitutedPath) -> Result<ImagePath> {
    let k_total = sub.steps();
    let mut free = Vec::with_capacity(k_total);
    free.push(sub.frames[0].clone());
    for k in 1..k_total {
        free.push(scattered_resample(&sub.frames[k], &sub.maps[k])?);
    }
    ImagePath::new(free, sub.reference.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DisplacementField;
    use crate::operators::ScaledIdentity;

    fn ramp(n: usize, s: f64) -> Image {
        Image::from_fn(n, n, |(i, j)| s * (i as f64 + 0.5 * j as f64) / n as f64)
    }

    fn path(n: usize, k: usize) -> ImagePath {
        ImagePath::new((0..k).map(|i| ramp(n, 1.0 + i as f64)).collect(), ramp(n, 0.2)).unwrap()
    }

    #[test]
    fn zero_fields_leave_frames_alone() {
        let p = path(8, 3);
        let sub = substitute(&p, &DeformationPath::zeros(3, 8, 8), Interp::Bilinear).unwrap();
        for (f, i) in sub.frames.iter().zip(p.frames()) {
            assert_eq!(f, i);
        }
        assert!(sub.weights.iter().all(|w| w.values().iter().all(|&v| v == 1.0)));
        assert_eq!(desubstitute(&sub).unwrap(), p);
    }

    #[test]
    fn integer_shift_pulls_back_frame() {
        let n = 8;
        let reference = Image::from_fn(n, n, |(i, j)| (i * n + j) as f64);
        let p = ImagePath::new(vec![Image::zeros(n, n)], reference.clone()).unwrap();
        let mut v1 = Array2::zeros((n - 1, n));
        v1.slice_mut(ndarray::s![1..n - 2, ..]).fill(1.0);
        let v = DeformationPath::new(vec![DisplacementField::new(v1, Array2::zeros((n, n - 1))).unwrap()]).unwrap();
        let sub = substitute(&p, &v, Interp::Bilinear).unwrap();
        for i in 2..n - 2 {
            for j in 0..n {
                assert!((sub.frames[1].get(i, j) - reference.get(i + 1, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_weights_interpolate_linearly() {
        let n = 6;
        let mut sub = substitute(&path(n, 4), &DeformationPath::zeros(4, n, n), Interp::Bilinear).unwrap();
        interior_update(&mut sub);
        for k in 1..4 {
            let t = k as f64 / 4.0;
            let expected = sub.frames[0].data() * (1.0 - t) + sub.frames[4].data() * t;
            assert_eq!(sub.frames[k].data(), &expected);
        }
        let once = sub.frames.clone();
        interior_update(&mut sub);
        assert_eq!(sub.frames, once);
    }

    #[test]
    fn three_step_weights() {
        let n = 2;
        let mut sub = SubstitutedPath {
            frames: vec![Image::constant(n, n, 1.0), Image::zeros(n, n), Image::zeros(n, n), Image::zeros(n, n)],
            weights: [1.0, 2.0, 4.0].map(|w| WeightField::positive(Array2::from_elem((n, n), w)).unwrap()).to_vec(),
            maps: vec![CellVectorField::identity(n, n); 4],
            reference: Image::zeros(n, n),
        };
        interior_update(&mut sub);
        assert!((sub.frames[1].get(0, 0) - 3.0 / 7.0).abs() < 1e-15);
        assert!((sub.frames[2].get(0, 0) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn single_step_alternation_settles_after_one_solve() {
        let n = 8;
        let op = ScaledIdentity::identity((n, n));
        let data = op.apply(&ramp(n, 1.0)).unwrap();
        let mut sub = substitute(&path(n, 1), &DeformationPath::zeros(1, n, n), Interp::Bilinear).unwrap();
        let hist = inner_alternation(&mut sub, &op, &data, 0.01, 0.5, &PdParams::default(), &InnerParams::default())
            .unwrap();
        assert!(hist.len() >= 2);
        assert!(hist[1] < hist[0]);
        assert!(hist[1..].iter().all(|h| (h - hist[1]).abs() <= 1e-6 * hist[1]));
    }
}
