use ndarray::{s, Array2};

use super::interp::sample_array;
use super::{DisplacementField, Image, Interp};
use crate::error::{Error, Result};

const GAUSS_RADIUS: usize = 2;
const GAUSS_SIGMA: f64 = 1.0;

fn gaussian_weights() -> [f64; 2 * GAUSS_RADIUS + 1] {
    let mut w = [0.0; 2 * GAUSS_RADIUS + 1];
    for (k, wk) in w.iter_mut().enumerate() {
        let d = k as f64 - GAUSS_RADIUS as f64;
        *wk = (-d * d / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
    }
    w
}

/// Truncated Gaussian blur along one axis, renormalized where the kernel
/// leaves the image.
fn blur_axis(a: &Array2<f64>, axis: usize) -> Array2<f64> {
    let w = gaussian_weights();
    let n = a.shape()[axis];
    let r = GAUSS_RADIUS as isize;
    Array2::from_shape_fn(a.dim(), |(i, j)| {
        let c = if axis == 0 { i } else { j } as isize;
        let (mut num, mut den) = (0.0, 0.0);
        for k in -r..=r {
            let p = c + k;
            if p < 0 || p >= n as isize {
                continue;
            }
            let wk = w[(k + r) as usize];
            let x = if axis == 0 { a[[p as usize, j]] } else { a[[i, p as usize]] };
            num += wk * x;
            den += wk;
        }
        num / den
    })
}

/// Coarse-grid coordinate of fine node `f` (factor-two cell-centered grids).
fn fine_to_coarse(f: f64) -> f64 {
    (f - 0.5) / 2.0
}

/// Fine-grid coordinate of coarse node `c`.
fn coarse_to_fine(c: f64) -> f64 {
    2.0 * c + 0.5
}

fn coarse_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Smooths with a 5x5 truncated Gaussian (sigma = 1 pixel) and resamples
/// bilinearly to half resolution, `ceil(n / 2)` cells per axis.
pub fn gaussian_downsample(image: &Image) -> Result<Image> {
    let (n1, n2) = image.shape();
    if n1 < 4 || n2 < 4 {
        return Err(Error::TooSmall(format!("cannot downsample a {n1}x{n2} image")));
    }
    let blurred = blur_axis(&blur_axis(image.data(), 0), 1);
    let (m1, m2) = (coarse_len(n1), coarse_len(n2));
    let p1 = Array2::from_shape_fn((m1, m2), |(i, _)| coarse_to_fine(i as f64));
    let p2 = Array2::from_shape_fn((m1, m2), |(_, j)| coarse_to_fine(j as f64));
    Ok(Image::wrap(sample_array(&blurred, &p1, &p2, Interp::Bilinear)))
}

fn check_refinement(coarse: (usize, usize), fine: (usize, usize)) -> Result<()> {
    if coarse_len(fine.0) != coarse.0 || coarse_len(fine.1) != coarse.1 {
        return Err(Error::Shape(format!(
            "{fine:?} is not a factor-two refinement of {coarse:?}"
        )));
    }
    Ok(())
}

/// Bilinear prolongation of an image to the next finer level.
pub fn upsample_image(image: &Image, target: (usize, usize)) -> Result<Image> {
    check_refinement(image.shape(), target)?;
    let p1 = Array2::from_shape_fn(target, |(i, _)| fine_to_coarse(i as f64));
    let p2 = Array2::from_shape_fn(target, |(_, j)| fine_to_coarse(j as f64));
    Ok(Image::wrap(sample_array(image.data(), &p1, &p2, Interp::Bilinear)))
}

/// Resamples a low-resolution image onto a grid `factor` times finer with
/// Catmull–Rom interpolation, aligning pixel centers.
pub fn upsample_cubic(image: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::Param("upsampling factor must be positive".into()));
    }
    let (n1, n2) = image.shape();
    let target = (n1 * factor, n2 * factor);
    let f = factor as f64;
    let p1 = Array2::from_shape_fn(target, |(i, _)| (i as f64 + 0.5) / f - 0.5);
    let p2 = Array2::from_shape_fn(target, |(_, j)| (j as f64 + 0.5) / f - 0.5);
    Ok(Image::wrap(sample_array(image.data(), &p1, &p2, Interp::Bicubic)))
}

/// Face values with the zero boundary faces made explicit along `axis`.
fn pad_normal(a: &Array2<f64>, axis: usize) -> Array2<f64> {
    let mut shape = [a.nrows(), a.ncols()];
    shape[axis] += 2;
    let mut out = Array2::zeros(shape);
    if axis == 0 {
        out.slice_mut(s![1..shape[0] - 1, ..]).assign(a);
    } else {
        out.slice_mut(s![.., 1..shape[1] - 1]).assign(a);
    }
    out
}

/// Resamples both staggered components. `normal` maps a target face index to
/// the source padded-face coordinate, `tangential` maps a target cell index to
/// a source cell coordinate.
fn resample_faces(
    v: &DisplacementField,
    target: (usize, usize),
    normal: impl Fn(usize) -> f64,
    tangential: impl Fn(usize) -> f64,
    scale: f64,
) -> DisplacementField {
    let (t1, t2) = target;
    let padded1 = pad_normal(&v.v1, 0);
    let p1 = Array2::from_shape_fn((t1 - 1, t2), |(i, _)| normal(i));
    let p2 = Array2::from_shape_fn((t1 - 1, t2), |(_, j)| tangential(j));
    let v1 = sample_array(&padded1, &p1, &p2, Interp::Bilinear) * scale;

    let padded2 = pad_normal(&v.v2, 1);
    let q1 = Array2::from_shape_fn((t1, t2 - 1), |(i, _)| tangential(i));
    let q2 = Array2::from_shape_fn((t1, t2 - 1), |(_, j)| normal(j));
    let v2 = sample_array(&padded2, &q1, &q2, Interp::Bilinear) * scale;
    DisplacementField { v1, v2 }
}

/// Bilinear prolongation of a displacement onto the finer staggered grid.
/// Values are doubled so that they stay in (fine) pixel units.
pub fn upsample_displacement(v: &DisplacementField, target: (usize, usize)) -> Result<DisplacementField> {
    check_refinement(v.grid_shape(), target)?;
    // fine face I sits at coarse coordinate I / 2, i.e. padded coordinate I / 2 + 1 / 2
    Ok(resample_faces(
        v,
        target,
        |i| 0.5 * i as f64 + 0.5,
        |j| fine_to_coarse(j as f64),
        2.0,
    ))
}

/// Bilinear restriction of a displacement to the next coarser level; values
/// are halved to stay in (coarse) pixel units.
pub fn downsample_displacement(v: &DisplacementField) -> Result<DisplacementField> {
    let (n1, n2) = v.grid_shape();
    if n1 < 4 || n2 < 4 {
        return Err(Error::TooSmall(format!("cannot restrict a {n1}x{n2} displacement")));
    }
    let target = (coarse_len(n1), coarse_len(n2));
    // coarse face i sits at fine face 2i + 1, i.e. padded index 2i + 2
    Ok(resample_faces(
        v,
        target,
        |i| 2.0 * i as f64 + 2.0,
        |j| coarse_to_fine(j as f64),
        0.5,
    ))
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cubic_upsampling_reproduces_linear_ramps() {
        let low = Image::from_fn(8, 8, |(i, j)| 0.1 * i as f64 - 0.05 * j as f64);
        let high = upsample_cubic(&low, 4).unwrap();
        assert_eq!(high.shape(), (32, 32));
        // away from the clamped border, cubic convolution is exact on linear data
        for i in 6..26 {
            for j in 6..26 {
                let (x1, x2) = ((i as f64 + 0.5) / 4.0 - 0.5, (j as f64 + 0.5) / 4.0 - 0.5);
                assert!((high.get(i, j) - (0.1 * x1 - 0.05 * x2)).abs() < 1e-12);
            }
        }
        assert!(upsample_cubic(&low, 0).is_err());
    }

    #[test]
    fn constant_survives_downsampling() {
        let out = gaussian_downsample(&Image::constant(8, 8, 0.3)).unwrap();
        assert_eq!(out.shape(), (4, 4));
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-14));
        assert_eq!(gaussian_downsample(&Image::zeros(9, 7)).unwrap().shape(), (5, 4));
        assert!(matches!(gaussian_downsample(&Image::zeros(3, 8)), Err(Error::TooSmall(_))));
    }

    #[test]
    fn downsampling_reduces_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let var = |a: &Array2<f64>| {
            let m = a.mean().unwrap();
            a.mapv(|x| (x - m).powi(2)).mean().unwrap()
        };
        for _ in 0..100 {
            let img = Image::from_fn(16, 16, |_| rng.random::<f64>());
            let out = gaussian_downsample(&img).unwrap();
            assert!(var(out.data()) < var(img.data()));
        }
    }

    #[test]
    fn zero_and_constant_displacements_upsample() {
        let up = upsample_displacement(&DisplacementField::zeros(8, 8), (16, 16)).unwrap();
        assert_eq!(up, DisplacementField::zeros(16, 16));

        let c = 0.7;
        let v = DisplacementField::new(Array2::from_elem((7, 8), c), Array2::from_elem((8, 7), -c)).unwrap();
        let up = upsample_displacement(&v, (16, 16)).unwrap();
        for i in 2..13 {
            for j in 2..14 {
                assert!((up.v1()[[i, j]] - 2.0 * c).abs() < 1e-12);
                assert!((up.v2()[[j, i]] + 2.0 * c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restriction_inverts_prolongation_on_smooth_fields() {
        let err_at = |n: usize| {
            let f = |x: f64, y: f64| (std::f64::consts::PI * x).sin() * (1.3 * y + 0.2).cos();
            let h = 1.0 / n as f64;
            // values in pixel units of the coarse grid
            let v = DisplacementField::new(
                Array2::from_shape_fn((n - 1, n), |(i, j)| f((i as f64 + 1.0) * h, (j as f64 + 0.5) * h)),
                Array2::from_shape_fn((n, n - 1), |(i, j)| f((j as f64 + 1.0) * h, (i as f64 + 0.5) * h)),
            )
            .unwrap();
            let round = downsample_displacement(&upsample_displacement(&v, (2 * n, 2 * n)).unwrap()).unwrap();
            let mut d = round.clone();
            d.add_scaled(-1.0, &v);
            // tangential clamping at the image edge is only first order
            let inner1 = d.v1().slice(s![.., 2..n - 2]).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let inner2 = d.v2().slice(s![2..n - 2, ..]).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            inner1.max(inner2)
        };
        let (e1, e2) = (err_at(16), err_at(32));
        assert!(e1 < 0.05, "{e1}");
        assert!(e2 < e1 / 3.0, "{e2} vs {e1}");
    }

    #[test]
    fn prolongation_rejects_wrong_sizes() {
        assert!(upsample_image(&Image::zeros(8, 8), (20, 16)).is_err());
        assert!(upsample_displacement(&DisplacementField::zeros(8, 8), (16, 17)).is_err());
        assert_eq!(upsample_image(&Image::zeros(8, 8), (15, 16)).unwrap().shape(), (15, 16));
    }
}
