//! Image quality metrics.

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::grid::Image;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `10 log10(peak^2 / MSE)`; infinite for identical images.
pub fn psnr(x: &Image, y: &Image, peak: f64) -> Result<f64> {
    x.check_same_shape(y, "psnr")?;
    let mse = (x.data() - y.data()).mapv(|d| d * d).mean().unwrap_or(0.0);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable Gaussian filter over all fully contained windows.
fn filter_valid(a: &Array2<f64>, k: &[f64; WINDOW]) -> Array2<f64> {
    let (n1, n2) = a.dim();
    let (m1, m2) = (n1 + 1 - WINDOW, n2 + 1 - WINDOW);
    let rows = Array2::from_shape_fn((m1, n2), |(i, j)| (0..WINDOW).map(|t| k[t] * a[[i + t, j]]).sum::<f64>());
    Array2::from_shape_fn((m1, m2), |(i, j)| (0..WINDOW).map(|t| k[t] * rows[[i, j + t]]).sum::<f64>())
}

/// Mean structural similarity over 11x11 Gaussian windows (sigma 1.5) with
/// the usual constants for a dynamic range of 1.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    x.check_same_shape(y, "ssim")?;
    let (n1, n2) = x.shape();
    if n1 < WINDOW || n2 < WINDOW {
        return Err(Error::TooSmall(format!("ssim needs at least {WINDOW}x{WINDOW} pixels, got {n1}x{n2}")));
    }
    let k = kernel();
    let (a, b) = (x.data(), y.data());
    let mx = filter_valid(a, &k);
    let my = filter_valid(b, &k);
    let sxx = filter_valid(&(a * a), &k) - &mx * &mx;
    let syy = filter_valid(&(b * b), &k) - &my * &my;
    let sxy = filter_valid(&(a * b), &k) - &mx * &my;
    let map = ndarray::Zip::from(&mx).and(&my).and(&sxx).and(&syy).and(&sxy).map_collect(
        |mx, my, sxx, syy, sxy| {
            ((2.0 * mx * my + C1) * (2.0 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2))
        },
    );
    Ok(map.mean().unwrap())
}

/// Mean squared error over the rectangle `rows x cols`.
pub fn region_mse(x: &Image, y: &Image, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<f64> {
    x.check_same_shape(y, "region mse")?;
    let (n1, n2) = x.shape();
    if rows.is_empty() || cols.is_empty() || rows.end > n1 || cols.end > n2 {
        return Err(Error::Range(format!("region {rows:?} x {cols:?} outside {n1}x{n2}")));
    }
    let d = &x.data().slice(s![rows.clone(), cols.clone()]) - &y.data().slice(s![rows, cols]);
    Ok(d.mapv(|v| v * v).mean().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> Image {
        Image::from_fn(n, n, |(i, j)| ((i / 3 + j / 3) % 2) as f64)
    }

    #[test]
    fn psnr_of_constant_offset() {
        let x = Image::from_fn(8, 8, |(i, j)| (i * j) as f64 / 64.0);
        let y = Image::new(x.data() + 0.1).unwrap();
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_basics() {
        let x = checker(24);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image::new(x.data().mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.5);
        let y = Image::from_fn(24, 24, |(i, j)| x.get(i, j) * 0.8 + 0.01 * (i + j) as f64);
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
        assert!(ssim(&x, &y).unwrap() < 1.0);
        assert!(ssim(&Image::zeros(10, 10), &Image::zeros(10, 10)).is_err());
    }

    #[test]
    fn region_error() {
        let x = Image::zeros(6, 6);
        let y = Image::from_fn(6, 6, |(i, _)| if i < 2 { 1.0 } else { 0.0 });
        assert_eq!(region_mse(&x, &y, 0..2, 0..6).unwrap(), 1.0);
        assert_eq!(region_mse(&x, &y, 2..6, 0..6).unwrap(), 0.0);
        assert!(region_mse(&x, &y, 0..7, 0..1).is_err());
    }
}
