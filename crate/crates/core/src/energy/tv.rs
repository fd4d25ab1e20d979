use ndarray::Array2;

use crate::grid::Image;

/// Forward differences along both axes; the last row (column) difference is zero.
pub fn forward_gradient(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (n1, n2) = x.dim();
    let g1 = Array2::from_shape_fn((n1, n2), |(i, j)| if i + 1 < n1 { x[[i + 1, j]] - x[[i, j]] } else { 0.0 });
    let g2 = Array2::from_shape_fn((n1, n2), |(i, j)| if j + 1 < n2 { x[[i, j + 1]] - x[[i, j]] } else { 0.0 });
    (g1, g2)
}

/// Transpose of [`forward_gradient`] (the negative discrete divergence).
pub fn forward_gradient_adjoint(p1: &Array2<f64>, p2: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = p1.dim();
    Array2::from_shape_fn((n1, n2), |(i, j)| {
        let mut acc = 0.0;
        if i + 1 < n1 {
            acc -= p1[[i, j]];
        }
        if i > 0 {
            acc += p1[[i - 1, j]];
        }
        if j + 1 < n2 {
            acc -= p2[[i, j]];
        }
        if j > 0 {
            acc += p2[[i, j - 1]];
        }
        acc
    })
}

/// Isotropic total variation with forward differences.
pub fn tv_value(image: &Image) -> f64 {
    let (g1, g2) = forward_gradient(image.data());
    ndarray::Zip::from(&g1)
        .and(&g2)
        .fold(0.0, |acc, a, b| acc + (a * a + b * b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_has_no_variation() {
        assert_eq!(tv_value(&Image::constant(5, 6, 0.7)), 0.0);
        assert!(tv_value(&Image::from_fn(5, 6, |(i, _)| i as f64)) > 0.0);
    }

    #[test]
    fn two_by_two_column_jump() {
        let img = Image::new(array![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(tv_value(&img), 2.0);
    }

    #[test]
    fn one_homogeneous() {
        let img = Image::from_fn(7, 5, |(i, j)| ((i * 13 + j * 7) % 11) as f64 / 11.0);
        let scaled = Image::new(img.data() * -2.5).unwrap();
        assert!((tv_value(&scaled) - 2.5 * tv_value(&img)).abs() < 1e-12 * tv_value(&scaled));
    }

    #[test]
    fn adjoint_is_transpose() {
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 * 0.7 - j as f64).sin());
        let p1 = Array2::from_shape_fn((6, 5), |(i, j)| (i + j) as f64 * 0.1);
        let p2 = Array2::from_shape_fn((6, 5), |(i, j)| (i * j) as f64 * 0.3 - 1.0);
        let (g1, g2) = forward_gradient(&x);
        let lhs = (&g1 * &p1).sum() + (&g2 * &p2).sum();
        let rhs = (&x * &forward_gradient_adjoint(&p1, &p2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
