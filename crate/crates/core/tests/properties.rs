use ndarray::Array2;
use proptest::prelude::*;
use tdm_core::grid::warp;
use tdm_core::metrics::{psnr, ssim};
use tdm_core::operators::{BlockAverage, MeasurementOp, Radon};
use tdm_core::{DisplacementField, Image, Interp};

fn array(n1: usize, n2: usize, values: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((n1, n2), |(i, j)| values[(i * n2 + j) % values.len()])
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

fn adjoint_gap(op: &dyn MeasurementOp, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let lhs = dot(&op.forward(x), y);
    let rhs = dot(x, &op.backward(y));
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn radon_adjoint_identity(
        n in 8usize..24,
        angles in prop::collection::vec(0.0f64..180.0, 1..8),
        xs in prop::collection::vec(-1.0f64..1.0, 64),
        ys in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let op = Radon::new((n, n), angles, None).unwrap();
        let (m1, m2) = op.output_shape();
        prop_assert!(adjoint_gap(&op, &array(n, n, &xs), &array(m1, m2, &ys)) < 1e-10);
    }

    #[test]
    fn block_average_adjoint_identity(
        blocks in 2usize..6,
        factor in 1usize..5,
        xs in prop::collection::vec(-1.0f64..1.0, 64),
        ys in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let n = blocks * factor;
        let op = BlockAverage::new((n, n), factor).unwrap();
        let (m1, m2) = op.output_shape();
        prop_assert!(adjoint_gap(&op, &array(n, n, &xs), &array(m1, m2, &ys)) < 1e-12);
    }

    #[test]
    fn block_average_preserves_constants(blocks in 2usize..6, factor in 1usize..5, c in -2.0f64..2.0) {
        let n = blocks * factor;
        let op = BlockAverage::new((n, n), factor).unwrap();
        let out = op.forward(&Array2::from_elem((n, n), c));
        prop_assert!(out.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn zero_field_warp_is_identity(n in 4usize..16, xs in prop::collection::vec(0.0f64..1.0, 64), bicubic: bool) {
        let image = Image::new(array(n, n, &xs)).unwrap();
        let v = DisplacementField::zeros(n, n);
        let scheme = if bicubic { Interp::Bicubic } else { Interp::Bilinear };
        let out = warp(&image, &v, scheme).unwrap();
        prop_assert!(out.data().iter().zip(image.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ssim_is_symmetric_bounded_and_one_on_equal_images(
        n in 11usize..24,
        xs in prop::collection::vec(0.0f64..1.0, 64),
        ys in prop::collection::vec(0.0f64..1.0, 64),
    ) {
        let x = Image::new(array(n, n, &xs)).unwrap();
        let y = Image::new(array(n, n, &ys)).unwrap();
        let s = ssim(&x, &y).unwrap();
        prop_assert!((s - ssim(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0 - 1e-12);
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_drops_by_twenty_log_of_error_scale(
        n in 4usize..16,
        xs in prop::collection::vec(0.0f64..1.0, 64),
        es in prop::collection::vec(-0.1f64..0.1, 64),
        scale in 1.5f64..10.0,
    ) {
        let x = Image::new(array(n, n, &xs)).unwrap();
        let e = array(n, n, &es);
        prop_assume!(e.iter().any(|v| v.abs() > 1e-6));
        let y1 = Image::new(x.data() + &e).unwrap();
        let y2 = Image::new(x.data() + &(&e * scale)).unwrap();
        let drop = psnr(&x, &y1, 1.0).unwrap() - psnr(&x, &y2, 1.0).unwrap();
        prop_assert!((drop - 20.0 * scale.log10()).abs() < 1e-9);
    }
}
