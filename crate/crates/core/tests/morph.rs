use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdm_core::convex::PdParams;
use tdm_core::grid::{sample, CellVectorField};
use tdm_core::morph::{desubstitute, inner_alternation, interior_update, substitute, InnerParams, SubstitutedPath};
use tdm_core::operators::{MeasurementOp, ScaledIdentity};
use tdm_core::{DeformationPath, DisplacementField, Image, ImagePath, Interp, WeightField};

/// Gaussian elimination with partial pivoting on a dense copy.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Interior frames minimizing `sum_k w_{k+1} (f_k - f_{k+1})^2` at one pixel.
fn chain_minimizer(w: &[f64], f0: f64, fk: f64) -> Vec<f64> {
    let m = w.len() - 1;
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for r in 0..m {
        // unknown F_{r+1} sits between w[r] (to F_r) and w[r+1] (to F_{r+2})
        a[r][r] = w[r] + w[r + 1];
        if r > 0 {
            a[r][r - 1] = -w[r];
        } else {
            b[r] += w[r] * f0;
        }
        if r + 1 < m {
            a[r][r + 1] = -w[r + 1];
        } else {
            b[r] += w[r + 1] * fk;
        }
    }
    dense_solve(a, b)
}

fn sub_from(weights: Vec<Array2<f64>>, f0: Array2<f64>, fk: Array2<f64>) -> SubstitutedPath {
    let k = weights.len();
    let (n1, n2) = f0.dim();
    let mut frames = vec![Image::new(f0).unwrap()];
    frames.extend((1..k).map(|_| Image::zeros(n1, n2)));
    frames.push(Image::new(fk).unwrap());
    SubstitutedPath {
        frames,
        weights: weights.into_iter().map(|w| WeightField::positive(w).unwrap()).collect(),
        maps: vec![CellVectorField::identity(n1, n2); k + 1],
        reference: Image::zeros(n1, n2),
    }
}

#[test]
fn interior_update_matches_dense_tridiagonal_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 2..=4 {
        // 100 random weight tuples, one per pixel of a 10x10 grid
        let weights: Vec<Array2<f64>> =
            (0..k).map(|_| Array2::from_shape_simple_fn((10, 10), || rng.random_range(1e-3..10.0))).collect();
        let f0 = Array2::from_shape_simple_fn((10, 10), || rng.random_range(-1.0..1.0));
        let fk = Array2::from_shape_simple_fn((10, 10), || rng.random_range(-1.0..1.0));
        let mut sub = sub_from(weights.clone(), f0.clone(), fk.clone());
        interior_update(&mut sub);
        let mut worst: f64 = 0.0;
        for ix in ndarray::indices((10, 10)) {
            let w: Vec<f64> = weights.iter().map(|a| a[ix]).collect();
            let expected = chain_minimizer(&w, f0[ix], fk[ix]);
            for (j, e) in expected.iter().enumerate() {
                worst = worst.max((sub.frames[j + 1].data()[ix] - e).abs());
            }
            // stationarity of the tridiagonal system
            for j in 1..k {
                let f = |i: usize| sub.frames[i].data()[ix];
                let r = w[j - 1] * (f(j) - f(j - 1)) + w[j] * (f(j) - f(j + 1));
                assert!(r.abs() <= 1e-10);
            }
        }
        assert!(worst <= 1e-10, "K = {k}: max error {worst}");
    }
}

#[test]
fn uniform_weights_give_linear_fractions() {
    for k in 2..=4 {
        let f0 = Array2::zeros((3, 3));
        let fk = Array2::ones((3, 3));
        let mut sub = sub_from(vec![Array2::ones((3, 3)); k], f0, fk);
        interior_update(&mut sub);
        for j in 1..k {
            assert!(sub.frames[j].data().iter().all(|&t| t == j as f64 / k as f64));
        }
    }
}

#[test]
fn fractions_are_monotone_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = 4;
    let weights = (0..k).map(|_| Array2::from_shape_simple_fn((6, 6), || rng.random_range(1e-3..5.0))).collect();
    let mut sub = sub_from(weights, Array2::zeros((6, 6)), Array2::ones((6, 6)));
    interior_update(&mut sub);
    // with F_0 = 0 and F_K = 1 the frames are the fractions t_k themselves
    for ix in ndarray::indices((6, 6)) {
        let t: Vec<f64> = sub.frames.iter().map(|f| f.data()[ix]).collect();
        assert_eq!((t[0], t[k]), (0.0, 1.0));
        assert!(t.windows(2).all(|p| p[0] <= p[1]));
        assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn smooth(n: usize, phase: f64) -> Image {
    let s = std::f64::consts::TAU / n as f64;
    Image::from_fn(n, n, |(i, j)| 0.5 + 0.25 * (s * i as f64 + phase).sin() * (s * j as f64 * 0.7).cos())
}

#[test]
fn alternation_is_monotone_and_consistent() {
    let n = 16;
    let op = ScaledIdentity::identity((n, n));
    let reference = smooth(n, 0.3);
    let data = op.apply(&reference).unwrap();
    let path = ImagePath::new(vec![smooth(n, 1.0), smooth(n, 2.0), smooth(n, -1.0)], reference.clone()).unwrap();
    let mut sub = substitute(&path, &DeformationPath::zeros(3, n, n), Interp::Bilinear).unwrap();
    let inner = InnerParams { max_inner: 30, tol: 1e-9 };
    let history = inner_alternation(&mut sub, &op, &data, 1e-8, 1.0, &PdParams::default(), &inner).unwrap();
    for pair in history.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-8, "objective rose: {pair:?}");
    }
    let err = (sub.frames[0].data() - reference.data()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err < 1e-3, "F_0 is {err} away from F_K");
}

#[test]
fn round_trip_with_small_deformations() {
    let n = 64;
    let bump = |a: f64, b: f64| {
        let s = std::f64::consts::PI / n as f64;
        ((a + 0.5) * s).sin().powi(2) * ((b + 0.5) * s).sin().powi(2)
    };
    let field = |amp: f64| {
        DisplacementField::new(
            Array2::from_shape_fn((n - 1, n), |(i, j)| amp * bump(i as f64 + 0.5, j as f64)),
            Array2::from_shape_fn((n, n - 1), |(i, j)| 0.5 * amp * bump(i as f64, j as f64 + 0.5)),
        )
        .unwrap()
    };
    let frames: Vec<Image> = (0..3).map(|k| smooth(n, 0.3 * k as f64)).collect();
    let path = ImagePath::new(frames, smooth(n, 0.9)).unwrap();
    let v = DeformationPath::new(vec![field(1.5), field(-1.0), field(1.2)]).unwrap();
    let back = desubstitute(&substitute(&path, &v, Interp::Bilinear).unwrap()).unwrap();
    for k in 0..3 {
        let err = (back.frame(k).data() - path.frame(k).data()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(err <= 0.05, "frame {k}: {err}");
    }
    assert_eq!(back.reference(), path.reference());
}

#[test]
fn substituted_reference_is_sampled_along_the_full_map() {
    let n = 12;
    let reference = smooth(n, 0.5);
    let path = ImagePath::new(vec![smooth(n, 0.0)], reference.clone()).unwrap();
    let v = DeformationPath::new(vec![DisplacementField::new(
        Array2::from_elem((n - 1, n), 0.25),
        Array2::from_elem((n, n - 1), -0.5),
    )
    .unwrap()])
    .unwrap();
    let sub = substitute(&path, &v, Interp::Bilinear).unwrap();
    assert_eq!(sub.frames[1], sample(&reference, &sub.maps[1], Interp::Bilinear));
}

#[test]
fn alternation_reaches_the_joint_minimizer_with_nonuniform_weights() {
    // identity operator, alpha ~ 0: per pixel F_0 minimizes
    // 1/2 (F_0 - B)^2 + beta w_eff (F_0 - F_K)^2 with w_eff = 1 / sum 1/w_k
    let (n, k, beta) = (12, 3, 2.5);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let weights: Vec<Array2<f64>> =
        (0..k).map(|_| Array2::from_shape_simple_fn((n, n), || rng.random_range(0.2..3.0))).collect();
    let fk = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..1.0));
    let b = Array2::from_shape_simple_fn((n, n), || rng.random_range(0.0..1.0));
    let mut sub = sub_from(weights.clone(), Array2::zeros((n, n)), fk.clone());
    let op = ScaledIdentity::identity((n, n));
    let data = op.apply(&Image::new(b.clone()).unwrap()).unwrap();
    let inner = InnerParams { max_inner: 5, tol: 1e-12 };
    let pd = PdParams { tol: 1e-12, max_iters: 5000, ..PdParams::default() };
    let history = inner_alternation(&mut sub, &op, &data, 1e-9, beta, &pd, &inner).unwrap();
    assert!(history.windows(2).all(|p| p[1] <= p[0]));
    for ((i, j), &f0) in sub.frames[0].data().indexed_iter() {
        let w: Vec<f64> = weights.iter().map(|w| w[[i, j]]).collect();
        let w_eff = 1.0 / w.iter().map(|x| 1.0 / x).sum::<f64>();
        let expect = (b[[i, j]] + 2.0 * beta * w_eff * fk[[i, j]]) / (1.0 + 2.0 * beta * w_eff);
        assert!((f0 - expect).abs() < 1e-6, "({i}, {j}): {f0} vs {expect}");
        let interior = chain_minimizer(&w, f0, fk[[i, j]]);
        for (m, x) in interior.iter().enumerate() {
            assert!((sub.frames[m + 1].get(i, j) - x).abs() < 1e-9);
        }
    }
}
