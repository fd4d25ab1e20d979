use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdm_core::convex::{solve_l2tv, solve_weighted_step, PdParams};
use tdm_core::operators::{BlockAverage, MeasurementData, MeasurementOp, ScaledIdentity};
use tdm_core::{Image, WeightField};

fn random(n: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, n), || rng.random_range(lo..hi))
}

fn data(op: &dyn MeasurementOp, values: Array2<f64>) -> MeasurementData {
    MeasurementData::new(values, op.geometry()).unwrap()
}

fn logged() -> PdParams {
    PdParams {
        log: true,
        ..PdParams::default()
    }
}

#[test]
fn weighted_step_matches_pointwise_closed_form() {
    let n = 16;
    let op = ScaledIdentity::identity((n, n));
    let b = random(n, 0.0, 1.0, 1);
    let f = random(n, 0.0, 1.0, 2);
    let w = random(n, 0.2, 3.0, 3);
    let beta = 0.7;
    let expected = Array2::from_shape_fn((n, n), |ix| (b[ix] + 2.0 * beta * w[ix] * f[ix]) / (1.0 + 2.0 * beta * w[ix]));
    let pd = PdParams {
        tol: 1e-12,
        ..PdParams::default()
    };
    let sol = solve_weighted_step(
        &op,
        &data(&op, b),
        &Image::new(f).unwrap(),
        &WeightField::positive(w).unwrap(),
        1e-8,
        beta,
        &Image::zeros(n, n),
        &pd,
    )
    .unwrap();
    let err = (sol.image.data() - &expected).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err <= 1e-6, "max error {err}");
}

#[test]
fn dominant_coupling_pins_target() {
    let n = 16;
    let op = ScaledIdentity::identity((n, n));
    let f = random(n, 0.0, 1.0, 4);
    let sol = solve_weighted_step(
        &op,
        &data(&op, random(n, 0.0, 1.0, 5)),
        &Image::new(f.clone()).unwrap(),
        &WeightField::ones(n, n),
        0.05,
        1e6,
        &Image::zeros(n, n),
        &PdParams::default(),
    )
    .unwrap();
    let err = (sol.image.data() - &f).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err <= 1e-3, "max error {err}");
}

#[test]
fn constant_target_equal_to_data_is_the_solution() {
    let n = 12;
    let op = ScaledIdentity::identity((n, n));
    let c = Image::constant(n, n, 0.45);
    for beta in [0.01, 1.0, 100.0] {
        let sol = solve_weighted_step(
            &op,
            &data(&op, c.data().clone()),
            &c,
            &WeightField::ones(n, n),
            0.1,
            beta,
            &Image::zeros(n, n),
            &PdParams::default(),
        )
        .unwrap();
        assert!(sol.image.data().iter().all(|v| (v - 0.45).abs() < 1e-6));
    }
}

#[test]
fn heavy_tv_denoising_returns_the_mean() {
    let n = 16;
    let op = ScaledIdentity::identity((n, n));
    let b = random(n, 0.0, 1.0, 6);
    let mean = b.mean().unwrap();
    let sol = solve_l2tv(&op, &data(&op, b), 1e3, &Image::zeros(n, n), &PdParams::default()).unwrap();
    let err = sol.image.data().iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    assert!(err <= 1e-3, "max deviation from mean {err}");
}

#[test]
fn tiny_tv_recovers_least_norm_solution() {
    let n = 16;
    let op = BlockAverage::new((n, n), 4).unwrap();
    let truth = random(n, 0.0, 1.0, 7);
    let b = op.forward(&truth);
    // A A^T = I / 16, so the least-norm solution is 16 A^T B: block-constant
    // copies of B.
    let expected = Array2::from_shape_fn((n, n), |(i, j)| b[[i / 4, j / 4]]);
    let pd = PdParams {
        tol: 1e-12,
        max_iters: 5000,
        ..PdParams::default()
    };
    let sol = solve_l2tv(&op, &data(&op, b), 1e-8, &Image::zeros(n, n), &pd).unwrap();
    let err = (sol.image.data() - &expected).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err <= 1e-3, "max error {err}");
}

fn assert_monotone_after_burn_in(log: &[tdm_core::convex::PdLogRow]) {
    for pair in log.windows(2).skip(4) {
        assert!(
            pair[1].energy <= pair[0].energy + 1e-10,
            "energy rose at iteration {}: {} -> {}",
            pair[1].iter,
            pair[0].energy,
            pair[1].energy
        );
    }
}

fn disc(n: usize) -> Image {
    Image::from_fn(n, n, |(i, j)| if (i as f64 - 7.5).hypot(j as f64 - 7.5) < 5.0 { 0.8 } else { 0.1 })
}

#[test]
fn primal_energy_monotone_after_burn_in() {
    let n = 16;
    let truth = disc(n);
    let id = ScaledIdentity::identity((n, n));
    let noisy = truth.data() + &(random(n, -0.1, 0.1, 8));
    let sol = solve_l2tv(&id, &data(&id, noisy.clone()), 0.1, &Image::zeros(n, n), &logged()).unwrap();
    assert_monotone_after_burn_in(&sol.log);

    let weights = WeightField::positive(random(n, 0.5, 2.0, 9)).unwrap();
    let sol = solve_weighted_step(&id, &data(&id, noisy), &truth, &weights, 0.05, 0.5, &Image::zeros(n, n), &logged())
        .unwrap();
    assert_monotone_after_burn_in(&sol.log);

    let p = BlockAverage::new((n, n), 2).unwrap();
    let b = p.forward(truth.data());
    let sol = solve_weighted_step(&p, &data(&p, b), &truth, &weights, 0.01, 0.5, &Image::zeros(n, n), &logged())
        .unwrap();
    assert_monotone_after_burn_in(&sol.log);
}

#[test]
fn returns_best_iterate_on_degenerate_problems() {
    // Block averaging leaves most of the image to a weak TV term; the raw
    // iterates are not monotone here, the returned one is the best seen.
    let n = 16;
    let p = BlockAverage::new((n, n), 2).unwrap();
    let b = p.forward(disc(n).data());
    let sol = solve_l2tv(&p, &data(&p, b), 0.01, &Image::zeros(n, n), &logged()).unwrap();
    let lowest = sol.log.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min);
    assert_eq!(sol.energy, lowest.min(sol.initial_energy));
    assert!(sol.dual_max <= 0.01 + 1e-12);
}
