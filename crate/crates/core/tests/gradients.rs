use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdm_core::energy::{d3_value_grad, elastic_value_grad, registration_energy, registration_value, EnergyParams};
use tdm_core::palm::{grad_h, h_value};
use tdm_core::{DeformationPath, DisplacementField, Image, ImagePath, Interp};

fn random_field(n: usize, amp: f64, offset: f64, rng: &mut ChaCha8Rng) -> DisplacementField {
    DisplacementField::new(
        Array2::from_shape_simple_fn((n - 1, n), || offset + rng.random_range(-amp..amp)),
        Array2::from_shape_simple_fn((n, n - 1), || -offset + rng.random_range(-amp..amp)),
    )
    .unwrap()
}

fn smooth(n: usize, phase: f64) -> Image {
    let s = 5.0 / n as f64;
    Image::from_fn(n, n, |(i, j)| 0.5 + 0.3 * (s * i as f64 + phase).sin() * (s * 1.3 * j as f64 - phase).cos())
}

/// Central differences of `f` in every coordinate of `v`.
fn fd_gradient(v: &DisplacementField, h: f64, f: impl Fn(&DisplacementField) -> f64) -> DisplacementField {
    let mut out = v.scaled(0.0);
    let mut probe = v.clone();
    let n = v.len();
    for idx in 0..n {
        let orig = *probe.iter().nth(idx).unwrap();
        *probe.iter_mut().nth(idx).unwrap() = orig + h;
        let up = f(&probe);
        *probe.iter_mut().nth(idx).unwrap() = orig - h;
        let down = f(&probe);
        *probe.iter_mut().nth(idx).unwrap() = orig;
        *out.iter_mut().nth(idx).unwrap() = (up - down) / (2.0 * h);
    }
    out
}

fn rel_err(a: &DisplacementField, b: &DisplacementField) -> f64 {
    let mut d = a.clone();
    d.add_scaled(-1.0, b);
    d.norm() / b.norm().max(1e-300)
}

#[test]
fn elastic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_field(8, 1.0, 0.0, &mut rng);
    let (_, g) = elastic_value_grad(&v, 0.7, 1.3);
    let fd = fd_gradient(&v, 1e-5, |w| elastic_value_grad(w, 0.7, 1.3).0);
    assert!(rel_err(&fd, &g) <= 1e-6, "{}", rel_err(&fd, &g));
}

#[test]
fn elastic_energy_matches_dense_quadratic_form() {
    // Q from the polarization of the energy on unit vectors, then v^T Q v.
    let n = 5;
    let (mu, lambda) = (0.8, 0.3);
    let e = |w: &DisplacementField| elastic_value_grad(w, mu, lambda).0;
    let m = DisplacementField::zeros(n, n).len();
    let unit = |i: usize| {
        let mut u = DisplacementField::zeros(n, n);
        *u.iter_mut().nth(i).unwrap() = 1.0;
        u
    };
    let mut q = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut s = unit(i);
            s.add_scaled(1.0, &unit(j));
            q[[i, j]] = 0.5 * (e(&s) - e(&unit(i)) - e(&unit(j)));
        }
    }
    // hand-assembled entries of the normal-strain block for v1 at an interior face:
    // (d1 v1)^2 hits the face from two cells (mu each) plus the divergence term
    // (lambda / 2 from each cell), the shear term adds mu / 2 from two corners
    let interior = n + 1; // v1[1][1], row-major
    assert!((q[[interior, interior]] - (2.0 * mu + lambda + mu)).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let constant = DisplacementField::new(Array2::from_elem((n - 1, n), 0.4), Array2::from_elem((n, n - 1), -0.2)).unwrap();
    for v in [random_field(n, 1.0, 0.0, &mut rng), constant] {
        let x: Vec<f64> = v.iter().copied().collect();
        let quad: f64 = (0..m).map(|i| (0..m).map(|j| x[i] * q[[i, j]] * x[j]).sum::<f64>()).sum();
        assert!((quad - e(&v)).abs() <= 1e-12 * quad.abs().max(1.0));
    }
}

#[test]
fn d3_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = random_field(10, 1.0, 0.0, &mut rng);
    let (value, g) = d3_value_grad(&v, 0.9, 0.05).unwrap();
    assert!(value >= 0.9 * 0.05 * v.norm_sq());
    let fd = fd_gradient(&v, 1e-5, |w| d3_value_grad(w, 0.9, 0.05).unwrap().0);
    assert!(rel_err(&fd, &g) <= 1e-6, "{}", rel_err(&fd, &g));
}

#[test]
fn registration_gradient_matches_finite_differences() {
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (smooth(n, 0.0), smooth(n, 0.6));
    for interp in [Interp::Bilinear, Interp::Bicubic] {
        let mut params = EnergyParams::from_reg_scale(0.1, 0.1, 0.05, 1);
        params.interp = interp;
        // offsets of 0.3 keep the sample points away from grid lines
        let v = random_field(n, 0.05, 0.3, &mut rng);
        let g = registration_energy(&v, &a, &b, &params).unwrap().gradient;
        let fd = fd_gradient(&v, 1e-4, |w| registration_value(w, &a, &b, &params).unwrap());
        assert!(rel_err(&fd, &g) <= 1e-4, "{interp}: {}", rel_err(&fd, &g));
    }
}

#[test]
fn palm_coupling_gradient_matches_finite_differences() {
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = EnergyParams::from_reg_scale(0.1, 0.7, 0.05, 2);
    let path = ImagePath::new(vec![smooth(n, 0.0), smooth(n, 0.4)], smooth(n, 0.9)).unwrap();
    let fields = DeformationPath::new(vec![random_field(n, 0.05, 0.3, &mut rng), random_field(n, 0.05, 0.25, &mut rng)]).unwrap();
    let g = grad_h(&path, &fields, &params).unwrap();
    assert!((g.value - h_value(&path, &fields, &params).unwrap()).abs() < 1e-12);

    for k in 0..2 {
        let fd = fd_gradient(&fields.steps()[k], 1e-4, |w| {
            let mut f = fields.clone();
            f.steps_mut()[k] = w.clone();
            h_value(&path, &f, &params).unwrap()
        });
        assert!(rel_err(&fd, &g.fields[k]) <= 1e-4, "field {k}: {}", rel_err(&fd, &g.fields[k]));
    }

    let h = 1e-5;
    for k in 0..2 {
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (i, j) in ndarray::indices((n, n)) {
            let shifted = |d: f64| {
                let mut p = path.clone();
                let mut img = p.frame(k).clone();
                img.data_mut()[[i, j]] += d;
                p.set_frame(k, img).unwrap();
                h_value(&p, &fields, &params).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            err += (fd - g.images[k][[i, j]]).powi(2);
            scale += fd * fd;
        }
        assert!((err / scale).sqrt() <= 1e-4, "frame {k}: {}", (err / scale).sqrt());
    }
    assert!(g.images[2].iter().all(|&v| v == 0.0));
}

#[test]
fn palm_image_gradient_is_linear_in_images() {
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = EnergyParams::from_reg_scale(0.1, 0.7, 0.05, 1);
    let fields = DeformationPath::new(vec![random_field(n, 0.5, 0.0, &mut rng)]).unwrap();
    let p1 = ImagePath::new(vec![smooth(n, 0.1)], smooth(n, 0.5)).unwrap();
    let p2 = ImagePath::new(vec![smooth(n, 1.1)], smooth(n, -0.4)).unwrap();
    let sum = ImagePath::new(
        vec![Image::new(p1.frame(0).data() * 2.0 + p2.frame(0).data()).unwrap()],
        Image::new(p1.frame(1).data() * 2.0 + p2.frame(1).data()).unwrap(),
    )
    .unwrap();
    let g1 = grad_h(&p1, &fields, &params).unwrap();
    let g2 = grad_h(&p2, &fields, &params).unwrap();
    let gs = grad_h(&sum, &fields, &params).unwrap();
    let expected = &g1.images[0] * 2.0 + &g2.images[0];
    assert!((&gs.images[0] - &expected).iter().all(|d| d.abs() <= 1e-12));
}
