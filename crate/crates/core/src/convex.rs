//! Primal-dual solver for L2-TV reconstruction and its weighted, path-coupled
//! variant
//!
//! `min_x 1/2 |A x - B|^2 + alpha TV(x) + beta sum_x w (x - F)^2`.
//!
//! The data block is solved with the rescaled operator `A / c`, where `c`
//! matches `|A / c|` to the norm bound of the discrete gradient. This is an
//! exact reformulation of the data term and keeps both dual blocks on the same
//! scale.

use std::io::Write;

use ndarray::{Array2, Zip};

use crate::energy::{forward_gradient, forward_gradient_adjoint};
use crate::error::{shape_err, Error, Result};
use crate::grid::{Image, WeightField};
use crate::operators::{check_data, op_norm_estimate, MeasurementData, MeasurementOp};

/// Squared norm bound of the forward-difference gradient in 2D.
const GRAD_NORM_SQ: f64 = 8.0;

/// Step sizes for one operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdSteps {
    pub tau: f64,
    pub sigma: f64,
    /// Rescaling `c` of the data block.
    pub data_scale: f64,
    /// Upper bound on the norm of the stacked operator `(grad; A / c)`.
    pub lipschitz: f64,
}

impl PdSteps {
    /// Steps `tau = sigma = 0.99 / L` for `op`. The operator norm is a power
    /// method estimate padded by 2%.
    pub fn estimate(op: &dyn MeasurementOp, seed: u64) -> Result<Self> {
        let a = op_norm_estimate(op, 60, seed) * 1.02;
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Param("operator norm estimate is not positive".into()));
        }
        let data_scale = a / GRAD_NORM_SQ.sqrt();
        let lipschitz = (GRAD_NORM_SQ + (a / data_scale).powi(2)).sqrt();
        let step = 0.99 / lipschitz;
        Ok(Self {
            tau: step,
            sigma: step,
            data_scale,
            lipschitz,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.tau, self.sigma, self.data_scale, self.lipschitz];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Param("step sizes must be positive and finite".into()));
        }
        if self.tau * self.sigma * self.lipschitz * self.lipschitz > 1.0 + 1e-12 {
            return Err(Error::Param(format!(
                "step sizes violate tau * sigma * L^2 <= 1 (tau = {}, sigma = {}, L = {})",
                self.tau, self.sigma, self.lipschitz
            )));
        }
        Ok(())
    }
}

/// Primal-dual solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PdParams {
    pub max_iters: usize,
    /// Relative energy change over `window` iterations below which the solver stops.
    pub tol: f64,
    pub window: usize,
    /// Over-relaxation parameter.
    pub theta: f64,
    /// Precomputed steps; estimated from the operator when absent.
    pub steps: Option<PdSteps>,
    /// Record one log row per iteration.
    pub log: bool,
    pub seed: u64,
}

impl Default for PdParams {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-6,
            window: 10,
            theta: 1.0,
            steps: None,
            log: false,
            seed: 0x7d,
        }
    }
}

impl PdParams {
    /// Copy with steps filled in for `op`.
    pub fn prepared(&self, op: &dyn MeasurementOp) -> Result<Self> {
        let mut out = self.clone();
        if out.steps.is_none() {
            out.steps = Some(PdSteps::estimate(op, self.seed)?);
        }
        Ok(out)
    }

    fn validate(&self) -> Result<PdSteps> {
        if self.max_iters == 0 || self.window == 0 {
            return Err(Error::Param("max_iters and window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Param(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Param("tolerance must be nonnegative".into()));
        }
        let steps = self.steps.ok_or_else(|| Error::Param("step sizes not prepared".into()))?;
        steps.validate()?;
        Ok(steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdLogRow {
    pub iter: usize,
    pub energy: f64,
    pub dual_residual: f64,
}

/// Dual variables of the TV block and the (rescaled) data block.
#[derive(Clone, Debug, PartialEq)]
pub struct PdDual {
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
    pub q: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct PdSolution {
    /// Iterate with the lowest energy seen, including the start point.
    pub image: Image,
    pub energy: f64,
    pub initial_energy: f64,
    pub iterations: usize,
    /// Largest pointwise norm of the TV dual variable.
    pub dual_max: f64,
    /// Final dual state, usable as a warm start with the same step sizes.
    pub dual: PdDual,
    pub log: Vec<PdLogRow>,
}

impl PdSolution {
    pub fn write_log_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,energy,dual_residual")?;
        for row in &self.log {
            writeln!(out, "{},{:.12e},{:.12e}", row.iter, row.energy, row.dual_residual)?;
        }
        Ok(())
    }
}

/// Pointwise projection of `(p1, p2)` onto the ball of radius `alpha`.
pub fn prox_tv_dual(p1: &mut Array2<f64>, p2: &mut Array2<f64>, alpha: f64) {
    Zip::from(p1).and(p2).for_each(|a, b| {
        let scale = ((*a * *a + *b * *b).sqrt() / alpha).max(1.0);
        *a /= scale;
        *b /= scale;
    });
}

struct Coupling<'a> {
    target: &'a Array2<f64>,
    /// `beta * w`
    weight: Array2<f64>,
}

fn energy(x: &Array2<f64>, ax: &Array2<f64>, b: &Array2<f64>, alpha: f64, coupling: Option<&Coupling>) -> f64 {
    let data = 0.5 * Zip::from(ax).and(b).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
    let (g1, g2) = forward_gradient(x);
    let tv = Zip::from(&g1).and(&g2).fold(0.0, |acc, a, b| acc + (a * a + b * b).sqrt());
    let quad = coupling.map_or(0.0, |c| {
        Zip::from(x)
            .and(c.target)
            .and(&c.weight)
            .fold(0.0, |acc, x, f, w| acc + w * (x - f) * (x - f))
    });
    data + alpha * tv + quad
}

fn solve(
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    x0: &Image,
    coupling: Option<Coupling>,
    pd: &PdParams,
    warm: Option<&PdDual>,
) -> Result<PdSolution> {
    check_data(op, data)?;
    if x0.shape() != op.input_shape() {
        return Err(shape_err("initial image", op.input_shape(), x0.shape()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Param(format!("alpha must be positive, got {alpha}")));
    }
    let prepared;
    let pd = if pd.steps.is_none() {
        prepared = pd.prepared(op)?;
        &prepared
    } else {
        pd
    };
    let steps = pd.validate()?;
    let (tau, sigma, c, theta) = (steps.tau, steps.sigma, steps.data_scale, pd.theta);
    let b = &data.values;
    let b_scaled = b / c;
    let data_shrink = 1.0 / (1.0 + sigma / (c * c));
    let coupling = coupling.as_ref();
    let denom = coupling.map(|cp| cp.weight.mapv(|w| 1.0 / (1.0 + 2.0 * tau * w)));

    let mut x = x0.data().clone();
    let mut ax = op.forward(&x);
    let mut xbar = x.clone();
    let mut axbar = ax.clone();
    let (n1, n2) = x.dim();
    let (mut p1, mut p2, mut q) = match warm {
        Some(d) if d.p1.dim() == (n1, n2) && d.p2.dim() == (n1, n2) && d.q.dim() == b.dim() => {
            (d.p1.clone(), d.p2.clone(), d.q.clone())
        }
        Some(_) => return Err(Error::Shape("warm-start dual does not match the problem".into())),
        None => (Array2::zeros((n1, n2)), Array2::zeros((n1, n2)), Array2::zeros(b.dim())),
    };

    let initial_energy = energy(&x, &ax, b, alpha, coupling);
    let mut best = (initial_energy, x.clone());
    let mut history = vec![initial_energy];
    let mut log = Vec::new();
    let mut iterations = 0;

    for iter in 1..=pd.max_iters {
        iterations = iter;
        let (g1, g2) = forward_gradient(&xbar);
        let (old_p1, old_p2, old_q) = if pd.log {
            (Some(p1.clone()), Some(p2.clone()), Some(q.clone()))
        } else {
            (None, None, None)
        };
        p1.scaled_add(sigma, &g1);
        p2.scaled_add(sigma, &g2);
        prox_tv_dual(&mut p1, &mut p2, alpha);
        Zip::from(&mut q).and(&axbar).and(&b_scaled).for_each(|q, a, bs| {
            *q = (*q + sigma * (a / c - bs)) * data_shrink;
        });

        let mut step = forward_gradient_adjoint(&p1, &p2);
        step.scaled_add(1.0 / c, &op.backward(&q));
        let x_old = std::mem::replace(&mut x, Array2::zeros((0, 0)));
        x = &x_old - &(step * tau);
        if let (Some(cp), Some(den)) = (coupling, denom.as_ref()) {
            Zip::from(&mut x).and(cp.target).and(&cp.weight).and(den).for_each(|x, f, w, d| {
                *x = (*x + 2.0 * tau * w * f) * d;
            });
        }
        let ax_old = std::mem::replace(&mut ax, op.forward(&x));
        Zip::from(&mut xbar).and(&x).and(&x_old).for_each(|xb, x, xo| *xb = x + theta * (x - xo));
        Zip::from(&mut axbar).and(&ax).and(&ax_old).for_each(|ab, a, ao| *ab = a + theta * (a - ao));

        let e = energy(&x, &ax, b, alpha, coupling);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("primal-dual energy at iteration {iter}")));
        }
        if pd.log {
            let diff = |new: &Array2<f64>, old: &Array2<f64>| {
                Zip::from(new).and(old).fold(0.0, |acc, a, b| acc + (a - b) * (a - b))
            };
            let d = diff(&p1, old_p1.as_ref().unwrap())
                + diff(&p2, old_p2.as_ref().unwrap())
                + diff(&q, old_q.as_ref().unwrap());
            log.push(PdLogRow {
                iter,
                energy: e,
                dual_residual: d.sqrt() / sigma,
            });
        }
        if e < best.0 {
            best = (e, x.clone());
        }
        history.push(e);
        if iter >= pd.window {
            let past = history[iter - pd.window];
            if (past - e).abs() <= pd.tol * past.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let dual_max = Zip::from(&p1).and(&p2).fold(0.0f64, |m, a, b| m.max((a * a + b * b).sqrt()));
    Ok(PdSolution {
        image: Image::new(best.1)?,
        energy: best.0,
        initial_energy,
        iterations,
        dual_max,
        dual: PdDual { p1, p2, q },
        log,
    })
}

/// Minimizes `1/2 |A x - B|^2 + alpha TV(x)` starting from `x0`.
pub fn solve_l2tv(
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    x0: &Image,
    pd: &PdParams,
) -> Result<PdSolution> {
    solve(op, data, alpha, x0, None, pd, None)
}

/// [`solve_l2tv`] starting from the dual state of an earlier solve.
pub fn solve_l2tv_warm(
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    alpha: f64,
    x0: &Image,
    pd: &PdParams,
    warm: Option<&PdDual>,
) -> Result<PdSolution> {
    solve(op, data, alpha, x0, None, pd, warm)
}

/// Minimizes `1/2 |A x - B|^2 + alpha TV(x) + beta sum w (x - F)^2`.
#[allow(clippy::too_many_arguments)]
pub fn solve_weighted_step(
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    target: &Image,
    weights: &WeightField,
    alpha: f64,
    beta: f64,
    x0: &Image,
    pd: &PdParams,
) -> Result<PdSolution> {
    solve_weighted_step_warm(op, data, target, weights, alpha, beta, x0, pd, None)
}

/// [`solve_weighted_step`] starting from the dual state of an earlier solve.
#[allow(clippy::too_many_arguments)]
pub fn solve_weighted_step_warm(
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    target: &Image,
    weights: &WeightField,
    alpha: f64,
    beta: f64,
    x0: &Image,
    pd: &PdParams,
    warm: Option<&PdDual>,
) -> Result<PdSolution> {
    if target.shape() != op.input_shape() {
        return Err(shape_err("coupling target", op.input_shape(), target.shape()));
    }
    if weights.shape() != op.input_shape() {
        return Err(shape_err("coupling weights", op.input_shape(), weights.shape()));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Param(format!("beta must be positive, got {beta}")));
    }
    let coupling = Coupling {
        target: target.data(),
        weight: weights.values() * beta,
    };
    solve(op, data, alpha, x0, Some(coupling), pd, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{BlockAverage, ScaledIdentity};
    use ndarray::array;

    fn pattern(n: usize) -> Image {
        Image::from_fn(n, n, |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 5.0)
    }

    #[test]
    fn dual_projection() {
        let mut p1 = array![[0.5, 2.0], [0.0, -3.0]];
        let mut p2 = array![[0.5, 0.0], [0.2, 4.0]];
        prox_tv_dual(&mut p1, &mut p2, 1.0);
        assert_eq!(p1, array![[0.5, 1.0], [0.0, -0.6]]);
        assert!((p2[[1, 1]] - 0.8).abs() < 1e-15);
        let (a, b) = (p1.clone(), p2.clone());
        prox_tv_dual(&mut p1, &mut p2, 1.0);
        assert!((&p1 - &a).iter().chain((&p2 - &b).iter()).all(|d| d.abs() <= 1e-15));
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let op = ScaledIdentity::identity((12, 12));
        let b = op.apply(&Image::constant(12, 12, 0.3)).unwrap();
        let sol = solve_l2tv(&op, &b, 0.1, &Image::zeros(12, 12), &PdParams::default()).unwrap();
        assert!(sol.image.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn energy_not_above_start() {
        let op = BlockAverage::new((16, 16), 2).unwrap();
        let b = op.apply(&pattern(16)).unwrap();
        let pd = PdParams {
            max_iters: 7,
            ..PdParams::default()
        };
        let x0 = pattern(16);
        let sol = solve_l2tv(&op, &b, 0.05, &x0, &pd).unwrap();
        assert!(sol.energy <= sol.initial_energy);
        assert!(sol.dual_max <= 0.05 + 1e-12);
    }

    #[test]
    fn bad_steps_rejected() {
        let op = ScaledIdentity::identity((8, 8));
        let b = op.apply(&pattern(8)).unwrap();
        let pd = PdParams {
            steps: Some(PdSteps {
                tau: 1.0,
                sigma: 1.0,
                data_scale: 1.0,
                lipschitz: 4.0,
            }),
            ..PdParams::default()
        };
        assert!(matches!(solve_l2tv(&op, &b, 0.1, &pattern(8), &pd), Err(Error::Param(_))));
        assert!(solve_l2tv(&op, &b, 0.0, &pattern(8), &PdParams::default()).is_err());
    }

    #[test]
    fn log_rows_match_iterations() {
        let op = ScaledIdentity::identity((8, 8));
        let b = op.apply(&pattern(8)).unwrap();
        let pd = PdParams {
            log: true,
            max_iters: 30,
            tol: 0.0,
            ..PdParams::default()
        };
        let sol = solve_l2tv(&op, &b, 0.1, &Image::zeros(8, 8), &pd).unwrap();
        assert_eq!(sol.log.len(), 30);
        let mut csv = Vec::new();
        sol.write_log_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
    }
}
