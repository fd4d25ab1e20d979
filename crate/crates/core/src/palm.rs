//! Proximal alternating linearized minimization of the same objective.
//!
//! The smooth coupling is
//! `H(I, v) = beta sum_k (|warp(I_k, v_k) - I_{k+1}|^2 + S(v_k) + nu D3(v_k))`,
//! the nonsmooth part `1/2 |A I_0 - B|^2 + alpha TV(I_0)` acts on `I_0` only.
//! Each iteration takes a proximal gradient step in the images and a gradient
//! step in every deformation, with step sizes found by backtracking.

use ndarray::{Array2, Zip};

use crate::convex::{solve_weighted_step, PdParams};
use crate::energy::{full_objective, registration_energy, registration_value, EnergyParams};
use crate::error::{Error, Result};
use crate::grid::{warp, warp_adjoint, DeformationPath, DisplacementField, Image, ImagePath, WeightField};
use crate::multilevel::{check_finite, init_coarse, metrics_row, run_levels, seed_path, Level, LevelStack, RunConfig, RunLogRow, RunResult};
use crate::operators::{MeasurementData, MeasurementOp};

#[derive(Clone, Debug, PartialEq)]
pub struct PalmParams {
    /// Initial inverse step of the image block.
    pub tau: f64,
    /// Initial inverse step of every deformation block.
    pub sigma: f64,
    /// Safety factor between the accepted Lipschitz estimate and the step.
    pub gamma: f64,
    /// Growth of an inverse step on a failed descent test.
    pub backtrack: f64,
    /// Inverse steps shrink by this factor before each iteration.
    pub relax: f64,
    pub max_iters: usize,
    /// Relative objective decrease below which a level stops.
    pub tol: f64,
    /// Settings of the inner proximal solve.
    pub pd: PdParams,
}

impl Default for PalmParams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            sigma: 1.0,
            gamma: 1.1,
            backtrack: 2.0,
            relax: 1.5,
            max_iters: 60,
            tol: 1e-5,
            pd: PdParams {
                tol: 1e-8,
                ..PdParams::default()
            },
        }
    }
}

impl PalmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::Param("PALM steps must be positive".into()));
        }
        if !(self.gamma > 1.0 && self.backtrack > 1.0 && self.relax >= 1.0) {
            return Err(Error::Param("PALM needs gamma > 1, backtrack > 1 and relax >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Param("PALM needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Value and gradients of the smooth coupling.
#[derive(Clone, Debug)]
pub struct HGradient {
    pub value: f64,
    /// One entry per frame; the reference entry is zero.
    pub images: Vec<Array2<f64>>,
    pub fields: Vec<DisplacementField>,
}

fn check_lengths(images: &ImagePath, fields: &DeformationPath) -> Result<()> {
    if images.steps() != fields.len() || images.shape() != fields.grid_shape() {
        return Err(Error::Shape(format!(
            "image path ({} steps on {:?}) does not match deformation path ({} steps on {:?})",
            images.steps(),
            images.shape(),
            fields.len(),
            fields.grid_shape()
        )));
    }
    Ok(())
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |s, x, y| s + x * y)
}

/// Step `k` of the coupling, `beta R(v_k; I_k, I_{k+1})`.
fn h_term(images: &ImagePath, v: &DisplacementField, k: usize, params: &EnergyParams) -> Result<f64> {
    Ok(params.beta * registration_value(v, images.frame(k), images.frame(k + 1), params)?)
}

pub fn h_value(images: &ImagePath, fields: &DeformationPath, params: &EnergyParams) -> Result<f64> {
    check_lengths(images, fields)?;
    (0..fields.len()).map(|k| h_term(images, &fields.steps()[k], k, params)).sum()
}

/// Gradient of `H` with respect to all free frames and all deformations.
pub fn grad_h(images: &ImagePath, fields: &DeformationPath, params: &EnergyParams) -> Result<HGradient> {
    check_lengths(images, fields)?;
    let (n1, n2) = images.shape();
    let k_total = fields.len();
    let mut gi = vec![Array2::zeros((n1, n2)); k_total + 1];
    let mut gv = Vec::with_capacity(k_total);
    let mut value = 0.0;
    for (k, v) in fields.steps().iter().enumerate() {
        let eval = registration_energy(v, images.frame(k), images.frame(k + 1), params)?;
        value += params.beta * eval.value;
        gv.push(eval.gradient.scaled(params.beta));
        let r = warp(images.frame(k), v, params.interp)?.into_data() - images.frame(k + 1).data();
        gi[k] += &(warp_adjoint(&r, v, params.interp)? * (2.0 * params.beta));
        gi[k + 1].scaled_add(-2.0 * params.beta, &r);
    }
    gi[k_total].fill(0.0);
    Ok(HGradient {
        value,
        images: gi,
        fields: gv,
    })
}

/// Iterate of the PALM scheme with its current inverse step sizes.
#[derive(Clone, Debug)]
pub struct PalmState {
    pub images: ImagePath,
    pub fields: DeformationPath,
    pub tau: f64,
    /// One inverse step per deformation.
    pub sigmas: Vec<f64>,
}

impl PalmState {
    pub fn new(images: ImagePath, fields: DeformationPath, palm: &PalmParams) -> Result<Self> {
        check_lengths(&images, &fields)?;
        let sigmas = vec![palm.sigma; fields.len()];
        Ok(Self {
            images,
            fields,
            tau: palm.tau,
            sigmas,
        })
    }
}

/// Proximal gradient step of the image block taken from `base`, with the
/// inverse step found by backtracking from `tau / relax`.
fn image_block(
    base: &ImagePath,
    fields: &DeformationPath,
    tau: f64,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    params: &EnergyParams,
    palm: &PalmParams,
) -> Result<(ImagePath, f64)> {
    let (n1, n2) = base.shape();
    let k_total = fields.len();
    let grad = grad_h(base, fields, params)?;
    let mut tau = tau / palm.relax;
    let ones = WeightField::ones(n1, n2);
    loop {
        let z: Vec<Array2<f64>> = (0..k_total).map(|k| base.frame(k).data() - &(&grad.images[k] / tau)).collect();
        let first = solve_weighted_step(op, data, &Image::new(z[0].clone())?, &ones, params.alpha, tau / 2.0, base.first(), &palm.pd)?.image;
        let mut free = vec![first];
        for zk in &z[1..] {
            free.push(Image::new(zk.clone())?);
        }
        let trial = ImagePath::new(free, base.reference().clone())?;
        let (mut lin, mut dist) = (0.0, 0.0);
        for k in 0..k_total {
            let d = trial.frame(k).data() - base.frame(k).data();
            lin += dot(&grad.images[k], &d);
            dist += sq(&d);
        }
        let h = h_value(&trial, fields, params)?;
        if dist == 0.0 || h <= grad.value + lin + tau / (2.0 * palm.gamma) * dist {
            return Ok((trial, tau));
        }
        tau *= palm.backtrack;
        if !tau.is_finite() {
            return Err(Error::NonFinite("image step backtracking diverged".into()));
        }
    }
}

/// One PALM iteration: proximal image step, then one gradient step per
/// deformation, each accepted only once the descent-lemma test holds.
pub fn palm_step(
    state: &mut PalmState,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    params: &EnergyParams,
    palm: &PalmParams,
) -> Result<()> {
    let prepared = PalmParams {
        pd: palm.pd.prepared(op)?,
        ..palm.clone()
    };
    let k_total = state.fields.len();
    let (images, tau) = image_block(&state.images, &state.fields, state.tau, op, data, params, &prepared)?;
    state.images = images;
    state.tau = tau;

    // deformation blocks, independent of each other
    let mut steps = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let v = &state.fields.steps()[k];
        let eval = registration_energy(v, state.images.frame(k), state.images.frame(k + 1), params)?;
        let (h0, g) = (params.beta * eval.value, eval.gradient.scaled(params.beta));
        let gg = g.norm_sq();
        let mut sigma = state.sigmas[k] / palm.relax;
        let next = loop {
            if gg == 0.0 {
                break v.clone();
            }
            let mut trial = v.clone();
            trial.add_scaled(-1.0 / sigma, &g);
            let h = h_term(&state.images, &trial, k, params)?;
            if h <= h0 - gg / sigma + gg / (2.0 * palm.gamma * sigma) {
                break trial;
            }
            sigma *= palm.backtrack;
            if !sigma.is_finite() {
                return Err(Error::NonFinite(format!("deformation {k} backtracking diverged")));
            }
        };
        state.sigmas[k] = sigma;
        steps.push(next);
    }
    state.fields = DeformationPath::new(steps)?;
    Ok(())
}

/// PALM iterations on one level until the relative decrease of the objective
/// falls below `palm.tol`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn palm_level(
    l: usize,
    level: &Level,
    images: ImagePath,
    fields: DeformationPath,
    params: &EnergyParams,
    palm: &PalmParams,
    truth: Option<&Image>,
    log: &mut Vec<RunLogRow>,
) -> Result<(ImagePath, DeformationPath)> {
    let (op, data) = (&*level.op, &level.data);
    let palm = PalmParams {
        pd: palm.pd.prepared(op)?,
        ..palm.clone()
    };
    let mut state = PalmState::new(images, fields, &palm)?;
    let mut current = full_objective(&state.images, &state.fields, op, data, params)?;
    let (s, p) = metrics_row(truth, state.images.first());
    log.push(RunLogRow {
        level: l,
        outer: 0,
        steps: state.fields.len(),
        objective: current,
        image_step: 0.0,
        ssim: s,
        psnr: p,
    });
    for iter in 1..=palm.max_iters {
        palm_step(&mut state, op, data, params, &palm)?;
        check_finite(&state.images, &state.fields, l, iter)?;
        let value = full_objective(&state.images, &state.fields, op, data, params)?;
        let (s, p) = metrics_row(truth, state.images.first());
        log.push(RunLogRow {
            level: l,
            outer: iter,
            steps: state.fields.len(),
            objective: value,
            image_step: 1.0 / state.tau,
            ssim: s,
            psnr: p,
        });
        let decrease = current - value;
        current = value;
        if decrease <= palm.tol * value.abs() {
            break;
        }
    }
    Ok((state.images, state.fields))
}

/// PALM reconstruction. With `multilevel` the coarse-to-fine schedule of
/// `cfg` is used; otherwise the path of the finest schedule length is seeded
/// from an L2-TV reconstruction on the full grid.
pub fn run_palm(
    reference: &Image,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    cfg: &RunConfig,
    palm: &PalmParams,
    multilevel: bool,
    truth: Option<&Image>,
) -> Result<RunResult> {
    palm.validate()?;
    if multilevel {
        return run_levels(reference, op, data, cfg, truth, &mut |l, level, images, fields, params, _, truth, log| {
            palm_level(l, level, images, fields, params, palm, truth, log)
        });
    }
    cfg.validate()?;
    let level = Level {
        reference: reference.clone(),
        op: op.box_clone(),
        data: data.clone(),
    };
    let stack = LevelStack { levels: vec![level] };
    let flat = RunConfig {
        lev: 0,
        energy: cfg.energy_at(0, 1),
        ..cfg.clone()
    };
    let (recon, v) = init_coarse(&stack, &flat)?;
    let steps = cfg.path_lengths()[0];
    let (seeded, fields) = seed_path(reference, &v, steps)?;
    let mut free = seeded.into_frames();
    free.pop();
    free[0] = recon.clone();
    let images = ImagePath::new(free, reference.clone())?;
    let params = cfg.energy_at(0, steps);
    let mut log = Vec::new();
    let (images, fields) = palm_level(0, &stack.levels[0], images, fields, &params, palm, truth, &mut log)?;
    let snapshots = vec![(1, recon), (0, images.first().clone())];
    Ok(RunResult {
        images,
        fields,
        log,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::ScaledIdentity;

    fn smooth(n: usize, phase: f64) -> Image {
        Image::from_fn(n, n, |(i, j)| 0.5 + 0.3 * (0.4 * i as f64 + phase).sin() * (0.3 * j as f64).cos())
    }

    #[test]
    fn equal_frames_have_zero_gradient() {
        let a = smooth(10, 0.0);
        let path = ImagePath::new(vec![a.clone(), a.clone()], a).unwrap();
        let params = EnergyParams::from_reg_scale(0.1, 0.5, 0.1, 2);
        let g = grad_h(&path, &DeformationPath::zeros(2, 10, 10), &params).unwrap();
        assert_eq!(g.value, 0.0);
        assert!(g.images.iter().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(g.fields.iter().all(|v| v.max_abs() == 0.0));
    }

    #[test]
    fn stationary_state_is_kept() {
        let n = 12;
        let c = Image::constant(n, n, 0.3);
        let op = ScaledIdentity::identity((n, n));
        let data = op.apply(&c).unwrap();
        let params = EnergyParams::from_reg_scale(0.1, 0.5, 0.1, 2);
        let path = ImagePath::new(vec![c.clone(), c.clone()], c.clone()).unwrap();
        let mut state = PalmState::new(path.clone(), DeformationPath::zeros(2, n, n), &PalmParams::default()).unwrap();
        palm_step(&mut state, &op, &data, &params, &PalmParams::default()).unwrap();
        for (a, b) in state.images.frames().iter().zip(path.frames()) {
            assert!((a.data() - b.data()).iter().all(|d| d.abs() <= 1e-10));
        }
        assert!(state.fields.steps().iter().all(|v| v.max_abs() <= 1e-10));
    }
}
