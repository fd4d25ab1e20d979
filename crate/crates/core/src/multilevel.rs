//! Coarse-to-fine reconstruction driver.
//!
//! On the coarsest level an L2-TV reconstruction is registered to the
//! reference. Every finer level starts from the prolonged path (with new
//! frames inserted between neighbours), then alternates registrations of all
//! neighbouring pairs with the image-path update until the objective settles.

use std::io::Write;

use crate::convex::{solve_l2tv, solve_l2tv_warm, PdDual, PdParams};
use crate::energy::{full_objective, tv_value, EnergyParams};
use crate::error::{Error, Result};
use crate::grid::{
    gaussian_downsample, sample, stagger_average, upsample_displacement, upsample_image, warp, warp_adjoint, CellVectorField,
    DeformationPath, DisplacementField, Image, ImagePath,
};
use crate::metrics::{psnr, ssim};
use crate::morph::{desubstitute, inner_alternation_warm, substitute, InnerParams};
use crate::operators::{Geometry, MeasurementData, MeasurementOp};
use crate::registration::{register, RegParams};

const INTERIOR_CG_ITERS: usize = 30;

/// Smallest grid edge allowed on the coarsest level.
pub const MIN_LEVEL_SIZE: usize = 8;

#[derive(Clone, Debug)]
pub struct Level {
    pub reference: Image,
    pub op: Box<dyn MeasurementOp>,
    pub data: MeasurementData,
}

/// Pyramid of references, operators and data; index 0 is the finest level.
#[derive(Clone, Debug)]
pub struct LevelStack {
    pub levels: Vec<Level>,
}

impl LevelStack {
    /// Index of the coarsest level.
    pub fn coarsest(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Builds `lev + 1` levels by repeated downsampling and operator coarsening.
pub fn build_stack(reference: &Image, op: &dyn MeasurementOp, data: &MeasurementData, lev: usize) -> Result<LevelStack> {
    if reference.shape() != op.input_shape() {
        return Err(crate::error::shape_err("reference vs operator", op.input_shape(), reference.shape()));
    }
    let (mut n1, mut n2) = reference.shape();
    for _ in 0..lev {
        n1 = n1.div_ceil(2);
        n2 = n2.div_ceil(2);
    }
    if n1 < MIN_LEVEL_SIZE || n2 < MIN_LEVEL_SIZE {
        return Err(Error::TooSmall(format!(
            "{lev} levels shrink {:?} to {n1}x{n2}, below {MIN_LEVEL_SIZE}",
            reference.shape()
        )));
    }
    let mut levels = vec![Level {
        reference: reference.clone(),
        op: op.box_clone(),
        data: data.clone(),
    }];
    for _ in 0..lev {
        let last = levels.last().unwrap();
        let (op, data) = last.op.coarsen(&last.data)?;
        levels.push(Level {
            reference: gaussian_downsample(&last.reference)?,
            op,
            data,
        });
    }
    Ok(LevelStack { levels })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Number of coarsenings.
    pub lev: usize,
    /// Weights on the coarsest level; deformation weights shrink by `anneal`
    /// per finer level.
    pub energy: EnergyParams,
    pub reg: RegParams,
    pub pd: PdParams,
    pub inner: InnerParams,
    /// Frames inserted when entering level `l` (indexed by level).
    pub grow: Vec<usize>,
    pub outer_iters: usize,
    pub outer_tol: f64,
    pub anneal: f64,
}

impl RunConfig {
    /// Defaults for `lev` coarsenings: two frames on the first refined level,
    /// one on the next, none afterwards.
    pub fn new(lev: usize, energy: EnergyParams) -> Self {
        let mut grow = vec![0; lev + 1];
        if lev >= 1 {
            grow[lev - 1] = 2;
        }
        if lev >= 2 {
            grow[lev - 2] = 1;
        }
        Self {
            lev,
            energy,
            reg: RegParams::default(),
            pd: PdParams::default(),
            inner: InnerParams::default(),
            grow,
            outer_iters: 5,
            outer_tol: 1e-4,
            anneal: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lev == 0 {
            return Err(Error::Param("at least one coarsening level is required".into()));
        }
        if self.grow.len() != self.lev + 1 {
            return Err(Error::Param(format!(
                "growth schedule needs {} entries, got {}",
                self.lev + 1,
                self.grow.len()
            )));
        }
        if !(self.anneal > 0.0) || self.outer_iters == 0 {
            return Err(Error::Param("anneal and outer_iters must be positive".into()));
        }
        self.reg.validate()?;
        let mut e = self.energy.clone();
        e.steps = 1;
        e.validate()
    }

    /// Path length `K` on every level, finest first. The coarsest level holds
    /// a single registration.
    pub fn path_lengths(&self) -> Vec<usize> {
        let mut out = vec![0; self.lev + 1];
        out[self.lev] = 1;
        let mut k = self.grow[self.lev - 1].max(1);
        out[self.lev - 1] = k;
        for l in (0..self.lev - 1).rev() {
            k *= self.grow[l] + 1;
            out[l] = k;
        }
        out
    }

    /// Energy weights used on level `l`.
    pub fn energy_at(&self, l: usize, steps: usize) -> EnergyParams {
        let mut e = self.energy.clone();
        e.scale_regularization(self.anneal.powi((self.lev - l) as i32));
        e.steps = steps;
        e
    }
}

/// L2-TV reconstruction on the coarsest level and its registration onto the
/// coarsest reference.
pub fn init_coarse(stack: &LevelStack, cfg: &RunConfig) -> Result<(Image, DisplacementField)> {
    let level = &stack.levels[stack.coarsest()];
    let (n1, n2) = level.reference.shape();
    let recon = solve_l2tv(&*level.op, &level.data, cfg.energy.alpha, &Image::zeros(n1, n2), &cfg.pd)?.image;
    let params = cfg.energy_at(stack.coarsest(), 1);
    let reg = register(&recon, &level.reference, &DisplacementField::zeros(n1, n2), &params, &cfg.reg)?;
    Ok((recon, reg.field))
}

/// `R(x + s Pv(x))`.
fn pull(reference: &Image, pv: &CellVectorField, s: f64) -> Image {
    let (n1, n2) = reference.shape();
    let id = CellVectorField::identity(n1, n2);
    let points = CellVectorField {
        u1: &id.u1 + &(&pv.u1 * s),
        u2: &id.u2 + &(&pv.u2 * s),
    };
    sample(reference, &points, crate::grid::Interp::Bilinear)
}

/// Path of `steps` steps ending in `reference`, with
/// `frames[j] = R(x + (steps - j) / steps * Pv(x))`; each step field is `v / steps`.
pub fn seed_path(reference: &Image, v: &DisplacementField, steps: usize) -> Result<(ImagePath, DeformationPath)> {
    if steps == 0 {
        return Err(Error::Param("seeding needs at least one step".into()));
    }
    let pv = stagger_average(v);
    let frames = (0..steps).map(|j| pull(reference, &pv, (steps - j) as f64 / steps as f64)).collect();
    let fields = DeformationPath::new(vec![v.scaled(1.0 / steps as f64); steps])?;
    Ok((ImagePath::new(frames, reference.clone())?, fields))
}

/// One row per outer iteration (iteration 0 is the state entering a level).
#[derive(Clone, Debug, PartialEq)]
pub struct RunLogRow {
    pub level: usize,
    pub outer: usize,
    pub steps: usize,
    pub objective: f64,
    /// Step length of the image update line search.
    pub image_step: f64,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub images: ImagePath,
    pub fields: DeformationPath,
    pub log: Vec<RunLogRow>,
    /// Reconstruction `I_0` at the end of each level, coarsest first.
    pub snapshots: Vec<(usize, Image)>,
}

pub fn write_run_log_csv(log: &[RunLogRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "level,outer,steps,objective,image_step,ssim,psnr")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.12e}"));
    for r in log {
        writeln!(
            out,
            "{},{},{},{:.12e},{:.6e},{},{}",
            r.level,
            r.outer,
            r.steps,
            r.objective,
            r.image_step,
            opt(r.ssim),
            opt(r.psnr)
        )?;
    }
    Ok(())
}

pub(crate) fn check_finite(images: &ImagePath, fields: &DeformationPath, level: usize, outer: usize) -> Result<()> {
    if let Some(k) = images.frames().iter().position(|f| !f.is_finite()) {
        return Err(Error::NonFinite(format!("frame {k} on level {level}, iteration {outer}")));
    }
    if let Some(k) = fields.steps().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("deformation {k} on level {level}, iteration {outer}")));
    }
    Ok(())
}

/// Exact minimization over `t in [0, 1]` of the objective along
/// `I_old + t (I_new - I_old)` for fixed deformations. With `first_only`, only
/// `I_0` moves. The objective is convex in the images, so golden-section
/// search applies; `t = 0` is kept unless it is beaten. Returns the path, the
/// step and the objective change.
fn image_line_search(
    old: &ImagePath,
    new: &ImagePath,
    fields: &DeformationPath,
    level: &Level,
    params: &EnergyParams,
    first_only: bool,
) -> Result<(ImagePath, f64, f64)> {
    let k_total = old.steps();
    let delta: Vec<ndarray::Array2<f64>> = (0..=k_total)
        .map(|k| {
            if first_only && k > 0 {
                ndarray::Array2::zeros(old.first().shape())
            } else {
                new.frame(k).data() - old.frame(k).data()
            }
        })
        .collect();
    // quadratic part: c0 + c1 t + c2 t^2
    let (mut c1, mut c2) = (0.0, 0.0);
    let dot = |a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>| -> f64 { ndarray::Zip::from(a).and(b).fold(0.0, |s, x, y| s + x * y) };
    let r0 = level.op.forward(old.first().data()) - &level.data.values;
    let ad = level.op.forward(&delta[0]);
    c1 += dot(&r0, &ad);
    c2 += 0.5 * dot(&ad, &ad);
    for (k, v) in fields.steps().iter().enumerate() {
        let r = warp(old.frame(k), v, params.interp)?.into_data() - old.frame(k + 1).data();
        let d = warp(&Image::wrap(delta[k].clone()), v, params.interp)?.into_data() - &delta[k + 1];
        c1 += params.beta * 2.0 * dot(&r, &d);
        c2 += params.beta * dot(&d, &d);
    }
    let at = |t: f64| {
        let x = Image::wrap(old.first().data() + &(&delta[0] * t));
        c1 * t + c2 * t * t + params.alpha * tv_value(&x)
    };
    let base = params.alpha * tv_value(old.first());
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let (mut x1, mut x2) = (b - gr * (b - a), a + gr * (b - a));
    let (mut f1, mut f2) = (at(x1), at(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = at(x2);
        }
    }
    let mut best = (0.0, base);
    for t in [1.0, 0.5 * (a + b)] {
        let f = at(t);
        if f < best.1 {
            best = (t, f);
        }
    }
    let t = best.0;
    if t == 0.0 {
        return Ok((old.clone(), 0.0, 0.0));
    }
    let free = (0..k_total).map(|k| Image::new(old.frame(k).data() + &(&delta[k] * t))).collect::<Result<_>>()?;
    Ok((ImagePath::new(free, old.reference().clone())?, t, best.1 - base))
}

/// Minimizes the matching terms over the interior frames for fixed end frames
/// and deformations: conjugate gradients on a convex quadratic, so the chain
/// energy never increases.
pub(crate) fn refine_interior(
    images: &ImagePath,
    fields: &DeformationPath,
    params: &EnergyParams,
    iters: usize,
) -> Result<ImagePath> {
    type A = ndarray::Array2<f64>;
    let k_total = images.steps();
    if k_total < 2 || iters == 0 {
        return Ok(images.clone());
    }
    let scheme = params.interp;
    let steps = fields.steps();
    let w = |x: &A, k: usize| -> Result<A> { Ok(warp(&Image::wrap(x.clone()), &steps[k], scheme)?.into_data()) };
    let wt = |x: &A, k: usize| warp_adjoint(x, &steps[k], scheme);
    let dot = |a: &[A], b: &[A]| -> f64 {
        a.iter().zip(b).map(|(x, y)| ndarray::Zip::from(x).and(y).fold(0.0, |s, p, q| s + p * q)).sum()
    };
    // gradient (up to the factor 2 beta) of the chain in the interior frames of `full`
    let chain_grad = |full: &[A]| -> Result<Vec<A>> {
        let e: Vec<A> = (0..k_total).map(|k| Ok(w(&full[k], k)? - &full[k + 1])).collect::<Result<_>>()?;
        (1..k_total).map(|j| Ok(wt(&e[j], j)? - &e[j - 1])).collect()
    };
    let (n1, n2) = images.first().shape();
    let zero = A::zeros((n1, n2));
    let hessian = |d: &[A]| -> Result<Vec<A>> {
        let mut full = Vec::with_capacity(k_total + 1);
        full.push(zero.clone());
        full.extend(d.iter().cloned());
        full.push(zero.clone());
        chain_grad(&full)
    };

    let mut full: Vec<A> = images.frames().iter().map(|f| f.data().clone()).collect();
    let mut r: Vec<A> = chain_grad(&full)?.into_iter().map(|g| -g).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = 1e-20 * rr.max(f64::MIN_POSITIVE);
    for _ in 0..iters {
        if rr <= stop {
            break;
        }
        let hp = hessian(&p)?;
        let curv = dot(&p, &hp);
        if !(curv > 0.0) {
            break;
        }
        let a = rr / curv;
        for m in 0..k_total - 1 {
            full[m + 1].scaled_add(a, &p[m]);
            r[m].scaled_add(-a, &hp[m]);
        }
        let rr_new = dot(&r, &r);
        let b = rr_new / rr;
        for m in 0..k_total - 1 {
            p[m] = &r[m] + &(&p[m] * b);
        }
        rr = rr_new;
    }
    full.pop();
    let free = full.into_iter().map(Image::new).collect::<Result<_>>()?;
    ImagePath::new(free, images.reference().clone())
}

/// `x -> (A x, s warp(x, v))` as one flattened row.
#[derive(Clone, Debug)]
struct FirstFrameOp {
    op: Box<dyn MeasurementOp>,
    field: DisplacementField,
    scale: f64,
    interp: crate::grid::Interp,
}

impl MeasurementOp for FirstFrameOp {
    fn input_shape(&self) -> (usize, usize) {
        self.op.input_shape()
    }

    fn output_shape(&self) -> (usize, usize) {
        let (m1, m2) = self.op.output_shape();
        let (n1, n2) = self.op.input_shape();
        (1, m1 * m2 + n1 * n2)
    }

    fn forward(&self, x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
        let ax = self.op.forward(x);
        let wx = warp(&Image::wrap(x.clone()), &self.field, self.interp).expect("field matches the grid");
        let flat: Vec<f64> = ax.iter().copied().chain(wx.data().iter().map(|v| v * self.scale)).collect();
        ndarray::Array2::from_shape_vec(self.output_shape(), flat).expect("row length")
    }

    fn backward(&self, y: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
        let (m1, m2) = self.op.output_shape();
        let (n1, n2) = self.op.input_shape();
        let y: Vec<f64> = y.iter().copied().collect();
        let ya = ndarray::Array2::from_shape_vec((m1, m2), y[..m1 * m2].to_vec()).expect("data block");
        let yw = ndarray::Array2::from_shape_vec((n1, n2), y[m1 * m2..].to_vec()).expect("warp block");
        let mut out = self.op.backward(&ya);
        out.scaled_add(self.scale, &warp_adjoint(&yw, &self.field, self.interp).expect("field matches the grid"));
        out
    }

    fn geometry(&self) -> Geometry {
        self.op.geometry()
    }

    fn coarsen(&self, _: &MeasurementData) -> Result<(Box<dyn MeasurementOp>, MeasurementData)> {
        Err(Error::Param("the first-frame operator is level-local".into()))
    }

    fn box_clone(&self) -> Box<dyn MeasurementOp> {
        Box::new(self.clone())
    }
}

/// Exact minimization over `I_0` with the other frames and the deformations
/// fixed: `1/2 |A I_0 - B|^2 + beta |warp(I_0, v_0) - I_1|^2 + alpha TV(I_0)`.
fn first_frame_step(
    images: &ImagePath,
    fields: &DeformationPath,
    level: &Level,
    params: &EnergyParams,
    pd: &PdParams,
    dual: &mut Option<PdDual>,
) -> Result<ImagePath> {
    let scale = (2.0 * params.beta).sqrt();
    let op = FirstFrameOp {
        op: level.op.clone(),
        field: fields.steps()[0].clone(),
        scale,
        interp: params.interp,
    };
    let flat: Vec<f64> =
        level.data.values.iter().copied().chain(images.frame(1).data().iter().map(|v| v * scale)).collect();
    let data = MeasurementData::new(
        ndarray::Array2::from_shape_vec(op.output_shape(), flat).expect("row length"),
        level.data.geometry.clone(),
    )?;
    let pd = PdParams { steps: None, ..pd.clone() }.prepared(&op)?;
    let sol = solve_l2tv_warm(&op, &data, params.alpha, images.first(), &pd, dual.as_ref())?;
    *dual = Some(sol.dual);
    if sol.energy >= sol.initial_energy {
        return Ok(images.clone());
    }
    let mut out = images.clone();
    out.set_frame(0, sol.image)?;
    Ok(out)
}

pub(crate) fn metrics_row(truth: Option<&Image>, recon: &Image) -> (Option<f64>, Option<f64>) {
    match truth {
        Some(t) if t.shape() == recon.shape() => (ssim(t, recon).ok(), psnr(t, recon, 1.0).ok()),
        _ => (None, None),
    }
}

/// Registers every step of the path, in parallel where threads exist.
fn register_steps(
    images: &ImagePath,
    fields: &DeformationPath,
    params: &EnergyParams,
    reg: &RegParams,
) -> Result<Vec<DisplacementField>> {
    let one = |k: usize, v: &DisplacementField| register(images.frame(k), images.frame(k + 1), v, params, reg).map(|r| r.field);
    if cfg!(target_family = "wasm") {
        return fields.steps().iter().enumerate().map(|(k, v)| one(k, v)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = fields.steps().iter().enumerate().map(|(k, v)| scope.spawn(move || one(k, v))).collect();
        handles.into_iter().map(|h| h.join().expect("registration thread panicked")).collect()
    })
}

/// Runs the outer alternation on one level; returns the updated state.
#[allow(clippy::too_many_arguments)]
fn optimize_level(
    l: usize,
    level: &Level,
    mut images: ImagePath,
    mut fields: DeformationPath,
    params: &EnergyParams,
    cfg: &RunConfig,
    pd: &PdParams,
    truth: Option<&Image>,
    log: &mut Vec<RunLogRow>,
) -> Result<(ImagePath, DeformationPath)> {
    let objective = |i: &ImagePath, v: &DeformationPath| full_objective(i, v, &*level.op, &level.data, params);
    let mut current = objective(&images, &fields)?;
    let (s, p) = metrics_row(truth, images.first());
    log.push(RunLogRow {
        level: l,
        outer: 0,
        steps: images.steps(),
        objective: current,
        image_step: 0.0,
        ssim: s,
        psnr: p,
    });
    let mut dual = None;
    let mut first_dual = None;
    for outer in 1..=cfg.outer_iters {
        let regs = register_steps(&images, &fields, params, &cfg.reg)?;
        fields = DeformationPath::new(regs)?;

        let mut sub = substitute(&images, &fields, params.interp)?;
        inner_alternation_warm(
            &mut sub,
            &*level.op,
            &level.data,
            params.alpha,
            params.beta,
            pd,
            &cfg.inner,
            &mut dual,
        )?;
        // the optimal interior is linear in I_0, so refining both ends of the
        // search line keeps the line close to the reduced objective
        let candidate = refine_interior(&desubstitute(&sub)?, &fields, params, INTERIOR_CG_ITERS)?;
        let joint = image_line_search(&images, &candidate, &fields, level, params, false)?;
        let first = image_line_search(&images, &candidate, &fields, level, params, true)?;
        let (next, t, _) = if first.2 < joint.2 { first } else { joint };
        images = refine_interior(&next, &fields, params, INTERIOR_CG_ITERS)?;
        images = first_frame_step(&images, &fields, level, params, pd, &mut first_dual)?;
        images = refine_interior(&images, &fields, params, INTERIOR_CG_ITERS)?;
        check_finite(&images, &fields, l, outer)?;

        let value = objective(&images, &fields)?;
        let (s, p) = metrics_row(truth, images.first());
        log.push(RunLogRow {
            level: l,
            outer,
            steps: images.steps(),
            objective: value,
            image_step: t,
            ssim: s,
            psnr: p,
        });
        let decrease = current - value;
        current = value;
        if decrease <= cfg.outer_tol * value.abs() {
            break;
        }
    }
    Ok((images, fields))
}

/// Prolongs a path to the next finer grid and inserts `grow` frames between
/// every pair of neighbours.
fn refine_path(
    images: &ImagePath,
    fields: &DeformationPath,
    reference: &Image,
    grow: usize,
) -> Result<(ImagePath, DeformationPath)> {
    let shape = reference.shape();
    let frames: Vec<Image> = images.frames().iter().map(|f| upsample_image(f, shape)).collect::<Result<_>>()?;
    let steps: Vec<DisplacementField> =
        fields.steps().iter().map(|v| upsample_displacement(v, shape)).collect::<Result<_>>()?;
    let k_total = steps.len();
    let mut new_frames = Vec::with_capacity(k_total * (grow + 1));
    let mut new_steps = Vec::with_capacity(k_total * (grow + 1));
    for k in 0..k_total {
        let end = if k + 1 == k_total { reference } else { &frames[k + 1] };
        let (seeded, seeded_fields) = seed_path(end, &steps[k], grow + 1)?;
        new_frames.push(frames[k].clone());
        new_frames.extend(seeded.frames()[1..=grow].iter().cloned());
        new_steps.extend(seeded_fields.into_steps());
    }
    Ok((ImagePath::new(new_frames, reference.clone())?, DeformationPath::new(new_steps)?))
}

/// Per-level optimizer: receives the level index, the level, the starting
/// path, the level weights and prepared solver settings, and appends to the log.
pub(crate) type LevelOptimizer<'a> = dyn FnMut(
        usize,
        &Level,
        ImagePath,
        DeformationPath,
        &EnergyParams,
        &PdParams,
        Option<&Image>,
        &mut Vec<RunLogRow>,
    ) -> Result<(ImagePath, DeformationPath)>
    + 'a;

/// Builds the pyramid, initializes on the coarsest level and hands every finer
/// level to `optimize`, prolonging the path in between.
pub(crate) fn run_levels(
    reference: &Image,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    cfg: &RunConfig,
    truth: Option<&Image>,
    optimize: &mut LevelOptimizer,
) -> Result<RunResult> {
    cfg.validate()?;
    let stack = build_stack(reference, op, data, cfg.lev)?;
    let mut truths = vec![truth.cloned()];
    for l in 1..=cfg.lev {
        let coarser = truths[l - 1].as_ref().map(gaussian_downsample).transpose()?;
        truths.push(coarser);
    }
    let lengths = cfg.path_lengths();
    let (recon, v) = init_coarse(&stack, cfg)?;
    let mut snapshots = vec![(cfg.lev, recon.clone())];
    let mut log = Vec::new();

    let mut state: Option<(ImagePath, DeformationPath)> = None;
    for l in (0..cfg.lev).rev() {
        let level = &stack.levels[l];
        let shape = level.reference.shape();
        let (images, fields) = match state.take() {
            None => {
                let v = upsample_displacement(&v, shape)?;
                let (seeded, fields) = seed_path(&level.reference, &v, lengths[l])?;
                let mut free = seeded.into_frames();
                free.pop();
                free[0] = upsample_image(&recon, shape)?;
                (ImagePath::new(free, level.reference.clone())?, fields)
            }
            Some((images, fields)) => refine_path(&images, &fields, &level.reference, cfg.grow[l])?,
        };
        debug_assert_eq!(images.steps(), lengths[l]);
        let params = cfg.energy_at(l, images.steps());
        let pd = cfg.pd.prepared(&*level.op)?;
        let (images, fields) = optimize(l, level, images, fields, &params, &pd, truths[l].as_ref(), &mut log)?;
        snapshots.push((l, images.first().clone()));
        state = Some((images, fields));
    }
    let (images, fields) = state.expect("at least one level is optimized");
    Ok(RunResult {
        images,
        fields,
        log,
        snapshots,
    })
}

/// Full coarse-to-fine reconstruction. `truth`, when given on the finest
/// grid, adds quality metrics to the log.
pub fn run_tdm_inv(
    reference: &Image,
    op: &dyn MeasurementOp,
    data: &MeasurementData,
    cfg: &RunConfig,
    truth: Option<&Image>,
) -> Result<RunResult> {
    run_levels(reference, op, data, cfg, truth, &mut |l, level, images, fields, params, pd, truth, log| {
        optimize_level(l, level, images, fields, params, cfg, pd, truth, log)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{BlockAverage, ScaledIdentity};
    use ndarray::Array2;

    #[test]
    fn stack_shapes() {
        let r = Image::constant(64, 64, 0.5);
        let op = BlockAverage::new((64, 64), 4).unwrap();
        let b = op.apply(&r).unwrap();
        let s = build_stack(&r, &op, &b, 3).unwrap();
        let shapes: Vec<_> = s.levels.iter().map(|l| l.reference.shape()).collect();
        assert_eq!(shapes, vec![(64, 64), (32, 32), (16, 16), (8, 8)]);
        assert_eq!(s.levels[1].data.values, b.values);
        assert_eq!(s.levels[2].data.values, b.values);
        assert!(build_stack(&r, &op, &b, 4).is_err());
        let id = ScaledIdentity::identity((64, 64));
        assert_eq!(build_stack(&r, &id, &id.apply(&r).unwrap(), 1).unwrap().levels.len(), 2);
    }

    #[test]
    fn path_length_schedule() {
        let cfg = RunConfig::new(4, EnergyParams::from_reg_scale(0.1, 0.1, 0.1, 1));
        assert_eq!(cfg.grow, vec![0, 0, 1, 2, 0]);
        assert_eq!(cfg.path_lengths(), vec![4, 4, 4, 2, 1]);
        let mut cfg = cfg;
        cfg.grow = vec![1, 0, 1, 0, 0];
        assert_eq!(cfg.path_lengths(), vec![4, 2, 2, 1, 1]);
    }

    #[test]
    fn seeding_zero_field_repeats_reference() {
        let r = Image::from_fn(9, 9, |(i, j)| (i + 2 * j) as f64);
        let (p, v) = seed_path(&r, &DisplacementField::zeros(9, 9), 3).unwrap();
        assert!(p.frames().iter().all(|f| f == &r));
        assert_eq!(v.len(), 3);
        assert!(seed_path(&r, &DisplacementField::zeros(9, 9), 0).is_err());
    }

    #[test]
    fn seeding_integer_shift() {
        let n = 12;
        let r = Image::from_fn(n, n, |(i, j)| (i * n + j) as f64);
        // Pv = 2 on the interior rows
        let mut v1 = Array2::zeros((n - 1, n));
        v1.slice_mut(ndarray::s![1..n - 2, ..]).fill(2.0);
        let v = DisplacementField::new(v1, Array2::zeros((n, n - 1))).unwrap();
        let (p, _) = seed_path(&r, &v, 2).unwrap();
        for i in 2..n - 4 {
            for j in 0..n {
                assert_eq!(p.frame(0).get(i, j), r.get(i + 2, j));
                assert_eq!(p.frame(1).get(i, j), r.get(i + 1, j));
            }
        }
    }
}
