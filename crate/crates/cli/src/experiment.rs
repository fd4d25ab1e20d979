//! Forward simulation, reconstruction with TDM-INV and the baselines, scoring.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use tdm_core::convex::{solve_l2tv, PdParams};
use tdm_core::grid::upsample_cubic;
use tdm_core::io::{read_image, read_measurement};
use tdm_core::metrics::{psnr, region_mse, ssim};
use tdm_core::multilevel::{run_tdm_inv, RunResult};
use tdm_core::operators::{add_gaussian_noise, BlockAverage, Geometry, MeasurementData, MeasurementOp, Radon, ScaledIdentity};
use tdm_core::palm::{run_palm, PalmParams};
use tdm_core::phantom::{gen_phantom, Phantom};
use tdm_core::Image;

use crate::spec::{ExperimentSpec, Solver, Source, Task};

pub const TDM: &str = "tdm-inv";
pub const TDM_PALM: &str = "tdm-inv-palm";
pub const L2TV: &str = "l2tv";
pub const BICUBIC: &str = "bicubic";

/// Image pair, operator and data of one experiment.
#[derive(Clone, Debug)]
pub struct Problem {
    pub phantom: Phantom,
    pub op: Box<dyn MeasurementOp>,
    /// Noise-free data, absent when the data was loaded from a file.
    pub clean: Option<MeasurementData>,
    pub data: MeasurementData,
}

pub fn load_pair(spec: &ExperimentSpec) -> Result<Phantom> {
    match spec.phantom {
        Source::Generated(kind) => Ok(gen_phantom(kind, spec.size, spec.phantom_seed, &spec.phantom_options(kind))?),
        Source::Files => {
            let read = |p: &Option<std::path::PathBuf>, what: &str| -> Result<Image> {
                let p = p.as_ref().with_context(|| format!("{what} missing"))?;
                read_image(p).with_context(|| format!("reading {}", p.display()))
            };
            let reference = read(&spec.reference_file, "reference_file")?;
            let target = read(&spec.target_file, "target_file")?;
            if reference.shape() != target.shape() {
                bail!("reference {:?} and target {:?} differ in shape", reference.shape(), target.shape());
            }
            Ok(Phantom {
                reference,
                target,
                detail: None,
            })
        }
    }
}

pub fn build_operator(spec: &ExperimentSpec, grid: (usize, usize)) -> Result<Box<dyn MeasurementOp>> {
    Ok(match spec.task {
        Task::Ct => Box::new(Radon::new(grid, spec.angle_list(), spec.rays)?),
        Task::Superres => Box::new(BlockAverage::new(grid, spec.factor)?),
        Task::Denoise => Box::new(ScaledIdentity::identity(grid)),
    })
}

/// Builds the pair and the data: simulated from the target, or read from
/// `data_file`.
pub fn simulate(spec: &ExperimentSpec) -> Result<Problem> {
    spec.validate()?;
    let phantom = load_pair(spec)?;
    let grid = phantom.reference.shape();
    if let Some(path) = &spec.data_file {
        let data = read_measurement(path).with_context(|| format!("reading {}", path.display()))?;
        if data.geometry.grid() != grid {
            bail!("data grid {:?} does not match the images {:?}", data.geometry.grid(), grid);
        }
        let op = data.geometry.build()?;
        return Ok(Problem {
            phantom,
            op,
            clean: None,
            data,
        });
    }
    let op = build_operator(spec, grid)?;
    let clean = op.apply(&phantom.target)?;
    let data = add_gaussian_noise(&clean, spec.noise, spec.noise_seed)?;
    Ok(Problem {
        phantom,
        op,
        clean: Some(clean),
        data,
    })
}

/// One reconstruction and its scores against the target.
#[derive(Clone, Debug)]
pub struct Scored {
    pub method: String,
    pub image: Image,
    /// TV weight of the L2-TV baseline.
    pub alpha: Option<f64>,
    pub ssim: f64,
    pub psnr: f64,
    /// Mean squared error over the added structure, when the phantom has one.
    pub region_mse: Option<f64>,
    pub runtime_s: f64,
}

pub fn score(problem: &Problem, method: &str, image: Image, alpha: Option<f64>, runtime_s: f64) -> Result<Scored> {
    let truth = &problem.phantom.target;
    let region_mse = match &problem.phantom.detail {
        Some(r) => Some(region_mse(truth, &image, r.rows.clone(), r.cols.clone())?),
        None => None,
    };
    Ok(Scored {
        method: method.to_string(),
        ssim: ssim(truth, &image)?,
        psnr: psnr(truth, &image, 1.0)?,
        image,
        alpha,
        region_mse,
        runtime_s,
    })
}

/// TDM-INV with the solver chosen in the spec.
pub fn run_tdm(spec: &ExperimentSpec, problem: &Problem) -> Result<(RunResult, Scored)> {
    let cfg = spec.run_config();
    let truth = Some(&problem.phantom.target);
    let start = Instant::now();
    let (run, method) = match spec.solver {
        Solver::Alternating => (run_tdm_inv(&problem.phantom.reference, &*problem.op, &problem.data, &cfg, truth)?, TDM),
        Solver::Palm => {
            let mut palm = PalmParams {
                max_iters: spec.palm_iters,
                ..PalmParams::default()
            };
            palm.pd.max_iters = spec.pd_iters;
            let run = run_palm(&problem.phantom.reference, &*problem.op, &problem.data, &cfg, &palm, spec.palm_multilevel, truth)?;
            (run, TDM_PALM)
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let scored = score(problem, method, run.images.first().clone(), None, elapsed)?;
    Ok((run, scored))
}

/// The low-resolution data as an image, upsampled with Catmull-Rom.
fn bicubic_image(problem: &Problem) -> Result<Image> {
    let Geometry::Downsample { factor, .. } = problem.data.geometry else {
        bail!("bicubic upsampling needs downsampled data");
    };
    Ok(upsample_cubic(&Image::new(problem.data.values.clone())?, factor)?)
}

/// L2-TV solved to `l2tv_tol` for every weight in `l2tv_alphas`; the one with
/// the best SSIM (then PSNR) is kept.
pub fn run_l2tv(spec: &ExperimentSpec, problem: &Problem) -> Result<Scored> {
    let alphas = if spec.l2tv_alphas.is_empty() {
        vec![spec.alpha]
    } else {
        spec.l2tv_alphas.clone()
    };
    let (n1, n2) = problem.op.input_shape();
    let x0 = match problem.data.geometry {
        Geometry::Downsample { .. } => bicubic_image(problem)?,
        _ => Image::zeros(n1, n2),
    };
    let pd = PdParams {
        tol: spec.l2tv_tol,
        max_iters: spec.l2tv_iters,
        ..PdParams::default()
    }
    .prepared(&*problem.op)?;
    let start = Instant::now();
    let mut best: Option<Scored> = None;
    for alpha in alphas {
        let sol = solve_l2tv(&*problem.op, &problem.data, alpha, &x0, &pd)?;
        let s = score(problem, L2TV, sol.image, Some(alpha), 0.0)?;
        if best.as_ref().is_none_or(|b| (s.ssim, s.psnr) > (b.ssim, b.psnr)) {
            best = Some(s);
        }
    }
    let mut best = best.expect("at least one weight");
    best.runtime_s = start.elapsed().as_secs_f64();
    Ok(best)
}

pub fn run_bicubic(problem: &Problem) -> Result<Scored> {
    let start = Instant::now();
    let image = bicubic_image(problem)?;
    score(problem, BICUBIC, image, None, start.elapsed().as_secs_f64())
}

#[derive(Clone, Debug)]
pub struct Report {
    pub config_hash: String,
    pub problem: Problem,
    pub results: Vec<Scored>,
    /// Full TDM-INV result when it was run.
    pub run: Option<RunResult>,
}

impl Report {
    pub fn get(&self, method: &str) -> Option<&Scored> {
        self.results.iter().find(|r| r.method == method)
    }

    /// `method,alpha,ssim,psnr,region_mse,runtime_s,config_hash`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "alpha", "ssim", "psnr", "region_mse", "runtime_s", "config_hash"])?;
        for r in &self.results {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            w.write_record([
                r.method.clone(),
                opt(r.alpha),
                r.ssim.to_string(),
                r.psnr.to_string(),
                opt(r.region_mse),
                format!("{:.3}", r.runtime_s),
                self.config_hash.clone(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    /// Objective log of the TDM-INV run as CSV.
    pub fn log_csv(&self) -> Result<Option<String>> {
        let Some(run) = &self.run else { return Ok(None) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["level", "outer", "steps", "objective", "image_step", "ssim", "psnr"])?;
        for row in &run.log {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            w.write_record([
                row.level.to_string(),
                row.outer.to_string(),
                row.steps.to_string(),
                row.objective.to_string(),
                row.image_step.to_string(),
                opt(row.ssim),
                opt(row.psnr),
            ])?;
        }
        Ok(Some(String::from_utf8(w.into_inner()?)?))
    }
}

/// Simulates the data, runs TDM-INV (when `with_tdm`) and the baselines the
/// spec enables, all on the same data realization.
pub fn run_experiment(spec: &ExperimentSpec, with_tdm: bool) -> Result<Report> {
    let problem = simulate(spec)?;
    let mut results = Vec::new();
    let mut run = None;
    if with_tdm {
        let (r, s) = run_tdm(spec, &problem)?;
        results.push(s);
        run = Some(r);
    }
    if spec.l2tv {
        results.push(run_l2tv(spec, &problem)?);
    }
    if spec.bicubic {
        results.push(run_bicubic(&problem)?);
    }
    Ok(Report {
        config_hash: spec.config_hash(),
        problem,
        results,
        run,
    })
}
