//! Experiment description as flat `key = value` text.
//!
//! One key per line, `#` starts a comment, unknown or repeated keys are
//! errors. [`ExperimentSpec::to_text`] writes every key in a fixed order, so
//! the echo of a run parses back to the same spec.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use tdm_core::energy::EnergyParams;
use tdm_core::multilevel::RunConfig;
use tdm_core::phantom::{PhantomKind, PhantomOptions};
use tdm_core::Interp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Ct,
    Superres,
    Denoise,
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ct" => Ok(Self::Ct),
            "superres" => Ok(Self::Superres),
            "denoise" => Ok(Self::Denoise),
            _ => bail!("unknown task {s:?} (expected ct, superres or denoise)"),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ct => "ct",
            Self::Superres => "superres",
            Self::Denoise => "denoise",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Alternating,
    Palm,
}

impl FromStr for Solver {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(Self::Alternating),
            "palm" => Ok(Self::Palm),
            _ => bail!("unknown solver {s:?} (expected alternating or palm)"),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alternating => "alternating",
            Self::Palm => "palm",
        })
    }
}

/// Where the image pair comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Generated(PhantomKind),
    /// `reference_file` and `target_file`.
    Files,
}

impl FromStr for Source {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "files" {
            return Ok(Self::Files);
        }
        Ok(Self::Generated(s.parse()?))
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Generated(kind) => kind.fmt(f),
            Self::Files => f.write_str("files"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub task: Task,
    pub phantom: Source,
    pub reference_file: Option<PathBuf>,
    pub target_file: Option<PathBuf>,
    /// Measured data (PFM with geometry sidecar) used instead of simulating.
    pub data_file: Option<PathBuf>,
    pub size: usize,
    pub phantom_seed: u64,
    pub deform: bool,
    /// Added structure in the target; the phantom kind decides when unset.
    pub detail: Option<bool>,
    pub angles: usize,
    /// Angles are equispaced over `[0, angle_span)` degrees.
    pub angle_span: f64,
    pub rays: Option<usize>,
    pub factor: usize,
    pub noise: f64,
    pub noise_seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub reg_scale: f64,
    pub levels: usize,
    pub outer_iters: usize,
    pub outer_tol: f64,
    pub pd_iters: usize,
    pub interp: Interp,
    pub anneal: f64,
    pub solver: Solver,
    pub palm_iters: usize,
    pub palm_multilevel: bool,
    pub l2tv: bool,
    pub bicubic: bool,
    /// TV weights tried by the L2-TV baseline (best SSIM kept); empty means `alpha`.
    pub l2tv_alphas: Vec<f64>,
    pub l2tv_tol: f64,
    pub l2tv_iters: usize,
    pub output: PathBuf,
}

/// Every key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("task", "ct, superres or denoise"),
    ("phantom", "ellipses, triangles-to-stars, brain-like or files"),
    ("reference_file", "reference image (PGM or PFM) when phantom = files"),
    ("target_file", "ground truth (PGM or PFM) when phantom = files"),
    ("data_file", "measured data (PFM + .geom sidecar) instead of simulation"),
    ("size", "phantom edge length in pixels"),
    ("phantom_seed", "phantom RNG seed"),
    ("deform", "deform the target (true/false)"),
    ("detail", "add a structure absent from the reference (true/false/auto)"),
    ("angles", "number of projection angles (ct)"),
    ("angle_span", "angles are equispaced over [0, angle_span) degrees (ct)"),
    ("rays", "detector cells per angle, auto for the default (ct)"),
    ("factor", "downsampling factor (superres)"),
    ("noise", "RMS-relative Gaussian noise level"),
    ("noise_seed", "noise RNG seed"),
    ("alpha", "TV weight"),
    ("beta", "path weight"),
    ("reg_scale", "deformation regularization scale"),
    ("levels", "number of coarsenings"),
    ("outer_iters", "outer iterations per level"),
    ("outer_tol", "relative objective decrease that ends a level"),
    ("pd_iters", "primal-dual iteration cap of the inner solves"),
    ("interp", "bilinear or bicubic"),
    ("anneal", "deformation weight factor per finer level"),
    ("solver", "alternating or palm"),
    ("palm_iters", "PALM iterations per level"),
    ("palm_multilevel", "run PALM coarse to fine (true/false)"),
    ("l2tv", "run the L2-TV baseline (true/false)"),
    ("bicubic", "run the bicubic baseline, superres only (true/false)"),
    ("l2tv_alphas", "comma-separated TV weights for the L2-TV baseline, empty for alpha"),
    ("l2tv_tol", "relative tolerance of the L2-TV baseline"),
    ("l2tv_iters", "iteration cap of the L2-TV baseline"),
    ("output", "output directory (relative paths go under TDM_OUTPUT_ROOT when set)"),
];

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            task: Task::Ct,
            phantom: Source::Generated(PhantomKind::Ellipses),
            reference_file: None,
            target_file: None,
            data_file: None,
            size: 64,
            phantom_seed: 1,
            deform: true,
            detail: None,
            angles: 20,
            angle_span: 180.0,
            rays: None,
            factor: 4,
            noise: 0.05,
            noise_seed: 7,
            alpha: 4.0,
            beta: 80.0,
            reg_scale: 0.05,
            levels: 3,
            outer_iters: 5,
            outer_tol: 1e-4,
            pd_iters: 600,
            interp: Interp::Bilinear,
            anneal: 0.7,
            solver: Solver::Alternating,
            palm_iters: 60,
            palm_multilevel: true,
            l2tv: true,
            bicubic: false,
            l2tv_alphas: Vec::new(),
            l2tv_tol: 1e-10,
            l2tv_iters: 50000,
            output: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn optional<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show<T: fmt::Display>(value: &Option<T>, none: &str) -> String {
    value.as_ref().map_or_else(|| none.to_string(), |v| v.to_string())
}

impl ExperimentSpec {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        spec.apply_text(text)?;
        Ok(spec)
    }

    /// Applies config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", no + 1))?;
            let key = key.trim();
            if seen.contains(&key) {
                bail!("line {}: key {key:?} given twice", no + 1);
            }
            seen.push(key);
            self.set(key, value.trim()).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = parse(key, value)?,
            "phantom" => self.phantom = parse(key, value)?,
            "reference_file" => self.reference_file = optional(key, value, "")?,
            "target_file" => self.target_file = optional(key, value, "")?,
            "data_file" => self.data_file = optional(key, value, "")?,
            "size" => self.size = parse(key, value)?,
            "phantom_seed" => self.phantom_seed = parse(key, value)?,
            "deform" => self.deform = parse(key, value)?,
            "detail" => self.detail = optional(key, value, "auto")?,
            "angles" => self.angles = parse(key, value)?,
            "angle_span" => self.angle_span = parse(key, value)?,
            "rays" => self.rays = optional(key, value, "auto")?,
            "factor" => self.factor = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "noise_seed" => self.noise_seed = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "reg_scale" => self.reg_scale = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "outer_iters" => self.outer_iters = parse(key, value)?,
            "outer_tol" => self.outer_tol = parse(key, value)?,
            "pd_iters" => self.pd_iters = parse(key, value)?,
            "interp" => self.interp = parse(key, value)?,
            "anneal" => self.anneal = parse(key, value)?,
            "solver" => self.solver = parse(key, value)?,
            "palm_iters" => self.palm_iters = parse(key, value)?,
            "palm_multilevel" => self.palm_multilevel = parse(key, value)?,
            "l2tv" => self.l2tv = parse(key, value)?,
            "bicubic" => self.bicubic = parse(key, value)?,
            "l2tv_alphas" => self.l2tv_alphas = parse_list(key, value)?,
            "l2tv_tol" => self.l2tv_tol = parse(key, value)?,
            "l2tv_iters" => self.l2tv_iters = parse(key, value)?,
            "output" => self.output = parse(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    /// Current value of `key` in config syntax.
    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        Ok(match key {
            "task" => self.task.to_string(),
            "phantom" => self.phantom.to_string(),
            "reference_file" => path(&self.reference_file),
            "target_file" => path(&self.target_file),
            "data_file" => path(&self.data_file),
            "size" => self.size.to_string(),
            "phantom_seed" => self.phantom_seed.to_string(),
            "deform" => self.deform.to_string(),
            "detail" => show(&self.detail, "auto"),
            "angles" => self.angles.to_string(),
            "angle_span" => self.angle_span.to_string(),
            "rays" => show(&self.rays, "auto"),
            "factor" => self.factor.to_string(),
            "noise" => self.noise.to_string(),
            "noise_seed" => self.noise_seed.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "reg_scale" => self.reg_scale.to_string(),
            "levels" => self.levels.to_string(),
            "outer_iters" => self.outer_iters.to_string(),
            "outer_tol" => self.outer_tol.to_string(),
            "pd_iters" => self.pd_iters.to_string(),
            "interp" => self.interp.to_string(),
            "anneal" => self.anneal.to_string(),
            "solver" => self.solver.to_string(),
            "palm_iters" => self.palm_iters.to_string(),
            "palm_multilevel" => self.palm_multilevel.to_string(),
            "l2tv" => self.l2tv.to_string(),
            "bicubic" => self.bicubic.to_string(),
            "l2tv_alphas" => self.l2tv_alphas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            "l2tv_tol" => self.l2tv_tol.to_string(),
            "l2tv_iters" => self.l2tv_iters.to_string(),
            "output" => self.output.display().to_string(),
            _ => bail!("unknown key {key:?}"),
        })
    }

    /// All keys, one per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(key, _)| format!("{key} = {}\n", self.get(key).expect("listed key")))
            .collect()
    }

    /// SHA-256 of the echo without the output directory, first 16 hex digits.
    pub fn config_hash(&self) -> String {
        let text: String = self.to_text().lines().filter(|l| !l.starts_with("output ")).map(|l| format!("{l}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phantom == Source::Files && (self.reference_file.is_none() || self.target_file.is_none()) {
            bail!("phantom = files needs reference_file and target_file");
        }
        if self.phantom != Source::Files && self.size < 32 {
            bail!("generated phantoms need size >= 32, got {}", self.size);
        }
        if self.task == Task::Ct && (self.angles == 0 || !(self.angle_span > 0.0)) {
            bail!("ct needs at least one angle and a positive angle_span");
        }
        if self.task == Task::Superres && self.factor < 2 {
            bail!("superres needs factor >= 2");
        }
        if self.bicubic && self.task != Task::Superres {
            bail!("the bicubic baseline only applies to superres");
        }
        if !(self.noise >= 0.0) {
            bail!("noise must be nonnegative");
        }
        if self.l2tv_alphas.iter().any(|a| !(*a > 0.0)) {
            bail!("l2tv_alphas must be positive");
        }
        self.run_config().validate()?;
        Ok(())
    }

    pub fn phantom_options(&self, kind: PhantomKind) -> PhantomOptions {
        let mut options = PhantomOptions::for_kind(kind);
        options.deform = self.deform;
        if let Some(detail) = self.detail {
            options.detail = detail;
        }
        options
    }

    /// Energy weights with `alpha`, `beta`, `reg_scale` replaced.
    pub fn with_weights(&self, alpha: f64, beta: f64, reg_scale: f64) -> Self {
        Self {
            alpha,
            beta,
            reg_scale,
            ..self.clone()
        }
    }

    pub fn run_config(&self) -> RunConfig {
        let mut energy = EnergyParams::from_reg_scale(self.alpha, self.beta, self.reg_scale, 1);
        energy.interp = self.interp;
        let mut cfg = RunConfig::new(self.levels, energy);
        cfg.pd.max_iters = self.pd_iters;
        cfg.outer_iters = self.outer_iters;
        cfg.outer_tol = self.outer_tol;
        cfg.anneal = self.anneal;
        cfg
    }

    /// Projection angles in degrees.
    pub fn angle_list(&self) -> Vec<f64> {
        (0..self.angles).map(|i| i as f64 * self.angle_span / self.angles as f64).collect()
    }
}

/// Comma-separated floats; the empty string is the empty list.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}
