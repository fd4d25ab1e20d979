//! Browser demo: generate a phantom pair, reconstruct it from a few CT
//! projections with L2-TV and TDM-INV, and scrub through the image path.
//!
//! The exported methods are thin wrappers; the work happens in plain Rust so
//! it can be tested natively.

use tdm_core::convex::{solve_l2tv, PdParams};
use tdm_core::energy::EnergyParams;
use tdm_core::metrics::{psnr, ssim};
use tdm_core::multilevel::{run_tdm_inv, RunConfig};
use tdm_core::operators::{add_gaussian_noise, MeasurementOp, Radon};
use tdm_core::phantom::{gen_phantom, PhantomKind, PhantomOptions};
use tdm_core::{Image, ImagePath, Interp, Result};
use wasm_bindgen::prelude::*;

/// Grayscale image as RGBA bytes, values clamped to [0, 1].
pub fn to_rgba(image: &Image) -> Vec<u8> {
    image
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Reconstruction settings exposed by the page.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub angles: usize,
    /// Angles are equispaced over `[0, span)` degrees.
    pub span: f64,
    pub noise: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub l2tv: Image,
    pub path: ImagePath,
    /// SSIM and PSNR of L2-TV and TDM-INV against the target.
    pub scores: [f64; 4],
}

pub fn reconstruct(reference: &Image, target: &Image, s: &Settings) -> Result<Reconstruction> {
    let (n1, n2) = target.shape();
    let angles = (0..s.angles).map(|i| i as f64 * s.span / s.angles as f64).collect();
    let op = Radon::new((n1, n2), angles, None)?;
    let data = add_gaussian_noise(&op.apply(target)?, s.noise, 7)?;
    let pd = PdParams {
        max_iters: 3000,
        ..PdParams::default()
    };
    let l2tv = solve_l2tv(&op, &data, s.alpha, &Image::zeros(n1, n2), &pd)?.image;
    let mut energy = EnergyParams::from_reg_scale(s.alpha, s.beta, 0.05, 1);
    energy.interp = Interp::Bicubic;
    let mut cfg = RunConfig::new(2, energy);
    cfg.pd.max_iters = 600;
    cfg.outer_iters = 4;
    let run = run_tdm_inv(reference, &op, &data, &cfg, None)?;
    let tdm = run.images.first();
    let scores = [ssim(target, &l2tv)?, psnr(target, &l2tv, 1.0)?, ssim(target, tdm)?, psnr(target, tdm, 1.0)?];
    Ok(Reconstruction {
        l2tv,
        path: run.images,
        scores,
    })
}

fn js(e: tdm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    reference: Image,
    target: Image,
    recon: Option<Reconstruction>,
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is ellipses, triangles-to-stars or brain-like.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, size: usize, seed: u32) -> std::result::Result<Demo, JsError> {
        let kind: PhantomKind = kind.parse().map_err(js)?;
        let pair = gen_phantom(kind, size, seed.into(), &PhantomOptions::for_kind(kind)).map_err(js)?;
        Ok(Demo {
            reference: pair.reference,
            target: pair.target,
            recon: None,
        })
    }

    pub fn size(&self) -> usize {
        self.target.shape().0
    }

    pub fn reference_rgba(&self) -> Vec<u8> {
        to_rgba(&self.reference)
    }

    pub fn target_rgba(&self) -> Vec<u8> {
        to_rgba(&self.target)
    }

    /// Runs both methods; returns `[ssim_l2tv, psnr_l2tv, ssim_tdm, psnr_tdm]`.
    pub fn reconstruct(&mut self, angles: usize, span: f64, noise: f64, alpha: f64, beta: f64) -> std::result::Result<Vec<f64>, JsError> {
        let settings = Settings {
            angles,
            span,
            noise,
            alpha,
            beta,
        };
        let recon = reconstruct(&self.reference, &self.target, &settings).map_err(js)?;
        let scores = recon.scores.to_vec();
        self.recon = Some(recon);
        Ok(scores)
    }

    pub fn l2tv_rgba(&self) -> Vec<u8> {
        self.recon.as_ref().map_or_else(Vec::new, |r| to_rgba(&r.l2tv))
    }

    /// Frames `I_0 .. I_K` of the last reconstruction; zero before one ran.
    pub fn path_len(&self) -> usize {
        self.recon.as_ref().map_or(0, |r| r.path.frames().len())
    }

    /// Frame `k` of the path (`k = 0` is the reconstruction, the last one the reference).
    pub fn frame_rgba(&self, k: usize) -> Vec<u8> {
        match &self.recon {
            Some(r) if k < r.path.frames().len() => to_rgba(r.path.frame(k)),
            _ => Vec::new(),
        }
    }
}
