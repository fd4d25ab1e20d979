//! Exhaustive search over `alpha x beta x reg_scale`, scored by SSIM.

use std::cmp::Ordering;
use std::time::Instant;

use anyhow::{bail, Result};

use crate::experiment::{run_tdm, simulate};
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub reg_scale: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct GridSearch {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridSearch {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["alpha", "beta", "reg_scale", "ssim", "psnr", "runtime_s", "best"])?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                r.alpha.to_string(),
                r.beta.to_string(),
                r.reg_scale.to_string(),
                r.ssim.to_string(),
                r.psnr.to_string(),
                format!("{:.3}", r.runtime_s),
                (i == self.best).to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// Higher SSIM wins, then higher PSNR, then the lexicographically smaller
/// `(alpha, beta, reg_scale)`.
fn ranking(a: &GridRow, b: &GridRow) -> Ordering {
    a.ssim
        .total_cmp(&b.ssim)
        .then(a.psnr.total_cmp(&b.psnr))
        .then_with(|| {
            let key = |r: &GridRow| [r.alpha, r.beta, r.reg_scale];
            let (ka, kb) = (key(a), key(b));
            ka.iter().zip(&kb).map(|(x, y)| y.total_cmp(x)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
}

/// Index of the best row; `None` for no rows.
pub fn pick_best(rows: &[GridRow]) -> Option<usize> {
    (0..rows.len()).max_by(|&i, &j| ranking(&rows[i], &rows[j]))
}

pub fn grid_search(spec: &ExperimentSpec, alphas: &[f64], betas: &[f64], reg_scales: &[f64]) -> Result<GridSearch> {
    if alphas.is_empty() || betas.is_empty() || reg_scales.is_empty() {
        bail!("grid search needs nonempty grids");
    }
    let problem = simulate(spec)?;
    let mut rows = Vec::with_capacity(alphas.len() * betas.len() * reg_scales.len());
    for &alpha in alphas {
        for &beta in betas {
            for &reg_scale in reg_scales {
                let cell = spec.with_weights(alpha, beta, reg_scale);
                cell.validate()?;
                let start = Instant::now();
                let (_, s) = run_tdm(&cell, &problem)?;
                rows.push(GridRow {
                    alpha,
                    beta,
                    reg_scale,
                    ssim: s.ssim,
                    psnr: s.psnr,
                    runtime_s: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    let best = pick_best(&rows).expect("nonempty grid");
    Ok(GridSearch { rows, best })
}
