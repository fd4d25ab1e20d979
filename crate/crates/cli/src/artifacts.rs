//! Files written by a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tdm_core::io::{write_image_pfm, write_measurement, write_pgm};
use tdm_core::Image;

use crate::experiment::{Problem, Report};
use crate::search::GridSearch;
use crate::spec::ExperimentSpec;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "TDM_OUTPUT_ROOT";

/// `dir` under `root` when `dir` is relative and a root is given.
pub fn resolve_output(dir: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Output directory of `spec`, honoring [`OUTPUT_ROOT_VAR`].
pub fn output_dir(spec: &ExperimentSpec) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
    resolve_output(&spec.output, root.as_deref())
}

/// `name.pgm` (8 bit, clamped to [0, 1]) and `name.pfm` (exact values).
pub fn write_image(dir: &Path, name: &str, image: &Image) -> Result<()> {
    let pgm = dir.join(format!("{name}.pgm"));
    write_pgm(&pgm, image, 8).with_context(|| format!("writing {}", pgm.display()))?;
    let pfm = dir.join(format!("{name}.pfm"));
    write_image_pfm(&pfm, image).with_context(|| format!("writing {}", pfm.display()))?;
    Ok(())
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Config echo: reruns from this file reproduce the numbers.
pub fn write_config(dir: &Path, spec: &ExperimentSpec) -> Result<()> {
    create(dir)?;
    write_text(&dir.join("config.txt"), &spec.to_text())
}

pub fn write_pair(dir: &Path, reference: &Image, target: &Image) -> Result<()> {
    create(dir)?;
    write_image(dir, "reference", reference)?;
    write_image(dir, "target", target)
}

/// Pair plus `data.pfm` (with geometry sidecar) and, when simulated, `clean.pfm`.
pub fn write_problem(dir: &Path, problem: &Problem) -> Result<()> {
    write_pair(dir, &problem.phantom.reference, &problem.phantom.target)?;
    write_measurement(&dir.join("data.pfm"), &problem.data)?;
    if let Some(clean) = &problem.clean {
        write_measurement(&dir.join("clean.pfm"), clean)?;
    }
    Ok(())
}

/// Reconstructions, path frames, `report.csv` and `objective_log.csv`.
pub fn write_report(dir: &Path, spec: &ExperimentSpec, report: &Report) -> Result<()> {
    write_config(dir, spec)?;
    write_problem(dir, &report.problem)?;
    for r in &report.results {
        write_image(dir, &format!("recon_{}", r.method), &r.image)?;
    }
    if let Some(run) = &report.run {
        let frames = dir.join("path");
        create(&frames)?;
        for (k, frame) in run.images.frames().iter().enumerate() {
            write_image(&frames, &format!("frame_{k:02}"), frame)?;
        }
        for (level, image) in &run.snapshots {
            write_image(&frames, &format!("level_{level}_recon"), image)?;
        }
    }
    write_text(&dir.join("report.csv"), &report.to_csv()?)?;
    if let Some(log) = report.log_csv()? {
        write_text(&dir.join("objective_log.csv"), &log)?;
    }
    Ok(())
}

pub fn write_grid(dir: &Path, spec: &ExperimentSpec, search: &GridSearch) -> Result<()> {
    write_config(dir, spec)?;
    write_text(&dir.join("gridsearch.csv"), &search.to_csv()?)?;
    let best = search.best_row();
    write_text(&dir.join("best.txt"), &spec.with_weights(best.alpha, best.beta, best.reg_scale).to_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_applies_to_relative_paths_only() {
        let root = Path::new("/data/runs");
        assert_eq!(resolve_output(Path::new("ct"), Some(root)), PathBuf::from("/data/runs/ct"));
        assert_eq!(resolve_output(Path::new("/abs/ct"), Some(root)), PathBuf::from("/abs/ct"));
        assert_eq!(resolve_output(Path::new("ct"), None), PathBuf::from("ct"));
    }
}
