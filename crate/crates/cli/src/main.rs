use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Command};
use tdm_cli::artifacts::{output_dir, write_config, write_grid, write_pair, write_problem, write_report};
use tdm_cli::experiment::{load_pair, simulate};
use tdm_cli::spec::{parse_list, ExperimentSpec, KEYS};
use tdm_cli::{grid_search, run_experiment};
use tdm_core::io::read_image;
use tdm_core::metrics::{psnr, region_mse, ssim};

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

/// `--config` plus one flag per config key.
fn spec_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value config file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, help)| {
        cmd.arg(Arg::new(*key).long(flag(key)).value_name("VALUE").help(*help))
    })
}

fn spec_from(m: &ArgMatches) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        spec.apply_text(&text).with_context(|| format!("in {path}"))?;
    }
    for (key, _) in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            spec.set(key, value).with_context(|| format!("--{}", flag(key)))?;
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn cli() -> Command {
    let grid = |name: &'static str, help: &'static str| Arg::new(name).long(name).value_name("LIST").help(help);
    Command::new("tdm")
        .about("Reconstruction from incomplete measurements with a metamorphosis prior")
        .subcommand_required(true)
        .subcommand(spec_args(Command::new("gen").about("Write the reference/target pair")))
        .subcommand(spec_args(Command::new("sim").about("Write the pair and simulated data")))
        .subcommand(spec_args(
            Command::new("recon").about("Reconstruct with TDM-INV and the enabled baselines"),
        ))
        .subcommand(spec_args(Command::new("baseline").about("Run only the enabled baselines")))
        .subcommand(spec_args(
            Command::new("gridsearch")
                .about("Search alpha x beta x reg_scale for the best SSIM")
                .arg(grid("alphas", "comma-separated TV weights (default: alpha)"))
                .arg(grid("betas", "comma-separated path weights (default: beta)"))
                .arg(grid("reg-scales", "comma-separated regularization scales (default: reg_scale)")),
        ))
        .subcommand(
            Command::new("metrics")
                .about("SSIM and PSNR of an image against ground truth")
                .arg(Arg::new("truth").long("truth").required(true).value_name("FILE"))
                .arg(Arg::new("image").long("image").required(true).value_name("FILE"))
                .arg(Arg::new("peak").long("peak").default_value("1").value_name("VALUE"))
                .arg(
                    Arg::new("region")
                        .long("region")
                        .value_name("R0:R1,C0:C1")
                        .help("also report the MSE over this pixel rectangle"),
                ),
        )
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>> {
    let (a, b) = s.split_once(':').with_context(|| format!("expected start:end, got {s:?}"))?;
    Ok(a.trim().parse()?..b.trim().parse()?)
}

fn metrics(m: &ArgMatches) -> Result<()> {
    let read = |name: &str| {
        let path = PathBuf::from(m.get_one::<String>(name).expect("required"));
        read_image(&path).with_context(|| format!("reading {}", path.display()))
    };
    let (truth, image) = (read("truth")?, read("image")?);
    let peak: f64 = m.get_one::<String>("peak").unwrap().parse().context("--peak")?;
    println!("ssim,psnr{}", if m.contains_id("region") { ",region_mse" } else { "" });
    let mut line = format!("{},{}", ssim(&truth, &image)?, psnr(&truth, &image, peak)?);
    if let Some(region) = m.get_one::<String>("region") {
        let (rows, cols) = region.split_once(',').context("--region expects R0:R1,C0:C1")?;
        let mse = region_mse(&truth, &image, parse_range(rows)?, parse_range(cols)?)?;
        line.push_str(&format!(",{mse}"));
    }
    println!("{line}");
    Ok(())
}

fn grid_values(m: &ArgMatches, name: &str, default: f64) -> Result<Vec<f64>> {
    match m.get_one::<String>(name) {
        Some(list) => {
            let values = parse_list(name, list)?;
            if values.is_empty() {
                bail!("--{name} is empty");
            }
            Ok(values)
        }
        None => Ok(vec![default]),
    }
}

fn main() -> Result<()> {
    let matches = cli().get_matches();
    let (verb, m) = matches.subcommand().expect("subcommand required");
    if verb == "metrics" {
        return metrics(m);
    }
    let spec = spec_from(m)?;
    let dir = output_dir(&spec);
    match verb {
        "gen" => {
            let pair = load_pair(&spec)?;
            write_config(&dir, &spec)?;
            write_pair(&dir, &pair.reference, &pair.target)?;
        }
        "sim" => {
            let problem = simulate(&spec)?;
            write_config(&dir, &spec)?;
            write_problem(&dir, &problem)?;
        }
        "recon" | "baseline" => {
            let report = run_experiment(&spec, verb == "recon")?;
            write_report(&dir, &spec, &report)?;
            print!("{}", report.to_csv()?);
        }
        "gridsearch" => {
            let search = grid_search(
                &spec,
                &grid_values(m, "alphas", spec.alpha)?,
                &grid_values(m, "betas", spec.beta)?,
                &grid_values(m, "reg-scales", spec.reg_scale)?,
            )?;
            write_grid(&dir, &spec, &search)?;
            print!("{}", search.to_csv()?);
        }
        _ => unreachable!("unknown subcommand {verb}"),
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}
