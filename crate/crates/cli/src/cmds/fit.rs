//! `fit`: tune the spectral series estimator on train/validation CSVs and
//! write the fitted model plus a tuning report.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;

use spectral_cde::dataset::{self, Dataset};
use spectral_cde::estimator::{default_epsilon_grid, tune, tune_delta, TuneGrids, TuneOptions};
use spectral_cde::evaluation::derive_seed;
use spectral_cde::spectral::EigMethod;
use spectral_cde::zbasis::ZBasis;
use spectral_cde::{Normalization, ZGrid};

use crate::config::{parse_float_grid, parse_index_grid, ConfigFile, ResolvedConfig};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Training CSV
    #[arg(long)]
    data: Option<PathBuf>,
    /// Validation CSV (as produced by `gen`)
    #[arg(long)]
    val: Option<PathBuf>,
    /// Response column name (or index for headerless files)
    #[arg(long)]
    response: Option<String>,
    /// Optional unlabeled covariate CSV included in the Gram matrix
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Response basis: fourier or indicator
    #[arg(long)]
    zbasis: Option<String>,
    /// Kernel normalization: none, diffusion, density
    #[arg(long)]
    normalization: Option<String>,
    /// Eigensolver: dense or randomized
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    sparsity_threshold: Option<f64>,
    /// Bandwidth grid: comma list, or auto / auto:K for a data-driven grid
    #[arg(long)]
    epsilon_grid: Option<String>,
    /// Cutoff grid over I: lo:hi or comma list
    #[arg(long)]
    i_grid: Option<String>,
    /// Cutoff grid over J: lo:hi or comma list
    #[arg(long)]
    j_grid: Option<String>,
    /// Bump-threshold grid: comma list
    #[arg(long)]
    delta_grid: Option<String>,
    /// Standardize covariates before fitting
    #[arg(long)]
    standardize: bool,
    /// Response grid size for the bump-threshold sweep
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &FitArgs, cfg: &ConfigFile) -> Result<()> {
    let sec = "fit";
    let start = Instant::now();
    let data = args
        .data
        .clone()
        .or_else(|| cfg.get(sec, "data").map(PathBuf::from))
        .context("--data is required")?;
    let val_path = args
        .val
        .clone()
        .or_else(|| cfg.get(sec, "val").map(PathBuf::from))
        .context("--val is required (gen writes train/val/test files)")?;
    let response = args
        .response
        .clone()
        .or_else(|| cfg.get(sec, "response").map(String::from))
        .unwrap_or_else(|| "z".to_string());
    let unlabeled_path = args
        .unlabeled
        .clone()
        .or_else(|| cfg.get(sec, "unlabeled").map(PathBuf::from));
    let zbasis_name = args
        .zbasis
        .clone()
        .or_else(|| cfg.get(sec, "zbasis").map(String::from))
        .unwrap_or_else(|| "fourier".to_string());
    let normalization_name = args
        .normalization
        .clone()
        .or_else(|| cfg.get(sec, "normalization").map(String::from))
        .unwrap_or_else(|| "none".to_string());
    let method_name = args
        .method
        .clone()
        .or_else(|| cfg.get(sec, "method").map(String::from))
        .unwrap_or_else(|| "dense".to_string());
    let sparsity_threshold = args
        .sparsity_threshold
        .or(cfg.get_parsed(sec, "sparsity-threshold")?)
        .unwrap_or(0.0);
    let epsilon_grid_text = args
        .epsilon_grid
        .clone()
        .or_else(|| cfg.get(sec, "epsilon-grid").map(String::from))
        .unwrap_or_else(|| "auto".to_string());
    let i_grid_text = args
        .i_grid
        .clone()
        .or_else(|| cfg.get(sec, "i-grid").map(String::from));
    let j_grid_text = args
        .j_grid
        .clone()
        .or_else(|| cfg.get(sec, "j-grid").map(String::from));
    let delta_grid_text = args
        .delta_grid
        .clone()
        .or_else(|| cfg.get(sec, "delta-grid").map(String::from))
        .unwrap_or_else(|| "0,0.025,0.05,0.1".to_string());
    let standardize = args.standardize || cfg.get_parsed(sec, "standardize")?.unwrap_or(false);
    let grid_size = args
        .grid_size
        .or(cfg.get_parsed(sec, "grid-size")?)
        .unwrap_or(ZGrid::DEFAULT_SIZE);
    let seed = args.seed.or(cfg.get_parsed(sec, "seed")?).unwrap_or(0);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.get(sec, "out").map(PathBuf::from))
        .context("--out is required")?;
    super::ensure_out_dir(&out)?;

    let normalization = match normalization_name.as_str() {
        "none" => Normalization::None,
        "diffusion" => Normalization::Diffusion,
        "density" => Normalization::DensityRenormalized,
        other => bail!("unknown normalization {other:?} (none, diffusion, density)"),
    };
    let method = match method_name.as_str() {
        "dense" => EigMethod::Dense,
        "randomized" => EigMethod::randomized(derive_seed(seed, 1)),
        other => bail!("unknown eigensolver {other:?} (dense, randomized)"),
    };

    let train_raw: Dataset = dataset::load_csv(&data, Some(&response))
        .with_context(|| format!("loading {}", data.display()))?;
    let val_raw: Dataset = dataset::load_csv(&val_path, Some(&response))
        .with_context(|| format!("loading {}", val_path.display()))?;
    let train = dataset::rescale_response(&train_raw)?;
    let t = train.z_transform();
    let val = val_raw.with_response_transform(t);

    let (train, val, standardization) = if standardize {
        let (train_std, ct) = dataset::standardize_covariates(&train)?;
        let val_std = ct.apply(&val)?;
        (train_std, val_std, Some(ct))
    } else {
        (train, val, None)
    };

    let unlabeled = match &unlabeled_path {
        None => None,
        Some(path) => {
            let ds = dataset::load_csv(path, None)
                .with_context(|| format!("loading {}", path.display()))?;
            let points = match &standardization {
                Some(ct) => ct.apply_points(ds.points())?,
                None => ds.points().clone(),
            };
            Some(points)
        }
    };

    let z_basis = match zbasis_name.as_str() {
        "fourier" => ZBasis::fourier(),
        "indicator" => ZBasis::indicator_for(&train)?,
        other => bail!("unknown response basis {other:?} (fourier, indicator)"),
    };

    let epsilon = match epsilon_grid_text.as_str() {
        "auto" => default_epsilon_grid(train.points(), 10),
        text if text.starts_with("auto:") => {
            let k: usize = text["auto:".len()..].parse().context("auto:K grid size")?;
            default_epsilon_grid(train.points(), k)
        }
        text => parse_float_grid(text)?,
    };
    let i_values = match &i_grid_text {
        Some(text) => parse_index_grid(text)?,
        None => (1..=30).collect(),
    };
    let j_values = match &j_grid_text {
        Some(text) => parse_index_grid(text)?,
        None => (1..=(train.n() / 2).clamp(1, 60)).collect(),
    };
    let delta_grid = parse_float_grid(&delta_grid_text)?;
    let grids = TuneGrids {
        epsilon,
        i_values,
        j_values,
    };

    let options = TuneOptions {
        normalization,
        sparsity_threshold,
        method,
        unlabeled,
    };
    let (model, report) = tune(&train, &val, &grids, &z_basis, &options)?;
    let zgrid = ZGrid::uniform01(grid_size);
    let delta_start = Instant::now();
    let (delta, delta_entries) = tune_delta(&model, &val, &delta_grid, &zgrid)?;
    let delta_seconds = delta_start.elapsed().as_secs_f64();
    let model = model.with_delta(delta)?.with_standardization(standardization);

    let model_path = out.join("model.bin");
    {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&model_path)
                .with_context(|| format!("creating {}", model_path.display()))?,
        );
        model.write_to(&mut file)?;
    }

    // Tuning report: wall-clock per phase, then every configuration with
    // its estimated loss, the argmin marked.
    let mut text = String::new();
    let best = report.best();
    let _ = writeln!(text, "phase_gram_seconds = {:.3}", report.timings.gram.as_secs_f64());
    let _ = writeln!(text, "phase_eigen_seconds = {:.3}", report.timings.eigen.as_secs_f64());
    let _ = writeln!(
        text,
        "phase_coefficients_seconds = {:.3}",
        report.timings.coefficients.as_secs_f64()
    );
    let _ = writeln!(
        text,
        "phase_loss_sweep_seconds = {:.3}",
        report.timings.loss_sweep.as_secs_f64()
    );
    let _ = writeln!(text, "phase_delta_sweep_seconds = {delta_seconds:.3}");
    let _ = writeln!(text, "coefficient_fits = {}", report.coefficient_fits);
    let _ = writeln!(text, "basis_builds = {}", report.basis_builds);
    let _ = writeln!(
        text,
        "chosen: epsilon = {} I = {} J = {} delta = {} loss = {}",
        best.epsilon, best.i, best.j, delta, best.loss
    );
    let _ = writeln!(text, "\nepsilon,I,J,loss,chosen");
    for (idx, e) in report.entries.iter().enumerate() {
        let marker = if idx == report.best_index { "*" } else { "" };
        let _ = writeln!(text, "{},{},{},{},{marker}", e.epsilon, e.i, e.j, e.loss);
    }
    let _ = writeln!(text, "\ndelta,loss,chosen");
    for e in &delta_entries {
        let marker = if e.delta == delta { "*" } else { "" };
        let _ = writeln!(text, "{},{},{marker}", e.delta, e.loss);
    }
    let report_path = out.join("tuning_report.txt");
    std::fs::write(&report_path, &text)
        .with_context(|| format!("writing {}", report_path.display()))?;

    let mut rc = ResolvedConfig::new(sec);
    rc.put("data", data.display())
        .put("val", val_path.display())
        .put("response", &response)
        .put("zbasis", &zbasis_name)
        .put("normalization", &normalization_name)
        .put("method", &method_name)
        .put("sparsity-threshold", sparsity_threshold)
        .put(
            "epsilon-grid",
            grids
                .epsilon
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        )
        .put(
            "i-grid",
            format!(
                "{}:{}",
                grids.i_values.first().unwrap(),
                grids.i_values.last().unwrap()
            ),
        )
        .put(
            "j-grid",
            format!(
                "{}:{}",
                grids.j_values.first().unwrap(),
                grids.j_values.last().unwrap()
            ),
        )
        .put("delta-grid", &delta_grid_text)
        .put("standardize", standardize)
        .put("grid-size", grid_size)
        .put("seed", seed)
        .put("out", out.display());
    if let Some(p) = &unlabeled_path {
        rc.put("unlabeled", p.display());
    }
    rc.write_to_dir(&out)?;

    println!(
        "fitted model: epsilon = {:.5}, I = {}, J = {}, delta = {}, validation loss = {:.5} ({:.1?} total)",
        best.epsilon,
        best.i,
        best.j,
        delta,
        best.loss,
        start.elapsed()
    );
    println!("model written to {}", model_path.display());
    Ok(())
}
