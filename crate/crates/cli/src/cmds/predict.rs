//! `predict`: evaluate a fitted model's density on a grid for each query row.

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use spectral_cde::dataset;
use spectral_cde::{CdeError, CdeModel, ZGrid};

use crate::config::{ConfigFile, ResolvedConfig};

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Fitted model file from `fit`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Query CSV of covariate rows
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of response grid nodes per query
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &PredictArgs, cfg: &ConfigFile) -> Result<()> {
    let sec = "predict";
    let model_path = args
        .model
        .clone()
        .or_else(|| cfg.get(sec, "model").map(PathBuf::from))
        .context("--model is required")?;
    let data = args
        .data
        .clone()
        .or_else(|| cfg.get(sec, "data").map(PathBuf::from))
        .context("--data is required")?;
    let grid_size = args
        .grid_size
        .or(cfg.get_parsed(sec, "grid-size")?)
        .unwrap_or(ZGrid::DEFAULT_SIZE);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.get(sec, "out").map(PathBuf::from))
        .context("--out is required")?;
    super::ensure_out_dir(&out)?;

    let mut file = std::fs::File::open(&model_path)
        .with_context(|| format!("opening {}", model_path.display()))?;
    let model = CdeModel::read_from(&mut file)?;

    let queries = match dataset::load_csv(&data, None) {
        Ok(ds) => Some(ds),
        Err(CdeError::EmptyFile) => None,
        Err(e) => return Err(e).with_context(|| format!("loading {}", data.display())),
    };

    let grid = ZGrid::uniform01(grid_size);
    let path = out.join("predictions.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(w, "row_id,z,density")?;
    if let Some(queries) = &queries {
        if queries.dim() != model.dim() {
            anyhow::bail!(
                "query dimension {} does not match the model dimension {}",
                queries.dim(),
                model.dim()
            );
        }
        let densities: Vec<_> = (0..queries.n())
            .into_par_iter()
            .map(|row| model.predict_density(queries.x(row), &grid))
            .collect::<spectral_cde::Result<_>>()?;
        for (row, density) in densities.iter().enumerate() {
            for (z, v) in density.nodes().iter().zip(density.values()) {
                writeln!(w, "{row},{z},{v}")?;
            }
        }
    }
    w.flush()?;

    let mut rc = ResolvedConfig::new(sec);
    rc.put("model", model_path.display())
        .put("data", data.display())
        .put("grid-size", grid_size)
        .put("out", out.display());
    rc.write_to_dir(&out)?;

    println!(
        "wrote {} ({} queries x {} grid nodes)",
        path.display(),
        queries.as_ref().map_or(0, |q| q.n()),
        grid_size
    );
    Ok(())
}
