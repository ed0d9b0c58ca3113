//! `evaluate`: test-set loss with bootstrap standard error and the PIT/KS
//! goodness-of-fit test for a fitted model.

use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use spectral_cde::dataset;
use spectral_cde::evaluation::{evaluate, DEFAULT_BOOTSTRAP_B};
use spectral_cde::{CdeModel, EvalReport, ZGrid};

use crate::config::{ConfigFile, ResolvedConfig};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Fitted model file from `fit`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labelled test CSV (responses on the raw scale)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column name
    #[arg(long)]
    response: Option<String>,
    /// Bootstrap replicates for the loss standard error
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs, cfg: &ConfigFile) -> Result<()> {
    let sec = "evaluate";
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
    let response = args
        .response
        .clone()
        .or_else(|| cfg.get(sec, "response").map(String::from))
        .unwrap_or_else(|| "z".to_string());
    let bootstrap = args
        .bootstrap
        .or(cfg.get_parsed(sec, "bootstrap")?)
        .unwrap_or(DEFAULT_BOOTSTRAP_B);
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

    let mut file = std::fs::File::open(&model_path)
        .with_context(|| format!("opening {}", model_path.display()))?;
    let model = CdeModel::read_from(&mut file)?;
    let test_raw = dataset::load_csv(&data, Some(&response))
        .with_context(|| format!("loading {}", data.display()))?;
    let test = test_raw.with_response_transform(model.z_transform());

    let grid = ZGrid::uniform01(grid_size);
    let (report, us) = evaluate(&model, &test, &grid, bootstrap, seed)?;

    std::fs::write(out.join("report.txt"), report.to_text())?;
    std::fs::write(
        out.join("report.csv"),
        format!("{}\n{}\n", EvalReport::csv_header(), report.to_csv_row()),
    )?;

    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("pit.csv"))?);
        writeln!(w, "u")?;
        for u in &us {
            writeln!(w, "{u}")?;
        }
    }
    {
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for &u in &us {
            let idx = ((u * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("pit_hist.csv"))?);
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (b, &c) in counts.iter().enumerate() {
            writeln!(
                w,
                "{},{},{c}",
                b as f64 / bins as f64,
                (b + 1) as f64 / bins as f64
            )?;
        }
    }

    let mut rc = ResolvedConfig::new(sec);
    rc.put("model", model_path.display())
        .put("data", data.display())
        .put("response", &response)
        .put("bootstrap", bootstrap)
        .put("grid-size", grid_size)
        .put("seed", seed)
        .put("out", out.display());
    rc.write_to_dir(&out)?;

    print!("{}", report.to_text());
    println!("reports written to {}", out.display());
    Ok(())
}
