//! `gen`: draw a simulation scenario and write train/validation/test CSVs.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use spectral_cde::dataset::{self, SplitSpec};

use crate::config::{ConfigFile, ResolvedConfig};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Scenario: manifold, one-relevant, non-sparse
    #[arg(long)]
    scenario: Option<String>,
    /// Ambient covariate dimension
    #[arg(long)]
    d: Option<usize>,
    /// Total sample size before splitting
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Conditional noise variance
    #[arg(long)]
    sigma2: Option<f64>,
    /// Number of circles for the manifold scenario (torus generalization)
    #[arg(long)]
    circles: Option<usize>,
    /// Number of relevant covariates for the one-relevant scenario
    #[arg(long)]
    relevant: Option<usize>,
    /// Rotate the manifold by a fixed random orthogonal map
    #[arg(long)]
    rotate: bool,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &GenArgs, cfg: &ConfigFile) -> Result<()> {
    let sec = "gen";
    let scenario = args
        .scenario
        .clone()
        .or_else(|| cfg.get(sec, "scenario").map(String::from))
        .context("--scenario is required")?;
    let d = args
        .d
        .or(cfg.get_parsed(sec, "d")?)
        .context("--d is required")?;
    let n = args
        .n
        .or(cfg.get_parsed(sec, "n")?)
        .context("--n is required")?;
    let seed = args.seed.or(cfg.get_parsed(sec, "seed")?).unwrap_or(0);
    let sigma2 = args.sigma2.or(cfg.get_parsed(sec, "sigma2")?).unwrap_or(0.5);
    let circles = args.circles.or(cfg.get_parsed(sec, "circles")?).unwrap_or(1);
    let relevant = args
        .relevant
        .or(cfg.get_parsed(sec, "relevant")?)
        .unwrap_or(1);
    let rotate = args.rotate || cfg.get_parsed(sec, "rotate")?.unwrap_or(false);
    let train_frac = args
        .train_frac
        .or(cfg.get_parsed(sec, "train-frac")?)
        .unwrap_or(0.7);
    let val_frac = args
        .val_frac
        .or(cfg.get_parsed(sec, "val-frac")?)
        .unwrap_or(0.15);
    let test_frac = args
        .test_frac
        .or(cfg.get_parsed(sec, "test-frac")?)
        .unwrap_or(0.15);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.get(sec, "out").map(PathBuf::from))
        .context("--out is required")?;

    super::ensure_out_dir(&out)?;
    let sc = super::scenario_from(&scenario, d, sigma2, seed, circles, relevant, rotate)?;
    let all = sc.generate(n)?;
    let split_spec = SplitSpec::new(train_frac, val_frac, test_frac, seed)?;
    let (train, val, test) = dataset::split(&all, &split_spec)?;

    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let path = out.join(format!("{name}.csv"));
        let file = std::fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        dataset::write_csv(part, std::io::BufWriter::new(file))?;
    }

    let mut rc = ResolvedConfig::new(sec);
    rc.put("scenario", &scenario)
        .put("d", d)
        .put("n", n)
        .put("seed", seed)
        .put("sigma2", sigma2)
        .put("circles", circles)
        .put("relevant", relevant)
        .put("rotate", rotate)
        .put("train-frac", train_frac)
        .put("val-frac", val_frac)
        .put("test-frac", test_frac)
        .put("out", out.display());
    rc.write_to_dir(&out)?;

    println!(
        "wrote {}: train {} / val {} / test {} samples, d = {}",
        out.display(),
        train.n(),
        val.n(),
        test.n(),
        d
    );
    Ok(())
}
