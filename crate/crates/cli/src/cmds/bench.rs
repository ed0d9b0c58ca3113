//! `bench`: sweep estimators over scenario/dimension/seed cells and emit a
//! plot-ready CSV of losses and timings. Cells run in a worker pool with
//! per-cell derived seeds; failures are recorded per cell and the sweep
//! continues.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use spectral_cde::baselines::{default_kde_grid, default_knn_grid, tune_kde, tune_knn};
use spectral_cde::dataset::{self, SplitSpec};
use spectral_cde::estimator::{default_epsilon_grid, tune, tune_delta, TuneGrids, TuneOptions};
use spectral_cde::evaluation::{derive_seed, evaluate};
use spectral_cde::{Normalization, ZGrid};

use crate::config::{parse_seed_list, ConfigFile, ResolvedConfig};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma list of scenarios (manifold, one-relevant, non-sparse)
    #[arg(long)]
    scenarios: Option<String>,
    /// Comma list of ambient dimensions
    #[arg(long)]
    d_list: Option<String>,
    /// Sample size per cell
    #[arg(long)]
    n: Option<usize>,
    /// Seeds: lo:hi or comma list
    #[arg(long)]
    seeds: Option<String>,
    /// Comma list of methods (series, series-diff, knn, kde)
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Bootstrap replicates for per-cell loss standard errors
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Cell {
    method: String,
    scenario: String,
    d: usize,
    seed: u64,
}

#[derive(Debug, Clone)]
struct Row {
    cell: Cell,
    n: usize,
    status: String,
    loss: Option<f64>,
    loss_se: Option<f64>,
    ks_pvalue: Option<f64>,
    gram_seconds: Option<f64>,
    fit_seconds: Option<f64>,
    total_seconds: f64,
}

pub fn run(args: &BenchArgs, cfg: &ConfigFile) -> Result<()> {
    let sec = "bench";
    let scenarios_text = args
        .scenarios
        .clone()
        .or_else(|| cfg.get(sec, "scenarios").map(String::from))
        .unwrap_or_else(|| "manifold".to_string());
    let d_list_text = args
        .d_list
        .clone()
        .or_else(|| cfg.get(sec, "d-list").map(String::from))
        .unwrap_or_else(|| "10".to_string());
    let n = args.n.or(cfg.get_parsed(sec, "n")?).unwrap_or(1000);
    let seeds_text = args
        .seeds
        .clone()
        .or_else(|| cfg.get(sec, "seeds").map(String::from))
        .unwrap_or_else(|| "1:5".to_string());
    let methods_text = args
        .methods
        .clone()
        .or_else(|| cfg.get(sec, "methods").map(String::from))
        .unwrap_or_else(|| "series,series-diff,knn,kde".to_string());
    let sigma2 = args.sigma2.or(cfg.get_parsed(sec, "sigma2")?).unwrap_or(0.5);
    let bootstrap = args
        .bootstrap
        .or(cfg.get_parsed(sec, "bootstrap")?)
        .unwrap_or(200);
    let grid_size = args
        .grid_size
        .or(cfg.get_parsed(sec, "grid-size")?)
        .unwrap_or(501);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.get(sec, "out").map(PathBuf::from))
        .context("--out is required")?;
    super::ensure_out_dir(&out)?;

    let scenarios: Vec<String> = scenarios_text.split(',').map(|s| s.trim().to_string()).collect();
    let d_list: Vec<usize> = d_list_text
        .split(',')
        .map(|v| v.trim().parse().context("d-list entry"))
        .collect::<Result<_>>()?;
    let seeds = parse_seed_list(&seeds_text)?;
    let methods: Vec<String> = methods_text.split(',').map(|s| s.trim().to_string()).collect();

    let mut cells = Vec::new();
    for method in &methods {
        for scenario in &scenarios {
            for &d in &d_list {
                for &seed in &seeds {
                    cells.push(Cell {
                        method: method.clone(),
                        scenario: scenario.clone(),
                        d,
                        seed,
                    });
                }
            }
        }
    }

    let mut rows: Vec<Row> = cells
        .par_iter()
        .map(|cell| run_cell(cell, n, sigma2, bootstrap, grid_size))
        .collect();
    rows.sort_by(|a, b| {
        (&a.cell.method, &a.cell.scenario, a.cell.d, a.cell.seed).cmp(&(
            &b.cell.method,
            &b.cell.scenario,
            b.cell.d,
            b.cell.seed,
        ))
    });

    let path = out.join("sweep.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    writeln!(
        w,
        "method,scenario,d,n,seed,status,loss,loss_se,ks_pvalue,gram_seconds,fit_seconds,total_seconds"
    )?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.method,
            r.cell.scenario,
            r.cell.d,
            r.n,
            r.cell.seed,
            r.status,
            fmt(r.loss),
            fmt(r.loss_se),
            fmt(r.ks_pvalue),
            fmt(r.gram_seconds),
            fmt(r.fit_seconds),
            r.total_seconds
        )?;
    }
    w.flush()?;

    let mut rc = ResolvedConfig::new(sec);
    rc.put("scenarios", &scenarios_text)
        .put("d-list", &d_list_text)
        .put("n", n)
        .put("seeds", &seeds_text)
        .put("methods", &methods_text)
        .put("sigma2", sigma2)
        .put("bootstrap", bootstrap)
        .put("grid-size", grid_size)
        .put("out", out.display());
    rc.write_to_dir(&out)?;

    let failures = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "wrote {} ({} cells, {} failed)",
        path.display(),
        rows.len(),
        failures
    );
    Ok(())
}

fn run_cell(cell: &Cell, n: usize, sigma2: f64, bootstrap: usize, grid_size: usize) -> Row {
    let start = Instant::now();
    let result = cell_impl(cell, n, sigma2, bootstrap, grid_size);
    let total_seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(mut row) => {
            row.total_seconds = total_seconds;
            row
        }
        Err(e) => Row {
            cell: cell.clone(),
            n,
            status: format!("error: {e}").replace(',', ";"),
            loss: None,
            loss_se: None,
            ks_pvalue: None,
            gram_seconds: None,
            fit_seconds: None,
            total_seconds,
        },
    }
}

fn cell_impl(
    cell: &Cell,
    n: usize,
    sigma2: f64,
    bootstrap: usize,
    grid_size: usize,
) -> Result<Row> {
    let data_seed = derive_seed(cell.seed, 0xDA7A);
    let sc = super::scenario_from(&cell.scenario, cell.d, sigma2, data_seed, 1, 1, false)?;
    let all = sc.generate(n)?;
    let split = SplitSpec::new(0.7, 0.15, 0.15, derive_seed(cell.seed, 0x5917))?;
    let (train, val, test) = dataset::split(&all, &split)?;
    let train = dataset::rescale_response(&train)?;
    let t = train.z_transform();
    let val = val.with_response_transform(t);
    let test = test.with_response_transform(t);

    let tune_grid = ZGrid::uniform01(301);
    let eval_grid = ZGrid::uniform01(grid_size);
    let eval_seed = derive_seed(cell.seed, 0xE7A1);

    let (report, gram_seconds, fit_seconds) = match cell.method.as_str() {
        "series" | "series-diff" => {
            let normalization = if cell.method == "series" {
                Normalization::None
            } else {
                Normalization::Diffusion
            };
            let grids = TuneGrids {
                epsilon: default_epsilon_grid(train.points(), 4),
                i_values: (1..=10).collect(),
                j_values: (1..=12.min(train.n() / 2)).collect(),
            };
            let options = TuneOptions {
                normalization,
                ..TuneOptions::default()
            };
            let fit_start = Instant::now();
            let (model, tune_report) = tune(&train, &val, &grids, &spectral_cde::ZBasis::fourier(), &options)?;
            let (delta, _) = tune_delta(&model, &val, &[0.0, 0.05], &tune_grid)?;
            let fit_seconds = fit_start.elapsed().as_secs_f64();
            let model = model.with_delta(delta)?;
            let gram = tune_report.timings.gram.as_secs_f64();
            let (report, _) = evaluate(&model, &test, &eval_grid, bootstrap, eval_seed)?;
            (report, Some(gram), Some(fit_seconds - gram))
        }
        "knn" => {
            let specs: Vec<_> = default_knn_grid(&train).into_iter().step_by(2).collect();
            let fit_start = Instant::now();
            let (model, _) = tune_knn(&train, &val, &specs, &tune_grid)?;
            let fit_seconds = fit_start.elapsed().as_secs_f64();
            let (report, _) = evaluate(&model, &test, &eval_grid, bootstrap, eval_seed)?;
            (report, None, Some(fit_seconds))
        }
        "kde" => {
            let specs = default_kde_grid(&train);
            let fit_start = Instant::now();
            let (model, _) = tune_kde(&train, &val, &specs, &tune_grid)?;
            let fit_seconds = fit_start.elapsed().as_secs_f64();
            let (report, _) = evaluate(&model, &test, &eval_grid, bootstrap, eval_seed)?;
            (report, None, Some(fit_seconds))
        }
        other => anyhow::bail!("unknown method {other:?} (series, series-diff, knn, kde)"),
    };

    Ok(Row {
        cell: cell.clone(),
        n,
        status: "ok".to_string(),
        loss: Some(report.loss),
        loss_se: Some(report.loss_se),
        ks_pvalue: Some(report.ks_pvalue),
        gram_seconds,
        fit_seconds,
        total_seconds: 0.0,
    })
}
