//! Test-set loss for any conditional density estimator, bootstrap standard
//! errors, and PIT/KS goodness-of-fit.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::density::{cdf_from_cumulative, trapezoid, ZGrid};
use crate::error::{CdeError, Result};
use crate::estimator::ConditionalDensity;

/// Terms of the truncated series for the asymptotic Kolmogorov distribution.
const KOLMOGOROV_SERIES_TERMS: usize = 100;

/// Default number of bootstrap replicates for loss standard errors.
pub const DEFAULT_BOOTSTRAP_B: usize = 500;

/// Summary statistics of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub loss_se: f64,
    pub ks_stat: f64,
    pub ks_pvalue: f64,
    pub n_test: usize,
    pub bootstrap_b: usize,
}

impl EvalReport {
    /// Flat key-value text block.
    pub fn to_text(&self) -> String {
        format!(
            "loss = {:.6}\nloss_se = {:.6}\nks_stat = {:.6}\nks_pvalue = {:.6}\nn_test = {}\nbootstrap_b = {}\n",
            self.loss, self.loss_se, self.ks_stat, self.ks_pvalue, self.n_test, self.bootstrap_b
        )
    }

    pub fn csv_header() -> &'static str {
        "loss,loss_se,ks_stat,ks_pvalue,n_test,bootstrap_b"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.loss, self.loss_se, self.ks_stat, self.ks_pvalue, self.n_test, self.bootstrap_b
        )
    }
}

/// Per-point pieces of the empirical loss: the squared-density integral and
/// the density at the observed response. The loss is
/// `mean(sq_integral) - 2 mean(density_at_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoss {
    pub sq_integral: f64,
    pub density_at_z: f64,
}

impl PointLoss {
    pub fn combined(&self) -> f64 {
        self.sq_integral - 2.0 * self.density_at_z
    }
}

/// Evaluates the per-point loss pieces of a post-processed estimator over a
/// labelled test set.
pub fn per_point_losses<M: ConditionalDensity + Sync>(
    estimator: &M,
    test: &Dataset,
    grid: &ZGrid,
) -> Result<Vec<PointLoss>> {
    let zs = test.require_labels()?;
    if test.n() == 0 {
        return Err(CdeError::EmptyInput("test set"));
    }
    (0..test.n())
        .into_par_iter()
        .map(|k| -> Result<PointLoss> {
            let density = estimator.conditional_density(test.x(k), grid)?;
            let sq: Vec<f64> = density.values().iter().map(|v| v * v).collect();
            Ok(PointLoss {
                sq_integral: trapezoid(density.nodes(), &sq),
                density_at_z: density.value_at(zs[k]),
            })
        })
        .collect()
}

/// Empirical squared-error loss (up to the estimator-independent constant)
/// of a post-processed estimator on a labelled test set.
pub fn test_loss<M: ConditionalDensity + Sync>(
    estimator: &M,
    test: &Dataset,
    grid: &ZGrid,
) -> Result<f64> {
    let pieces = per_point_losses(estimator, test, grid)?;
    Ok(loss_from_pieces(&pieces))
}

pub fn loss_from_pieces(pieces: &[PointLoss]) -> f64 {
    let n = pieces.len() as f64;
    let sq: f64 = pieces.iter().map(|p| p.sq_integral).sum();
    let at: f64 = pieces.iter().map(|p| p.density_at_z).sum();
    sq / n - 2.0 * at / n
}

/// Bootstrap standard error of the loss: test points are resampled with
/// replacement `b` times and the loss recomputed from the cached per-point
/// pieces. Contributions are sorted first so the result is invariant to
/// permutations of the test set; each replicate draws its generator from a
/// counter derivation of the master seed.
pub fn bootstrap_se(per_point: &[f64], b: usize, seed: u64) -> Result<f64> {
    if per_point.is_empty() {
        return Err(CdeError::EmptyInput("bootstrap contributions"));
    }
    if b < 2 {
        return Err(CdeError::InvalidParameter(format!(
            "bootstrap needs at least 2 replicates, got {b}"
        )));
    }
    let mut sorted = per_point.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Centering by the smallest contribution leaves the variance unchanged
    // and makes a degenerate equal-contribution set give exactly zero.
    let shift = sorted[0];
    for v in sorted.iter_mut() {
        *v -= shift;
    }
    let n = sorted.len();
    let replicates: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|rep| {
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
            let mut acc = 0.0;
            for _ in 0..n {
                acc += sorted[rng.gen_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    let mean: f64 = replicates.iter().sum::<f64>() / b as f64;
    let var: f64 = replicates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / b as f64;
    Ok(var.sqrt())
}

/// SplitMix64 step keyed by a counter; decorrelates derived seeds.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master
        .wrapping_add(counter.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// One-sample Kolmogorov-Smirnov statistic against the uniform law:
/// `D_n = max_i max(i/n - U_(i), U_(i) - (i-1)/n)`.
pub fn ks_statistic_uniform(us: &[f64]) -> Result<f64> {
    if us.is_empty() {
        return Err(CdeError::EmptyInput("KS sample"));
    }
    let mut sorted = us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (idx, &u) in sorted.iter().enumerate() {
        let i = (idx + 1) as f64;
        d = d.max(i / n - u).max(u - (i - 1.0) / n);
    }
    Ok(d)
}

/// Asymptotic p-value `P(D_n > d) ~ 2 sum_k (-1)^{k-1} exp(-2 k^2 n d^2)`,
/// truncated and clamped to [0, 1].
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let lambda_sq = n as f64 * d * d;
    let mut acc = 0.0;
    for k in 1..=KOLMOGOROV_SERIES_TERMS {
        let term = (-2.0 * (k * k) as f64 * lambda_sq).exp();
        if k % 2 == 1 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// Probability integral transform values `U_i = F(Z_i | x_i)` and the KS
/// test of their uniformity.
pub fn pit_ks<M: ConditionalDensity + Sync>(
    estimator: &M,
    test: &Dataset,
    grid: &ZGrid,
) -> Result<(f64, f64, Vec<f64>)> {
    let zs = test.require_labels()?;
    if test.n() == 0 {
        return Err(CdeError::EmptyInput("test set"));
    }
    let us: Vec<f64> = (0..test.n())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let density = estimator.conditional_density(test.x(k), grid)?;
            let cum = density.cumulative();
            Ok(cdf_from_cumulative(density.nodes(), &cum, zs[k]))
        })
        .collect::<Result<_>>()?;
    let stat = ks_statistic_uniform(&us)?;
    let pvalue = ks_pvalue(stat, us.len());
    Ok((stat, pvalue, us))
}

/// Full evaluation: loss, bootstrap standard error, and the PIT/KS test.
pub fn evaluate<M: ConditionalDensity + Sync>(
    estimator: &M,
    test: &Dataset,
    grid: &ZGrid,
    bootstrap_b: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<f64>)> {
    let pieces = per_point_losses(estimator, test, grid)?;
    let loss = loss_from_pieces(&pieces);
    let combined: Vec<f64> = pieces.iter().map(PointLoss::combined).collect();
    let loss_se = bootstrap_se(&combined, bootstrap_b, seed)?;
    let (ks_stat, ks_pvalue, us) = pit_ks(estimator, test, grid)?;
    Ok((
        EvalReport {
            loss,
            loss_se,
            ks_stat,
            ks_pvalue,
            n_test: test.n(),
            bootstrap_b,
        },
        us,
    ))
}
