//! Reference estimators for benchmarking: kernel-nearest-neighbor
//! conditional densities and the ratio-of-KDEs estimator.

use rayon::prelude::*;

use crate::dataset::{Dataset, Points, Standardization};
use crate::density::{trapezoid, DensityGrid, ZGrid};
use crate::error::{CdeError, Result};
use crate::estimator::ConditionalDensity;
use crate::evaluation::{loss_from_pieces, per_point_losses};
use crate::kernel::squared_distance;

/// Neighbor count and response-kernel bandwidth for the KNN estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnCdeSpec {
    pub n_neighbors: usize,
    pub eps_z: f64,
}

/// Covariate and response bandwidths for the KDE-ratio estimator. One
/// bandwidth is shared by all (standardized) covariate coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeCdeSpec {
    pub h: f64,
    pub h_z: f64,
}

fn gaussian_pdf(u: f64, sd: f64) -> f64 {
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    norm * (-u * u / (2.0 * sd * sd)).exp()
}

/// Average of Gaussian response bumps over the Euclidean-nearest training
/// neighbors, renormalized to integrate to one over the grid (truncation
/// correction). Distance ties break by training index.
#[derive(Debug, Clone)]
pub struct KnnCde {
    points: Points,
    responses: Vec<f64>,
    spec: KnnCdeSpec,
}

impl KnnCde {
    pub fn fit(train: &Dataset, spec: KnnCdeSpec) -> Result<Self> {
        let responses = train.require_labels()?;
        if spec.n_neighbors < 1 || spec.n_neighbors > train.n() {
            return Err(CdeError::InvalidParameter(format!(
                "neighbor count {} outside 1..={}",
                spec.n_neighbors,
                train.n()
            )));
        }
        if !(spec.eps_z > 0.0) {
            return Err(CdeError::InvalidParameter(format!(
                "response bandwidth must be positive, got {}",
                spec.eps_z
            )));
        }
        Ok(Self {
            points: train.points().clone(),
            responses,
            spec,
        })
    }

    pub fn spec(&self) -> KnnCdeSpec {
        self.spec
    }

    fn neighbor_responses(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.points.dim() {
            return Err(CdeError::DimensionMismatch {
                expected: self.points.dim(),
                found: x.len(),
            });
        }
        let mut order: Vec<(f64, usize)> = (0..self.points.n())
            .map(|k| (squared_distance(x, self.points.row(k)), k))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(order
            .iter()
            .take(self.spec.n_neighbors)
            .map(|&(_, k)| self.responses[k])
            .collect())
    }
}

impl ConditionalDensity for KnnCde {
    fn conditional_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        let neighbors = self.neighbor_responses(x)?;
        let inv_n = 1.0 / neighbors.len() as f64;
        let sd = self.spec.eps_z;
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| {
                inv_n
                    * neighbors
                        .iter()
                        .map(|&zk| gaussian_pdf(z - zk, sd))
                        .sum::<f64>()
            })
            .collect();
        renormalize_on_grid(grid, values)
    }
}

/// Ratio of product-Gaussian kernel density estimates,
/// `f(z, x) / f(x)`, over covariates standardized on the training set.
/// Shared-factor cancellation reduces the ratio to response bumps weighted
/// by `exp(-(d_k^2 - d_min^2) / (2 h^2))`, which cannot underflow.
#[derive(Debug, Clone)]
pub struct KdeCde {
    points: Points, // standardized
    responses: Vec<f64>,
    standardization: Standardization,
    spec: KdeCdeSpec,
}

impl KdeCde {
    pub fn fit(train: &Dataset, spec: KdeCdeSpec) -> Result<Self> {
        let responses = train.require_labels()?;
        if !(spec.h > 0.0) || !(spec.h_z > 0.0) {
            return Err(CdeError::InvalidParameter(format!(
                "KDE bandwidths must be positive, got h = {}, h_z = {}",
                spec.h, spec.h_z
            )));
        }
        let standardization = standardize_tolerant(train);
        let standardized = standardization.apply(train)?;
        Ok(Self {
            points: standardized.points().clone(),
            responses,
            standardization,
            spec,
        })
    }

    pub fn spec(&self) -> KdeCdeSpec {
        self.spec
    }
}

/// Per-coordinate standardization that keeps constant coordinates usable:
/// they are centered with unit scale, which leaves every pairwise distance
/// among training points untouched in that coordinate.
fn standardize_tolerant(train: &Dataset) -> Standardization {
    let n = train.n();
    let d = train.dim();
    let mut mean = vec![0.0; d];
    for row in train.points().rows() {
        for k in 0..d {
            mean[k] += row[k];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut scale = vec![0.0; d];
    let mut degenerate = 0usize;
    for k in 0..d {
        let mut ss = 0.0;
        for row in train.points().rows() {
            let dev = row[k] - mean[k];
            ss += dev * dev;
        }
        let sd = (ss / (n as f64 - 1.0).max(1.0)).sqrt();
        if sd > 0.0 {
            scale[k] = sd;
        } else {
            scale[k] = 1.0;
            degenerate += 1;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} constant covariate coordinates kept at unit scale for the KDE baseline");
    }
    Standardization { mean, scale }
}

impl ConditionalDensity for KdeCde {
    fn conditional_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        if x.len() != self.points.dim() {
            return Err(CdeError::DimensionMismatch {
                expected: self.points.dim(),
                found: x.len(),
            });
        }
        let mut q = vec![0.0; x.len()];
        self.standardization.apply_row(x, &mut q);
        let sq_dists: Vec<f64> = (0..self.points.n())
            .map(|k| squared_distance(&q, self.points.row(k)))
            .collect();
        let d_min = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let h2 = self.spec.h * self.spec.h;
        let weights: Vec<f64> = sq_dists
            .iter()
            .map(|&d2| (-(d2 - d_min) / (2.0 * h2)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 1e-300) || !total.is_finite() {
            log::warn!("KDE covariate density vanished at the query point; returning uniform");
            let span = grid.nodes()[grid.len() - 1] - grid.nodes()[0];
            return DensityGrid::new_normalized(grid.clone(), vec![1.0 / span; grid.len()]);
        }
        let sd = self.spec.h_z;
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| {
                let num: f64 = weights
                    .iter()
                    .zip(&self.responses)
                    .map(|(&w, &zk)| w * gaussian_pdf(z - zk, sd))
                    .sum();
                num / total
            })
            .collect();
        renormalize_on_grid(grid, values)
    }
}

fn renormalize_on_grid(grid: &ZGrid, mut values: Vec<f64>) -> Result<DensityGrid> {
    let mass = trapezoid(grid.nodes(), &values);
    if !(mass > 0.0) || !mass.is_finite() {
        log::warn!("baseline density carried no mass on the grid; returning uniform");
        let span = grid.nodes()[grid.len() - 1] - grid.nodes()[0];
        return DensityGrid::new_normalized(grid.clone(), vec![1.0 / span; grid.len()]);
    }
    for v in values.iter_mut() {
        *v /= mass;
    }
    DensityGrid::new_normalized(grid.clone(), values)
}

/// One evaluated baseline configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEntry<S> {
    pub spec: S,
    pub loss: f64,
}

fn tune_generic<S: Copy + Send + Sync, M: ConditionalDensity + Sync>(
    specs: &[S],
    fit: impl Fn(S) -> Result<M> + Sync,
    val: &Dataset,
    grid: &ZGrid,
) -> Result<(S, Vec<BaselineEntry<S>>)> {
    if specs.is_empty() {
        return Err(CdeError::EmptyInput("baseline tuning grid"));
    }
    let entries: Vec<BaselineEntry<S>> = specs
        .par_iter()
        .map(|&spec| -> Result<BaselineEntry<S>> {
            let model = fit(spec)?;
            let pieces = per_point_losses(&model, val, grid)?;
            Ok(BaselineEntry {
                spec,
                loss: loss_from_pieces(&pieces),
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (idx, e) in entries.iter().enumerate() {
        if e.loss < entries[best].loss {
            best = idx;
        }
    }
    Ok((entries[best].spec, entries))
}

/// Validation-loss grid search for the KNN estimator.
pub fn tune_knn(
    train: &Dataset,
    val: &Dataset,
    specs: &[KnnCdeSpec],
    grid: &ZGrid,
) -> Result<(KnnCde, Vec<BaselineEntry<KnnCdeSpec>>)> {
    let (best, entries) = tune_generic(specs, |s| KnnCde::fit(train, s), val, grid)?;
    Ok((KnnCde::fit(train, best)?, entries))
}

/// Validation-loss grid search for the KDE-ratio estimator.
pub fn tune_kde(
    train: &Dataset,
    val: &Dataset,
    specs: &[KdeCdeSpec],
    grid: &ZGrid,
) -> Result<(KdeCde, Vec<BaselineEntry<KdeCdeSpec>>)> {
    let (best, entries) = tune_generic(specs, |s| KdeCde::fit(train, s), val, grid)?;
    Ok((KdeCde::fit(train, best)?, entries))
}

/// Default KNN grid: neighbor counts on a dyadic ladder, response bandwidths
/// on a log grid around a Silverman-style pilot.
pub fn default_knn_grid(train: &Dataset) -> Vec<KnnCdeSpec> {
    let n = train.n();
    let mut counts = Vec::new();
    let mut k = 2usize;
    while k < n {
        counts.push(k);
        k *= 2;
    }
    counts.push(n);
    counts.dedup();
    let pilot = silverman_pilot(&train.labeled_z(), n);
    let mut specs = Vec::new();
    for &c in &counts {
        for factor in [0.5, 1.0, 2.0, 4.0] {
            specs.push(KnnCdeSpec {
                n_neighbors: c,
                eps_z: pilot * factor,
            });
        }
    }
    specs
}

/// Default KDE grid: covariate bandwidths around the dimension-adjusted
/// normal-reference rate, response bandwidths around the Silverman pilot.
pub fn default_kde_grid(train: &Dataset) -> Vec<KdeCdeSpec> {
    let n = train.n();
    let d = train.dim();
    let h_pilot = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let hz_pilot = silverman_pilot(&train.labeled_z(), n);
    let mut specs = Vec::new();
    for hf in [0.5, 1.0, 2.0, 4.0] {
        for zf in [0.5, 1.0, 2.0] {
            specs.push(KdeCdeSpec {
                h: h_pilot * hf,
                h_z: hz_pilot * zf,
            });
        }
    }
    specs
}

fn silverman_pilot(zs: &[f64], n: usize) -> f64 {
    let n_f = n.max(2) as f64;
    let mean = zs.iter().sum::<f64>() / zs.len().max(1) as f64;
    let var = zs.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>()
        / (zs.len().max(2) as f64 - 1.0);
    let sd = var.sqrt().max(1e-3);
    1.06 * sd * n_f.powf(-0.2)
}
