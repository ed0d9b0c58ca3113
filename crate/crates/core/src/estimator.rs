//! The spectral series conditional density estimator: coefficient fitting,
//! raw series evaluation, empirical-loss model selection over the tuning
//! grids, bump-threshold selection, and post-processed prediction.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use faer::Mat;
use rayon::prelude::*;

use crate::binio;
use crate::dataset::{Dataset, Points, Standardization, ZTransform};
use crate::density::{normalize, remove_bumps, trapezoid, DensityGrid, ZGrid};
use crate::error::{CdeError, Result};
use crate::kernel::{gram, squared_distance, KernelSpec, Normalization};
use crate::spectral::{EigMethod, SpectralBasis};
use crate::zbasis::ZBasis;

/// Chunk length for deterministic parallel reductions: chunks are summed
/// internally in index order and chunk results are combined in chunk order,
/// so totals do not depend on the thread count.
const REDUCTION_CHUNK: usize = 64;

/// A conditional density estimator evaluable on a response grid.
pub trait ConditionalDensity {
    /// Post-processed (bona fide) density of `z | x` over `grid`.
    fn conditional_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid>;
}

/// Fitted spectral series model: basis, response basis, coefficient matrix,
/// chosen cutoffs, bump threshold, and the response transform.
#[derive(Debug, Clone)]
pub struct CdeModel {
    basis: SpectralBasis,
    z_basis: ZBasis,
    beta: Mat<f64>,
    chosen_i: usize,
    chosen_j: usize,
    delta: f64,
    z_transform: ZTransform,
    /// Covariate standardization applied to raw prediction queries when the
    /// model was fitted on standardized covariates. The raw-series methods
    /// (`eval_raw*`, `estimate_loss`) work on the basis scale and do not
    /// apply it.
    standardization: Option<Standardization>,
}

impl CdeModel {
    pub fn new(
        basis: SpectralBasis,
        z_basis: ZBasis,
        beta: Mat<f64>,
        chosen_i: usize,
        chosen_j: usize,
        delta: f64,
        z_transform: ZTransform,
    ) -> Result<Self> {
        if chosen_i < 1 || chosen_i > beta.nrows() {
            return Err(CdeError::IndexOutOfRange {
                name: "chosen_i",
                value: chosen_i,
                max: beta.nrows(),
            });
        }
        if chosen_j < 1 || chosen_j > beta.ncols() || beta.ncols() > basis.num_eigenpairs() {
            return Err(CdeError::IndexOutOfRange {
                name: "chosen_j",
                value: chosen_j,
                max: beta.ncols().min(basis.num_eigenpairs()),
            });
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(CdeError::InvalidParameter(format!(
                "bump threshold must lie in [0, 1), got {delta}"
            )));
        }
        for i in 0..beta.nrows() {
            for j in 0..beta.ncols() {
                if !beta[(i, j)].is_finite() {
                    return Err(CdeError::InvalidParameter(format!(
                        "coefficient ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        Ok(Self {
            basis,
            z_basis,
            beta,
            chosen_i,
            chosen_j,
            delta,
            z_transform,
            standardization: None,
        })
    }

    pub fn with_standardization(mut self, standardization: Option<Standardization>) -> Self {
        self.standardization = standardization;
        self
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn z_basis(&self) -> &ZBasis {
        &self.z_basis
    }

    pub fn beta(&self) -> &Mat<f64> {
        &self.beta
    }

    pub fn chosen_cutoffs(&self) -> (usize, usize) {
        (self.chosen_i, self.chosen_j)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.basis.kernel_spec().epsilon
    }

    pub fn z_transform(&self) -> ZTransform {
        self.z_transform
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(CdeError::InvalidParameter(format!(
                "bump threshold must lie in [0, 1), got {delta}"
            )));
        }
        self.delta = delta;
        Ok(self)
    }

    /// Raw (unnormalized) series values over `grid` at cutoffs `(i, j)`:
    /// `sum_{i' <= i} sum_{j' <= j} beta[i', j'] phi_i'(z) psi_j'(x)`.
    pub fn eval_raw(&self, x: &[f64], grid: &ZGrid, i: usize, j: usize) -> Result<DensityGrid> {
        self.check_cutoffs(i, j)?;
        let queries = Points::new(x.to_vec(), 1, x.len())?;
        let psi = self.basis.nystrom_eval_batch(&queries, 1..=j)?;
        // Collapse over j first: a_i = sum_j beta[i, j] psi_j(x).
        let mut phi_coeff = vec![0.0; i];
        for (row, slot) in phi_coeff.iter_mut().enumerate() {
            let mut acc = 0.0;
            for col in 0..j {
                acc += self.beta[(row, col)] * psi[(0, col)];
            }
            *slot = acc;
        }
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| -> Result<f64> {
                let mut acc = 0.0;
                for (row, &a) in phi_coeff.iter().enumerate() {
                    acc += a * self.z_basis.phi_unit(row + 1, z)?;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        DensityGrid::new_raw(grid.clone(), values)
    }

    /// Raw series value at a single response point.
    pub fn eval_raw_at(&self, x: &[f64], z: f64, i: usize, j: usize) -> Result<f64> {
        self.check_cutoffs(i, j)?;
        let queries = Points::new(x.to_vec(), 1, x.len())?;
        let psi = self.basis.nystrom_eval_batch(&queries, 1..=j)?;
        let mut acc = 0.0;
        for row in 0..i {
            let mut a = 0.0;
            for col in 0..j {
                a += self.beta[(row, col)] * psi[(0, col)];
            }
            acc += a * self.z_basis.phi_unit(row + 1, z)?;
        }
        Ok(acc)
    }

    fn check_cutoffs(&self, i: usize, j: usize) -> Result<()> {
        if i < 1 || i > self.beta.nrows() {
            return Err(CdeError::IndexOutOfRange {
                name: "cutoff I",
                value: i,
                max: self.beta.nrows(),
            });
        }
        if j < 1 || j > self.beta.ncols() {
            return Err(CdeError::IndexOutOfRange {
                name: "cutoff J",
                value: j,
                max: self.beta.ncols(),
            });
        }
        Ok(())
    }

    /// Empirical loss of the raw series at cutoffs `(i, j)` on a labelled
    /// evaluation set: the quadratic form in the coefficients against the
    /// empirical eigenfunction second-moment matrix, minus twice the mean
    /// of the estimate at the observed responses.
    pub fn estimate_loss(&self, eval: &Dataset, i: usize, j: usize) -> Result<f64> {
        self.check_cutoffs(i, j)?;
        let table = loss_table(
            &self.basis,
            &self.z_basis,
            &self.beta,
            eval,
            &[i],
            &[j],
        )?;
        Ok(table[0])
    }

    /// Post-processed density at the model's chosen configuration. Raw
    /// queries pass through the stored covariate standardization, if any.
    pub fn predict_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        let raw = match &self.standardization {
            Some(t) => {
                let mut q = vec![0.0; x.len()];
                if x.len() != t.mean.len() {
                    return Err(CdeError::DimensionMismatch {
                        expected: t.mean.len(),
                        found: x.len(),
                    });
                }
                t.apply_row(x, &mut q);
                self.eval_raw(&q, grid, self.chosen_i, self.chosen_j)?
            }
            None => self.eval_raw(x, grid, self.chosen_i, self.chosen_j)?,
        };
        remove_bumps(&normalize(&raw), self.delta)
    }

    /// CDF of the post-processed density, linearly interpolated on the
    /// default grid; `F(0) = 0` and `F(1) = 1` exactly.
    pub fn predict_cdf(&self, x: &[f64], z: f64) -> Result<f64> {
        let grid = ZGrid::default_unit();
        let density = self.predict_density(x, &grid)?;
        Ok(density.cdf(z))
    }

    /// Versioned binary container; round-trips are bit-exact.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCDEMDL1")?;
        binio::write_u8(w, 1)?;
        self.basis.write_to(w)?;
        self.z_basis.write_to(w)?;
        binio::write_usize(w, self.beta.nrows())?;
        binio::write_usize(w, self.beta.ncols())?;
        for i in 0..self.beta.nrows() {
            for j in 0..self.beta.ncols() {
                binio::write_f64(w, self.beta[(i, j)])?;
            }
        }
        binio::write_usize(w, self.chosen_i)?;
        binio::write_usize(w, self.chosen_j)?;
        binio::write_f64(w, self.delta)?;
        binio::write_f64(w, self.z_transform.offset)?;
        binio::write_f64(w, self.z_transform.scale)?;
        match &self.standardization {
            None => binio::write_u8(w, 0)?,
            Some(t) => {
                binio::write_u8(w, 1)?;
                binio::write_f64_slice(w, &t.mean)?;
                binio::write_f64_slice(w, &t.scale)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::check_magic(r, b"SCDEMDL1")?;
        binio::expect_version(r, 1)?;
        let basis = SpectralBasis::read_from(r)?;
        let z_basis = ZBasis::read_from(r)?;
        let rows = binio::read_usize(r)?;
        let cols = binio::read_usize(r)?;
        let mut beta = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                beta[(i, j)] = binio::read_f64(r)?;
            }
        }
        let chosen_i = binio::read_usize(r)?;
        let chosen_j = binio::read_usize(r)?;
        let delta = binio::read_f64(r)?;
        let offset = binio::read_f64(r)?;
        let scale = binio::read_f64(r)?;
        let standardization = match binio::read_u8(r)? {
            0 => None,
            1 => Some(Standardization {
                mean: binio::read_f64_vec(r)?,
                scale: binio::read_f64_vec(r)?,
            }),
            tag => {
                return Err(CdeError::Serialization(format!(
                    "unknown standardization tag {tag}"
                )))
            }
        };
        Ok(CdeModel::new(
            basis,
            z_basis,
            beta,
            chosen_i,
            chosen_j,
            delta,
            ZTransform::new(offset, scale)?,
        )?
        .with_standardization(standardization))
    }
}

impl ConditionalDensity for CdeModel {
    fn conditional_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        self.predict_density(x, grid)
    }
}

/// Coefficient matrix of empirical averages,
/// `beta[i, j] = (1/n) sum_k phi_i(z_k) psi_j(x_k)`,
/// over a fully labelled training set. Every cell is summed in sample order,
/// so a larger fit leaves the overlapping block bit-identical.
pub fn fit_coefficients(
    train: &Dataset,
    basis: &SpectralBasis,
    z_basis: &ZBasis,
    i_max: usize,
    j_max: usize,
) -> Result<Mat<f64>> {
    if !z_basis.is_lebesgue() {
        return Err(CdeError::UnsupportedBasis(
            "the continuous series pipeline needs a Lebesgue-orthonormal response basis".into(),
        ));
    }
    if i_max < 1 || j_max < 1 {
        return Err(CdeError::InvalidParameter(
            "coefficient cutoffs must be at least 1".into(),
        ));
    }
    if let Some(p) = z_basis.max_index() {
        if i_max > p {
            return Err(CdeError::IndexOutOfRange {
                name: "i_max",
                value: i_max,
                max: p,
            });
        }
    }
    if j_max > basis.num_eigenpairs() {
        return Err(CdeError::IndexOutOfRange {
            name: "j_max",
            value: j_max,
            max: basis.num_eigenpairs(),
        });
    }
    let zs = train.require_labels()?;
    let n = train.n();
    if n == 0 {
        return Err(CdeError::EmptyInput("coefficient fit over an empty set"));
    }
    // When the training points are the leading block of the basis point set
    // (the usual case; unlabeled points follow them), the eigenfunction
    // values at training points are sqrt(n) times the stored eigenvector
    // entries, skipping the kernel pass entirely. This keeps the fit's cost
    // independent of the covariate dimension.
    let d = train.dim();
    let in_sample = n <= basis.n()
        && d == basis.dim()
        && train.points().as_slice() == &basis.points().as_slice()[..n * d];
    let psi = if in_sample {
        let sqrt_n = (basis.n() as f64).sqrt();
        Mat::from_fn(n, j_max, |k, j| {
            sqrt_n * basis.eigenvector_entry(j + 1, k).expect("checked j_max")
        })
    } else {
        basis.nystrom_eval_batch(train.points(), 1..=j_max)?
    };
    let mut phi = Mat::zeros(n, i_max);
    for (k, &z) in zs.iter().enumerate() {
        for i in 0..i_max {
            phi[(k, i)] = z_basis.phi_unit(i + 1, z)?;
        }
    }
    let cells: Vec<f64> = (0..i_max * j_max)
        .into_par_iter()
        .map(|cell| {
            let i = cell / j_max;
            let j = cell % j_max;
            let mut acc = 0.0;
            for k in 0..n {
                acc += phi[(k, i)] * psi[(k, j)];
            }
            acc / n as f64
        })
        .collect();
    Ok(Mat::from_fn(i_max, j_max, |i, j| cells[i * j_max + j]))
}

/// Grids over the kernel bandwidth and the series cutoffs.
#[derive(Debug, Clone)]
pub struct TuneGrids {
    pub epsilon: Vec<f64>,
    pub i_values: Vec<usize>,
    pub j_values: Vec<usize>,
}

impl TuneGrids {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_empty() || self.i_values.is_empty() || self.j_values.is_empty() {
            return Err(CdeError::EmptyInput("tuning grid"));
        }
        if self.epsilon.iter().any(|&e| !(e > 0.0)) {
            return Err(CdeError::InvalidParameter(
                "bandwidth grid values must be positive".into(),
            ));
        }
        if self.i_values.iter().any(|&i| i < 1) || self.j_values.iter().any(|&j| j < 1) {
            return Err(CdeError::InvalidParameter(
                "cutoff grid values must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Default desk-scale grids: 10 bandwidths centered on the median
    /// pairwise squared distance over 8, cutoffs 1..=30 and 1..=min(n/2, 60).
    pub fn default_for(train: &Dataset) -> Self {
        let n = train.n();
        let j_hi = (n / 2).clamp(1, 60);
        Self {
            epsilon: default_epsilon_grid(train.points(), 10),
            i_values: (1..=30).collect(),
            j_values: (1..=j_hi).collect(),
        }
    }
}

/// Logarithmic bandwidth grid centered on `median(d^2) / 8`, spanning a
/// factor of 16 on each side.
pub fn default_epsilon_grid(points: &Points, count: usize) -> Vec<f64> {
    let center = median_sq_distance(points) / 8.0;
    let center = if center > 0.0 { center } else { 1.0 };
    if count <= 1 {
        return vec![center];
    }
    let half_width = 16.0f64.ln();
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            (center.ln() - half_width + 2.0 * half_width * t).exp()
        })
        .collect()
}

/// Median pairwise squared Euclidean distance, subsampled by striding for
/// large sets.
pub fn median_sq_distance(points: &Points) -> f64 {
    let n = points.n();
    if n < 2 {
        return 0.0;
    }
    let max_pts = 700;
    let stride = n.div_ceil(max_pts);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in idx.iter().skip(a + 1) {
            dists.push(squared_distance(points.row(i), points.row(j)));
        }
    }
    let mid = dists.len() / 2;
    *dists
        .select_nth_unstable_by(mid, f64::total_cmp)
        .1
}

/// Kernel and eigensolver settings for a tuning run.
#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub normalization: Normalization,
    pub sparsity_threshold: f64,
    pub method: EigMethod,
    /// Additional unlabelled covariate points included in the Gram matrix;
    /// coefficients still average over the labelled training set only.
    pub unlabeled: Option<Points>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::None,
            sparsity_threshold: 0.0,
            method: EigMethod::Dense,
            unlabeled: None,
        }
    }
}

/// One evaluated grid configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneEntry {
    pub epsilon: f64,
    pub i: usize,
    pub j: usize,
    pub loss: f64,
}

/// Wall-clock totals per tuning phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub gram: Duration,
    pub eigen: Duration,
    pub coefficients: Duration,
    pub loss_sweep: Duration,
}

/// Every configuration's estimated loss plus instrumentation counters.
#[derive(Debug, Clone)]
pub struct TuneReport {
    pub entries: Vec<TuneEntry>,
    pub best_index: usize,
    pub coefficient_fits: usize,
    pub basis_builds: usize,
    pub timings: PhaseTimings,
}

impl TuneReport {
    pub fn best(&self) -> &TuneEntry {
        &self.entries[self.best_index]
    }
}

/// Grid search over `(epsilon, I, J)` by the estimated loss on a validation
/// set. Coefficients are fitted once per bandwidth at the largest cutoffs
/// and reused for every `(I, J)` pair; ties are broken toward the smaller
/// configuration in `(epsilon, I, J)` priority order.
pub fn tune(
    train: &Dataset,
    val: &Dataset,
    grids: &TuneGrids,
    z_basis: &ZBasis,
    options: &TuneOptions,
) -> Result<(CdeModel, TuneReport)> {
    grids.validate()?;
    if val.n() == 0 {
        return Err(CdeError::EmptyInput("validation set"));
    }
    if !z_basis.is_lebesgue() {
        return Err(CdeError::UnsupportedBasis(
            "the continuous series pipeline needs a Lebesgue-orthonormal response basis".into(),
        ));
    }
    let _ = train.require_labels()?;
    let _ = val.require_labels()?;

    let basis_points = match &options.unlabeled {
        Some(extra) => train.points().concat(extra)?,
        None => train.points().clone(),
    };
    let i_max = *grids.i_values.iter().max().expect("validated nonempty");
    let j_max_grid = *grids.j_values.iter().max().expect("validated nonempty");
    let j_max = j_max_grid.min(basis_points.n());
    if j_max < j_max_grid {
        log::warn!(
            "J grid maximum {j_max_grid} exceeds the basis size; truncating to {j_max}"
        );
    }

    let mut entries = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_state: Option<(SpectralBasis, Mat<f64>)> = None;
    let mut timings = PhaseTimings::default();
    let mut coefficient_fits = 0usize;
    let mut basis_builds = 0usize;

    for &epsilon in &grids.epsilon {
        let spec = KernelSpec::gaussian(epsilon)
            .with_normalization(options.normalization)
            .with_sparsity_threshold(options.sparsity_threshold);

        let t = Instant::now();
        let g = gram(&basis_points, &spec)?;
        timings.gram += t.elapsed();

        let t = Instant::now();
        let basis = SpectralBasis::from_gram(basis_points.clone(), &g, j_max, &options.method)?;
        timings.eigen += t.elapsed();
        basis_builds += 1;
        let j_basis = basis.num_eigenpairs();

        let t = Instant::now();
        let beta = fit_coefficients(train, &basis, z_basis, i_max, j_basis)?;
        timings.coefficients += t.elapsed();
        coefficient_fits += 1;

        let t = Instant::now();
        let j_values: Vec<usize> = grids
            .j_values
            .iter()
            .copied()
            .filter(|&j| j <= j_basis)
            .collect();
        if j_values.len() < grids.j_values.len() {
            log::warn!(
                "epsilon = {epsilon}: basis kept {j_basis} eigenpairs; larger J grid values skipped"
            );
        }
        if j_values.is_empty() {
            timings.loss_sweep += t.elapsed();
            continue;
        }
        let losses = loss_table(&basis, z_basis, &beta, val, &grids.i_values, &j_values)?;
        timings.loss_sweep += t.elapsed();

        let mut improved = false;
        for (a, &i) in grids.i_values.iter().enumerate() {
            for (b, &j) in j_values.iter().enumerate() {
                let loss = losses[a * j_values.len() + b];
                entries.push(TuneEntry {
                    epsilon,
                    i,
                    j,
                    loss,
                });
                let index = entries.len() - 1;
                if best.is_none_or(|(_, best_loss)| loss < best_loss) {
                    best = Some((index, loss));
                    improved = true;
                }
            }
        }
        if improved {
            best_state = Some((basis, beta));
        }
    }

    let (best_index, _) = best.ok_or(CdeError::EmptyInput(
        "no tuning configuration could be evaluated",
    ))?;
    let (basis, beta) = best_state.expect("state kept alongside best index");
    let chosen = entries[best_index];
    let model = CdeModel::new(
        basis,
        z_basis.clone(),
        beta,
        chosen.i,
        chosen.j,
        0.0,
        train.z_transform(),
    )?;
    let report = TuneReport {
        entries,
        best_index,
        coefficient_fits,
        basis_builds,
        timings,
    };
    Ok((model, report))
}

/// Estimated losses for every `(I, J)` pair in one pass over the evaluation
/// set. Returns a row-major `i_values.len() x j_values.len()` table.
fn loss_table(
    basis: &SpectralBasis,
    z_basis: &ZBasis,
    beta: &Mat<f64>,
    eval: &Dataset,
    i_values: &[usize],
    j_values: &[usize],
) -> Result<Vec<f64>> {
    let zs = eval.require_labels()?;
    let n_eval = eval.n();
    if n_eval == 0 {
        return Err(CdeError::EmptyInput("loss evaluation set"));
    }
    let i_max = *i_values.iter().max().expect("nonempty");
    let j_max = *j_values.iter().max().expect("nonempty");
    if i_max > beta.nrows() || j_max > beta.ncols() {
        return Err(CdeError::IndexOutOfRange {
            name: "loss cutoff",
            value: i_max.max(j_max),
            max: beta.nrows().min(beta.ncols()),
        });
    }

    let psi = basis.nystrom_eval_batch(eval.points(), 1..=j_max)?;
    let mut phi = Mat::zeros(n_eval, i_max);
    for (k, &z) in zs.iter().enumerate() {
        for i in 0..i_max {
            phi[(k, i)] = z_basis.phi_unit(i + 1, z)?;
        }
    }

    // W[j, m] = (1/n') sum_k psi_j(x'_k) psi_m(x'_k), deterministic chunked
    // reduction.
    let w_chunks: Vec<Vec<f64>> = (0..n_eval)
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|ks| {
            let mut acc = vec![0.0; j_max * j_max];
            for &k in ks {
                for j in 0..j_max {
                    let pj = psi[(k, j)];
                    for m in 0..j_max {
                        acc[j * j_max + m] += pj * psi[(k, m)];
                    }
                }
            }
            acc
        })
        .collect();
    let mut w = vec![0.0; j_max * j_max];
    for chunk in &w_chunks {
        for (slot, v) in w.iter_mut().zip(chunk) {
            *slot += v;
        }
    }
    for v in w.iter_mut() {
        *v /= n_eval as f64;
    }

    // Quadratic term for every (I, J) prefix: q[i][J] accumulated from the
    // incremental expansion of beta_i' W beta_i.
    let mut quad_prefix = vec![0.0; i_max * (j_max + 1)];
    for i in 0..i_max {
        let mut q = 0.0;
        for j in 0..j_max {
            let b = beta[(i, j)];
            let mut cross = 0.0;
            for m in 0..j {
                cross += beta[(i, m)] * w[(m * j_max) + j];
            }
            q += 2.0 * b * cross + b * b * w[j * j_max + j];
            quad_prefix[i * (j_max + 1) + j + 1] = q;
        }
    }
    // first_term[(I, J)] = sum_{i <= I} q[i][J].
    let mut first_term = vec![0.0; (i_max + 1) * (j_max + 1)];
    for i in 1..=i_max {
        for j in 1..=j_max {
            first_term[i * (j_max + 1) + j] =
                first_term[(i - 1) * (j_max + 1) + j] + quad_prefix[(i - 1) * (j_max + 1) + j];
        }
    }

    // Mean of the raw series at the observed responses, for every (I, J)
    // prefix, via per-point two-dimensional prefix sums.
    let fhat_chunks: Vec<Vec<f64>> = (0..n_eval)
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|ks| {
            let mut acc = vec![0.0; i_max * j_max];
            let mut cell = vec![0.0; i_max * j_max];
            for &k in ks {
                for i in 0..i_max {
                    let f = phi[(k, i)];
                    let mut row_run = 0.0;
                    for j in 0..j_max {
                        row_run += beta[(i, j)] * f * psi[(k, j)];
                        cell[i * j_max + j] = row_run;
                    }
                }
                for i in 1..i_max {
                    for j in 0..j_max {
                        cell[i * j_max + j] += cell[(i - 1) * j_max + j];
                    }
                }
                for (slot, v) in acc.iter_mut().zip(&cell) {
                    *slot += v;
                }
            }
            acc
        })
        .collect();
    let mut fhat_sum = vec![0.0; i_max * j_max];
    for chunk in &fhat_chunks {
        for (slot, v) in fhat_sum.iter_mut().zip(chunk) {
            *slot += v;
        }
    }

    let mut out = Vec::with_capacity(i_values.len() * j_values.len());
    for &i in i_values {
        for &j in j_values {
            let t1 = first_term[i * (j_max + 1) + j];
            let t2 = fhat_sum[(i - 1) * j_max + (j - 1)] / n_eval as f64;
            out.push(t1 - 2.0 * t2);
        }
    }
    Ok(out)
}

/// One evaluated bump threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEntry {
    pub delta: f64,
    pub loss: f64,
}

/// Post-processing loss sweep over a bump-threshold grid, greedy after the
/// main tuning pass: for each delta the post-processed density is evaluated
/// per validation point, the squared-density integral by quadrature and the
/// density at the observed response by interpolation.
pub fn tune_delta(
    model: &CdeModel,
    val: &Dataset,
    delta_grid: &[f64],
    grid: &ZGrid,
) -> Result<(f64, Vec<DeltaEntry>)> {
    if delta_grid.is_empty() {
        return Err(CdeError::EmptyInput("delta grid"));
    }
    let zs = val.require_labels()?;
    if val.n() == 0 {
        return Err(CdeError::EmptyInput("validation set"));
    }
    for &d in delta_grid {
        if !(0.0..1.0).contains(&d) {
            return Err(CdeError::InvalidParameter(format!(
                "bump threshold must lie in [0, 1), got {d}"
            )));
        }
    }

    // Per point: normalize once, then per delta prune and accumulate both
    // loss pieces. Chunked for a thread-count-independent reduction.
    let contributions: Vec<Vec<(f64, f64)>> = (0..val.n())
        .collect::<Vec<_>>()
        .par_chunks(REDUCTION_CHUNK)
        .map(|ks| -> Result<Vec<(f64, f64)>> {
            let mut acc = vec![(0.0, 0.0); delta_grid.len()];
            for &k in ks {
                let raw = model.eval_raw(val.x(k), grid, model.chosen_i, model.chosen_j)?;
                let base = normalize(&raw);
                for (slot, &delta) in acc.iter_mut().zip(delta_grid) {
                    let pruned = remove_bumps(&base, delta)?;
                    let sq: Vec<f64> = pruned.values().iter().map(|v| v * v).collect();
                    slot.0 += trapezoid(pruned.nodes(), &sq);
                    slot.1 += pruned.value_at(zs[k]);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut totals = vec![(0.0, 0.0); delta_grid.len()];
    for chunk in &contributions {
        for (slot, v) in totals.iter_mut().zip(chunk) {
            slot.0 += v.0;
            slot.1 += v.1;
        }
    }
    let n = val.n() as f64;
    let mut entries = Vec::with_capacity(delta_grid.len());
    let mut best = 0usize;
    for (idx, (&delta, &(sq, at))) in delta_grid.iter().zip(&totals).enumerate() {
        let loss = sq / n - 2.0 * at / n;
        entries.push(DeltaEntry { delta, loss });
        if entries[idx].loss < entries[best].loss {
            best = idx;
        }
    }
    Ok((entries[best].delta, entries))
}
