//! Eigendecomposition of the (possibly normalized) Gram matrix, dense or
//! randomized, and out-of-sample eigenfunction evaluation via the Nystrom
//! extension.

use std::io::{Read, Write};

use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::binio;
use crate::dataset::Points;
use crate::error::{CdeError, Result};
use crate::kernel::{gaussian_value, gram, squared_distance, GramMatrix, KernelSpec, Normalization};

/// Relative cutoff below which trailing eigenvalues are dropped; the Nystrom
/// extension divides by the eigenvalue.
const EIGENVALUE_DROP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMethod {
    Dense,
    Randomized {
        oversampling: usize,
        power_iters: usize,
        seed: u64,
    },
}

impl EigMethod {
    pub fn randomized(seed: u64) -> Self {
        EigMethod::Randomized {
            oversampling: 10,
            power_iters: 2,
            seed,
        }
    }
}

/// Top eigenpairs of a symmetric Gram matrix: eigenvalues sorted strictly
/// decreasing, eigenvectors with unit Euclidean norm and the largest-entry
/// sign convention. Pairs with eigenvalues at or below the relative drop
/// tolerance are discarded with a warning.
pub fn eigendecompose(
    g: &GramMatrix,
    j_max: usize,
    method: &EigMethod,
) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = g.n();
    if j_max < 1 || j_max > n {
        return Err(CdeError::IndexOutOfRange {
            name: "j_max",
            value: j_max,
            max: n,
        });
    }
    let (values, vectors) = match method {
        EigMethod::Dense => dense_eigenpairs(g)?,
        EigMethod::Randomized {
            oversampling,
            power_iters,
            seed,
        } => randomized_eigenpairs(g, j_max, *oversampling, *power_iters, *seed)?,
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    let columns: Vec<Vec<f64>> = (0..values.len())
        .map(|c| {
            let mut col: Vec<f64> = (0..n).map(|i| vectors[(i, c)]).collect();
            fix_sign(&mut col);
            col
        })
        .collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| lex_cmp(&columns[a], &columns[b]))
    });

    let top = values[order[0]];
    if !(top > 0.0) {
        return Err(CdeError::EigenFailed(format!(
            "leading eigenvalue {top} is not positive"
        )));
    }
    let tol = EIGENVALUE_DROP_TOL * top;
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .take(j_max)
        .filter(|&idx| values[idx] > tol)
        .collect();
    if kept.len() < j_max {
        log::warn!(
            "dropped {} near-zero eigenvalues; basis truncated to {}",
            j_max - kept.len(),
            kept.len()
        );
    }
    if kept.is_empty() {
        return Err(CdeError::EigenFailed(
            "no eigenvalues above the drop tolerance".into(),
        ));
    }
    let eigenvalues: Vec<f64> = kept.iter().map(|&idx| values[idx]).collect();
    let eigenvectors = Mat::from_fn(n, kept.len(), |i, c| columns[kept[c]][i]);
    Ok((eigenvalues, eigenvectors))
}

fn dense_eigenpairs(g: &GramMatrix) -> Result<(Vec<f64>, Mat<f64>)> {
    let dense = g.to_dense();
    let eig = dense
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| CdeError::EigenFailed(format!("dense solver did not converge: {e:?}")))?;
    let n = g.n();
    let values: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i]).collect();
    let vectors = eig.U().to_owned();
    Ok((values, vectors))
}

/// Halko-style randomized range finder with power iterations, followed by a
/// Rayleigh-Ritz projection. Deterministic given the seed.
fn randomized_eigenpairs(
    g: &GramMatrix,
    j_max: usize,
    oversampling: usize,
    power_iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = g.n();
    let l = (j_max + oversampling).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Mat::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));

    let mut y = g.mul_mat(&omega);
    for _ in 0..power_iters {
        let q = y.qr().compute_thin_Q();
        y = g.mul_mat(&q);
    }
    let q = y.qr().compute_thin_Q();

    // Rayleigh-Ritz: B = Q^T G Q, symmetrized against rounding.
    let gq = g.mul_mat(&q);
    let b = q.transpose() * &gq;
    let b = Mat::from_fn(l, l, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]));
    let eig = b
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| CdeError::EigenFailed(format!("projected solver did not converge: {e:?}")))?;
    let values: Vec<f64> = (0..l).map(|i| eig.S().column_vector()[i]).collect();
    let vectors = &q * eig.U();
    Ok((values, vectors))
}

fn fix_sign(col: &mut [f64]) {
    let mut max_abs = 0.0;
    let mut max_idx = 0;
    for (i, &v) in col.iter().enumerate() {
        if v.abs() > max_abs {
            max_abs = v.abs();
            max_idx = i;
        }
    }
    if col[max_idx] < 0.0 {
        for v in col.iter_mut() {
            *v = -*v;
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Eigenvectors of the Gram matrix over a training point set, with enough
/// context (kernel spec and degrees) to extend them to new points.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    points: Points,
    spec: KernelSpec,
    degrees: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
    method: EigMethod,
}

impl SpectralBasis {
    /// Eigendecomposes an existing Gram matrix built over `points`.
    ///
    /// For the diffusion variant the stored matrix is the symmetric conjugate
    /// `D^{-1/2} G D^{-1/2}`; the basis keeps the row-stochastic operator's
    /// eigenvectors `D^{-1/2} v`, renormalized to unit Euclidean norm. Its
    /// top eigenfunction is constant.
    pub fn from_gram(
        points: Points,
        g: &GramMatrix,
        j_max: usize,
        method: &EigMethod,
    ) -> Result<Self> {
        if g.n() != points.n() {
            return Err(CdeError::DimensionMismatch {
                expected: g.n(),
                found: points.n(),
            });
        }
        let (eigenvalues, mut eigenvectors) = eigendecompose(g, j_max, method)?;
        if g.spec().normalization == Normalization::Diffusion {
            let n = g.n();
            let degrees = g.degrees();
            for c in 0..eigenvalues.len() {
                let mut col: Vec<f64> = (0..n)
                    .map(|i| eigenvectors[(i, c)] / degrees[i].sqrt())
                    .collect();
                let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in col.iter_mut() {
                    *v /= norm;
                }
                fix_sign(&mut col);
                for (i, &v) in col.iter().enumerate() {
                    eigenvectors[(i, c)] = v;
                }
            }
        }
        Ok(Self {
            points,
            spec: *g.spec(),
            degrees: g.degrees().to_vec(),
            eigenvalues,
            eigenvectors,
            method: *method,
        })
    }

    /// Builds the Gram matrix and eigendecomposes it in one step.
    pub fn fit(points: Points, spec: &KernelSpec, j_max: usize, method: &EigMethod) -> Result<Self> {
        let g = gram(&points, spec)?;
        SpectralBasis::from_gram(points, &g, j_max, method)
    }

    pub fn n(&self) -> usize {
        self.points.n()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn num_eigenpairs(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn kernel_spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn method(&self) -> &EigMethod {
        &self.method
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Gram eigenvalue for 1-based index `j`.
    pub fn eigenvalue(&self, j: usize) -> Result<f64> {
        self.check_j(j)?;
        Ok(self.eigenvalues[j - 1])
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Estimate of the operator eigenvalue, `l_j / n`.
    pub fn operator_eigenvalue(&self, j: usize) -> Result<f64> {
        Ok(self.eigenvalue(j)? / self.n() as f64)
    }

    /// Entry `i` of the normalized eigenvector for 1-based index `j`.
    pub fn eigenvector_entry(&self, j: usize, i: usize) -> Result<f64> {
        self.check_j(j)?;
        Ok(self.eigenvectors[(i, j - 1)])
    }

    fn check_j(&self, j: usize) -> Result<()> {
        if j < 1 || j > self.eigenvalues.len() {
            return Err(CdeError::IndexOutOfRange {
                name: "eigenfunction index",
                value: j,
                max: self.eigenvalues.len(),
            });
        }
        Ok(())
    }

    /// Kernel values between `x` and every training point, thresholded and
    /// normalized exactly as the Gram matrix rows were, so at a training
    /// point the row reproduces the Gram row bit-for-bit.
    fn kernel_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.points.dim() {
            return Err(CdeError::DimensionMismatch {
                expected: self.points.dim(),
                found: x.len(),
            });
        }
        let n = self.points.n();
        let xi = self.spec.sparsity_threshold;
        let mut row: Vec<f64> = (0..n)
            .map(|k| gaussian_value(self.spec.epsilon, squared_distance(x, self.points.row(k))))
            .collect();
        if xi > 0.0 {
            // xi < 1, so unit values (a query equal to a training point)
            // survive, matching the Gram diagonal exemption.
            for v in row.iter_mut() {
                if *v < xi {
                    *v = 0.0;
                }
            }
        }
        match self.spec.normalization {
            Normalization::None => {}
            Normalization::Diffusion => {
                // Row-stochastic kernel K(x, x_k) / p(x); the stored
                // eigenvectors belong to the row-stochastic operator.
                let p: f64 = row.iter().sum();
                if p > 0.0 {
                    for v in row.iter_mut() {
                        *v /= p;
                    }
                } else {
                    log::warn!("query point is isolated from the training set; eigenfunctions evaluate to zero");
                }
            }
            Normalization::DensityRenormalized => {
                let p: f64 = row.iter().sum();
                if p > 0.0 {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v /= p * self.degrees[k];
                    }
                } else {
                    log::warn!("query point is isolated from the training set; eigenfunctions evaluate to zero");
                }
            }
        }
        Ok(row)
    }

    /// Nystrom extension of eigenfunction `j` at `x`:
    /// `(sqrt(n) / l_j) * sum_k psi_j(x_k) K(x, x_k)`.
    pub fn nystrom_eval(&self, x: &[f64], j: usize) -> Result<f64> {
        self.check_j(j)?;
        let queries = Points::new(x.to_vec(), 1, x.len())?;
        let m = self.nystrom_eval_batch(&queries, j..=j)?;
        Ok(m[(0, 0)])
    }

    /// Batch Nystrom evaluation over query points and a 1-based inclusive
    /// index range. One kernel pass per query is shared across all `j`.
    pub fn nystrom_eval_batch(
        &self,
        queries: &Points,
        j_range: std::ops::RangeInclusive<usize>,
    ) -> Result<Mat<f64>> {
        let (lo, hi) = (*j_range.start(), *j_range.end());
        if lo > hi {
            return Ok(Mat::zeros(queries.n(), 0));
        }
        self.check_j(lo)?;
        self.check_j(hi)?;
        if queries.dim() != self.points.dim() {
            return Err(CdeError::DimensionMismatch {
                expected: self.points.dim(),
                found: queries.dim(),
            });
        }
        let n = self.points.n();
        let m = queries.n();
        let width = hi - lo + 1;
        let sqrt_n = (n as f64).sqrt();
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|q| -> Result<Vec<f64>> {
                let kvals = self.kernel_row(queries.row(q))?;
                let mut out = vec![0.0; width];
                for (c, slot) in out.iter_mut().enumerate() {
                    let j = lo + c;
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += self.eigenvectors[(k, j - 1)] * kvals[k];
                    }
                    *slot = sqrt_n / self.eigenvalues[j - 1] * acc;
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(Mat::from_fn(m, width, |i, c| rows[i][c]))
    }

    /// Versioned binary container; round-trips are bit-exact.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCDEBAS1")?;
        binio::write_u8(w, 1)?;
        match self.method {
            EigMethod::Dense => binio::write_u8(w, 0)?,
            EigMethod::Randomized {
                oversampling,
                power_iters,
                seed,
            } => {
                binio::write_u8(w, 1)?;
                binio::write_usize(w, oversampling)?;
                binio::write_usize(w, power_iters)?;
                binio::write_u64(w, seed)?;
            }
        }
        binio::write_f64(w, self.spec.epsilon)?;
        binio::write_u8(w, self.spec.normalization.tag())?;
        binio::write_f64(w, self.spec.sparsity_threshold)?;
        binio::write_usize(w, self.points.n())?;
        binio::write_usize(w, self.points.dim())?;
        binio::write_f64_slice(w, self.points.as_slice())?;
        binio::write_f64_slice(w, &self.degrees)?;
        binio::write_f64_slice(w, &self.eigenvalues)?;
        let n = self.points.n();
        let j = self.eigenvalues.len();
        binio::write_usize(w, n * j)?;
        for c in 0..j {
            for i in 0..n {
                binio::write_f64(w, self.eigenvectors[(i, c)])?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::check_magic(r, b"SCDEBAS1")?;
        binio::expect_version(r, 1)?;
        let method = match binio::read_u8(r)? {
            0 => EigMethod::Dense,
            1 => EigMethod::Randomized {
                oversampling: binio::read_usize(r)?,
                power_iters: binio::read_usize(r)?,
                seed: binio::read_u64(r)?,
            },
            tag => {
                return Err(CdeError::Serialization(format!(
                    "unknown eigensolver tag {tag}"
                )))
            }
        };
        let epsilon = binio::read_f64(r)?;
        let normalization = Normalization::from_tag(binio::read_u8(r)?)?;
        let threshold = binio::read_f64(r)?;
        let spec = KernelSpec::gaussian(epsilon)
            .with_normalization(normalization)
            .with_sparsity_threshold(threshold);
        let n = binio::read_usize(r)?;
        let d = binio::read_usize(r)?;
        let data = binio::read_f64_vec(r)?;
        let points = Points::new(data, n, d)?;
        let degrees = binio::read_f64_vec(r)?;
        let eigenvalues = binio::read_f64_vec(r)?;
        let flat = binio::read_f64_vec(r)?;
        let j = eigenvalues.len();
        if degrees.len() != n || flat.len() != n * j {
            return Err(CdeError::Serialization("basis payload mismatch".into()));
        }
        let eigenvectors = Mat::from_fn(n, j, |i, c| flat[c * n + i]);
        Ok(Self {
            points,
            spec,
            degrees,
            eigenvalues,
            eigenvectors,
            method,
        })
    }
}
