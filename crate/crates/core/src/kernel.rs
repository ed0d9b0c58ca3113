//! Gaussian kernel evaluation, Gram matrix construction, diffusion-style
//! normalization, density renormalization, and sparsity thresholding.

use std::io::{Read, Write};

use faer::Mat;
use rayon::prelude::*;

use crate::binio;
use crate::dataset::Points;
use crate::error::{CdeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
}

/// Operator normalization applied to the raw kernel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Raw Gaussian kernel.
    #[default]
    None,
    /// Symmetric conjugate of the row-stochastic diffusion operator,
    /// `S = D^{-1/2} G D^{-1/2}`.
    Diffusion,
    /// Degree renormalization `G[i,j] / (p(x_i) p(x_j))`.
    DensityRenormalized,
}

impl Normalization {
    pub fn tag(&self) -> u8 {
        match self {
            Normalization::None => 0,
            Normalization::Diffusion => 1,
            Normalization::DensityRenormalized => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Normalization::None),
            1 => Ok(Normalization::Diffusion),
            2 => Ok(Normalization::DensityRenormalized),
            other => Err(CdeError::Serialization(format!(
                "unknown normalization tag {other}"
            ))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normalization::None => write!(f, "none"),
            Normalization::Diffusion => write!(f, "diffusion"),
            Normalization::DensityRenormalized => write!(f, "density"),
        }
    }
}

/// Bandwidth, normalization, and sparsification settings for the Gaussian
/// kernel `K(x, y) = exp(-d^2(x, y) / (4 epsilon))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub epsilon: f64,
    pub normalization: Normalization,
    pub sparsity_threshold: f64,
}

impl KernelSpec {
    pub fn gaussian(epsilon: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            epsilon,
            normalization: Normalization::None,
            sparsity_threshold: 0.0,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_sparsity_threshold(mut self, xi: f64) -> Self {
        self.sparsity_threshold = xi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CdeError::InvalidParameter(format!(
                "kernel bandwidth must be positive, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity_threshold) {
            return Err(CdeError::InvalidParameter(format!(
                "sparsity threshold must lie in [0, 1), got {}",
                self.sparsity_threshold
            )));
        }
        Ok(())
    }
}

/// Squared Euclidean distance, accumulated as a sum of squared coordinate
/// differences. Symmetric bit-for-bit because `(a-b)^2 == (b-a)^2` exactly.
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for k in 0..x.len() {
        let diff = x[k] - y[k];
        acc += diff * diff;
    }
    acc
}

/// Evaluates the Gaussian kernel `exp(-d^2(x, y) / (4 epsilon))`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(CdeError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(gaussian_value(spec.epsilon, squared_distance(x, y)))
}

#[inline]
pub(crate) fn gaussian_value(epsilon: f64, sq_dist: f64) -> f64 {
    (-sq_dist / (4.0 * epsilon)).exp()
}

/// Minimal CSR storage for a symmetric sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense_rows(rows: &[f64], n: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = rows[i * n + j];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    /// Applies a scale factor to every stored entry via a row/column map.
    pub fn scale_entries(&mut self, f: impl Fn(usize, usize, f64) -> f64 + Sync) {
        let row_ptr = &self.row_ptr;
        let col_idx = &self.col_idx;
        let n = self.n;
        let mut row_of = vec![0usize; self.values.len()];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                row_of[k] = i;
            }
        }
        self.values
            .par_iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = f(row_of[k], col_idx[k], *v));
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut out = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.col_idx[k])] = self.values[k];
            }
        }
        out
    }

    /// Dense product `self * rhs`, parallel over rows.
    pub fn mul_mat(&self, rhs: &Mat<f64>) -> Mat<f64> {
        assert_eq!(rhs.nrows(), self.n);
        let k = rhs.ncols();
        let mut flat = vec![0.0; self.n * k];
        flat.par_chunks_mut(k).enumerate().for_each(|(i, out_row)| {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let v = self.values[p];
                for (c, slot) in out_row.iter_mut().enumerate() {
                    *slot += v * rhs[(j, c)];
                }
            }
        });
        Mat::from_fn(self.n, k, |i, c| flat[i * k + c])
    }
}

#[derive(Debug, Clone)]
pub enum GramStorage {
    Dense(Mat<f64>),
    Sparse(CsrMatrix),
}

/// Pairwise kernel matrix over a point set, with the degree vector
/// `p(x_i) = sum_k K(x_i, x_k)` taken from the unnormalized (but possibly
/// thresholded) kernel values.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    storage: GramStorage,
    degrees: Vec<f64>,
    spec: KernelSpec,
    dim: usize,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn storage(&self) -> &GramStorage {
        &self.storage
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, GramStorage::Sparse(_))
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            GramStorage::Dense(m) => m.nrows() * m.ncols(),
            GramStorage::Sparse(s) => s.nnz(),
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            GramStorage::Dense(m) => m[(i, j)],
            GramStorage::Sparse(s) => s.get(i, j),
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        match &self.storage {
            GramStorage::Dense(m) => m.clone(),
            GramStorage::Sparse(s) => s.to_dense(),
        }
    }

    pub fn mul_mat(&self, rhs: &Mat<f64>) -> Mat<f64> {
        match &self.storage {
            GramStorage::Dense(m) => m * rhs,
            GramStorage::Sparse(s) => s.mul_mat(rhs),
        }
    }

    /// Wraps an existing symmetric matrix of raw kernel values, computing
    /// degrees as row sums. Intended for tests and tools; `gram` is the
    /// production path.
    pub fn from_dense_unnormalized(values: Mat<f64>, epsilon: f64) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(CdeError::DimensionMismatch {
                expected: values.nrows(),
                found: values.ncols(),
            });
        }
        let n = values.nrows();
        let degrees: Vec<f64> = (0..n).map(|i| (0..n).map(|j| values[(i, j)]).sum()).collect();
        Ok(Self {
            storage: GramStorage::Dense(values),
            degrees,
            spec: KernelSpec::gaussian(epsilon),
            dim: 0,
        })
    }

    /// Binary cache dump: header (n, d, family, epsilon, normalization,
    /// threshold), then dense row-major values or CSR arrays, then degrees.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, b"SCDEGRAM")?;
        binio::write_u8(w, 1)?;
        binio::write_usize(w, self.n())?;
        binio::write_usize(w, self.dim)?;
        binio::write_u8(w, 0)?; // family tag: gaussian
        binio::write_f64(w, self.spec.epsilon)?;
        binio::write_u8(w, self.spec.normalization.tag())?;
        binio::write_f64(w, self.spec.sparsity_threshold)?;
        match &self.storage {
            GramStorage::Dense(m) => {
                binio::write_u8(w, 0)?;
                let n = self.n();
                binio::write_usize(w, n * n)?;
                for i in 0..n {
                    for j in 0..n {
                        binio::write_f64(w, m[(i, j)])?;
                    }
                }
            }
            GramStorage::Sparse(s) => {
                binio::write_u8(w, 1)?;
                binio::write_usize_slice(w, &s.row_ptr)?;
                binio::write_usize_slice(w, &s.col_idx)?;
                binio::write_f64_slice(w, &s.values)?;
            }
        }
        binio::write_f64_slice(w, &self.degrees)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::check_magic(r, b"SCDEGRAM")?;
        binio::expect_version(r, 1)?;
        let n = binio::read_usize(r)?;
        let dim = binio::read_usize(r)?;
        let family = binio::read_u8(r)?;
        if family != 0 {
            return Err(CdeError::Serialization(format!(
                "unknown kernel family tag {family}"
            )));
        }
        let epsilon = binio::read_f64(r)?;
        let normalization = Normalization::from_tag(binio::read_u8(r)?)?;
        let threshold = binio::read_f64(r)?;
        let spec = KernelSpec {
            family: KernelFamily::Gaussian,
            epsilon,
            normalization,
            sparsity_threshold: threshold,
        };
        let storage = match binio::read_u8(r)? {
            0 => {
                let flat = binio::read_f64_vec(r)?;
                if flat.len() != n * n {
                    return Err(CdeError::Serialization(
                        "dense payload length mismatch".into(),
                    ));
                }
                GramStorage::Dense(Mat::from_fn(n, n, |i, j| flat[i * n + j]))
            }
            1 => {
                let row_ptr = binio::read_usize_vec(r)?;
                let col_idx = binio::read_usize_vec(r)?;
                let values = binio::read_f64_vec(r)?;
                if row_ptr.len() != n + 1 || col_idx.len() != values.len() {
                    return Err(CdeError::Serialization("CSR arrays inconsistent".into()));
                }
                GramStorage::Sparse(CsrMatrix {
                    n,
                    row_ptr,
                    col_idx,
                    values,
                })
            }
            other => {
                return Err(CdeError::Serialization(format!(
                    "unknown storage tag {other}"
                )))
            }
        };
        let degrees = binio::read_f64_vec(r)?;
        if degrees.len() != n {
            return Err(CdeError::Serialization("degree vector length mismatch".into()));
        }
        Ok(Self {
            storage,
            degrees,
            spec,
            dim,
        })
    }
}

/// Raw kernel values, full matrix, parallel over rows. Every entry is
/// evaluated in the canonical coordinate order so the result is symmetric
/// bit-for-bit and independent of the parallel schedule.
fn raw_kernel_rows(points: &Points, epsilon: f64) -> Vec<f64> {
    let n = points.n();
    let mut flat = vec![0.0; n * n];
    flat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = points.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = gaussian_value(epsilon, squared_distance(xi, points.row(j)));
        }
    });
    flat
}

fn apply_threshold(flat: &mut [f64], n: usize, xi: f64) -> usize {
    let mut zeroed = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && flat[i * n + j] < xi {
                if flat[i * n + j] != 0.0 {
                    zeroed += 1;
                }
                flat[i * n + j] = 0.0;
            }
        }
    }
    zeroed
}

fn row_sums(flat: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| flat[i * n..(i + 1) * n].iter().sum()).collect()
}

/// Builds the Gram matrix for `points` under `spec`: raw Gaussian values,
/// optional sparsity thresholding (raw values below `sparsity_threshold` are
/// zeroed), degree computation, then the requested normalization.
pub fn gram(points: &Points, spec: &KernelSpec) -> Result<GramMatrix> {
    spec.validate()?;
    let n = points.n();
    if n == 0 {
        return Err(CdeError::EmptyInput("gram over an empty point set"));
    }
    let mut flat = raw_kernel_rows(points, spec.epsilon);
    let sparse = spec.sparsity_threshold > 0.0;
    if sparse {
        apply_threshold(&mut flat, n, spec.sparsity_threshold);
    }
    let degrees = row_sums(&flat, n);
    for (i, &deg) in degrees.iter().enumerate() {
        if !(deg > 0.0) {
            return Err(CdeError::IsolatedPoint(i));
        }
    }
    scale_normalization(&mut flat, n, &degrees, spec.normalization);
    let storage = if sparse {
        GramStorage::Sparse(CsrMatrix::from_dense_rows(&flat, n))
    } else {
        GramStorage::Dense(Mat::from_fn(n, n, |i, j| flat[i * n + j]))
    };
    Ok(GramMatrix {
        storage,
        degrees,
        spec: *spec,
        dim: points.dim(),
    })
}

fn scale_normalization(flat: &mut [f64], n: usize, degrees: &[f64], normalization: Normalization) {
    match normalization {
        Normalization::None => {}
        Normalization::Diffusion => {
            flat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v /= (degrees[i] * degrees[j]).sqrt();
                }
            });
        }
        Normalization::DensityRenormalized => {
            flat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v /= degrees[i] * degrees[j];
                }
            });
        }
    }
}

/// Symmetric diffusion normalization `S = D^{-1/2} G D^{-1/2}` of an
/// unnormalized Gram matrix. The row-stochastic operator's eigenfunctions
/// are `D^{-1/2}` times the eigenvectors of `S`; the top eigenvalue is 1
/// with eigenvector proportional to the square root of the degrees.
pub fn normalize_diffusion(g: &GramMatrix) -> Result<GramMatrix> {
    if g.spec.normalization != Normalization::None {
        return Err(CdeError::InvalidParameter(
            "diffusion normalization expects an unnormalized Gram matrix".into(),
        ));
    }
    for (i, &deg) in g.degrees.iter().enumerate() {
        if !(deg > 0.0) {
            return Err(CdeError::IsolatedPoint(i));
        }
    }
    let degrees = g.degrees.clone();
    let storage = match &g.storage {
        GramStorage::Dense(m) => {
            let s = Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
                m[(i, j)] / (degrees[i] * degrees[j]).sqrt()
            });
            GramStorage::Dense(s)
        }
        GramStorage::Sparse(csr) => {
            let mut csr = csr.clone();
            let d = degrees.clone();
            csr.scale_entries(move |i, j, v| v / (d[i] * d[j]).sqrt());
            GramStorage::Sparse(csr)
        }
    };
    Ok(GramMatrix {
        storage,
        degrees,
        spec: g.spec.with_normalization(Normalization::Diffusion),
        dim: g.dim,
    })
}

/// Zeroes unnormalized kernel entries below `xi` and switches to sparse
/// storage. Returns the thresholded matrix (with degrees recomputed) and
/// the fraction of off-diagonal entries that became zero.
pub fn sparsify(g: &GramMatrix, xi: f64) -> Result<(GramMatrix, f64)> {
    if g.spec.normalization != Normalization::None {
        return Err(CdeError::InvalidParameter(
            "sparsification applies to raw kernel values, before normalization".into(),
        ));
    }
    if !(0.0..1.0).contains(&xi) {
        return Err(CdeError::InvalidParameter(format!(
            "sparsity threshold must lie in [0, 1), got {xi}"
        )));
    }
    let n = g.n();
    let dense = g.to_dense();
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            flat[i * n + j] = dense[(i, j)];
        }
    }
    let zeroed = apply_threshold(&mut flat, n, xi);
    let degrees = row_sums(&flat, n);
    for (i, &deg) in degrees.iter().enumerate() {
        if !(deg > 0.0) {
            return Err(CdeError::IsolatedPoint(i));
        }
    }
    let off_diag = n * n - n;
    let fraction = if off_diag == 0 {
        0.0
    } else {
        zeroed as f64 / off_diag as f64
    };
    Ok((
        GramMatrix {
            storage: GramStorage::Sparse(CsrMatrix::from_dense_rows(&flat, n)),
            degrees,
            spec: g.spec.with_sparsity_threshold(xi),
            dim: g.dim,
        },
        fraction,
    ))
}
