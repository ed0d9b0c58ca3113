//! Conditional density estimation `f(z|x)` for high-dimensional covariates
//! via spectral series expansions.
//!
//! The estimator projects the conditional density onto a tensor product of
//! an orthonormal response basis with the eigenfunctions of a kernel
//! operator, estimated from the Gram matrix over training covariates and
//! extended out of sample by the Nystrom formula. Expansion coefficients are
//! plain empirical averages, which makes loss-based tuning over the cutoffs
//! cheap: coefficients are fitted once per bandwidth and reused across the
//! whole cutoff grid.
//!
//! Modules:
//! - [`dataset`]: ingestion, response rescaling, splitting, standardization
//! - [`kernel`]: Gaussian kernel, Gram matrices, normalizations, sparsity
//! - [`spectral`]: eigendecomposition (dense or randomized) and Nystrom
//! - [`zbasis`]: Fourier and indicator bases on the response domain
//! - [`density`]: density grids and bona fide post-processing
//! - [`estimator`]: series coefficients, loss-based tuning, prediction
//! - [`baselines`]: kernel-nearest-neighbor and KDE-ratio references
//! - [`evaluation`]: test loss, bootstrap errors, PIT/KS calibration
//! - [`simgen`]: simulation scenarios with analytic oracles

pub mod baselines;
pub mod binio;
pub mod dataset;
pub mod density;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod kernel;
pub mod simgen;
pub mod spectral;
pub mod zbasis;

pub use dataset::{Dataset, Points, Sample, SplitSpec, ZTransform};
pub use density::{DensityGrid, ZGrid};
pub use error::{CdeError, Result};
pub use estimator::{CdeModel, ConditionalDensity, TuneGrids, TuneOptions, TuneReport};
pub use evaluation::EvalReport;
pub use kernel::{GramMatrix, KernelSpec, Normalization};
pub use simgen::Scenario;
pub use spectral::{EigMethod, SpectralBasis};
pub use zbasis::ZBasis;
