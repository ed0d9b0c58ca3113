//! Simulation scenarios with analytic true conditional densities: data on a
//! manifold (circle or torus), one or few relevant covariates, and the
//! non-sparse mean-of-coordinates response. Each serves as an oracle for the
//! estimators.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{Dataset, Points, ZTransform};
use crate::density::{trapezoid, DensityGrid, ZGrid};
use crate::error::{CdeError, Result};
use crate::estimator::ConditionalDensity;
use crate::evaluation::derive_seed;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Points on a product of `circles` unit circles occupying the first
    /// `2 * circles` coordinatesent, zeros elsewhere; the response follows the
    /// first angle. `rotate` applies a fixed random orthogonal map so the
    /// manifold is not axis-aligned.
    Manifold { circles: usize, rotate: bool },
    /// Standard normal covariates; the response mean is the normalized sum
    /// of the first `relevant` coordinates.
    OneRelevant { relevant: usize },
    /// Standard normal covariates; the response mean is the average of all
    /// coordinates.
    NonSparse,
}

/// A simulation scenario: kind, ambient dimension, noise variance, seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub d: usize,
    pub sigma2: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn manifold(d: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Manifold {
                circles: 1,
                rotate: false,
            },
            d,
            sigma2: 0.5,
            seed,
        }
    }

    pub fn one_relevant(d: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::OneRelevant { relevant: 1 },
            d,
            sigma2: 0.5,
            seed,
        }
    }

    pub fn non_sparse(d: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::NonSparse,
            d,
            sigma2: 0.5,
            seed,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn with_circles(mut self, circles: usize) -> Self {
        if let ScenarioKind::Manifold { rotate, .. } = self.kind {
            self.kind = ScenarioKind::Manifold { circles, rotate };
        }
        self
    }

    pub fn with_rotation(mut self, rotate: bool) -> Self {
        if let ScenarioKind::Manifold { circles, .. } = self.kind {
            self.kind = ScenarioKind::Manifold { circles, rotate };
        }
        self
    }

    pub fn with_relevant(mut self, relevant: usize) -> Self {
        if let ScenarioKind::OneRelevant { .. } = self.kind {
            self.kind = ScenarioKind::OneRelevant { relevant };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) {
            return Err(CdeError::InvalidParameter(format!(
                "noise variance must be positive, got {}",
                self.sigma2
            )));
        }
        match self.kind {
            ScenarioKind::Manifold { circles, .. } => {
                if circles < 1 || self.d < 2 * circles {
                    return Err(CdeError::InvalidParameter(format!(
                        "manifold with {circles} circles needs dimension >= {}, got {}",
                        2 * circles,
                        self.d
                    )));
                }
            }
            ScenarioKind::OneRelevant { relevant } => {
                if relevant < 1 || relevant > self.d {
                    return Err(CdeError::InvalidParameter(format!(
                        "relevant covariate count {relevant} outside 1..={}",
                        self.d
                    )));
                }
            }
            ScenarioKind::NonSparse => {
                if self.d < 1 {
                    return Err(CdeError::InvalidParameter(
                        "dimension must be at least 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Fixed random rotation for the rotated manifold variant, derived from
    /// the scenario seed; `None` when not applicable.
    fn rotation(&self) -> Option<Mat<f64>> {
        match self.kind {
            ScenarioKind::Manifold { rotate: true, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX));
                let raw = Mat::<f64>::from_fn(self.d, self.d, |_, _| StandardNormal.sample(&mut rng));
                Some(raw.qr().compute_thin_Q())
            }
            _ => None,
        }
    }

    /// Draws `n` labelled samples with raw (unrescaled) responses. Samples
    /// use per-index counter-derived generators, so output is deterministic
    /// and independent of the parallel schedule, and a longer draw extends a
    /// shorter one.
    pub fn generate(&self, n: usize) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(CdeError::EmptyInput("sample size"));
        }
        let rotation = self.rotation();
        let d = self.d;
        let rows: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, idx as u64));
                let mut x = vec![0.0; d];
                let mean = match self.kind {
                    ScenarioKind::Manifold { circles, .. } => {
                        let mut first_angle = 0.0;
                        for c in 0..circles {
                            let theta = rng.gen_range(0.0..TWO_PI);
                            if c == 0 {
                                first_angle = theta;
                            }
                            x[2 * c] = theta.cos();
                            x[2 * c + 1] = theta.sin();
                        }
                        first_angle
                    }
                    ScenarioKind::OneRelevant { relevant } => {
                        for slot in x.iter_mut() {
                            *slot = StandardNormal.sample(&mut rng);
                        }
                        x[..relevant].iter().sum::<f64>() / (relevant as f64).sqrt()
                    }
                    ScenarioKind::NonSparse => {
                        for slot in x.iter_mut() {
                            *slot = StandardNormal.sample(&mut rng);
                        }
                        x.iter().sum::<f64>() / d as f64
                    }
                };
                if let Some(q) = &rotation {
                    let mut rotated = vec![0.0; d];
                    for (r, slot) in rotated.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (c, &v) in x.iter().enumerate() {
                            acc += q[(r, c)] * v;
                        }
                        *slot = acc;
                    }
                    x = rotated;
                }
                let noise: f64 = StandardNormal.sample(&mut rng);
                let z = mean + self.sigma2.sqrt() * noise;
                (x, z)
            })
            .collect();
        let mut data = Vec::with_capacity(n * d);
        let mut responses = Vec::with_capacity(n);
        for (x, z) in rows {
            data.extend_from_slice(&x);
            responses.push(Some(z));
        }
        Dataset::new(Points::new(data, n, d)?, responses)
    }

    /// The analytic oracle for this scenario.
    pub fn oracle(&self) -> Result<TrueDensity> {
        self.validate()?;
        Ok(TrueDensity {
            kind: self.kind,
            d: self.d,
            sigma2: self.sigma2,
            rotation: self.rotation(),
        })
    }

    /// The oracle mapped onto the unit response scale of a rescaled dataset.
    pub fn model(&self, transform: ZTransform) -> Result<TrueDensityModel> {
        Ok(TrueDensityModel {
            oracle: self.oracle()?,
            transform,
        })
    }
}

/// Analytic conditional density `N(mu(x), sigma2)` on the raw response scale.
#[derive(Debug, Clone)]
pub struct TrueDensity {
    kind: ScenarioKind,
    d: usize,
    sigma2: f64,
    rotation: Option<Mat<f64>>,
}

impl TrueDensity {
    /// The conditional mean at `x`. For the manifold this is the angle of
    /// the first circle in [0, 2 pi); off-manifold points are rejected.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(CdeError::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        let unrotated: Vec<f64> = match &self.rotation {
            Some(q) => (0..self.d)
                .map(|c| (0..self.d).map(|r| q[(r, c)] * x[r]).sum())
                .collect(),
            None => x.to_vec(),
        };
        match self.kind {
            ScenarioKind::Manifold { circles, .. } => {
                for c in 0..circles {
                    let norm =
                        (unrotated[2 * c].powi(2) + unrotated[2 * c + 1].powi(2)).sqrt();
                    if (norm - 1.0).abs() > 1e-8 {
                        return Err(CdeError::InvalidParameter(format!(
                            "point is off the manifold: circle {c} radius {norm}"
                        )));
                    }
                }
                let theta = unrotated[1].atan2(unrotated[0]);
                Ok(if theta < 0.0 { theta + TWO_PI } else { theta })
            }
            ScenarioKind::OneRelevant { relevant } => {
                Ok(unrotated[..relevant].iter().sum::<f64>() / (relevant as f64).sqrt())
            }
            ScenarioKind::NonSparse => Ok(unrotated.iter().sum::<f64>() / self.d as f64),
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Gaussian density values over raw response nodes.
    pub fn density_raw(&self, x: &[f64], z_nodes_raw: &[f64]) -> Result<Vec<f64>> {
        let mu = self.mean(x)?;
        let norm = 1.0 / (TWO_PI * self.sigma2).sqrt();
        Ok(z_nodes_raw
            .iter()
            .map(|&z| norm * (-(z - mu) * (z - mu) / (2.0 * self.sigma2)).exp())
            .collect())
    }

    /// Raw-scale density as a grid, for quadrature against other estimates.
    pub fn grid_raw(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        let values = self.density_raw(x, grid.nodes())?;
        DensityGrid::new_normalized(grid.clone(), values)
    }
}

/// The oracle carried onto the unit response scale: the raw density times
/// the transform's Jacobian. Mass the transform leaves outside [0, 1] is
/// clamp-renormalized with a warning when it exceeds one part in a thousand.
#[derive(Debug, Clone)]
pub struct TrueDensityModel {
    oracle: TrueDensity,
    transform: ZTransform,
}

impl TrueDensityModel {
    pub fn oracle(&self) -> &TrueDensity {
        &self.oracle
    }

    pub fn transform(&self) -> ZTransform {
        self.transform
    }
}

impl ConditionalDensity for TrueDensityModel {
    fn conditional_density(&self, x: &[f64], grid: &ZGrid) -> Result<DensityGrid> {
        let raw_nodes: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| self.transform.from_unit(z))
            .collect();
        let mut values = self.oracle.density_raw(x, &raw_nodes)?;
        for v in values.iter_mut() {
            *v *= self.transform.scale;
        }
        let mass = trapezoid(grid.nodes(), &values);
        if (mass - 1.0).abs() > 1e-3 {
            log::warn!(
                "true density leaves {:.2e} of its mass outside the unit interval; renormalizing",
                (mass - 1.0).abs()
            );
            for v in values.iter_mut() {
                *v /= mass;
            }
        }
        DensityGrid::new_normalized(grid.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ks_pvalue, ks_statistic_uniform};
    use approx::assert_abs_diff_eq;

    #[test]
    fn manifold_points_on_circle() {
        let sc = Scenario::manifold(6, 1);
        let ds = sc.generate(200).unwrap();
        for i in 0..ds.n() {
            let x = ds.x(i);
            let norm = (x[0] * x[0] + x[1] * x[1]).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
            for &v in &x[2..] {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let sc = Scenario::one_relevant(4, 9);
        let a = sc.generate(20).unwrap();
        let b = sc.generate(20).unwrap();
        let prefix = sc.generate(8).unwrap();
        for i in 0..20 {
            assert_eq!(a.x(i), b.x(i));
            assert_eq!(a.z(i), b.z(i));
        }
        for i in 0..8 {
            assert_eq!(a.x(i), prefix.x(i));
            assert_eq!(a.z(i), prefix.z(i));
        }
    }

    #[test]
    fn one_relevant_correlation() {
        // With unit covariate variance and noise variance 0.5, the z-x1
        // correlation is 1/sqrt(1.5).
        let sc = Scenario::one_relevant(5, 3);
        let ds = sc.generate(5000).unwrap();
        let n = ds.n() as f64;
        let (mut sx, mut sz, mut sxx, mut szz, mut sxz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..ds.n() {
            let x = ds.x(i)[0];
            let z = ds.z(i).unwrap();
            sx += x;
            sz += z;
            sxx += x * x;
            szz += z * z;
            sxz += x * z;
        }
        let cov = sxz / n - sx / n * (sz / n);
        let vx = sxx / n - (sx / n) * (sx / n);
        let vz = szz / n - (sz / n) * (sz / n);
        let corr = cov / (vx * vz).sqrt();
        let expect = (1.0f64 / 1.5).sqrt();
        assert!((corr - expect).abs() < 0.03, "corr {corr} vs {expect}");
    }

    #[test]
    fn non_sparse_regression_slope() {
        let sc = Scenario::non_sparse(6, 5);
        let ds = sc.generate(5000).unwrap();
        let n = ds.n() as f64;
        let (mut sm, mut sz, mut smm, mut smz) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..ds.n() {
            let mean_x = ds.x(i).iter().sum::<f64>() / 6.0;
            let z = ds.z(i).unwrap();
            sm += mean_x;
            sz += z;
            smm += mean_x * mean_x;
            smz += mean_x * z;
        }
        let slope = (smz / n - sm / n * (sz / n)) / (smm / n - (sm / n) * (sm / n));
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn true_density_gaussian_peak() {
        // one_relevant, x1 = 0, z = 0: the peak of N(0, 0.5).
        let sc = Scenario::one_relevant(3, 7);
        let oracle = sc.oracle().unwrap();
        let vals = oracle.density_raw(&[0.0, 2.0, -1.0], &[0.0]).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0 / (TWO_PI * 0.5).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(vals[0], 0.5641895835, epsilon = 1e-9);
    }

    #[test]
    fn true_density_integrates_to_one() {
        let sc = Scenario::one_relevant(3, 11);
        let oracle = sc.oracle().unwrap();
        let x = [0.4, 0.0, 0.0];
        let mu = oracle.mean(&x).unwrap();
        let sd = oracle.sigma2().sqrt();
        let nodes: Vec<f64> = (0..4001)
            .map(|g| mu - 8.0 * sd + 16.0 * sd * g as f64 / 4000.0)
            .collect();
        let grid = ZGrid::new(nodes).unwrap();
        let dens = oracle.grid_raw(&x, &grid).unwrap();
        assert!((dens.integral() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn manifold_mean_recovers_angle_and_rejects_off_manifold() {
        let sc = Scenario::manifold(4, 13);
        let oracle = sc.oracle().unwrap();
        let theta = 2.0f64;
        let x = [theta.cos(), theta.sin(), 0.0, 0.0];
        assert_abs_diff_eq!(oracle.mean(&x).unwrap(), theta, epsilon = 1e-12);
        assert!(oracle.mean(&[0.5, 0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn manifold_angles_are_uniform() {
        // KS against the uniform law on theta / 2 pi passes comfortably.
        let sc = Scenario::manifold(2, 17);
        let ds = sc.generate(2000).unwrap();
        let oracle = sc.oracle().unwrap();
        let us: Vec<f64> = (0..ds.n())
            .map(|i| oracle.mean(ds.x(i)).unwrap() / TWO_PI)
            .collect();
        let d = ks_statistic_uniform(&us).unwrap();
        let p = ks_pvalue(d, us.len());
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn rotated_manifold_preserves_oracle() {
        let sc = Scenario::manifold(5, 19).with_rotation(true);
        let ds = sc.generate(50).unwrap();
        let oracle = sc.oracle().unwrap();
        for i in 0..ds.n() {
            let x = ds.x(i);
            // Norm preserved by rotation, coordinates now mixed.
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>();
            assert_abs_diff_eq!(norm.sqrt(), 1.0, epsilon = 1e-10);
            let mu = oracle.mean(x).unwrap();
            assert!((0.0..TWO_PI).contains(&mu));
        }
    }

    #[test]
    fn unit_scale_model_integrates_to_one() {
        let sc = Scenario::one_relevant(3, 23);
        let ds = crate::dataset::rescale_response(&sc.generate(500).unwrap()).unwrap();
        let model = sc.model(ds.z_transform()).unwrap();
        let grid = ZGrid::uniform01(1001);
        for i in (0..ds.n()).step_by(97) {
            let dens = model.conditional_density(ds.x(i), &grid).unwrap();
            assert!((dens.integral() - 1.0).abs() < 1e-3);
            assert!(dens.min_value() >= 0.0);
        }
    }

    #[test]
    fn oracle_minimizes_monte_carlo_loss() {
        // Among the oracle, a uniform density, and a shifted impostor, the
        // true density attains the smallest squared-error loss on a fresh
        // Monte Carlo sample, for every scenario.
        for sc in [
            Scenario::manifold(4, 29),
            Scenario::one_relevant(4, 31),
            Scenario::non_sparse(4, 37),
        ] {
            let oracle = sc.oracle().unwrap();
            let ds = sc.generate(10_000).unwrap();
            let zs: Vec<f64> = (0..ds.n()).map(|i| ds.z(i).unwrap()).collect();
            let z_lo = zs.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
            let z_hi = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
            let nodes: Vec<f64> = (0..1501)
                .map(|g| z_lo + (z_hi - z_lo) * g as f64 / 1500.0)
                .collect();
            let grid = ZGrid::new(nodes).unwrap();
            let shift = 0.7 * oracle.sigma2().sqrt();

            let mut losses = [0.0f64; 3];
            for i in 0..ds.n() {
                let x = ds.x(i);
                let z = ds.z(i).unwrap();
                let mu = oracle.mean(x).unwrap();
                let candidates = [mu, f64::NAN, mu + shift];
                for (c, &m) in candidates.iter().enumerate() {
                    let (sq, at) = if m.is_nan() {
                        let u = 1.0 / (z_hi - z_lo);
                        (u, u)
                    } else {
                        let norm = 1.0 / (TWO_PI * oracle.sigma2()).sqrt();
                        let pdf = |t: f64| {
                            norm * (-(t - m) * (t - m) / (2.0 * oracle.sigma2())).exp()
                        };
                        let vals: Vec<f64> = grid.nodes().iter().map(|&t| pdf(t) * pdf(t)).collect();
                        (trapezoid(grid.nodes(), &vals), pdf(z))
                    };
                    losses[c] += sq - 2.0 * at;
                }
            }
            assert!(
                losses[0] < losses[1] && losses[0] < losses[2],
                "scenario {:?}: {losses:?}",
                sc.kind
            );
        }
    }
}
