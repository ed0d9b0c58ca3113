//! Orthonormal bases on the response domain: the real trigonometric system
//! on [0, 1] for continuous responses, and indicator bases for discrete or
//! binned responses.

use std::io::{Read, Write};

use faer::Mat;

use crate::binio;
use crate::dataset::{Dataset, ZTransform};
use crate::error::{CdeError, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Inner product under which a basis is orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerProduct {
    /// Lebesgue measure on the unit interval.
    Lebesgue01,
    /// Counting measure over a finite label set.
    Counting,
}

/// A bin of the binned indicator basis, expressed on the unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBin {
    pub lo: f64,
    pub hi: f64,
    /// Normalization constant `1 / sqrt(hi - lo)` making the indicator unit
    /// norm under Lebesgue measure on [0, 1].
    pub weight: f64,
}

/// Orthonormal basis over the response domain.
#[derive(Debug, Clone, PartialEq)]
pub enum ZBasis {
    /// `phi_1 = 1`, `phi_2k = sqrt(2) cos(2 pi k z)`,
    /// `phi_2k+1 = sqrt(2) sin(2 pi k z)` on [0, 1].
    Fourier,
    /// Half-open integer bins `[label - 1/2, label + 1/2)` on the raw label
    /// scale, carried onto [0, 1] by the response transform and normalized
    /// there.
    IndicatorBinned {
        labels: Vec<i64>,
        bins: Vec<UnitBin>,
    },
    /// Purely discrete responses: `phi_i(z) = 1(z = label_i)` under the
    /// counting inner product.
    IndicatorDiscrete { labels: Vec<i64> },
}

impl ZBasis {
    pub fn fourier() -> Self {
        ZBasis::Fourier
    }

    /// Binned indicator over consecutive integer labels `lo..=hi`, with bins
    /// mapped through `t` onto the unit scale and clipped to [0, 1].
    pub fn indicator_binned(lo: i64, hi: i64, t: &ZTransform) -> Result<Self> {
        if hi < lo {
            return Err(CdeError::InvalidParameter(format!(
                "empty label range {lo}..={hi}"
            )));
        }
        let labels: Vec<i64> = (lo..=hi).collect();
        let mut bins = Vec::with_capacity(labels.len());
        for &label in &labels {
            let a = t.to_unit(label as f64 - 0.5).clamp(0.0, 1.0);
            let b = t.to_unit(label as f64 + 0.5).clamp(0.0, 1.0);
            if !(b > a) {
                return Err(CdeError::InvalidParameter(format!(
                    "bin for label {label} has no support on the unit interval"
                )));
            }
            bins.push(UnitBin {
                lo: a,
                hi: b,
                weight: 1.0 / (b - a).sqrt(),
            });
        }
        Ok(ZBasis::IndicatorBinned { labels, bins })
    }

    pub fn indicator_discrete(labels: Vec<i64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(CdeError::EmptyInput("discrete indicator label set"));
        }
        let mut sorted = labels;
        sorted.sort_unstable();
        sorted.dedup();
        Ok(ZBasis::IndicatorDiscrete { labels: sorted })
    }

    /// Picks the indicator variant for a labelled dataset: the discrete
    /// counting form when every raw response is an integer, otherwise integer
    /// bins around the observed raw responses.
    pub fn indicator_for(ds: &Dataset) -> Result<Self> {
        let t = ds.z_transform();
        let raw: Vec<f64> = ds.labeled_z().iter().map(|&z| t.from_unit(z)).collect();
        if raw.is_empty() {
            return Err(CdeError::EmptyInput("indicator basis over unlabelled data"));
        }
        let all_integer = raw.iter().all(|&z| (z - z.round()).abs() < 1e-9);
        if all_integer {
            let labels: Vec<i64> = raw.iter().map(|&z| z.round() as i64).collect();
            ZBasis::indicator_discrete(labels)
        } else {
            let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min).round() as i64;
            let hi = raw
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                .round() as i64;
            ZBasis::indicator_binned(lo, hi, &t)
        }
    }

    pub fn inner_product(&self) -> InnerProduct {
        match self {
            ZBasis::Fourier | ZBasis::IndicatorBinned { .. } => InnerProduct::Lebesgue01,
            ZBasis::IndicatorDiscrete { .. } => InnerProduct::Counting,
        }
    }

    /// Whether the basis is orthonormal under Lebesgue measure on [0, 1] and
    /// therefore usable inside the continuous density pipeline.
    pub fn is_lebesgue(&self) -> bool {
        self.inner_product() == InnerProduct::Lebesgue01
    }

    /// Largest valid index, if the basis is finite.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            ZBasis::Fourier => None,
            ZBasis::IndicatorBinned { labels, .. } => Some(labels.len()),
            ZBasis::IndicatorDiscrete { labels } => Some(labels.len()),
        }
    }

    /// Sup-norm bound over all basis functions on their native scale.
    pub fn sup_bound(&self) -> f64 {
        match self {
            ZBasis::Fourier => SQRT_2,
            _ => 1.0,
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < 1 {
            return Err(CdeError::IndexOutOfRange {
                name: "basis index",
                value: i,
                max: self.max_index().unwrap_or(usize::MAX),
            });
        }
        if let Some(p) = self.max_index() {
            if i > p {
                return Err(CdeError::IndexOutOfRange {
                    name: "basis index",
                    value: i,
                    max: p,
                });
            }
        }
        Ok(())
    }

    /// Evaluates `phi_i` on the basis's native scale: [0, 1] for the Fourier
    /// system, the raw label scale (0/1 values) for indicators.
    pub fn phi(&self, i: usize, z: f64) -> Result<f64> {
        self.check_index(i)?;
        match self {
            ZBasis::Fourier => {
                if !(0.0..=1.0).contains(&z) {
                    return Err(CdeError::InvalidParameter(format!(
                        "fourier basis argument {z} outside [0, 1]"
                    )));
                }
                Ok(fourier_phi(i, z))
            }
            ZBasis::IndicatorBinned { labels, .. } => {
                let lo = labels[0] as f64 - 0.5;
                let hi = labels[labels.len() - 1] as f64 + 0.5;
                if !(lo..hi).contains(&z) {
                    return Err(CdeError::InvalidParameter(format!(
                        "indicator argument {z} outside label range [{lo}, {hi})"
                    )));
                }
                let label = labels[i - 1] as f64;
                Ok(if (label - 0.5..label + 0.5).contains(&z) {
                    1.0
                } else {
                    0.0
                })
            }
            ZBasis::IndicatorDiscrete { labels } => {
                if !z.is_finite() || (z - z.round()).abs() > 1e-9 {
                    return Err(CdeError::InvalidParameter(format!(
                        "discrete indicator argument {z} is not an integer label"
                    )));
                }
                Ok(if labels[i - 1] == z.round() as i64 {
                    1.0
                } else {
                    0.0
                })
            }
        }
    }

    /// Evaluates the Lebesgue-orthonormal representative of `phi_i` on the
    /// unit scale. This is the form consumed by the series estimator.
    pub fn phi_unit(&self, i: usize, z: f64) -> Result<f64> {
        self.check_index(i)?;
        if !(0.0..=1.0).contains(&z) {
            return Err(CdeError::InvalidParameter(format!(
                "unit-scale basis argument {z} outside [0, 1]"
            )));
        }
        match self {
            ZBasis::Fourier => Ok(fourier_phi(i, z)),
            ZBasis::IndicatorBinned { bins, .. } => {
                let bin = &bins[i - 1];
                let last = i == bins.len();
                let inside = if last {
                    z >= bin.lo && z <= bin.hi
                } else {
                    z >= bin.lo && z < bin.hi
                };
                Ok(if inside { bin.weight } else { 0.0 })
            }
            ZBasis::IndicatorDiscrete { .. } => Err(CdeError::UnsupportedBasis(
                "counting-measure basis has no Lebesgue representative".into(),
            )),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            ZBasis::Fourier => binio::write_u8(w, 0)?,
            ZBasis::IndicatorBinned { labels, bins } => {
                binio::write_u8(w, 1)?;
                binio::write_usize(w, labels.len())?;
                for (&label, bin) in labels.iter().zip(bins) {
                    binio::write_u64(w, label as u64)?;
                    binio::write_f64(w, bin.lo)?;
                    binio::write_f64(w, bin.hi)?;
                    binio::write_f64(w, bin.weight)?;
                }
            }
            ZBasis::IndicatorDiscrete { labels } => {
                binio::write_u8(w, 2)?;
                binio::write_usize(w, labels.len())?;
                for &label in labels {
                    binio::write_u64(w, label as u64)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        match binio::read_u8(r)? {
            0 => Ok(ZBasis::Fourier),
            1 => {
                let p = binio::read_usize(r)?;
                let mut labels = Vec::with_capacity(p);
                let mut bins = Vec::with_capacity(p);
                for _ in 0..p {
                    labels.push(binio::read_u64(r)? as i64);
                    bins.push(UnitBin {
                        lo: binio::read_f64(r)?,
                        hi: binio::read_f64(r)?,
                        weight: binio::read_f64(r)?,
                    });
                }
                Ok(ZBasis::IndicatorBinned { labels, bins })
            }
            2 => {
                let p = binio::read_usize(r)?;
                let mut labels = Vec::with_capacity(p);
                for _ in 0..p {
                    labels.push(binio::read_u64(r)? as i64);
                }
                Ok(ZBasis::IndicatorDiscrete { labels })
            }
            tag => Err(CdeError::Serialization(format!(
                "unknown z-basis tag {tag}"
            ))),
        }
    }
}

fn fourier_phi(i: usize, z: f64) -> f64 {
    if i == 1 {
        1.0
    } else if i % 2 == 0 {
        let k = (i / 2) as f64;
        SQRT_2 * (2.0 * std::f64::consts::PI * k * z).cos()
    } else {
        let k = ((i - 1) / 2) as f64;
        SQRT_2 * (2.0 * std::f64::consts::PI * k * z).sin()
    }
}

/// Matrix of pairwise inner products, for verifying orthonormality: trapezoid
/// quadrature with 10^4 intervals under Lebesgue measure, exact summation
/// under counting measure.
pub fn phi_integral_products(basis: &ZBasis, i_max: usize) -> Result<Mat<f64>> {
    if i_max < 1 {
        return Err(CdeError::InvalidParameter("i_max must be at least 1".into()));
    }
    if let Some(p) = basis.max_index() {
        if i_max > p {
            return Err(CdeError::IndexOutOfRange {
                name: "i_max",
                value: i_max,
                max: p,
            });
        }
    }
    match basis.inner_product() {
        InnerProduct::Lebesgue01 => {
            let nodes = 10_001;
            let h = 1.0 / (nodes - 1) as f64;
            let mut vals = vec![0.0; nodes * i_max];
            for g in 0..nodes {
                let z = g as f64 * h;
                for i in 1..=i_max {
                    vals[g * i_max + i - 1] = basis.phi_unit(i, z)?;
                }
            }
            let mut out = Mat::zeros(i_max, i_max);
            for a in 0..i_max {
                for b in 0..i_max {
                    let mut acc = 0.0;
                    for g in 0..nodes {
                        let wq = if g == 0 || g == nodes - 1 { 0.5 } else { 1.0 };
                        acc += wq * vals[g * i_max + a] * vals[g * i_max + b];
                    }
                    out[(a, b)] = acc * h;
                }
            }
            Ok(out)
        }
        InnerProduct::Counting => {
            let labels = match basis {
                ZBasis::IndicatorDiscrete { labels } => labels.clone(),
                _ => unreachable!("counting product implies discrete basis"),
            };
            let mut out = Mat::zeros(i_max, i_max);
            for a in 0..i_max {
                for b in 0..i_max {
                    let mut acc = 0.0;
                    for &label in &labels {
                        acc += basis.phi(a + 1, label as f64)? * basis.phi(b + 1, label as f64)?;
                    }
                    out[(a, b)] = acc;
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fourier_closed_forms() {
        let b = ZBasis::fourier();
        for z in [0.0, 0.3, 1.0] {
            assert_eq!(b.phi(1, z).unwrap(), 1.0);
        }
        assert_abs_diff_eq!(b.phi(2, 0.0).unwrap(), SQRT_2, epsilon = 1e-12);
        // i = 3 is sqrt(2) sin(2 pi z); at z = 0.25 that is sqrt(2).
        assert_abs_diff_eq!(b.phi(3, 0.25).unwrap(), SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn index_and_domain_errors() {
        let b = ZBasis::fourier();
        assert!(b.phi(0, 0.5).is_err());
        assert!(b.phi(1, 1.5).is_err());
        assert!(b.phi(1, -0.1).is_err());
        let d = ZBasis::indicator_discrete(vec![1, 2, 3]).unwrap();
        assert!(d.phi(4, 1.0).is_err());
    }

    #[test]
    fn fourier_products_are_identity() {
        let prods = phi_integral_products(&ZBasis::fourier(), 5).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prods[(a, b)], expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn single_function_product() {
        let prods = phi_integral_products(&ZBasis::fourier(), 1).unwrap();
        assert_abs_diff_eq!(prods[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fourier_sup_bound() {
        let b = ZBasis::fourier();
        for i in 1..=11 {
            for g in 0..=1000 {
                let z = g as f64 / 1000.0;
                assert!(b.phi(i, z).unwrap().abs() <= SQRT_2 + 1e-12);
            }
        }
    }

    #[test]
    fn parseval_for_constant_function() {
        // g(z) = 1 has Fourier coefficients (1, 0, 0, ...).
        let b = ZBasis::fourier();
        let nodes = 10_001;
        let h = 1.0 / (nodes - 1) as f64;
        for i in 1..=5 {
            let mut acc = 0.0;
            for g in 0..nodes {
                let wq = if g == 0 || g == nodes - 1 { 0.5 } else { 1.0 };
                acc += wq * b.phi(i, g as f64 * h).unwrap();
            }
            let coeff = acc * h;
            let expect = if i == 1 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(coeff, expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn binned_indicator_matches_definition() {
        // Labels 1..=5 with raw range [0.5, 5.5] mapped onto the unit scale;
        // phi works on the raw label scale.
        let t = ZTransform::new(0.5, 5.0).unwrap();
        let b = ZBasis::indicator_binned(1, 5, &t).unwrap();
        assert_eq!(b.phi(3, 3.2).unwrap(), 1.0); // 2.5 < 3.2 <= 3.5
        assert_eq!(b.phi(3, 3.6).unwrap(), 0.0);
        assert_eq!(b.phi(4, 3.6).unwrap(), 1.0);
    }

    #[test]
    fn binned_bins_partition_label_range() {
        let t = ZTransform::new(-0.5, 10.0).unwrap();
        let b = ZBasis::indicator_binned(0, 9, &t).unwrap();
        for g in 0..200 {
            let z = -0.5 + 9.99 * g as f64 / 199.0;
            let total: f64 = (1..=10).map(|i| b.phi(i, z).unwrap()).sum();
            assert_eq!(total, 1.0, "z = {z}");
        }
    }

    #[test]
    fn binned_unit_normalization() {
        // Raw labels 0..9 rescaled by span 10: each interior bin has unit
        // width 0.1 and weight sqrt(10).
        let t = ZTransform::new(-0.5, 10.0).unwrap();
        let b = ZBasis::indicator_binned(0, 9, &t).unwrap();
        if let ZBasis::IndicatorBinned { bins, .. } = &b {
            for bin in bins {
                assert_abs_diff_eq!(bin.weight, 1.0 / (bin.hi - bin.lo).sqrt(), epsilon = 1e-12);
                assert_abs_diff_eq!(bin.weight * bin.weight * (bin.hi - bin.lo), 1.0, epsilon = 1e-12);
            }
        } else {
            panic!("expected binned basis");
        }
        // Quadrature products are the identity within grid resolution.
        let prods = phi_integral_products(&b, 10).unwrap();
        for a in 0..10 {
            for c in 0..10 {
                let expect = if a == c { 1.0 } else { 0.0 };
                assert!((prods[(a, c)] - expect).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn discrete_products_exact_identity() {
        let b = ZBasis::indicator_discrete(vec![2, 5, 9]).unwrap();
        let prods = phi_integral_products(&b, 3).unwrap();
        for a in 0..3 {
            for c in 0..3 {
                let expect = if a == c { 1.0 } else { 0.0 };
                assert_eq!(prods[(a, c)], expect);
            }
        }
    }

    #[test]
    fn indicator_selection_rule() {
        use crate::dataset::{Dataset, Sample};
        let integer: Vec<Sample> = (0..6)
            .map(|i| Sample {
                x: vec![i as f64],
                z: Some((i % 3) as f64),
            })
            .collect();
        let ds = Dataset::from_samples(&integer).unwrap();
        assert!(matches!(
            ZBasis::indicator_for(&ds).unwrap(),
            ZBasis::IndicatorDiscrete { .. }
        ));

        let noisy: Vec<Sample> = (0..6)
            .map(|i| Sample {
                x: vec![i as f64],
                z: Some((i % 3) as f64 + 0.25),
            })
            .collect();
        let ds = crate::dataset::rescale_response(&Dataset::from_samples(&noisy).unwrap()).unwrap();
        assert!(matches!(
            ZBasis::indicator_for(&ds).unwrap(),
            ZBasis::IndicatorBinned { .. }
        ));
    }

    #[test]
    fn serialization_round_trip() {
        let t = ZTransform::new(-0.5, 10.0).unwrap();
        for basis in [
            ZBasis::fourier(),
            ZBasis::indicator_binned(0, 9, &t).unwrap(),
            ZBasis::indicator_discrete(vec![-3, 0, 7]).unwrap(),
        ] {
            let mut buf = Vec::new();
            basis.write_to(&mut buf).unwrap();
            let back = ZBasis::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back, basis);
        }
    }
}
