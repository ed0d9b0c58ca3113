//! Density grids on the unit interval and the post-processing that turns a
//! raw series estimate into a bona fide density: clipping, water-filling
//! normalization, and removal of low-mass bumps.

use crate::error::{CdeError, Result};

/// Iterations of the bisection used to solve the water-filling level; the
/// bracket halves each step, so 60 reaches machine precision.
const XI_BISECTION_ITERS: usize = 60;

/// Strictly increasing evaluation grid for densities of the response.
#[derive(Debug, Clone, PartialEq)]
pub struct ZGrid {
    nodes: Vec<f64>,
}

impl ZGrid {
    pub const DEFAULT_SIZE: usize = 1000;

    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(CdeError::InvalidParameter(
                "a density grid needs at least two nodes".into(),
            ));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CdeError::InvalidParameter(
                "grid nodes must be strictly increasing".into(),
            ));
        }
        Ok(Self { nodes })
    }

    /// `size` equispaced nodes covering [0, 1].
    pub fn uniform01(size: usize) -> Self {
        let size = size.max(2);
        let h = 1.0 / (size - 1) as f64;
        let nodes = (0..size).map(|g| g as f64 * h).collect();
        Self { nodes }
    }

    pub fn default_unit() -> Self {
        Self::uniform01(Self::DEFAULT_SIZE)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Trapezoid quadrature of `values` over `nodes`.
pub fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..nodes.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (nodes[i] - nodes[i - 1]);
    }
    acc
}

/// Density values over a grid. `raw` marks unpostprocessed series output,
/// which may be negative and need not integrate to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    grid: ZGrid,
    values: Vec<f64>,
    raw: bool,
}

impl DensityGrid {
    pub fn new_raw(grid: ZGrid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, true)
    }

    pub fn new_normalized(grid: ZGrid, values: Vec<f64>) -> Result<Self> {
        Self::build(grid, values, false)
    }

    fn build(grid: ZGrid, values: Vec<f64>, raw: bool) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(CdeError::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values, raw })
    }

    pub fn grid(&self) -> &ZGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_raw(&self) -> bool {
        self.raw
    }

    pub fn integral(&self) -> f64 {
        trapezoid(self.grid.nodes(), &self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation at `z`; clamps to the grid range.
    pub fn value_at(&self, z: f64) -> f64 {
        let nodes = self.grid.nodes();
        if z <= nodes[0] {
            return self.values[0];
        }
        if z >= nodes[nodes.len() - 1] {
            return self.values[nodes.len() - 1];
        }
        let idx = match nodes.binary_search_by(|v| v.total_cmp(&z)) {
            Ok(i) => return self.values[i],
            Err(i) => i,
        };
        let (z0, z1) = (nodes[idx - 1], nodes[idx]);
        let t = (z - z0) / (z1 - z0);
        self.values[idx - 1] * (1.0 - t) + self.values[idx] * t
    }

    /// Cumulative trapezoid integral at every node, starting from zero.
    pub fn cumulative(&self) -> Vec<f64> {
        let nodes = self.grid.nodes();
        let mut out = vec![0.0; nodes.len()];
        for i in 1..nodes.len() {
            out[i] = out[i - 1]
                + 0.5 * (self.values[i] + self.values[i - 1]) * (nodes[i] - nodes[i - 1]);
        }
        out
    }

    /// CDF at `z` from the cumulative trapezoid integral, normalized so the
    /// right endpoint is exactly one; monotone nondecreasing in `z`.
    pub fn cdf(&self, z: f64) -> f64 {
        let cum = self.cumulative();
        cdf_from_cumulative(self.grid.nodes(), &cum, z)
    }
}

pub(crate) fn cdf_from_cumulative(nodes: &[f64], cum: &[f64], z: f64) -> f64 {
    let total = cum[cum.len() - 1];
    if !(total > 0.0) {
        // Degenerate all-zero density; fall back to the uniform CDF over the
        // grid span.
        let (a, b) = (nodes[0], nodes[nodes.len() - 1]);
        return ((z - a) / (b - a)).clamp(0.0, 1.0);
    }
    if z <= nodes[0] {
        return 0.0;
    }
    if z >= nodes[nodes.len() - 1] {
        return 1.0;
    }
    let idx = match nodes.binary_search_by(|v| v.total_cmp(&z)) {
        Ok(i) => return (cum[i] / total).clamp(0.0, 1.0),
        Err(i) => i,
    };
    let (z0, z1) = (nodes[idx - 1], nodes[idx]);
    let t = (z - z0) / (z1 - z0);
    let c = cum[idx - 1] * (1.0 - t) + cum[idx] * t;
    (c / total).clamp(0.0, 1.0)
}

/// Turns a raw series estimate into a bona fide density.
///
/// With `f_max = max(0, f)`: when `int f_max >= 1` the density is
/// `max(0, f - xi)` with the level `xi` chosen by bisection so the integral
/// is one (water filling); otherwise `f_max` is rescaled. An identically
/// nonpositive input falls back to the uniform density with a warning.
pub fn normalize(raw: &DensityGrid) -> DensityGrid {
    let nodes = raw.grid.nodes();
    let clipped: Vec<f64> = raw.values.iter().map(|&v| v.max(0.0)).collect();
    let mass = trapezoid(nodes, &clipped);
    if !(mass > 0.0) || !mass.is_finite() {
        log::warn!("raw density is identically nonpositive; falling back to uniform");
        let span = nodes[nodes.len() - 1] - nodes[0];
        let values = vec![1.0 / span; nodes.len()];
        return DensityGrid {
            grid: raw.grid.clone(),
            values,
            raw: false,
        };
    }
    if mass >= 1.0 {
        let max_val = raw.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mass_at = |xi: f64| -> f64 {
            let shifted: Vec<f64> = raw.values.iter().map(|&v| (v - xi).max(0.0)).collect();
            trapezoid(nodes, &shifted)
        };
        let mut lo = 0.0;
        let mut hi = max_val;
        for _ in 0..XI_BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mass_at(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xi = lo;
        let values: Vec<f64> = raw.values.iter().map(|&v| (v - xi).max(0.0)).collect();
        DensityGrid {
            grid: raw.grid.clone(),
            values,
            raw: false,
        }
    } else {
        let values: Vec<f64> = clipped.iter().map(|&v| v / mass).collect();
        DensityGrid {
            grid: raw.grid.clone(),
            values,
            raw: false,
        }
    }
}

/// A maximal run of strictly positive nodes, bounded by zeros or grid ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bump {
    pub start: usize,
    pub end: usize, // inclusive
}

pub fn find_bumps(values: &[f64]) -> Vec<Bump> {
    let mut bumps = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            bumps.push(Bump { start: s, end: i - 1 });
        }
    }
    if let Some(s) = start {
        bumps.push(Bump {
            start: s,
            end: values.len() - 1,
        });
    }
    bumps
}

fn bump_mass(nodes: &[f64], values: &[f64], bump: &Bump) -> f64 {
    // Trapezoid mass of the function restricted to this run, including the
    // half-cells down to the adjacent zero nodes.
    let lo = bump.start.saturating_sub(1);
    let hi = (bump.end + 1).min(values.len() - 1);
    let mut acc = 0.0;
    for i in lo..hi {
        let a = if i >= bump.start && i <= bump.end {
            values[i]
        } else {
            0.0
        };
        let b = if i + 1 >= bump.start && i + 1 <= bump.end {
            values[i + 1]
        } else {
            0.0
        };
        acc += 0.5 * (a + b) * (nodes[i + 1] - nodes[i]);
    }
    acc
}

/// Erases every bump whose mass is below `delta` and renormalizes. If every
/// bump would be erased the input is returned unchanged with a warning.
pub fn remove_bumps(density: &DensityGrid, delta: f64) -> Result<DensityGrid> {
    if density.raw {
        return Err(CdeError::InvalidParameter(
            "bump removal expects a normalized density".into(),
        ));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(CdeError::InvalidParameter(format!(
            "bump threshold must lie in [0, 1), got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(density.clone());
    }
    let nodes = density.grid.nodes();
    let bumps = find_bumps(&density.values);
    let keep: Vec<&Bump> = bumps
        .iter()
        .filter(|b| bump_mass(nodes, &density.values, b) >= delta)
        .collect();
    if keep.len() == bumps.len() {
        return Ok(density.clone());
    }
    if keep.is_empty() {
        log::warn!("bump removal at delta = {delta} would erase the whole density; returning it unchanged");
        return Ok(density.clone());
    }
    let mut values = vec![0.0; density.values.len()];
    for b in keep {
        values[b.start..=b.end].copy_from_slice(&density.values[b.start..=b.end]);
    }
    let pruned = DensityGrid {
        grid: density.grid.clone(),
        values,
        raw: true,
    };
    Ok(normalize(&pruned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_density(size: usize) -> DensityGrid {
        let grid = ZGrid::uniform01(size);
        let values = vec![1.0; size];
        DensityGrid::new_raw(grid, values).unwrap()
    }

    #[test]
    fn normalize_keeps_density_unchanged() {
        let raw = uniform_density(101);
        let out = normalize(&raw);
        assert!(!out.is_raw());
        for &v in out.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out.integral(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_water_filling_hand_case() {
        // f = -1 on [0, 0.5), 3 on [0.5, 1]: clipped mass 1.5, so the level
        // solves 0.5 (3 - xi) = 1, xi = 1, and the density becomes 0 then 2.
        let size = 20_001;
        let grid = ZGrid::uniform01(size);
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| if z < 0.5 { -1.0 } else { 3.0 })
            .collect();
        let raw = DensityGrid::new_raw(grid, values).unwrap();
        let out = normalize(&raw);
        assert_abs_diff_eq!(out.integral(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.value_at(0.25), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.value_at(0.75), 2.0, epsilon = 5e-3);
    }

    #[test]
    fn normalize_rescales_small_mass() {
        let grid = ZGrid::uniform01(101);
        let values = vec![0.25; 101];
        let raw = DensityGrid::new_raw(grid, values).unwrap();
        let out = normalize(&raw);
        for &v in out.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_nonpositive_falls_back_to_uniform() {
        let grid = ZGrid::uniform01(51);
        let values = vec![-2.0; 51];
        let raw = DensityGrid::new_raw(grid, values).unwrap();
        let out = normalize(&raw);
        assert_abs_diff_eq!(out.integral(), 1.0, epsilon = 1e-12);
        for &v in out.values() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_is_bona_fide_on_oscillations() {
        let grid = ZGrid::uniform01(801);
        for freq in [3.0, 7.0, 19.0] {
            let values: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|&z| 1.0 + 2.0 * (freq * std::f64::consts::PI * z).sin())
                .collect();
            let raw = DensityGrid::new_raw(grid.clone(), values).unwrap();
            let out = normalize(&raw);
            assert!(out.min_value() >= 0.0);
            assert!((out.integral() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn remove_bumps_zero_delta_is_identity() {
        let d = normalize(&uniform_density(101));
        let out = remove_bumps(&d, 0.0).unwrap();
        assert_eq!(out.values(), d.values());
    }

    #[test]
    fn remove_bumps_erases_small_bump() {
        // Two rectangular bumps of mass 0.9 and 0.1; delta = 0.2 erases the
        // small one and rescales the survivor to full mass.
        let size = 10_001;
        let grid = ZGrid::uniform01(size);
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| {
                if (0.1..0.4).contains(&z) {
                    3.0
                } else if (0.6..0.8).contains(&z) {
                    0.5
                } else {
                    0.0
                }
            })
            .collect();
        let d = DensityGrid::new_normalized(grid, values).unwrap();
        assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-3);
        let out = remove_bumps(&d, 0.2).unwrap();
        assert_abs_diff_eq!(out.value_at(0.7), 0.0, epsilon = 1e-12);
        assert!((out.value_at(0.25) - 3.0 / 0.9).abs() < 5e-3);
        assert_abs_diff_eq!(out.integral(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn remove_bumps_single_bump_untouched() {
        let grid = ZGrid::uniform01(501);
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| if (0.2..0.7).contains(&z) { 2.0 } else { 0.0 })
            .collect();
        let d = normalize(&DensityGrid::new_raw(grid, values).unwrap());
        let out = remove_bumps(&d, 0.5).unwrap();
        assert_eq!(out.values(), d.values());
    }

    #[test]
    fn remove_bumps_rejects_bad_delta() {
        let d = normalize(&uniform_density(51));
        assert!(remove_bumps(&d, 1.0).is_err());
        assert!(remove_bumps(&d, -0.1).is_err());
    }

    #[test]
    fn cdf_of_uniform_is_linear() {
        let d = normalize(&uniform_density(1001));
        for z in [0.0, 0.2, 0.5, 0.77, 1.0] {
            assert_abs_diff_eq!(d.cdf(z), z, epsilon = 1e-9);
        }
        assert_eq!(d.cdf(1.0), 1.0);
        assert_eq!(d.cdf(0.0), 0.0);
    }

    #[test]
    fn cdf_matches_triangular_closed_form() {
        // f(z) = 2z on [0, 1] has CDF z^2.
        let grid = ZGrid::uniform01(2001);
        let values: Vec<f64> = grid.nodes().iter().map(|&z| 2.0 * z).collect();
        let d = DensityGrid::new_normalized(grid, values).unwrap();
        for z in [0.1, 0.33, 0.5, 0.9] {
            assert!((d.cdf(z) - z * z).abs() < 1e-3);
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let grid = ZGrid::uniform01(301);
        let values: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&z| (3.0 * std::f64::consts::PI * z).sin().max(0.0))
            .collect();
        let d = normalize(&DensityGrid::new_raw(grid, values).unwrap());
        let mut prev = -1.0;
        for g in 0..=300 {
            let z = g as f64 / 300.0;
            let c = d.cdf(z);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn find_bumps_identifies_runs() {
        let values = vec![0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 0.0, 4.0];
        let bumps = find_bumps(&values);
        assert_eq!(
            bumps,
            vec![
                Bump { start: 1, end: 2 },
                Bump { start: 5, end: 5 },
                Bump { start: 7, end: 7 }
            ]
        );
    }
}
