pub mod bench;
pub mod evaluate;
pub mod fit;
pub mod gen;
pub mod predict;

use std::path::Path;

use anyhow::{Context, Result};

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn scenario_from(
    name: &str,
    d: usize,
    sigma2: f64,
    seed: u64,
    circles: usize,
    relevant: usize,
    rotate: bool,
) -> Result<spectral_cde::Scenario> {
    use spectral_cde::Scenario;
    let sc = match name {
        "manifold" => Scenario::manifold(d, seed)
            .with_circles(circles)
            .with_rotation(rotate),
        "one-relevant" | "one_relevant" => Scenario::one_relevant(d, seed).with_relevant(relevant),
        "non-sparse" | "non_sparse" => Scenario::non_sparse(d, seed),
        other => anyhow::bail!("unknown scenario {other:?} (manifold, one-relevant, non-sparse)"),
    };
    let sc = sc.with_sigma2(sigma2);
    sc.validate()?;
    Ok(sc)
}
