//! Flat INI-style configuration: one section per subcommand, `key = value`
//! lines. Command-line flags override file values; the fully resolved
//! configuration is echoed into the output directory so a run can be
//! reproduced from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    bail!("line {}: unterminated section header", lineno + 1);
                };
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", lineno + 1);
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config [{section}] {key} = {raw}: {e}")),
        }
    }
}

/// Serializes the resolved settings of one command back into INI form.
pub struct ResolvedConfig {
    section: String,
    entries: Vec<(String, String)>,
}

impl ResolvedConfig {
    pub fn new(section: &str) -> Self {
        Self {
            section: section.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[{}]", self.section);
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.resolved.ini");
        std::fs::write(&path, self.render())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Parses an integer grid: either `lo:hi` (inclusive) or a comma list.
pub fn parse_index_grid(text: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: usize = lo.trim().parse().context("grid lower bound")?;
        let hi: usize = hi.trim().parse().context("grid upper bound")?;
        if lo < 1 || hi < lo {
            bail!("invalid grid range {text}");
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(Into::into))
        .collect::<Result<Vec<_>>>()
}

/// Parses a float grid given as a comma list.
pub fn parse_float_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(Into::into))
        .collect::<Result<Vec<_>>>()
}

/// Parses a seed list: `lo:hi` or a comma list.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: u64 = lo.trim().parse().context("seed lower bound")?;
        let hi: u64 = hi.trim().parse().context("seed upper bound")?;
        if hi < lo {
            bail!("invalid seed range {text}");
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|v| v.trim().parse::<u64>().map_err(Into::into))
        .collect::<Result<Vec<_>>>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let cfg = ConfigFile::parse(
            "# comment\n[gen]\nn = 100\nscenario = manifold\n\n[fit]\nepsilon-grid = 0.1,0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.get("gen", "n"), Some("100"));
        assert_eq!(cfg.get("fit", "epsilon-grid"), Some("0.1,0.2"));
        assert_eq!(cfg.get("gen", "missing"), None);
        let n: Option<usize> = cfg.get_parsed("gen", "n").unwrap();
        assert_eq!(n, Some(100));
    }

    #[test]
    fn grids_parse_ranges_and_lists() {
        assert_eq!(parse_index_grid("1:4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_index_grid("2,5,9").unwrap(), vec![2, 5, 9]);
        assert!(parse_index_grid("0:3").is_err());
        assert_eq!(parse_float_grid("0.5, 1.5").unwrap(), vec![0.5, 1.5]);
        assert_eq!(parse_seed_list("3:5").unwrap(), vec![3, 4, 5]);
    }

    #[test]
    fn resolved_config_renders_ini() {
        let mut rc = ResolvedConfig::new("gen");
        rc.put("n", 100).put("scenario", "manifold");
        let text = rc.render();
        assert!(text.starts_with("[gen]\n"));
        assert!(text.contains("n = 100"));
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back.get("gen", "scenario"), Some("manifold"));
    }
}
