//! Optional TOML config file. Keys mirror the long flag names; flags given
//! on the command line take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Config {
    pub model: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub t_end: Option<f64>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub threshold: Option<f64>,
    pub root_file: Option<PathBuf>,
    pub gap_floor: Option<f64>,
    pub debug_flip_sign: Option<bool>,
    pub a: Option<PathBuf>,
    pub alpha: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
        // Relative paths in the config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.out, &mut cfg.root_file, &mut cfg.a, &mut cfg.alpha].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
