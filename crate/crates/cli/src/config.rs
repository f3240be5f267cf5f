//! Resolved run configurations: flag values override config-file values,
//! which override the built-in defaults; the resolved document is echoed to
//! stdout and into the artifact directory, in the same schema the `--config`
//! flag accepts, so re-running from the echo reproduces the artifacts.

use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    // echo metadata, accepted (and ignored) when the echo is fed back in
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag_overrides_of_file: Option<Vec<String>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nnz_per_group: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub which: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config file {}: {e}", path.display()))
    }
}

/// Merge helper: the flag (if given) wins over the file value over the
/// default; overridden file keys are collected for the resolved-config echo.
pub struct Merger<'a> {
    file: &'a FileConfig,
    pub overridden: Vec<String>,
}

impl<'a> Merger<'a> {
    pub fn new(file: &'a FileConfig) -> Self {
        Merger {
            file,
            overridden: Vec::new(),
        }
    }

    pub fn pick<T: Clone + PartialEq>(
        &mut self,
        name: &str,
        flag: Option<T>,
        file_get: impl Fn(&FileConfig) -> Option<T>,
        default: T,
    ) -> T {
        match (flag, file_get(self.file)) {
            (Some(f), Some(v)) => {
                if f != v {
                    self.overridden.push(name.to_string());
                }
                f
            }
            (Some(f), None) => f,
            (None, Some(v)) => v,
            (None, None) => default,
        }
    }
}

/// The environment seed override.
pub fn env_seed() -> Option<u64> {
    std::env::var("ASPADMM_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
}

pub fn echo_resolved(resolved: &FileConfig, out_dir: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(resolved).expect("serializable config");
    println!("{text}");
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config_resolved.json"), text)?;
    Ok(())
}
