//! Run configuration: JSON file values overlaid by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use gslab::gsnorm::GsIndices;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Every knob a command may read. Unset fields fall back to the command's
/// defaults, which reproduce the acceptance discretizations.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in example: 1 decaying, 2 critical, 3 growing.
    #[arg(long)]
    pub example: Option<u8>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Gevrey index of the datum / symbol.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Points per axis (power of two).
    #[arg(long)]
    pub n: Option<usize>,
    /// Half width of the periodic box.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub half_width: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final or evaluation time.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub time: Option<f64>,
    /// Bracket parameter(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    /// Strength of the conjugating symbol.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub strength: Option<f64>,
    #[arg(long)]
    pub s_below: Option<f64>,
    #[arg(long)]
    pub s_above: Option<f64>,
    /// Decay losses to classify.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    /// Box half widths of a norm sweep.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<f64>>,
    /// Sampling step of norm sweeps.
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub m2: Option<f64>,
    #[arg(long)]
    pub rho2: Option<f64>,
    /// Norm indices tracked by `solve`; config file only.
    #[arg(skip)]
    pub indices: Option<Vec<GsIndices>>,
    /// Node stride of the transport check.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Error tolerance of `solve` against the exact solution.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Relative edge magnitude that aborts a run; unset disables the monitor.
    #[arg(long)]
    pub boundary_threshold: Option<f64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(&self, flags: &RunConfig) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let (Value::Object(dst), Value::Object(src)) = (&mut base, serde_json::to_value(flags)?) else {
            bail!("config must be a JSON object");
        };
        for (k, v) in src {
            if !v.is_null() {
                dst.insert(k, v);
            }
        }
        Ok(serde_json::from_value(base)?)
    }
}
