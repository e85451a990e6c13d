//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

/// Flags shared by every command. Each may also come from `--config`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// IDX image file.
    #[arg(long)]
    pub data_images: Option<PathBuf>,

    /// IDX label file.
    #[arg(long)]
    pub data_labels: Option<PathBuf>,

    /// Synthetic task, e.g. `blobs:K=3,n=200,sigma=0.1`.
    #[arg(long)]
    pub synth: Option<String>,

    /// Seed of the synthetic generator (defaults to --seed).
    #[arg(long)]
    pub data_seed: Option<u64>,

    /// Keep only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,

    /// Keep only these class labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u32>>,

    /// `mlp:128`, `mlp:256,64` or `cnn:w=1.0`.
    #[arg(long)]
    pub backbone: Option<String>,

    /// softmax | edl | risk-edl | edl-p | edl-pg
    #[arg(long)]
    pub mode: Option<String>,

    #[arg(long)]
    pub epochs: Option<u32>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// relu | softplus | exp | clamped-exp
    #[arg(long)]
    pub act: Option<String>,

    #[arg(long)]
    pub kappa: Option<f64>,

    /// Epochs over which the KL weight ramps to 1.
    #[arg(long = "anneal-T")]
    #[serde(rename = "anneal-T")]
    pub anneal_t: Option<u32>,

    /// `mnist`, `grouped` or a CSV file.
    #[arg(long)]
    pub risk_matrix: Option<String>,

    /// Required by every command that draws random numbers.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Input checkpoint; `fuse` takes two.
    #[arg(long)]
    pub checkpoint: Option<Vec<PathBuf>>,

    /// Out-of-distribution set for `eval`: `noise`, `far` (synthetic tasks)
    /// or `classes:5,6,7` drawn from the evaluation data.
    #[arg(long)]
    pub ood: Option<String>,

    /// Sample index for `rotate-sweep`.
    #[arg(long)]
    pub index: Option<usize>,

    /// Angle step in degrees for `rotate-sweep`.
    #[arg(long)]
    pub angle_step: Option<f64>,

    /// Random instances per check for `gradcheck`.
    #[arg(long)]
    pub instances: Option<usize>,

    /// Perturb the named check's analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl RunConfig {
    /// Applies the JSON file named by `--config`, with flags taking
    /// precedence.
    pub fn resolve(self) -> Result<Self, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut base: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let top = self;
        overlay!(base, top; data_images, data_labels, synth, data_seed, limit, classes, backbone, mode,
            epochs, lr, batch_size, act, kappa, anneal_t, risk_matrix, seed, out, checkpoint, ood,
            index, angle_step, instances, fault);
        base.config = top.config;
        Ok(base)
    }
}
