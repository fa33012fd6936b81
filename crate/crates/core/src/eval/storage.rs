//! Parameter counts and the single-model vs. one-model-per-setting storage comparison.

use serde::Serialize;

use crate::codec::nets::{branch_specs, encoder_specs, gate_specs};
use crate::codec::sizing::FRACTION_TOLERANCE;
use crate::codec::{CodecConfig, ModelBundle};
use crate::entropy::{SUPPORT_MAX, SUPPORT_MIN};
use crate::error::{Error, Result};
use crate::eval::flops::branch_flops;
use crate::nn::LayerSpec;

pub fn count_params(specs: &[LayerSpec]) -> usize {
    specs.iter().map(|s| s.param_count()).sum()
}

/// Stored scalars of one factorized entropy model.
pub fn entropy_params(channels: usize) -> usize {
    channels * ((SUPPORT_MAX - SUPPORT_MIN + 1) as usize + 1)
}

pub fn gate_pair_params(config: &CodecConfig) -> usize {
    2 * count_params(&gate_specs(config.latent_channels, config.bam_width))
}

/// Adapter = BAL + IBAL + its entropy model.
pub fn adapter_params(config: &CodecConfig) -> usize {
    gate_pair_params(config) + entropy_params(config.latent_channels)
}

/// Encoder + all branches with their `g_k` + base entropy model.
pub fn base_params(config: &CodecConfig, widths: &[usize]) -> usize {
    let c = config.latent_channels;
    count_params(&encoder_specs(c))
        + widths
            .iter()
            .map(|&t| count_params(&branch_specs(c, t)) + 1)
            .sum::<usize>()
        + entropy_params(c)
}

/// `base + adapter·(n − 1)`.
pub fn single_model_cost(base: usize, adapter: usize, n_bitrates: usize) -> usize {
    base + adapter * n_bitrates.saturating_sub(1)
}

/// Decoder width of a standalone model matching the cumulative FLOPs of the first `k` branches.
pub fn baseline_widths(config: &CodecConfig) -> Result<Vec<usize>> {
    let c = config.latent_channels;
    let (h, w) = (256, 256);
    let reference = branch_flops(c, config.cam_width, h, w)? as f64;
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(config.k_max);
    for f in &config.branch_flops_fractions {
        cum += f;
        let mut best = (f64::INFINITY, 0);
        for t in 1..=config.cam_width * 2 {
            let d = (branch_flops(c, t, h, w)? as f64 / reference - cum).abs();
            if d < best.0 {
                best = (d, t);
            }
        }
        if best.0 > FRACTION_TOLERANCE {
            return Err(Error::Config(format!(
                "no baseline width reaches {:.0}% of the reference FLOPs",
                cum * 100.0
            )));
        }
        out.push(best.1);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StorageReport {
    pub n_bitrates: usize,
    pub n_levels: usize,
    pub base_params: usize,
    pub adapter_params: usize,
    /// One bundle covering every bitrate and complexity level.
    pub single_model_params: usize,
    /// Per-level baseline model sizes.
    pub baseline_params: Vec<usize>,
    /// One baseline per (level, bitrate).
    pub multi_model_params: usize,
}

impl StorageReport {
    pub fn from_config(config: &CodecConfig, widths: &[usize], n_bitrates: usize, n_levels: usize) -> Result<Self> {
        if n_bitrates == 0 || n_levels == 0 || n_levels > config.k_max {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ levels ≤ {} and at least one bitrate",
                config.k_max
            )));
        }
        let c = config.latent_channels;
        let base = base_params(config, widths);
        let adapter = adapter_params(config);
        let baseline_params: Vec<usize> = baseline_widths(config)?[..n_levels]
            .iter()
            .map(|&t| count_params(&encoder_specs(c)) + count_params(&branch_specs(c, t)) + entropy_params(c))
            .collect();
        Ok(Self {
            n_bitrates,
            n_levels,
            base_params: base,
            adapter_params: adapter,
            single_model_params: single_model_cost(base, adapter, n_bitrates),
            multi_model_params: baseline_params.iter().sum::<usize>() * n_bitrates,
            baseline_params,
        })
    }
}

/// Report for a loaded bundle, using its measured parameter counts.
pub fn storage_report(bundle: &ModelBundle, n_bitrates: usize, n_levels: usize) -> Result<StorageReport> {
    let mut r = StorageReport::from_config(&bundle.config, &bundle.cam.widths(), n_bitrates, n_levels)?;
    debug_assert_eq!(r.base_params, bundle.base_param_count());
    if let Some(a) = bundle.adapters.values().next() {
        r.adapter_params = a.param_count();
        r.single_model_params = single_model_cost(r.base_params, r.adapter_params, n_bitrates);
    }
    Ok(r)
}
