//! Multiply-accumulate accounting. One MAC counts as one FLOP.
//!
//! conv / deconv: `k_h·k_w·C_in·C_out·H_out·W_out`; depthwise: `k_h·k_w·C·H_out·W_out`;
//! GDN / IGDN: `C²·H·W + C·H·W`; activations: `C·H·W`.

use serde::Serialize;

use crate::codec::nets::{branch_specs, gate_specs, DOWNSAMPLE};
use crate::codec::CodecConfig;
use crate::error::Result;
use crate::nn::{LayerKind, LayerSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerFlops {
    pub component: String,
    pub index: usize,
    pub kind: LayerKind,
    pub output: (usize, usize, usize),
    pub flops: u64,
}

/// FLOPs of one layer applied to an `h × w` input, plus its output dims.
pub fn layer_flops(spec: &LayerSpec, h: usize, w: usize) -> Result<(u64, (usize, usize, usize))> {
    let out = spec.output_dims(h, w)?;
    let (c_out, ho, wo) = out;
    let taps = (spec.kernel_h * spec.kernel_w) as u64;
    let out_px = (ho * wo) as u64;
    let c = spec.in_channels as u64;
    let f = match spec.kind {
        LayerKind::Conv | LayerKind::Deconv => taps * c * c_out as u64 * out_px,
        LayerKind::DepthwiseConv => taps * c * out_px,
        LayerKind::Gdn | LayerKind::Igdn => (c * c + c) * out_px,
        LayerKind::LeakyRelu | LayerKind::Relu | LayerKind::Sigmoid => c * out_px,
    };
    Ok((f, out))
}

/// Per-layer FLOPs of a layer chain fed an `h × w` input.
pub fn count_flops(component: &str, specs: &[LayerSpec], h: usize, w: usize) -> Result<Vec<LayerFlops>> {
    let (mut h, mut w) = (h, w);
    let mut out = Vec::with_capacity(specs.len());
    for (index, spec) in specs.iter().enumerate() {
        let (flops, dims) = layer_flops(spec, h, w)?;
        out.push(LayerFlops {
            component: component.to_string(),
            index,
            kind: spec.kind,
            output: dims,
            flops,
        });
        h = dims.1;
        w = dims.2;
    }
    Ok(out)
}

pub fn total(layers: &[LayerFlops]) -> u64 {
    layers.iter().map(|l| l.flops).sum()
}

/// FLOPs of one decoder branch of `width` producing an `out_h × out_w` image.
pub fn branch_flops(latent_channels: usize, width: usize, out_h: usize, out_w: usize) -> Result<u64> {
    let layers = count_flops(
        "branch",
        &branch_specs(latent_channels, width),
        out_h / DOWNSAMPLE,
        out_w / DOWNSAMPLE,
    )?;
    Ok(total(&layers))
}

/// One BAL or IBAL: the gate network plus its activation and the elementwise product.
pub fn gate_flops(latent_channels: usize, width: usize, latent_h: usize, latent_w: usize) -> Result<Vec<LayerFlops>> {
    let mut layers = count_flops("gate", &gate_specs(latent_channels, width), latent_h, latent_w)?;
    let elems = (latent_channels * latent_h * latent_w) as u64;
    let n = layers.len();
    layers.push(LayerFlops {
        component: "gate".into(),
        index: n,
        kind: LayerKind::Sigmoid,
        output: (latent_channels, latent_h, latent_w),
        flops: 2 * elems,
    });
    Ok(layers)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub resolution: (usize, usize),
    pub layers: Vec<LayerFlops>,
    pub branches: Vec<u64>,
    pub cumulative: Vec<u64>,
    /// BAL + IBAL.
    pub bam_gate: u64,
    pub total: u64,
}

impl FlopsReport {
    pub fn bam_share(&self) -> f64 {
        self.bam_gate as f64 / self.total as f64
    }

    pub fn branch_fractions(&self) -> Vec<f64> {
        let cam: u64 = self.branches.iter().sum();
        self.branches.iter().map(|&b| b as f64 / cam as f64).collect()
    }
}

/// Decoder-side FLOPs for an `out_h × out_w` image (multiples of 16):
/// every CAM branch plus one BAL/IBAL pair.
pub fn decoder_report(
    config: &CodecConfig,
    widths: &[usize],
    out_h: usize,
    out_w: usize,
) -> Result<FlopsReport> {
    let (lh, lw) = (out_h / DOWNSAMPLE, out_w / DOWNSAMPLE);
    let mut layers = Vec::new();
    let mut branches = Vec::with_capacity(widths.len());
    for (k, &t) in widths.iter().enumerate() {
        let bl = count_flops(
            &format!("branch{}", k + 1),
            &branch_specs(config.latent_channels, t),
            lh,
            lw,
        )?;
        branches.push(total(&bl));
        layers.extend(bl);
    }
    let mut bam_gate = 0;
    for name in ["bal", "ibal"] {
        let mut gl = gate_flops(config.latent_channels, config.bam_width, lh, lw)?;
        gl.iter_mut().for_each(|l| l.component = name.into());
        bam_gate += total(&gl);
        layers.extend(gl);
    }
    let cumulative = branches
        .iter()
        .scan(0u64, |acc, &b| {
            *acc += b;
            Some(*acc)
        })
        .collect::<Vec<_>>();
    let total = branches.iter().sum::<u64>() + bam_gate;
    Ok(FlopsReport {
        resolution: (out_h, out_w),
        layers,
        branches,
        cumulative,
        bam_gate,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_conv_counts_pixels() {
        let (f, _) = layer_flops(&LayerSpec::conv(1, 1, 1, 1), 10, 10).unwrap();
        assert_eq!(f, 100);
    }

    #[test]
    fn gdn_counts_gamma_product() {
        let (f, _) = layer_flops(&LayerSpec::gdn(4), 3, 5).unwrap();
        assert_eq!(f, (16 + 4) * 15);
    }

    #[test]
    fn chain_is_additive() {
        let layers = count_flops("b", &branch_specs(8, 6), 2, 3).unwrap();
        let direct: u64 = layers.iter().map(|l| l.flops).sum();
        assert_eq!(total(&layers), direct);
        assert_eq!(layers.last().unwrap().output, (3, 32, 48));
    }
}
