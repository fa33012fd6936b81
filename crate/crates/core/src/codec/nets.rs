//! Layer layouts of the encoder, decoder branches and BAL/IBAL gate networks.

use rand::Rng;

use crate::error::Result;
use crate::nn::{LayerKind, LayerSpec, Scalar, Sequential};

pub const KERNEL: usize = 5;
pub const DOWNSAMPLE: usize = 16;
/// Initial latent scale relative to a variance-preserving encoder; the
/// decoder's first layer starts divided by the same factor.
pub const LATENT_GAIN: f64 = 8.0;

/// Four stride-2 5×5 convs, GDN after the first three.
pub fn encoder_specs(latent_channels: usize) -> Vec<LayerSpec> {
    let c = latent_channels;
    vec![
        LayerSpec::conv(3, c, KERNEL, 2),
        LayerSpec::gdn(c),
        LayerSpec::conv(c, c, KERNEL, 2),
        LayerSpec::gdn(c),
        LayerSpec::conv(c, c, KERNEL, 2),
        LayerSpec::gdn(c),
        LayerSpec::conv(c, c, KERNEL, 2),
    ]
}

/// Four stride-2 5×5 deconvs, IGDN after the first three, RGB out.
pub fn branch_specs(latent_channels: usize, width: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::deconv(latent_channels, width, KERNEL, 2),
        LayerSpec::igdn(width),
        LayerSpec::deconv(width, width, KERNEL, 2),
        LayerSpec::igdn(width),
        LayerSpec::deconv(width, width, KERNEL, 2),
        LayerSpec::igdn(width),
        LayerSpec::deconv(width, 3, KERNEL, 2),
    ]
}

fn scale_tensor<T: Scalar>(t: &mut [T], s: f64) {
    let s = T::from_f64_lossy(s);
    for v in t {
        *v = *v * s;
    }
}

pub fn init_encoder<T: Scalar>(latent_channels: usize, rng: &mut impl Rng) -> Result<Sequential<T>> {
    let mut net = Sequential::init(&encoder_specs(latent_channels), rng)?;
    let mut t = net.param_tensors_mut();
    let n = t.len();
    scale_tensor(t[n - 2], LATENT_GAIN);
    Ok(net)
}

/// Decoder stack starting as a quiet image around `bias`.
pub fn init_decoder<T: Scalar>(
    latent_channels: usize,
    width: usize,
    bias: f64,
    rng: &mut impl Rng,
) -> Result<Sequential<T>> {
    let mut net = Sequential::init(&branch_specs(latent_channels, width), rng)?;
    let mut t = net.param_tensors_mut();
    scale_tensor(t[0], 1.0 / LATENT_GAIN);
    let n = t.len();
    scale_tensor(t[n - 2], 0.1);
    t[n - 1].fill(T::from_f64_lossy(bias));
    Ok(net)
}

/// 1×1 C→P, 3×3 depthwise, 1×1 P→P, 1×1 P→C with leaky ReLU in between.
pub fn gate_specs(latent_channels: usize, width: usize) -> Vec<LayerSpec> {
    let lrelu = LayerSpec::elementwise(LayerKind::LeakyRelu, width);
    vec![
        LayerSpec::conv(latent_channels, width, 1, 1),
        lrelu,
        LayerSpec::depthwise(width, 3),
        lrelu,
        LayerSpec::conv(width, width, 1, 1),
        lrelu,
        LayerSpec::conv(width, latent_channels, 1, 1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(specs: &[LayerSpec]) -> usize {
        specs.iter().map(|s| s.param_count()).sum()
    }

    #[test]
    fn gate_pair_parameter_budget_at_published_width() {
        // 0.17M per BAL+IBAL pair for C = 128, P = 192
        let pair = 2 * count(&gate_specs(128, 192));
        assert_eq!(pair, 2 * (128 * 192 + 192 + 9 * 192 + 192 + 192 * 192 + 192 + 192 * 128 + 128));
        assert!((pair as f64 / 0.17e6 - 1.0).abs() < 0.15, "{pair}");
    }

    #[test]
    fn specs_validate() {
        for s in encoder_specs(8)
            .iter()
            .chain(&branch_specs(8, 5))
            .chain(&gate_specs(8, 12))
        {
            s.validate().unwrap();
        }
    }
}
