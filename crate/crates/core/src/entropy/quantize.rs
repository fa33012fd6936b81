use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::nn::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive `U(-0.5, 0.5)` noise; keeps the graph differentiable.
    Train,
    /// Round half away from zero.
    Eval,
}

pub fn round_half_away(v: f32) -> f32 {
    v.round()
}

pub fn add_uniform_noise(values: &FeatureMap<f32>, rng: &mut impl Rng) -> FeatureMap<f32> {
    let mut out = values.clone();
    for v in out.data_mut() {
        *v += rng.gen_range(-0.5f32..0.5f32);
    }
    out
}

pub fn quantize(y: &Latent, mode: QuantMode, rng: &mut impl Rng) -> Result<Latent> {
    if y.quantized {
        return Err(Error::InvalidArgument("latent is already quantized".into()));
    }
    Ok(match mode {
        QuantMode::Eval => Latent {
            values: y.values.map(round_half_away),
            quality_index: y.quality_index,
            quantized: true,
        },
        QuantMode::Train => Latent {
            values: add_uniform_noise(&y.values, rng),
            quality_index: y.quality_index,
            quantized: false,
        },
    })
}
