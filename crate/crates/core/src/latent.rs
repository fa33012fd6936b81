use crate::error::{Error, Result};
use crate::nn::FeatureMap;

/// Encoder output at some quality index, before or after quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub values: FeatureMap<f32>,
    pub quality_index: usize,
    pub quantized: bool,
}

impl Latent {
    pub fn new(values: FeatureMap<f32>, quality_index: usize, quantized: bool) -> Result<Self> {
        if quantized && values.data().iter().any(|v| v.fract() != 0.0) {
            return Err(Error::InvalidArgument(
                "quantized latent holds non-integer values".into(),
            ));
        }
        Ok(Self {
            values,
            quality_index,
            quantized,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.shape()
    }
}
