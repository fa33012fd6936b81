use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub crop_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step size of the adapter stage; the gates are small and start far from saturation.
    pub learning_rate_bam: f64,
    /// Step-size multiplier for entropy-model logits.
    pub entropy_lr_scale: f64,
    pub iterations_base: usize,
    /// Per decoder branch.
    pub iterations_cam: usize,
    /// Per adapter.
    pub iterations_bam: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Published schedule constants, with 20k iterations per stage.
    pub fn paper() -> Self {
        Self {
            crop_size: 256,
            batch_size: 8,
            learning_rate: 1e-4,
            learning_rate_bam: 1e-4,
            entropy_lr_scale: 1.0,
            iterations_base: 20_000,
            iterations_cam: 20_000,
            iterations_bam: 20_000,
            seed: 0,
        }
    }

    /// Settings the toy pipeline is tuned for on one CPU core.
    pub fn desk() -> Self {
        Self {
            crop_size: 64,
            batch_size: 4,
            learning_rate: 5e-4,
            learning_rate_bam: 5e-3,
            entropy_lr_scale: 10.0,
            iterations_base: 3000,
            iterations_cam: 1200,
            iterations_bam: 600,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("crop_size", self.crop_size),
            ("batch_size", self.batch_size),
            ("iterations_base", self.iterations_base),
            ("iterations_cam", self.iterations_cam),
            ("iterations_bam", self.iterations_bam),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.crop_size % 16 != 0 {
            return Err(Error::Config(format!(
                "crop_size {} must be a multiple of 16",
                self.crop_size
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("learning_rate_bam", self.learning_rate_bam),
            ("entropy_lr_scale", self.entropy_lr_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
