use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Network dimensions and rate targets of one bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Latent channels `C`; the encoder runs at this width throughout.
    pub latent_channels: usize,
    /// Width `T` of the reference single-branch decoder the branches are sized against.
    pub cam_width: usize,
    /// Internal width `P` of the BAL/IBAL gate networks.
    pub bam_width: usize,
    /// Number of decoder branches.
    pub k_max: usize,
    /// Number of supported bitrates `M`; index `M` is the base bitrate.
    pub num_bitrates: usize,
    pub lambda_base: f64,
    /// `λ_1 < … < λ_{M-1} < lambda_base`, one per adapter.
    pub lambda_list: Vec<f64>,
    pub branch_flops_fractions: Vec<f64>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CodecConfig {
    /// Small enough to train on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            latent_channels: 32,
            cam_width: 32,
            bam_width: 48,
            k_max: 3,
            num_bitrates: 3,
            lambda_base: 1.0,
            lambda_list: vec![0.0005, 0.002],
            branch_flops_fractions: vec![0.25, 0.25, 0.5],
        }
    }

    /// Channel counts of the published low-bitrate configuration.
    pub fn paper_scale() -> Self {
        Self {
            latent_channels: 128,
            cam_width: 128,
            bam_width: 192,
            k_max: 3,
            num_bitrates: 4,
            lambda_base: 2048.0,
            lambda_list: vec![256.0, 512.0, 1024.0],
            branch_flops_fractions: vec![0.25, 0.25, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_channels == 0 || self.cam_width == 0 || self.bam_width == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if self.num_bitrates == 0 || self.num_bitrates > u8::MAX as usize {
            return bad("num_bitrates must be in 1..=255".into());
        }
        if !(self.lambda_base > 0.0 && self.lambda_base.is_finite()) {
            return bad("lambda_base must be positive".into());
        }
        if self.lambda_list.len() != self.num_bitrates - 1 {
            return bad(format!(
                "lambda_list needs {} entries for {} bitrates, got {}",
                self.num_bitrates - 1,
                self.num_bitrates,
                self.lambda_list.len()
            ));
        }
        let mut prev = 0.0;
        for &l in &self.lambda_list {
            if !(l > prev && l.is_finite()) {
                return bad("lambda_list must be positive and strictly increasing".into());
            }
            prev = l;
        }
        if prev >= self.lambda_base && !self.lambda_list.is_empty() {
            return bad("every lambda in lambda_list must be below lambda_base".into());
        }
        if self.branch_flops_fractions.len() != self.k_max {
            return bad(format!(
                "branch_flops_fractions needs {} entries, got {}",
                self.k_max,
                self.branch_flops_fractions.len()
            ));
        }
        if self.branch_flops_fractions.iter().any(|&f| !(f > 0.0)) {
            return bad("branch FLOPs fractions must be positive".into());
        }
        let sum: f64 = self.branch_flops_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("branch FLOPs fractions sum to {sum}, expected 1"));
        }
        Ok(())
    }

    /// Lagrangian multiplier of quality index `j` (1-based, `M` = base).
    pub fn lambda_for(&self, j: usize) -> Result<f64> {
        self.check_quality(j)?;
        Ok(if j == self.num_bitrates {
            self.lambda_base
        } else {
            self.lambda_list[j - 1]
        })
    }

    pub fn check_quality(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.num_bitrates {
            return Err(Error::QualityOutOfRange {
                got: j,
                max: self.num_bitrates,
            });
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
