//! Factorized (per-channel, spatially independent) prior over quantized latents.
//!
//! Each channel carries a categorical distribution over the integer support
//! `[s_min, s_max]` plus one escape entry, parametrized by softmax logits.
//! Seen as a density, symbol `s` owns the unit bin around it; convolving
//! with the `U(-0.5, 0.5)` training noise turns the likelihood of a
//! continuous value into linear interpolation between neighbouring symbol
//! probabilities, which keeps the rate differentiable in both the latent and
//! the logits.

use std::f64::consts::LN_2;

use crate::entropy::range::{Cdf, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::nn::FeatureMap;

pub const SUPPORT_MIN: i32 = -128;
pub const SUPPORT_MAX: i32 = 127;
/// Escaped values are followed by four uniform bytes (a zigzagged `i32`).
pub const ESCAPE_TAIL_BITS: f64 = 32.0;

const MIN_LIKELIHOOD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedEntropyModel {
    s_min: i32,
    s_max: i32,
    channels: usize,
    /// `channels × (num_symbols + 1)`, escape last.
    logits: Vec<f32>,
}

/// Output of [`FactorizedEntropyModel::rate_with_grad`].
#[derive(Clone, Debug)]
pub struct RateGrad {
    pub bits: f64,
    pub grad_values: FeatureMap<f32>,
    pub grad_logits: Vec<f32>,
}

impl FactorizedEntropyModel {
    /// Discretized Laplacian start (scale 4) with a small escape mass.
    pub fn new(channels: usize, s_min: i32, s_max: i32) -> Result<Self> {
        check_support(channels, s_min, s_max)?;
        let n = (s_max - s_min + 1) as usize;
        let mut logits = Vec::with_capacity(channels * (n + 1));
        for _ in 0..channels {
            for s in s_min..=s_max {
                logits.push(-(s as f32).abs() / 4.0);
            }
            logits.push(-12.0);
        }
        Ok(Self {
            s_min,
            s_max,
            channels,
            logits,
        })
    }

    pub fn with_default_support(channels: usize) -> Result<Self> {
        Self::new(channels, SUPPORT_MIN, SUPPORT_MAX)
    }

    /// Build from explicit per-channel symbol probabilities plus escape mass.
    pub fn from_probabilities(
        s_min: i32,
        s_max: i32,
        symbol_probs: &[Vec<f64>],
        escape: &[f64],
    ) -> Result<Self> {
        let channels = symbol_probs.len();
        check_support(channels, s_min, s_max)?;
        let n = (s_max - s_min + 1) as usize;
        if escape.len() != channels || symbol_probs.iter().any(|p| p.len() != n) {
            return Err(Error::Shape(format!(
                "expected {channels} channels of {n} symbol probabilities plus escape"
            )));
        }
        let mut logits = Vec::with_capacity(channels * (n + 1));
        for (probs, &esc) in symbol_probs.iter().zip(escape) {
            let total: f64 = probs.iter().sum::<f64>() + esc;
            if (total - 1.0).abs() > 1e-9 || probs.iter().chain([&esc]).any(|&p| p < 0.0) {
                return Err(Error::InvalidArgument(
                    "probabilities must be non-negative and sum to 1".into(),
                ));
            }
            logits.extend(probs.iter().chain([&esc]).map(|&p| p.ln() as f32));
        }
        Ok(Self {
            s_min,
            s_max,
            channels,
            logits,
        })
    }

    pub fn from_logits(channels: usize, s_min: i32, s_max: i32, logits: Vec<f32>) -> Result<Self> {
        check_support(channels, s_min, s_max)?;
        let n = (s_max - s_min + 1) as usize;
        if logits.len() != channels * (n + 1) {
            return Err(Error::Shape(format!(
                "entropy model needs {} logits, got {}",
                channels * (n + 1),
                logits.len()
            )));
        }
        Ok(Self {
            s_min,
            s_max,
            channels,
            logits,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn support(&self) -> (i32, i32) {
        (self.s_min, self.s_max)
    }

    pub fn num_symbols(&self) -> usize {
        (self.s_max - self.s_min + 1) as usize
    }

    /// Symbols plus escape.
    pub fn alphabet(&self) -> usize {
        self.num_symbols() + 1
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Vec<f32> {
        &mut self.logits
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    /// Softmax over symbols and escape for channel `c`.
    pub fn probabilities(&self, c: usize) -> Vec<f64> {
        let k = self.alphabet();
        let row = &self.logits[c * k..(c + 1) * k];
        let max = row
            .iter()
            .map(|&v| v as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn symbol_index(&self, v: i64) -> Option<usize> {
        if v >= self.s_min as i64 && v <= self.s_max as i64 {
            Some((v - self.s_min as i64) as usize)
        } else {
            None
        }
    }

    /// Bits for integer-valued latents, `Σ -log2 p(ŷ)`; escapes pay the escape
    /// probability plus the fixed tail.
    pub fn rate_bits(&self, values: &FeatureMap<f32>) -> Result<f64> {
        self.check_channels(values)?;
        let mut bits = 0.0;
        for c in 0..self.channels {
            let p = self.probabilities(c);
            let esc = p[self.num_symbols()];
            for &v in values.plane(c) {
                bits += match self.symbol_index(v.round() as i64) {
                    Some(i) => -p[i].max(MIN_LIKELIHOOD).log2(),
                    None => -esc.max(MIN_LIKELIHOOD).log2() + ESCAPE_TAIL_BITS,
                };
            }
        }
        Ok(bits)
    }

    /// Rate of noisy (continuous) latents with gradients w.r.t. the values and the logits.
    pub fn rate_with_grad(&self, values: &FeatureMap<f32>) -> Result<RateGrad> {
        self.check_channels(values)?;
        let n = self.num_symbols();
        let k = self.alphabet();
        let mut bits = 0.0;
        let mut grad_values = FeatureMap::zeros(values.channels(), values.height(), values.width());
        let mut grad_logits = vec![0f32; self.logits.len()];
        for c in 0..self.channels {
            let p = self.probabilities(c);
            let mut count = 0.0f64;
            // Σ_e w_e,k · P_k / p_e
            let mut sparse = vec![0.0f64; k];
            let gv = grad_values.plane_mut(c);
            for (i, &v) in values.plane(c).iter().enumerate() {
                count += 1.0;
                let pos = v as f64 - self.s_min as f64;
                if !(0.0..=(n - 1) as f64).contains(&pos) {
                    let esc = p[n].max(MIN_LIKELIHOOD);
                    bits += -esc.log2() + ESCAPE_TAIL_BITS;
                    sparse[n] += p[n] / esc;
                    continue;
                }
                let lo = (pos.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                let f = if lo == hi { 0.0 } else { pos - lo as f64 };
                let like = ((1.0 - f) * p[lo] + f * p[hi]).max(MIN_LIKELIHOOD);
                bits -= like.log2();
                gv[i] = (-(p[hi] - p[lo]) / (like * LN_2)) as f32;
                sparse[lo] += (1.0 - f) * p[lo] / like;
                if hi != lo {
                    sparse[hi] += f * p[hi] / like;
                }
            }
            for j in 0..k {
                grad_logits[c * k + j] = ((count * p[j] - sparse[j]) / LN_2) as f32;
            }
        }
        Ok(RateGrad {
            bits,
            grad_values,
            grad_logits,
        })
    }

    fn check_channels(&self, values: &FeatureMap<f32>) -> Result<()> {
        if values.channels() != self.channels {
            return Err(Error::Shape(format!(
                "entropy model has {} channels, latent has {}",
                self.channels,
                values.channels()
            )));
        }
        Ok(())
    }

    /// Freeze the model into integer tables for the range coder.
    pub fn export_cdf(&self) -> Result<FrozenTables> {
        let tables = (0..self.channels)
            .map(|c| Cdf::from_probabilities(&self.probabilities(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenTables {
            s_min: self.s_min,
            s_max: self.s_max,
            tables,
        })
    }
}

fn check_support(channels: usize, s_min: i32, s_max: i32) -> Result<()> {
    if channels == 0 {
        return Err(Error::InvalidArgument("entropy model needs channels".into()));
    }
    if s_max < s_min {
        return Err(Error::InvalidArgument(format!(
            "empty support [{s_min}, {s_max}]"
        )));
    }
    Ok(())
}

/// Per-channel integer CDFs (escape last) used by both encoder and decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenTables {
    pub s_min: i32,
    pub s_max: i32,
    pub tables: Vec<Cdf>,
}

fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

fn unzigzag(u: u32) -> i32 {
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}

impl FrozenTables {
    pub fn from_frequencies(s_min: i32, s_max: i32, freqs: &[Vec<u32>]) -> Result<Self> {
        let n = (s_max - s_min + 1) as usize + 1;
        let tables = freqs
            .iter()
            .map(|f| {
                if f.len() != n {
                    return Err(Error::Shape(format!("table needs {n} entries, got {}", f.len())));
                }
                Cdf::from_frequencies(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            s_min,
            s_max,
            tables,
        })
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    fn escape_index(&self) -> usize {
        (self.s_max - self.s_min + 1) as usize
    }

    /// Range-code an integer latent channel by channel, raster order within a channel.
    pub fn encode(&self, values: &FeatureMap<f32>) -> Result<Vec<u8>> {
        if values.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "tables cover {} channels, latent has {}",
                self.channels(),
                values.channels()
            )));
        }
        let byte_table = Cdf::uniform(256)?;
        let mut enc = RangeEncoder::new();
        for (c, cdf) in self.tables.iter().enumerate() {
            for &v in values.plane(c) {
                if v.fract() != 0.0 || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "latent value {v} is not an integer"
                    )));
                }
                if v >= self.s_min as f32 && v <= self.s_max as f32 {
                    enc.encode_symbol(cdf, (v as i64 - self.s_min as i64) as usize)?;
                } else {
                    if v.abs() > i32::MAX as f32 / 2.0 {
                        return Err(Error::InvalidArgument(format!(
                            "latent value {v} exceeds the escape range"
                        )));
                    }
                    enc.encode_symbol(cdf, self.escape_index())?;
                    for b in zigzag(v as i32).to_be_bytes() {
                        enc.encode_symbol(&byte_table, b as usize)?;
                    }
                }
            }
        }
        Ok(enc.finish())
    }

    pub fn decode(
        &self,
        bytes: &[u8],
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<FeatureMap<f32>> {
        if channels != self.channels() {
            return Err(Error::Shape(format!(
                "tables cover {} channels, stream declares {channels}",
                self.channels()
            )));
        }
        let byte_table = Cdf::uniform(256)?;
        let mut dec = RangeDecoder::new(bytes);
        let mut data = Vec::with_capacity(channels * height * width);
        let mut decoded = 0;
        for cdf in &self.tables {
            for _ in 0..height * width {
                let s = dec.decode_symbol(cdf)?;
                decoded += 1;
                let v = if s == self.escape_index() {
                    let mut word = [0u8; 4];
                    for b in word.iter_mut() {
                        *b = dec.decode_symbol(&byte_table)? as u8;
                        decoded += 1;
                    }
                    unzigzag(u32::from_be_bytes(word))
                } else {
                    self.s_min + s as i32
                };
                data.push(v as f32);
            }
        }
        dec.finish(decoded)?;
        FeatureMap::new(channels, height, width, data)
    }
}
