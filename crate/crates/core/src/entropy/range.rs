//! Byte-oriented range coder with 16-bit frequency precision.
//!
//! The coder keeps a 56-bit window and renormalizes whenever the range drops
//! below 2^48, so the per-symbol precision loss from truncating `range >> 16`
//! is at most 2^-32 of the interval. Carries propagate into already emitted
//! bytes. Termination emits a single byte; the decoder reads implied zero
//! bytes past the end and checks afterwards that the payload length matches
//! what the encoder must have produced.

use crate::error::{Error, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

const WINDOW: u64 = 1 << 56;
const RENORM: u64 = 1 << 48;
const WINDOW_BYTES: usize = 7;

/// Cumulative frequency table over an alphabet; totals exactly 2^16.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cdf {
    cum: Vec<u32>,
}

impl Cdf {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::InvalidArgument("empty alphabet".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for &f in freqs {
            acc += f as u64;
            if acc > TOTAL_FREQ as u64 {
                break;
            }
            cum.push(acc as u32);
        }
        if acc != TOTAL_FREQ as u64 {
            return Err(Error::InvalidArgument(format!(
                "frequencies sum to {acc}, expected {TOTAL_FREQ}"
            )));
        }
        Ok(Self { cum })
    }

    /// Quantize a probability vector to integer frequencies summing to 2^16,
    /// giving every entry at least one count.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        Self::from_frequencies(&quantize_frequencies(probs)?)
    }

    pub fn uniform(alphabet: usize) -> Result<Self> {
        if alphabet == 0 || TOTAL_FREQ as usize % alphabet != 0 {
            return Err(Error::InvalidArgument(format!(
                "uniform table needs an alphabet dividing {TOTAL_FREQ}"
            )));
        }
        Self::from_frequencies(&vec![TOTAL_FREQ / alphabet as u32; alphabet])
    }

    pub fn alphabet(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn cum(&self, s: usize) -> u32 {
        self.cum[s]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn probability(&self, s: usize) -> f64 {
        self.freq(s) as f64 / TOTAL_FREQ as f64
    }

    /// Symbol whose slot contains cumulative count `target`.
    fn lookup(&self, target: u32) -> usize {
        // last index with cum[i] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Floor-protected renormalization of `probs` to integer counts summing to 2^16.
///
/// Every entry first receives one count; the remaining `2^16 - n` counts are
/// split proportionally with floors, and the leftover goes to the entries
/// with the largest fractional parts (ties to the lower index).
pub fn quantize_frequencies(probs: &[f64]) -> Result<Vec<u32>> {
    let n = probs.len();
    if n == 0 || n > TOTAL_FREQ as usize {
        return Err(Error::InvalidArgument(format!(
            "cannot quantize an alphabet of {n} symbols"
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("probabilities must be finite and >= 0".into()));
    }
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidArgument("probabilities sum to zero".into()));
    }
    let spare = (TOTAL_FREQ as usize - n) as f64;
    let mut freqs = Vec::with_capacity(n);
    let mut fracs = Vec::with_capacity(n);
    for (i, p) in probs.iter().enumerate() {
        let share = p / sum * spare;
        let fl = share.floor();
        freqs.push(1 + fl as u32);
        fracs.push((share - fl, i));
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: i64 = freqs.iter().map(|&f| f as i64).sum();
    let mut k = 0;
    while assigned < TOTAL_FREQ as i64 {
        freqs[fracs[k % n].1] += 1;
        assigned += 1;
        k += 1;
    }
    // float round-off can overshoot by a count or two; take from the largest entries
    while assigned > TOTAL_FREQ as i64 {
        let (i, _) = freqs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        freqs[i] -= 1;
        assigned -= 1;
    }
    Ok(freqs)
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: WINDOW - 1,
            out: Vec::new(),
            symbols: 0,
        }
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            if *b == 0xFF {
                *b = 0;
            } else {
                *b += 1;
                return;
            }
        }
        unreachable!("carry out of the coded interval");
    }

    /// Encode the slot `[cum, cum + freq)` of a 2^16 total.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL_FREQ);
        let r = self.range >> PRECISION_BITS;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        if self.low >= WINDOW {
            self.propagate_carry();
            self.low -= WINDOW;
        }
        while self.range < RENORM {
            self.out.push((self.low >> 48) as u8);
            self.low = (self.low << 8) & (WINDOW - 1);
            self.range <<= 8;
        }
        self.symbols += 1;
    }

    pub fn encode_symbol(&mut self, cdf: &Cdf, s: usize) -> Result<()> {
        if s >= cdf.alphabet() || cdf.freq(s) == 0 {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                alphabet: cdf.alphabet(),
            });
        }
        self.encode(cdf.cum(s), cdf.freq(s));
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.symbols == 0 {
            return Vec::new();
        }
        // smallest value in [low, low + range) whose low 48 bits are zero
        let mut v = (self.low + RENORM - 1) & !(RENORM - 1);
        if v >= WINDOW {
            self.propagate_carry();
            v -= WINDOW;
        }
        self.out.push((v >> 48) as u8);
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    range: u64,
    diff: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut dec = Self {
            bytes,
            pos: 0,
            range: WINDOW - 1,
            diff: 0,
        };
        for _ in 0..WINDOW_BYTES {
            dec.diff = (dec.diff << 8) | dec.next_byte() as u64;
        }
        dec
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode_symbol(&mut self, cdf: &Cdf) -> Result<usize> {
        let r = self.range >> PRECISION_BITS;
        let target = self.diff / r;
        if target >= TOTAL_FREQ as u64 {
            return Err(Error::Bitstream("corrupt or truncated range-coded payload".into()));
        }
        let s = cdf.lookup(target as u32);
        let (cum, freq) = (cdf.cum(s), cdf.freq(s));
        self.diff -= r * cum as u64;
        self.range = r * freq as u64;
        if self.diff >= self.range {
            return Err(Error::Bitstream("corrupt or truncated range-coded payload".into()));
        }
        while self.range < RENORM {
            self.diff = (self.diff << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        Ok(s)
    }

    /// Verify that exactly the encoder's output was consumed.
    pub fn finish(self, decoded: usize) -> Result<()> {
        let expected = if decoded == 0 {
            0
        } else {
            self.pos - (WINDOW_BYTES - 1)
        };
        match self.bytes.len().cmp(&expected) {
            std::cmp::Ordering::Equal => Ok(()),
            std::cmp::Ordering::Less => Err(Error::Bitstream(format!(
                "truncated payload: {} bytes, coder needs {expected}",
                self.bytes.len()
            ))),
            std::cmp::Ordering::Greater => Err(Error::Bitstream(format!(
                "{} trailing bytes after range-coded payload",
                self.bytes.len() - expected
            ))),
        }
    }
}

pub fn range_encode(symbols: &[usize], cdf: &Cdf) -> Result<Vec<u8>> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode_symbol(cdf, s)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], cdf: &Cdf, n: usize) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes);
    let out = (0..n)
        .map(|_| dec.decode_symbol(cdf))
        .collect::<Result<Vec<_>>>()?;
    dec.finish(n)?;
    Ok(out)
}
