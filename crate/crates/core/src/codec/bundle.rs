//! On-disk model bundle.
//!
//! A directory with `manifest.json` plus one binary file per component.
//! Binary files are sequences of tensor records: `u32 rank`, `u32` dims,
//! then little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::bam::{Adapter, CodingPrior, Gate, GateKind};
use crate::codec::cam::{Branch, Cam};
use crate::codec::config::hex_digest;
use crate::codec::nets::{branch_specs, encoder_specs, gate_specs, init_encoder};
use crate::codec::sizing::size_branches;
use crate::codec::CodecConfig;
use crate::entropy::{FactorizedEntropyModel, FrozenTables, SUPPORT_MAX, SUPPORT_MIN};
use crate::error::{Error, Result};
use crate::eval::flops;
use crate::nn::{LayerSpec, Sequential};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const ENTROPY_BASE_FILE: &str = "entropy_base.bin";

pub fn cam_file(k: usize) -> String {
    format!("cam_k{k}.bin")
}

pub fn adapter_file(j: usize) -> String {
    format!("adapter_q{j}.bin")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: CodecConfig,
    pub config_hash: String,
    pub branch_widths: Vec<usize>,
    /// Decoder FLOPs per output pixel of each branch; multiply by `H·W`.
    pub branch_flops_per_pixel: Vec<f64>,
    /// BAL + IBAL FLOPs per output pixel.
    pub bam_flops_per_pixel: f64,
    /// Completed training stages in order, e.g. `base`, `cam`, `bam-q1`.
    pub stages: Vec<String>,
    pub seed: u64,
    pub creator: String,
    /// File name → hex SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Per-branch FLOPs at an `h × w` output.
    pub fn flops_table(&self, h: usize, w: usize) -> Vec<f64> {
        let px = (h * w) as f64;
        self.branch_flops_per_pixel.iter().map(|f| f * px).collect()
    }
}

/// The deployable codec.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: CodecConfig,
    pub encoder: Sequential,
    pub cam: Cam,
    pub base_prior: CodingPrior,
    /// Keyed by quality index `1..M−1`; the base index `M` never has one.
    pub adapters: BTreeMap<usize, Adapter>,
    pub stages: Vec<String>,
    pub seed: u64,
}

/// Branch and gate FLOPs at a 16×16 output, expressed per pixel.
fn flops_per_pixel(config: &CodecConfig, widths: &[usize]) -> Result<(Vec<f64>, f64)> {
    let r = flops::decoder_report(config, widths, 16, 16)?;
    Ok((
        r.branches.iter().map(|&b| b as f64 / 256.0).collect(),
        r.bam_gate as f64 / 256.0,
    ))
}

impl ModelBundle {
    /// Fresh random parameters; branch widths follow the configured FLOPs split.
    pub fn init(config: CodecConfig, seed: u64, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let widths = size_branches(&config)?;
        let c = config.latent_channels;
        let encoder = init_encoder(c, rng)?;
        let cam = Cam::init(c, &widths, rng)?;
        let base_prior = CodingPrior::freeze(FactorizedEntropyModel::with_default_support(c)?)?;
        Ok(Self {
            config,
            encoder,
            cam,
            base_prior,
            adapters: BTreeMap::new(),
            stages: Vec::new(),
            seed,
        })
    }

    pub fn base_quality(&self) -> usize {
        self.config.num_bitrates
    }

    /// Adapter for quality `j`, or `None` at the base quality.
    pub fn adapter(&self, j: usize) -> Result<Option<&Adapter>> {
        self.config.check_quality(j)?;
        if j == self.base_quality() {
            return Ok(None);
        }
        self.adapters.get(&j).map(Some).ok_or(Error::MissingAdapter(j))
    }

    /// Tables that code the latent at quality `j`.
    pub fn prior(&self, j: usize) -> Result<&CodingPrior> {
        Ok(match self.adapter(j)? {
            Some(a) => &a.prior,
            None => &self.base_prior,
        })
    }

    pub fn insert_adapter(&mut self, j: usize, adapter: Adapter) -> Result<()> {
        self.config.check_quality(j)?;
        if j == self.base_quality() {
            return Err(Error::InvalidArgument(format!(
                "quality {j} is the base bitrate and takes no adapter"
            )));
        }
        adapter.check_channels(self.config.latent_channels)?;
        self.adapters.insert(j, adapter);
        Ok(())
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    pub fn mark_stage(&mut self, stage: &str) {
        if !self.has_stage(stage) {
            self.stages.push(stage.to_string());
        }
    }

    pub fn manifest(&self, files: BTreeMap<String, String>) -> Result<Manifest> {
        let widths = self.cam.widths();
        let (branch_flops_per_pixel, bam_flops_per_pixel) = flops_per_pixel(&self.config, &widths)?;
        Ok(Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            branch_widths: widths,
            branch_flops_per_pixel,
            bam_flops_per_pixel,
            stages: self.stages.clone(),
            seed: self.seed,
            creator: format!("cbanet {}", env!("CARGO_PKG_VERSION")),
            files,
        })
    }

    /// Binary file contents keyed by file name.
    pub fn files(&self) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        out.insert(ENCODER_FILE.to_string(), net_bytes(&self.encoder, Vec::new()));
        for (k, b) in self.cam.branches.iter().enumerate() {
            let mut buf = Vec::new();
            write_tensor(&mut buf, &[], &[b.g]);
            out.insert(cam_file(k + 1), net_bytes(&b.net, buf));
        }
        out.insert(ENTROPY_BASE_FILE.to_string(), prior_bytes(&self.base_prior, Vec::new()));
        for (&j, a) in &self.adapters {
            let buf = net_bytes(&a.bal.net, Vec::new());
            let buf = net_bytes(&a.ibal.net, buf);
            out.insert(adapter_file(j), prior_bytes(&a.prior, buf));
        }
        out
    }

    /// SHA-256 over the manifest-listed file digests; identifies the parameters.
    pub fn digest(&self) -> String {
        let mut s = String::new();
        for (name, bytes) in self.files() {
            s.push_str(&name);
            s.push_str(&hex_digest(&bytes));
        }
        hex_digest(s.as_bytes())
    }

    /// Write every file and a manifest; stale adapter files are removed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let files = self.files();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.starts_with("adapter_q") && name.ends_with(".bin") && !files.contains_key(&name) {
                fs::remove_file(dir.join(&name))?;
            }
        }
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &files {
            fs::write(dir.join(name), bytes)?;
            hashes.insert(name.clone(), hex_digest(bytes));
        }
        let mut json = serde_json::to_string_pretty(&self.manifest(hashes)?)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let config = manifest.config.clone();
        config.validate()?;
        if manifest.config_hash != config.hash() {
            return Err(Error::HashMismatch("config".into()));
        }
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Bundle(format!(
                "unsupported bundle format {}",
                manifest.format_version
            )));
        }
        let read = |name: &str| -> Result<Vec<u8>> {
            let want = manifest
                .files
                .get(name)
                .ok_or_else(|| Error::Bundle(format!("manifest does not list {name}")))?;
            let bytes = fs::read(dir.join(name))
                .map_err(|e| Error::Bundle(format!("cannot read {name}: {e}")))?;
            if &hex_digest(&bytes) != want {
                return Err(Error::HashMismatch(name.to_string()));
            }
            Ok(bytes)
        };
        let c = config.latent_channels;
        let mut r = Records::new(read(ENCODER_FILE)?, ENCODER_FILE);
        let encoder = read_net(&mut r, &encoder_specs(c))?;
        r.done()?;

        if manifest.branch_widths.len() != config.k_max {
            return Err(Error::Bundle("branch width count differs from k_max".into()));
        }
        let mut branches = Vec::with_capacity(config.k_max);
        for (k, &t) in manifest.branch_widths.iter().enumerate() {
            let name = cam_file(k + 1);
            let mut r = Records::new(read(&name)?, &name);
            let g = r.tensor(&[])?[0];
            let net = read_net(&mut r, &branch_specs(c, t))?;
            r.done()?;
            branches.push(Branch { net, g });
        }

        let mut r = Records::new(read(ENTROPY_BASE_FILE)?, ENTROPY_BASE_FILE);
        let base_prior = read_prior(&mut r, c)?;
        r.done()?;

        let mut adapters = BTreeMap::new();
        for name in manifest.files.keys() {
            let Some(j) = name
                .strip_prefix("adapter_q")
                .and_then(|s| s.strip_suffix(".bin"))
                .and_then(|s| s.parse::<usize>().ok())
            else {
                continue;
            };
            let mut r = Records::new(read(name)?, name);
            let gates = gate_specs(c, config.bam_width);
            let bal = Gate::from_net(GateKind::Bal, read_net(&mut r, &gates)?);
            let ibal = Gate::from_net(GateKind::Ibal, read_net(&mut r, &gates)?);
            let prior = read_prior(&mut r, c)?;
            r.done()?;
            adapters.insert(j, Adapter { bal, ibal, prior });
        }

        let mut bundle = Self {
            config,
            encoder,
            cam: Cam { branches },
            base_prior,
            adapters: BTreeMap::new(),
            stages: manifest.stages.clone(),
            seed: manifest.seed,
        };
        for (j, a) in adapters {
            bundle.insert_adapter(j, a)?;
        }
        Ok(bundle)
    }

    /// Stored scalars of encoder, CAM (with `g_k`) and base entropy model.
    pub fn base_param_count(&self) -> usize {
        self.encoder.param_count() + self.cam.param_count() + self.base_prior.model.param_count()
    }

    pub fn adapter_param_counts(&self) -> BTreeMap<usize, usize> {
        self.adapters.iter().map(|(&j, a)| (j, a.param_count())).collect()
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Bundle(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Bundle(format!("bad manifest: {e}")))
}

/// Total size in bytes of the binary files of a saved bundle.
pub fn bundle_size(dir: &Path) -> Result<u64> {
    let manifest = read_manifest(dir)?;
    let mut total = 0;
    for name in manifest.files.keys() {
        total += fs::metadata(dir.join(name))?.len();
    }
    Ok(total)
}

pub fn write_tensor(buf: &mut Vec<u8>, dims: &[usize], data: &[f32]) {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn net_bytes(net: &Sequential, mut buf: Vec<u8>) -> Vec<u8> {
    for layer in net.layers() {
        for (shape, t) in layer.spec().param_shapes().iter().zip(layer.params()) {
            write_tensor(&mut buf, shape, t);
        }
    }
    buf
}

fn prior_bytes(p: &CodingPrior, mut buf: Vec<u8>) -> Vec<u8> {
    let c = p.model.channels();
    let n = p.model.alphabet();
    write_tensor(&mut buf, &[c, n], p.model.logits());
    let freqs: Vec<f32> = p
        .tables
        .tables
        .iter()
        .flat_map(|t| t.frequencies().into_iter().map(|f| f as f32))
        .collect();
    write_tensor(&mut buf, &[c, n], &freqs);
    buf
}

/// Cursor over the tensor records of one file.
pub struct Records<'a> {
    bytes: Vec<u8>,
    pos: usize,
    name: &'a str,
}

impl<'a> Records<'a> {
    pub fn new(bytes: Vec<u8>, name: &'a str) -> Self {
        Self { bytes, pos: 0, name }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::Bundle(format!("{} is truncated", self.name)))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    /// Next record, which must have exactly the given dims.
    pub fn tensor(&mut self, dims: &[usize]) -> Result<Vec<f32>> {
        let rank = self.u32()? as usize;
        let mut got = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            got.push(self.u32()? as usize);
        }
        if got != dims {
            return Err(Error::Bundle(format!(
                "{}: expected tensor {dims:?}, found {got:?}",
                self.name
            )));
        }
        let n: usize = dims.iter().product();
        (0..n)
            .map(|_| self.u32().map(f32::from_bits))
            .collect()
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Bundle(format!("{} has trailing bytes", self.name)));
        }
        Ok(())
    }
}

fn read_net(r: &mut Records, specs: &[LayerSpec]) -> Result<Sequential> {
    let mut tensors = Vec::new();
    for s in specs {
        for shape in s.param_shapes() {
            tensors.push(r.tensor(&shape)?);
        }
    }
    Sequential::from_flat(specs, tensors)
}

fn read_prior(r: &mut Records, channels: usize) -> Result<CodingPrior> {
    let n = (SUPPORT_MAX - SUPPORT_MIN + 1) as usize + 1;
    let logits = r.tensor(&[channels, n])?;
    let freqs = r.tensor(&[channels, n])?;
    let freqs: Vec<Vec<u32>> = freqs
        .chunks(n)
        .map(|row| {
            row.iter()
                .map(|&f| {
                    if f.fract() == 0.0 && (1.0..=65536.0).contains(&f) {
                        Ok(f as u32)
                    } else {
                        Err(Error::Bundle(format!("bad frequency {f}")))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(CodingPrior {
        model: FactorizedEntropyModel::from_logits(channels, SUPPORT_MIN, SUPPORT_MAX, logits)?,
        tables: FrozenTables::from_frequencies(SUPPORT_MIN, SUPPORT_MAX, &freqs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(m: usize) -> CodecConfig {
        let mut c = CodecConfig::desk();
        c.latent_channels = 4;
        c.cam_width = 32;
        c.bam_width = 6;
        c.num_bitrates = m;
        c.lambda_list = (1..m).map(|j| 0.01 * j as f64).collect();
        c
    }

    fn bundle(m: usize) -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = ModelBundle::init(tiny_config(m), 4, &mut rng).unwrap();
        for j in 1..m {
            let a = Adapter {
                bal: Gate::init(GateKind::Bal, 4, 6, &mut rng).unwrap(),
                ibal: Gate::init(GateKind::Ibal, 4, 6, &mut rng).unwrap(),
                prior: b.base_prior.clone(),
            };
            b.insert_adapter(j, a).unwrap();
        }
        b
    }

    fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let b = bundle(3);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        b.save(d1.path()).unwrap();
        let loaded = ModelBundle::load(d1.path()).unwrap();
        assert_eq!(loaded, b);
        loaded.save(d2.path()).unwrap();
        assert_eq!(dir_bytes(d1.path()), dir_bytes(d2.path()));
    }

    #[test]
    fn single_bitrate_bundle_has_no_adapter_files() {
        let d = tempfile::tempdir().unwrap();
        bundle(1).save(d.path()).unwrap();
        assert!(!dir_bytes(d.path()).keys().any(|n| n.starts_with("adapter")));
    }

    #[test]
    fn adapter_adds_exactly_its_file_size() {
        let mut b = bundle(3);
        let d = tempfile::tempdir().unwrap();
        b.save(d.path()).unwrap();
        let full = bundle_size(d.path()).unwrap();
        let adapter = fs::metadata(d.path().join(adapter_file(2))).unwrap().len();
        b.adapters.remove(&2);
        b.save(d.path()).unwrap();
        assert!(!d.path().join(adapter_file(2)).exists());
        assert_eq!(bundle_size(d.path()).unwrap() + adapter, full);
    }

    #[test]
    fn tampered_file_is_refused() {
        let d = tempfile::tempdir().unwrap();
        bundle(2).save(d.path()).unwrap();
        let p = d.path().join(cam_file(2));
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(ModelBundle::load(d.path()), Err(Error::HashMismatch(_))));
    }

    #[test]
    fn base_quality_needs_no_adapter() {
        let b = bundle(3);
        assert!(b.adapter(3).unwrap().is_none());
        assert!(b.adapter(1).unwrap().is_some());
        assert!(matches!(b.adapter(4), Err(Error::QualityOutOfRange { .. })));
        let mut b = b;
        b.adapters.clear();
        assert!(matches!(b.adapter(1), Err(Error::MissingAdapter(1))));
        assert!(b.insert_adapter(3, bundle(3).adapters[&1].clone()).is_err());
    }
}
