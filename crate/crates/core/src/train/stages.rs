//! The three training stages: encoder preparation, branch-by-branch decoder
//! training, and one bitrate adapter per target rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::bam::{Adapter, CodingPrior, Gate, GateKind};
use crate::codec::config::hex_digest;
use crate::codec::nets::init_decoder;
use crate::codec::ModelBundle;
use crate::entropy::quantize::add_uniform_noise;
use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Sequential};
use crate::train::config::TrainConfig;
use crate::train::data::CropStream;
use crate::train::loss::mse255_with_grad;
use crate::train::optim::{step_schedule, Adam};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossPoint {
    pub iteration: usize,
    pub rate_bpp: f64,
    pub distortion: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub iterations: usize,
    /// Batch means, one point per iteration.
    pub curve: Vec<LossPoint>,
    /// Component file digests before and after; only `updated` may differ.
    pub digests_before: BTreeMap<String, String>,
    pub digests_after: BTreeMap<String, String>,
    pub updated: Vec<String>,
}

impl StageReport {
    /// Components outside `updated` whose digest changed.
    pub fn frozen_violations(&self) -> Vec<String> {
        self.digests_before
            .iter()
            .filter(|(k, v)| !self.updated.contains(k) && self.digests_after.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,rate_bpp,distortion,total\n");
        for p in &self.curve {
            writeln!(s, "{},{:.6},{:.6},{:.6}", p.iteration, p.rate_bpp, p.distortion, p.total)
                .expect("string write");
        }
        s
    }

    /// JSON with everything but the curve.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            stage: &'a str,
            iterations: usize,
            final_loss: f64,
            updated: &'a [String],
            frozen_violations: Vec<String>,
            digests_before: &'a BTreeMap<String, String>,
            digests_after: &'a BTreeMap<String, String>,
        }
        let mut s = serde_json::to_string_pretty(&Summary {
            stage: &self.stage,
            iterations: self.iterations,
            final_loss: self.final_loss(),
            updated: &self.updated,
            frozen_violations: self.frozen_violations(),
            digests_before: &self.digests_before,
            digests_after: &self.digests_after,
        })?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `report_<stage>.csv` and `report_<stage>.json`; returns the JSON path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("report_{}.csv", self.stage)), self.to_csv())?;
        let json = dir.join(format!("report_{}.json", self.stage));
        std::fs::write(&json, self.to_json()?)?;
        Ok(json)
    }
}

pub fn component_digests(bundle: &ModelBundle) -> BTreeMap<String, String> {
    bundle
        .files()
        .into_iter()
        .map(|(name, bytes)| (name.trim_end_matches(".bin").to_string(), hex_digest(&bytes)))
        .collect()
}

/// Independent stream per stage so stages can be rerun in isolation.
fn stage_seed(seed: u64, stage: &str) -> u64 {
    let d = hex_digest(format!("{seed}:{stage}").as_bytes());
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}

fn zeros_like(tensors: &[&Vec<f32>]) -> Vec<Vec<f32>> {
    tensors.iter().map(|t| vec![0.0; t.len()]).collect()
}

fn accumulate(acc: &mut [Vec<f32>], grads: &[Vec<f32>], scale: f32) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.iter_mut().zip(g) {
            *x += scale * y;
        }
    }
}

fn diverged(stage: &str, iteration: usize, loss: f64) -> Error {
    Error::Divergence {
        stage: stage.to_string(),
        iteration,
        loss,
    }
}

/// Numeric failures inside a stage are reported as divergence.
fn guard<T>(r: Result<T>, stage: &str, iteration: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(_) => diverged(stage, iteration, f64::NAN),
        e => e,
    })
}

struct Tracker {
    stage: String,
    curve: Vec<LossPoint>,
    sums: (f64, f64, f64),
}

impl Tracker {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            curve: Vec::new(),
            sums: (0.0, 0.0, 0.0),
        }
    }

    fn add(&mut self, rate: f64, distortion: f64, total: f64) {
        self.sums.0 += rate;
        self.sums.1 += distortion;
        self.sums.2 += total;
    }

    fn close(&mut self, iteration: usize, batch: usize) -> Result<()> {
        let n = batch as f64;
        let (r, d, t) = self.sums;
        self.sums = (0.0, 0.0, 0.0);
        if !t.is_finite() {
            return Err(diverged(&self.stage, iteration, t / n));
        }
        self.curve.push(LossPoint {
            iteration,
            rate_bpp: r / n,
            distortion: d / n,
            total: t / n,
        });
        Ok(())
    }
}

fn report(
    stage: &str,
    tracker: Tracker,
    before: BTreeMap<String, String>,
    bundle: &ModelBundle,
    updated: Vec<String>,
) -> Result<StageReport> {
    let r = StageReport {
        stage: stage.to_string(),
        iterations: tracker.curve.len(),
        curve: tracker.curve,
        digests_before: before,
        digests_after: component_digests(bundle),
        updated,
    };
    let bad = r.frozen_violations();
    if !bad.is_empty() {
        return Err(Error::StageOrder(format!(
            "stage {stage} modified frozen components {bad:?}"
        )));
    }
    Ok(r)
}

pub struct BaseOutcome {
    pub report: StageReport,
    /// Plain decoder trained alongside the encoder; not part of the bundle.
    pub scratch_decoder: Sequential,
}

/// Encoder, base entropy model and a throwaway decoder, jointly at `lambda_base`.
pub fn train_base(bundle: &mut ModelBundle, tc: &TrainConfig, images: &[FeatureMap]) -> Result<BaseOutcome> {
    tc.validate()?;
    const STAGE: &str = "base";
    let before = component_digests(bundle);
    let seed = stage_seed(tc.seed, STAGE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = CropStream::new(images.to_vec(), tc.crop_size, seed)?;
    let c = bundle.config.latent_channels;
    let lambda = bundle.config.lambda_base;
    let mut encoder = bundle.encoder.clone();
    let mut decoder = init_decoder(c, bundle.config.cam_width, 0.5, &mut rng)?;
    let mut model = bundle.base_prior.model.clone();
    let n_enc = encoder.param_tensors().len();
    let n_dec = decoder.param_tensors().len();
    let mut scales = vec![1.0; n_enc + n_dec];
    scales.push(tc.entropy_lr_scale);
    let mut opt = Adam::new(tc.learning_rate);
    let mut tracker = Tracker::new(STAGE);
    let px = tc.crop_size * tc.crop_size;
    let inv_b = 1.0 / tc.batch_size as f32;

    for it in 0..tc.iterations_base {
        opt.lr = step_schedule(tc.learning_rate, it, tc.iterations_base);
        let mut ge = zeros_like(&encoder.param_tensors());
        let mut gd = zeros_like(&decoder.param_tensors());
        let mut gl = vec![0f32; model.logits().len()];
        for _ in 0..tc.batch_size {
            let x = data.next_crop();
            let te = guard(encoder.forward_trace(&x), STAGE, it)?;
            let y_tilde = add_uniform_noise(te.last().expect("trace"), &mut rng);
            let rate = model.rate_with_grad(&y_tilde)?;
            let td = guard(decoder.forward_trace(&y_tilde), STAGE, it)?;
            let (d, mut gx) = mse255_with_grad(&x, td.last().expect("trace"))?;
            let bpp = rate.bits / px as f64;
            tracker.add(bpp, d, bpp + lambda * d);
            gx.scale(lambda as f32);
            let bd = guard(decoder.backward(&td, &gx, true), STAGE, it)?;
            let mut gy = bd.input;
            gy.add_scaled(&rate.grad_values, 1.0 / px as f32)?;
            let be = guard(encoder.backward(&te, &gy, true), STAGE, it)?;
            accumulate(&mut ge, &be.params, inv_b);
            accumulate(&mut gd, &bd.params, inv_b);
            accumulate(std::slice::from_mut(&mut gl), &[rate.grad_logits], inv_b / px as f32);
        }
        tracker.close(it, tc.batch_size)?;
        let mut params = encoder.param_tensors_mut();
        params.extend(decoder.param_tensors_mut());
        params.push(model.logits_mut());
        let mut grads = ge;
        grads.extend(gd);
        grads.push(gl);
        opt.step(params, &grads, &scales);
    }
    bundle.encoder = encoder;
    bundle.base_prior = CodingPrior::freeze(model)?;
    bundle.stages.clear();
    bundle.adapters.clear();
    bundle.mark_stage(STAGE);
    let report = report(
        STAGE,
        tracker,
        before,
        bundle,
        vec!["encoder".into(), "entropy_base".into()],
    )?;
    Ok(BaseOutcome {
        report,
        scratch_decoder: decoder,
    })
}

/// Train branch `k` (1-based) with every earlier branch and weight frozen.
pub fn train_cam_branch(bundle: &mut ModelBundle, tc: &TrainConfig, images: &[FeatureMap], k: usize) -> Result<StageReport> {
    tc.validate()?;
    if !bundle.has_stage("base") {
        return Err(Error::StageOrder("decoder branches need a trained encoder (run base first)".into()));
    }
    bundle.cam.check_branches(k)?;
    if k > 1 && !bundle.has_stage(&format!("cam-k{}", k - 1)) {
        return Err(Error::StageOrder(format!("branch {k} is trained after branch {}", k - 1)));
    }
    let stage = format!("cam-k{k}");
    let before = component_digests(bundle);
    let seed = stage_seed(tc.seed, &stage);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = CropStream::new(images.to_vec(), tc.crop_size, seed)?;
    let px = tc.crop_size * tc.crop_size;
    let inv_b = 1.0 / tc.batch_size as f32;
    let mut net = bundle.cam.branches[k - 1].net.clone();
    let mut g = vec![bundle.cam.branches[k - 1].g];
    let mut opt = Adam::new(tc.learning_rate);
    let mut tracker = Tracker::new(&stage);

    for it in 0..tc.iterations_cam {
        opt.lr = step_schedule(tc.learning_rate, it, tc.iterations_cam);
        let mut gn = zeros_like(&net.param_tensors());
        let mut gg = 0f32;
        for _ in 0..tc.batch_size {
            let x = data.next_crop();
            let y = guard(bundle.encoder.forward(&x), &stage, it)?;
            let y_tilde = add_uniform_noise(&y, &mut rng);
            let bits = bundle.base_prior.model.rate_with_grad(&y_tilde)?.bits;
            let mut x_hat = FeatureMap::zeros(3, tc.crop_size, tc.crop_size);
            for i in 0..k - 1 {
                x_hat.add_scaled(&guard(bundle.cam.branch_output(i, &y_tilde), &stage, it)?, 1.0)?;
            }
            let t = guard(net.forward_trace(&y_tilde), &stage, it)?;
            let f = t.last().expect("trace");
            x_hat.add_scaled(f, g[0])?;
            let (d, gx) = mse255_with_grad(&x, &x_hat)?;
            tracker.add(bits / px as f64, d, d);
            gg += inv_b * gx.dot(f);
            let mut gf = gx;
            gf.scale(g[0]);
            let b = guard(net.backward(&t, &gf, true), &stage, it)?;
            accumulate(&mut gn, &b.params, inv_b);
        }
        tracker.close(it, tc.batch_size)?;
        let mut params = net.param_tensors_mut();
        params.push(&mut g);
        gn.push(vec![gg]);
        opt.step(params, &gn, &[]);
    }
    bundle.cam.branches[k - 1].net = net;
    bundle.cam.branches[k - 1].g = g[0];
    bundle.mark_stage(&stage);
    report(&stage, tracker, before, bundle, vec![format!("cam_k{k}")])
}

/// All branches in order; marks the `cam` stage done.
pub fn train_cam_progressive(bundle: &mut ModelBundle, tc: &TrainConfig, images: &[FeatureMap]) -> Result<Vec<StageReport>> {
    let mut reports = Vec::with_capacity(bundle.cam.k_max());
    for k in 1..=bundle.cam.k_max() {
        reports.push(train_cam_branch(bundle, tc, images, k)?);
    }
    bundle.mark_stage("cam");
    Ok(reports)
}

/// Fresh adapter: near-identity gates and a copy of the base entropy model.
pub fn init_adapter(bundle: &ModelBundle, rng: &mut ChaCha8Rng) -> Result<Adapter> {
    let (c, p) = (bundle.config.latent_channels, bundle.config.bam_width);
    Ok(Adapter {
        bal: Gate::init(GateKind::Bal, c, p, rng)?,
        ibal: Gate::init(GateKind::Ibal, c, p, rng)?,
        prior: CodingPrior::freeze(bundle.base_prior.model.clone())?,
    })
}

/// Mean of `bits/pixels + λ·D` over `crops` with noise quantization and all
/// branches; `adapter = None` is the base pipeline.
pub fn noisy_rd_loss(
    bundle: &ModelBundle,
    adapter: Option<&Adapter>,
    crops: &[FeatureMap],
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = bundle.cam.k_max();
    let mut total = 0.0;
    for x in crops {
        let (_, h, w) = x.shape();
        let y = bundle.encoder.forward(x)?;
        let (y_j, model) = match adapter {
            Some(a) => (a.bal.forward(&y)?, &a.prior.model),
            None => (y, &bundle.base_prior.model),
        };
        let y_tilde = add_uniform_noise(&y_j, &mut rng);
        let bits = model.rate_with_grad(&y_tilde)?.bits;
        let y_b = match adapter {
            Some(a) => a.ibal.forward(&y_tilde)?,
            None => y_tilde,
        };
        let x_hat = bundle.cam.decode(&y_b, k)?;
        let (d, _) = mse255_with_grad(x, &x_hat)?;
        total += bits / (h * w) as f64 + lambda * d;
    }
    Ok(total / crops.len() as f64)
}

/// BAL, IBAL and entropy model for quality `j` at multiplier `lambda`, with
/// the encoder, every branch and the base entropy model frozen.
pub fn train_bam(
    bundle: &mut ModelBundle,
    tc: &TrainConfig,
    images: &[FeatureMap],
    j: usize,
    lambda: f64,
) -> Result<StageReport> {
    tc.validate()?;
    if !bundle.has_stage("cam") {
        return Err(Error::StageOrder("adapters need trained decoder branches (run cam first)".into()));
    }
    bundle.config.check_quality(j)?;
    if j == bundle.base_quality() {
        return Err(Error::InvalidArgument(format!(
            "quality {j} is the base bitrate; adapters exist for 1..{}",
            j - 1
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let stage = format!("bam-q{j}");
    let mut before = component_digests(bundle);
    before.remove(&format!("adapter_q{j}"));
    let seed = stage_seed(tc.seed, &stage);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = CropStream::new(images.to_vec(), tc.crop_size, seed)?;
    let mut adapter = init_adapter(bundle, &mut rng)?;
    let mut model = adapter.prior.model.clone();
    let px = tc.crop_size * tc.crop_size;
    let inv_b = 1.0 / tc.batch_size as f32;
    let n_bal = adapter.bal.net.param_tensors().len();
    let n_ibal = adapter.ibal.net.param_tensors().len();
    let mut scales = vec![1.0; n_bal + n_ibal];
    scales.push(tc.entropy_lr_scale);
    let mut opt = Adam::new(tc.learning_rate);
    let mut tracker = Tracker::new(&stage);
    let branches = &bundle.cam.branches;

    for it in 0..tc.iterations_bam {
        opt.lr = step_schedule(tc.learning_rate_bam, it, tc.iterations_bam);
        let mut gb = zeros_like(&adapter.bal.net.param_tensors());
        let mut gi = zeros_like(&adapter.ibal.net.param_tensors());
        let mut gl = vec![0f32; model.logits().len()];
        for _ in 0..tc.batch_size {
            let x = data.next_crop();
            let y = guard(bundle.encoder.forward(&x), &stage, it)?;
            let (y_j, tb) = guard(adapter.bal.forward_trace(&y), &stage, it)?;
            let y_tilde = add_uniform_noise(&y_j, &mut rng);
            let rate = model.rate_with_grad(&y_tilde)?;
            let (y_b, ti) = guard(adapter.ibal.forward_trace(&y_tilde), &stage, it)?;
            let mut x_hat = FeatureMap::zeros(3, tc.crop_size, tc.crop_size);
            let mut traces = Vec::with_capacity(branches.len());
            for b in branches {
                let t = guard(b.net.forward_trace(&y_b), &stage, it)?;
                x_hat.add_scaled(t.last().expect("trace"), b.g)?;
                traces.push(t);
            }
            let (d, mut gx) = mse255_with_grad(&x, &x_hat)?;
            let bpp = rate.bits / px as f64;
            tracker.add(bpp, d, bpp + lambda * d);
            gx.scale(lambda as f32);
            let mut gyb = FeatureMap::zeros(y_b.channels(), y_b.height(), y_b.width());
            for (b, t) in branches.iter().zip(&traces) {
                let mut gf = gx.clone();
                gf.scale(b.g);
                gyb.add_scaled(&guard(b.net.backward(t, &gf, false), &stage, it)?.input, 1.0)?;
            }
            let bi = guard(adapter.ibal.backward(&ti, &gyb, true), &stage, it)?;
            let mut gyt = bi.input;
            gyt.add_scaled(&rate.grad_values, 1.0 / px as f32)?;
            let bb = guard(adapter.bal.backward(&tb, &gyt, true), &stage, it)?;
            accumulate(&mut gb, &bb.params, inv_b);
            accumulate(&mut gi, &bi.params, inv_b);
            accumulate(std::slice::from_mut(&mut gl), &[rate.grad_logits], inv_b / px as f32);
        }
        tracker.close(it, tc.batch_size)?;
        let mut params = adapter.bal.net.param_tensors_mut();
        params.extend(adapter.ibal.net.param_tensors_mut());
        params.push(model.logits_mut());
        let mut grads = gb;
        grads.extend(gi);
        grads.push(gl);
        opt.step(params, &grads, &scales);
    }
    adapter.prior = CodingPrior::freeze(model)?;
    bundle.insert_adapter(j, adapter)?;
    bundle.mark_stage(&stage);
    report(&stage, tracker, before, bundle, vec![format!("adapter_q{j}")])
}
