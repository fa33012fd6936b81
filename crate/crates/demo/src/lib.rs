//! Browser bindings. Each exported function takes plain values and returns a
//! JSON string; the `*_json` functions hold the logic and run natively too.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use cbanet::codec::{select_branches, size_branches, CodecConfig};
use cbanet::entropy::quantize::round_half_away;
use cbanet::entropy::{range_encode, Cdf};
use cbanet::eval::sweep::{curves, parse_csv};
use cbanet::eval::{bd_metrics, decoder_report};

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BranchRow {
    branch: usize,
    width: usize,
    gflops: f64,
    share: f64,
    cumulative_gflops: f64,
}

#[derive(Serialize)]
struct Explorer {
    rows: Vec<BranchRow>,
    bam_gflops: f64,
    bam_share: f64,
    selected: Option<usize>,
    error: Option<String>,
}

/// Branch widths and FLOPs for a decoder of `latent_channels` / `cam_width`,
/// and the branch count a `budget_gflops` allows at `width × height`.
pub fn explore_json(
    latent_channels: usize,
    cam_width: usize,
    fractions: &str,
    width: usize,
    height: usize,
    budget_gflops: f64,
) -> Result<String, String> {
    let fr: Vec<f64> = fractions
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| format!("bad fraction '{f}'")))
        .collect::<Result<_, _>>()?;
    let sum: f64 = fr.iter().sum();
    let mut c = CodecConfig::paper_scale();
    c.latent_channels = latent_channels;
    c.cam_width = cam_width;
    c.k_max = fr.len();
    c.branch_flops_fractions = fr.iter().map(|f| f / sum).collect();
    c.validate().map_err(|e| e.to_string())?;
    let widths = size_branches(&c).map_err(|e| e.to_string())?;
    let (h, w) = (height.div_ceil(16) * 16, width.div_ceil(16) * 16);
    let r = decoder_report(&c, &widths, h, w).map_err(|e| e.to_string())?;
    let g = |f: u64| f as f64 / 1e9;
    let table: Vec<f64> = r.branches.iter().map(|&b| b as f64).collect();
    let (selected, error) = match select_branches(budget_gflops * 1e9, &table) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let rows = r
        .branches
        .iter()
        .zip(&widths)
        .zip(r.branch_fractions())
        .enumerate()
        .map(|(k, ((&b, &t), share))| BranchRow {
            branch: k + 1,
            width: t,
            gflops: g(b),
            share,
            cumulative_gflops: g(r.cumulative[k]),
        })
        .collect();
    json(&Explorer {
        rows,
        bam_gflops: g(r.bam_gate),
        bam_share: r.bam_share(),
        selected,
        error,
    })
}

#[derive(Serialize)]
struct BdOut {
    anchor: String,
    test: String,
    bdbr_percent: f64,
    bd_psnr_db: f64,
}

/// BD metrics between the first curve of each CSV (`label,quality_index,branches,bpp,psnr_db`).
pub fn bd_json(anchor_csv: &str, test_csv: &str) -> Result<String, String> {
    let first = |text: &str| {
        let rows = parse_csv(text).map_err(|e| e.to_string())?;
        curves(&rows)
            .map_err(|e| e.to_string())?
            .into_iter()
            .next()
            .ok_or_else(|| "CSV has no rows".to_string())
    };
    let (a, t) = (first(anchor_csv)?, first(test_csv)?);
    let r = bd_metrics(&a, &t).map_err(|e| e.to_string())?;
    json(&BdOut {
        anchor: a.label,
        test: t.label,
        bdbr_percent: r.bdbr_percent,
        bd_psnr_db: r.bd_psnr_db,
    })
}

#[derive(Serialize)]
struct GatePoint {
    gate: f64,
    bits_per_symbol: f64,
    mse: f64,
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Range-coded size and latent-domain MSE when a Laplacian latent is shrunk
/// by `gate ∈ (0, 1]` before rounding and expanded by `1/gate` after.
fn gate_point(values: &[f64], gate: f64) -> Result<GatePoint, String> {
    let q: Vec<i32> = values
        .iter()
        .map(|v| (round_half_away((v * gate) as f32) as i32).clamp(-128, 127))
        .collect();
    let mut counts = vec![0f64; 256];
    q.iter().for_each(|&s| counts[(s + 128) as usize] += 1.0);
    let n = q.len() as f64;
    let probs: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let cdf = Cdf::from_probabilities(&probs).map_err(|e| e.to_string())?;
    let symbols: Vec<usize> = q.iter().map(|&s| (s + 128) as usize).collect();
    let bytes = range_encode(&symbols, &cdf).map_err(|e| e.to_string())?;
    let mse = values
        .iter()
        .zip(&q)
        .map(|(v, &s)| (v - s as f64 / gate).powi(2))
        .sum::<f64>()
        / n;
    Ok(GatePoint {
        gate,
        bits_per_symbol: bytes.len() as f64 * 8.0 / n,
        mse,
    })
}

/// Sweep of gate values from 0.05 to 1 plus the point at `gate`.
pub fn gate_rate_json(latent_scale: f64, gate: f64, seed: u32) -> Result<String, String> {
    if !(gate > 0.0 && gate <= 1.0) || !(latent_scale > 0.0) {
        return Err("gate must be in (0, 1] and the latent scale positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let values: Vec<f64> = (0..8192).map(|_| laplace(&mut rng, latent_scale)).collect();
    let sweep = (1..=20)
        .map(|i| gate_point(&values, i as f64 * 0.05))
        .collect::<Result<Vec<_>, _>>()?;
    #[derive(Serialize)]
    struct Out {
        sweep: Vec<GatePoint>,
        point: GatePoint,
    }
    json(&Out {
        sweep,
        point: gate_point(&values, gate)?,
    })
}

#[wasm_bindgen]
pub fn explore(
    latent_channels: usize,
    cam_width: usize,
    fractions: &str,
    width: usize,
    height: usize,
    budget_gflops: f64,
) -> Result<String, JsValue> {
    to_js(explore_json(latent_channels, cam_width, fractions, width, height, budget_gflops))
}

#[wasm_bindgen]
pub fn bd(anchor_csv: &str, test_csv: &str) -> Result<String, JsValue> {
    to_js(bd_json(anchor_csv, test_csv))
}

#[wasm_bindgen]
pub fn gate_rate(latent_scale: f64, gate: f64, seed: u32) -> Result<String, JsValue> {
    to_js(gate_rate_json(latent_scale, gate, seed))
}
