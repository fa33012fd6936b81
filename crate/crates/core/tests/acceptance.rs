//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. `cargo test -p cbanet --test acceptance`

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbanet::codec::nets::{branch_specs, gate_specs};
use cbanet::codec::{compress, decompress, size_branches, CodecConfig, Gate, GateKind, ModelBundle};
use cbanet::entropy::{quantize, Cdf, QuantMode, RangeDecoder, RangeEncoder};
use cbanet::eval::flops::total;
use cbanet::eval::storage::{gate_pair_params, single_model_cost};
use cbanet::eval::sweep::to_csv;
use cbanet::eval::{bd_metrics, count_flops, decoder_report, rd_sweep, RdCurve, RdPoint, RdRow, StorageReport};
use cbanet::nn::{grad_check, FeatureMap, Layer, LayerSpec};
use cbanet::train::{toy_images, train_all, CropStream, StageReport, TrainConfig};
use cbanet::Latent;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 -------------------------------------------------------------------------

fn skewed_cdf(rng: &mut ChaCha8Rng, alphabet: usize) -> Cdf {
    // geometric-ish decay around a random mode, plus a few spikes
    let mode = rng.gen_range(0..alphabet);
    let decay = rng.gen_range(0.3..0.9f64);
    let mut p: Vec<f64> = (0..alphabet)
        .map(|s| decay.powi((s as i32 - mode as i32).abs()))
        .collect();
    for _ in 0..3 {
        p[rng.gen_range(0..alphabet)] += rng.gen_range(0.0..0.5);
    }
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Cdf::from_probabilities(&p).unwrap()
}

fn sample(cdf: &Cdf, rng: &mut ChaCha8Rng) -> usize {
    let u = rng.gen_range(0..cdf.cum(cdf.alphabet() - 1) + cdf.freq(cdf.alphabet() - 1));
    (0..cdf.alphabet()).rfind(|&s| cdf.cum(s) <= u).unwrap()
}

fn range_coder() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cdfs: Vec<Cdf> = (0..8)
        .map(|i| skewed_cdf(&mut rng, [2, 5, 17, 64, 256, 257, 3, 100][i]))
        .collect();
    let n = 1_000_000;
    let stream: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let c = i % cdfs.len();
            (c, sample(&cdfs[c], &mut rng))
        })
        .collect();
    let ideal: f64 = stream
        .iter()
        .map(|&(c, s)| -cdfs[c].probability(s).log2())
        .sum();
    let mut enc = RangeEncoder::new();
    for &(c, s) in &stream {
        enc.encode_symbol(&cdfs[c], s).map_err(e2s)?;
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes);
    for (i, &(c, s)) in stream.iter().enumerate() {
        let got = dec.decode_symbol(&cdfs[c]).map_err(e2s)?;
        ensure(got == s, format!("symbol {i}: decoded {got}, sent {s}"))?;
    }
    dec.finish(n).map_err(e2s)?;
    let bits = bytes.len() as f64 * 8.0;
    let bound = ideal * 1.001 + 64.0;
    let secs = t.elapsed().as_secs_f64();
    ensure(bits <= bound, format!("{bits} bits > bound {bound:.0}"))?;
    ensure(bits >= ideal - 64.0, format!("{bits} bits below entropy {ideal:.0}"))?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "10^6 symbols round trip, {bits} bits vs ideal {ideal:.0} ({:+.4}%), {secs:.1}s",
        (bits / ideal - 1.0) * 100.0
    ))
}

// 2 -------------------------------------------------------------------------

fn base_transparency(bundle: &ModelBundle, crops: &[FeatureMap]) -> Outcome {
    let m = bundle.base_quality();
    ensure(!bundle.adapters.is_empty(), "trained bundle has no adapters")?;
    let mut bare = bundle.clone();
    bare.adapters.clear();
    for (i, img) in crops.iter().enumerate() {
        let a = compress(bundle, img, m).map_err(e2s)?;
        let b = compress(&bare, img, m).map_err(e2s)?;
        ensure(a == b, format!("crop {i}: bitstreams differ"))?;
        for k in 1..=bundle.cam.k_max() {
            let da = decompress(bundle, &a, k).map_err(e2s)?;
            let db = decompress(&bare, &b, k).map_err(e2s)?;
            ensure(da == db, format!("crop {i}, K={k}: reconstructions differ"))?;
        }
    }
    Ok(format!(
        "quality {m}: {} crops bit-identical with {} adapters and with none",
        crops.len(),
        bundle.adapters.len()
    ))
}

// 3 -------------------------------------------------------------------------

fn jitter(tensors: Vec<&mut Vec<f64>>, rng: &mut ChaCha8Rng, amp: f64) {
    for t in tensors {
        for v in t.iter_mut() {
            *v += rng.gen_range(-amp..amp);
        }
    }
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut errs = Vec::new();
    for spec in [LayerSpec::gdn(4), LayerSpec::igdn(4)] {
        let mut layer = Layer::<f64>::init(spec, &mut rng).map_err(e2s)?;
        // move off-diagonal gamma out of the flat softplus tail
        for v in layer.params_mut()[1].iter_mut() {
            *v = rng.gen_range(-1.5..0.5);
        }
        jitter(layer.params_mut().iter_mut().collect(), &mut rng, 0.2);
        let x = FeatureMap::from_fn(4, 3, 3, |_, _, _| rng.gen_range(-2.0..2.0));
        errs.push((format!("{:?}", layer.spec().kind), grad_check(&mut layer, &x, 1e-3).map_err(e2s)?));
    }
    for kind in [GateKind::Bal, GateKind::Ibal] {
        // central differences are only meaningful where every rectifier input
        // is further than the step can move it, so draw points until that holds
        let mut attempts = 0;
        let (mut g, x) = loop {
            attempts += 1;
            ensure(attempts <= 500, format!("{kind:?}: no kink-free point in 500 draws"))?;
            let mut g = Gate::<f64>::init(kind, 4, 4, &mut rng).map_err(e2s)?;
            jitter(g.net.param_tensors_mut(), &mut rng, 0.5);
            let x = FeatureMap::from_fn(4, 3, 3, |_, _, _| rng.gen_range(-3.0..3.0));
            let trace = g.net.forward_trace(&x).map_err(e2s)?;
            let margin = trace
                .iter()
                .flat_map(|t| t.data().iter())
                .fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if margin > 0.02 {
                break (g, x);
            }
        };
        errs.push((format!("{kind:?}"), grad_check(&mut g, &x, 1e-3).map_err(e2s)?));
    }
    let line = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (n, e) in &errs {
        ensure(*e < 1e-3, format!("{n} max relative error {e:.3e} ({line})"))?;
    }
    Ok(format!("max relative error: {line}"))
}

// 4 -------------------------------------------------------------------------

fn flops_calibration() -> Outcome {
    // 128-channel four-deconv synthesis at 768x512 output
    let layers = count_flops("decoder", &branch_specs(128, 128), 512 / 16, 768 / 16).map_err(e2s)?;
    let g = total(&layers) as f64 / 1e9;
    let last = layers.last().unwrap().output;
    ensure(last == (3, 512, 768), format!("output dims {last:?}"))?;
    ensure((g / 61.14 - 1.0).abs() <= 0.10, format!("{g:.2} GFLOPs vs 61.14 ± 10%"))?;

    let c = CodecConfig::paper_scale();
    let widths = size_branches(&c).map_err(e2s)?;
    let report = decoder_report(&c, &widths, 512, 768).map_err(e2s)?;
    let share = report.bam_share() * 100.0;
    ensure((share - 0.42).abs() <= 0.15, format!("BAM share {share:.3}% vs 0.42 ± 0.15"))?;
    // independent recount of one gate at P = 192 on a 48x32 latent
    let per_px = 128 * 192 + 192 + 9 * 192 + 192 + 192 * 192 + 192 + 192 * 128 + 2 * 128;
    ensure(
        report.bam_gate == 2 * per_px as u64 * 48 * 32,
        format!("gate FLOPs {} disagree with recount", report.bam_gate),
    )?;
    let g_specs = total(&count_flops("gate", &gate_specs(128, 192), 32, 48).map_err(e2s)?);
    ensure(g_specs < report.bam_gate, "gate chain larger than reported pair")?;
    Ok(format!(
        "{g:.2} GFLOPs ({:+.1}% vs 61.14); BAM share {share:.3}%",
        (g / 61.14 - 1.0) * 100.0
    ))
}

// 5 -------------------------------------------------------------------------

fn storage_composition() -> Outcome {
    let c = CodecConfig::paper_scale();
    let widths = size_branches(&c).map_err(e2s)?;
    let pair = gate_pair_params(&c) as f64;
    ensure((pair / 0.17e6 - 1.0).abs() <= 0.15, format!("pair {pair} vs 0.17M ± 15%"))?;
    let r = |n| StorageReport::from_config(&c, &widths, n, 3).map_err(e2s);
    let base = r(1)?.single_model_params;
    for n in 1..=6 {
        let s = r(n)?.single_model_params;
        ensure(
            s == single_model_cost(base, r(1)?.adapter_params, n),
            format!("n={n}: {s} is off the linear law"),
        )?;
    }
    let n4 = single_model_cost(r(4)?.base_params, gate_pair_params(&c), 4) as f64;
    ensure((n4 / 3.35e6 - 1.0).abs() <= 0.15, format!("n=4 total {n4} vs 3.35M ± 15%"))?;
    Ok(format!(
        "pair {:.3}M, base {:.2}M, n=4 {:.2}M ({:+.1}% vs 3.35M)",
        pair / 1e6,
        r(4)?.base_params as f64 / 1e6,
        n4 / 1e6,
        (n4 / 3.35e6 - 1.0) * 100.0
    ))
}

// 6 -------------------------------------------------------------------------

fn bd_cases() -> Outcome {
    let pts = [(0.1, 26.5), (0.22, 29.0), (0.41, 31.6), (0.75, 34.1), (1.3, 36.8)];
    let curve = |f: &dyn Fn(f64, f64) -> (f64, f64)| {
        RdCurve::new(
            "c",
            pts.iter()
                .map(|&(b, p)| {
                    let (bpp, psnr_db) = f(b, p);
                    RdPoint { bpp, psnr_db }
                })
                .collect(),
        )
        .unwrap()
    };
    let anchor = curve(&|b, p| (b, p));
    let same = bd_metrics(&anchor, &anchor).map_err(e2s)?;
    ensure(
        same.bdbr_percent == 0.0 && same.bd_psnr_db == 0.0,
        format!("identical curves gave {same:?}"),
    )?;
    let up = bd_metrics(&anchor, &curve(&|b, p| (b, p + 1.0))).map_err(e2s)?;
    ensure((up.bd_psnr_db - 1.0).abs() <= 0.01, format!("+1 dB gave {up:?}"))?;
    let dbl = bd_metrics(&anchor, &curve(&|b, p| (2.0 * b, p))).map_err(e2s)?;
    ensure((dbl.bdbr_percent - 100.0).abs() <= 0.5, format!("doubling gave {dbl:?}"))?;
    Ok(format!(
        "identical (0, 0); +1 dB → {:.4} dB; 2× rate → {:.3}%",
        up.bd_psnr_db, dbl.bdbr_percent
    ))
}

// 7 -------------------------------------------------------------------------

fn toy_training(rows: &[RdRow], m: usize, k_max: usize) -> Outcome {
    let at = |j: usize, k: usize| {
        rows.iter()
            .find(|r| r.quality_index == j && r.branches == k)
            .unwrap()
    };
    for j in 1..=m {
        for k in 2..=k_max {
            let (a, b) = (at(j, k - 1).psnr_db, at(j, k).psnr_db);
            ensure(b >= a - 0.05, format!("(a) q{j}: PSNR K={} {a:.3} > K={k} {b:.3}", k - 1))?;
        }
    }
    for j in 2..=m {
        let (a, b) = (at(j - 1, k_max).bpp, at(j, k_max).bpp);
        ensure(b > a, format!("(b) bpp q{} {a:.4} not below q{j} {b:.4}", j - 1))?;
    }
    let top = at(m, k_max).psnr_db;
    ensure(top > 30.0, format!("(c) PSNR at K_max, q{m} = {top:.2} dB"))?;
    for j in 1..=m {
        for k in 1..=k_max {
            ensure(
                at(j, k).bpp == at(j, 1).bpp,
                format!("(d) q{j}: bpp varies with K"),
            )?;
        }
    }
    let bpps: Vec<String> = (1..=m).map(|j| format!("{:.3}", at(j, k_max).bpp)).collect();
    let psnrs: Vec<String> = (1..=k_max).map(|k| format!("{:.2}", at(m, k).psnr_db)).collect();
    Ok(format!(
        "bpp by quality [{}]; q{m} PSNR by K [{}] dB",
        bpps.join(", "),
        psnrs.join(", ")
    ))
}

// 8 -------------------------------------------------------------------------

struct Run {
    bundle: ModelBundle,
    reports: Vec<StageReport>,
    streams: Vec<Vec<u8>>,
    rows: Vec<RdRow>,
    csv: String,
    secs: f64,
}

fn run_toy(crops: &[FeatureMap]) -> Result<Run, String> {
    let t = Instant::now();
    let (bundle, reports) =
        train_all(CodecConfig::desk(), &TrainConfig::desk(), &toy_images()).map_err(e2s)?;
    let m = bundle.base_quality();
    let mut streams = Vec::new();
    for img in crops {
        for j in 1..=m {
            streams.push(compress(&bundle, img, j).map_err(e2s)?);
        }
    }
    let q: Vec<usize> = (1..=m).collect();
    let k: Vec<usize> = (1..=bundle.cam.k_max()).collect();
    let rows = rd_sweep(&bundle, crops, &q, &k).map_err(e2s)?;
    let csv = to_csv(&rows);
    Ok(Run {
        bundle,
        reports,
        streams,
        rows,
        csv,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn determinism(a: &Run, b: &Run) -> Outcome {
    ensure(a.bundle.digest() == b.bundle.digest(), "bundle digests differ")?;
    ensure(a.bundle.files() == b.bundle.files(), "bundle files differ")?;
    ensure(a.streams == b.streams, "bitstreams differ")?;
    ensure(a.csv == b.csv, "RD CSVs differ")?;
    for (ra, rb) in a.reports.iter().zip(&b.reports) {
        ensure(ra.to_csv() == rb.to_csv(), format!("{} loss CSVs differ", ra.stage))?;
    }
    Ok(format!(
        "digest {}…, {} bitstreams, RD and {} loss CSVs identical",
        &a.bundle.digest()[..16],
        a.streams.len(),
        a.reports.len()
    ))
}

// 9 -------------------------------------------------------------------------

fn quantizer() -> Outcome {
    let cases: [(f32, f32); 12] = [
        (0.5, 1.0),
        (-0.5, -1.0),
        (1.5, 2.0),
        (-1.5, -2.0),
        (2.5, 3.0),
        (-2.5, -3.0),
        (3.5, 4.0),
        (-3.5, -4.0),
        (126.5, 127.0),
        (-127.5, -128.0),
        (0.49, 0.0),
        (-0.49, 0.0),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let values = FeatureMap::new(1, 1, cases.len(), cases.iter().map(|c| c.0).collect()).unwrap();
    let q = quantize(&Latent::new(values, 1, false).unwrap(), QuantMode::Eval, &mut rng).map_err(e2s)?;
    ensure(q.quantized, "eval output not marked quantized")?;
    for (&(v, want), &got) in cases.iter().zip(q.values.data()) {
        ensure(got == want, format!("round({v}) = {got}, want {want}"))?;
    }

    let n = 200_000;
    let base = FeatureMap::from_fn(1, 400, 500, |_, i, j| ((i * 500 + j) % 7) as f32 - 3.0);
    let noisy = quantize(&Latent::new(base.clone(), 1, false).unwrap(), QuantMode::Train, &mut rng)
        .map_err(e2s)?;
    let d: Vec<f64> = noisy
        .values
        .data()
        .iter()
        .zip(base.data())
        .map(|(a, b)| (a - b) as f64)
        .collect();
    let worst = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    // standard error of the mean of U(-0.5, 0.5) is sqrt(1/12/n)
    let se = (1.0 / 12.0 / n as f64).sqrt();
    ensure(worst <= 0.5, format!("noise magnitude {worst}"))?;
    ensure(mean.abs() < 4.0 * se, format!("noise mean {mean:.2e}, se {se:.2e}"))?;
    ensure((var - 1.0 / 12.0).abs() < 0.002, format!("noise variance {var:.4}"))?;
    Ok(format!(
        "{} half-integer cases; noise max |e| {worst:.4}, mean {mean:+.1e} (se {se:.1e})",
        cases.len()
    ))
}

// ---------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        // cargo test --list probes every target
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    // `cargo test --test acceptance -- 3 6` runs a subset
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| only.is_empty() || only.contains(&n);

    let quick: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "1 entropy coder", range_coder),
        (3, "3 gradient checks", gradient_checks),
        (4, "4 FLOPs calibration", flops_calibration),
        (5, "5 storage composition", storage_composition),
        (6, "6 BD metrics", bd_cases),
        (9, "9 quantizer", quantizer),
    ];
    let mut results: Vec<(&str, Outcome)> = quick
        .iter()
        .filter(|q| wanted(q.0))
        .map(|&(_, name, f)| (name, guarded(f)))
        .collect();

    if [2, 7, 8].into_iter().any(wanted) {
        let mut stream = CropStream::new(toy_images(), TrainConfig::desk().crop_size, 99).unwrap();
        let crops: Vec<FeatureMap> = (0..16).map(|_| stream.next_crop()).collect();
        let run_a = catch_unwind(AssertUnwindSafe(|| run_toy(&crops)));
        let run_b = catch_unwind(AssertUnwindSafe(|| run_toy(&crops)));
        match (&run_a, &run_b) {
            (Ok(Ok(a)), Ok(Ok(b))) => {
                eprintln!("toy runs: {:.0}s, {:.0}s", a.secs, b.secs);
                results.push(("2 base transparency", guarded(|| base_transparency(&a.bundle, &crops))));
                results.push((
                    "7 toy training",
                    guarded(|| toy_training(&a.rows, a.bundle.base_quality(), a.bundle.cam.k_max())),
                ));
                results.push(("8 determinism", guarded(|| determinism(a, b))));
            }
            _ => {
                let why = match (&run_a, &run_b) {
                    (Ok(Err(e)), _) | (_, Ok(Err(e))) => e.clone(),
                    _ => "toy training panicked".to_string(),
                };
                for name in ["2 base transparency", "7 toy training", "8 determinism"] {
                    results.push((name, Err(why.clone())));
                }
            }
        }
        results.retain(|(n, _)| wanted(n.split(' ').next().unwrap().parse().unwrap()));
    }
    results.sort_by_key(|(n, _)| n.split(' ').next().unwrap().parse::<u32>().unwrap());

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
