mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cbanet::codec::bundle::read_manifest;
use cbanet::codec::nets::DOWNSAMPLE;
use cbanet::codec::{compress, decompress, select_branches, size_branches, CodecConfig, ModelBundle};
use cbanet::entropy::parse_bitstream;
use cbanet::eval::sweep::{curves, parse_csv, to_csv, to_svg};
use cbanet::eval::{bd_metrics, decoder_report, rd_sweep, BdReport, FlopsReport, RdCurve};
use cbanet::imageio::{load_png, save_png};
use cbanet::train::data::{load_dir, write_synthetic_dataset};
use cbanet::train::stages::{train_base, train_cam_progressive};
use cbanet::train::{init_bundle, train_bam, StageReport};
use cbanet::{Error, Result};

use config::{CliConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "cbanet", version, about = "Variable-rate, variable-complexity learned image codec")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one training stage and write or extend a model bundle.
    Train(TrainArgs),
    /// Compress a PNG to a .cba bitstream.
    Encode(EncodeArgs),
    /// Decompress a .cba bitstream to PNG.
    Decode(DecodeArgs),
    /// Mean bpp / PSNR over a directory for every (quality, branches) pair.
    Eval(EvalArgs),
    /// BD-rate and BD-PSNR between two RD CSVs, as JSON.
    Bd(BdArgs),
    /// Decoder FLOPs per branch and cumulative per branch count.
    Flops(FlopsArgs),
    /// Write a deterministic synthetic PNG dataset.
    Synth(SynthArgs),
    /// Print the merged configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Base,
    Cam,
    Bam,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with [codec] and [train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set train.iterations_base=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<CliConfig> {
        let seed = std::env::var(SEED_ENV).ok();
        CliConfig::load(self.config.as_deref(), &self.sets, seed.as_deref())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    stage: Stage,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory of training PNGs.
    #[arg(long)]
    data: PathBuf,
    /// Bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// bam only: train this quality index (default: every adapter).
    #[arg(long)]
    quality: Option<usize>,
    /// bam only: multiplier for --quality (default: from the codec config).
    #[arg(long, requires = "quality")]
    lambda: Option<f64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// 1 = lowest bitrate, M = base bitrate.
    #[arg(long)]
    quality: usize,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Number of decoder branches (default: all).
    #[arg(long, conflicts_with = "budget_gflops")]
    branches: Option<usize>,
    /// Use as many branches as fit in this many GFLOPs.
    #[arg(long)]
    budget_gflops: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated quality indices (default: all).
    #[arg(long, value_delimiter = ',')]
    qualities: Vec<usize>,
    /// Comma-separated branch counts (default: all).
    #[arg(long, value_delimiter = ',')]
    branches: Vec<usize>,
    #[arg(long)]
    report: PathBuf,
    /// Also write an RD plot.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct BdArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Curve label to take from the anchor CSV.
    #[arg(long)]
    anchor_label: Option<String>,
    /// Curve label to take from the test CSV.
    #[arg(long)]
    test_label: Option<String>,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, conflicts_with = "paper_scale", required_unless_present = "paper_scale")]
    model: Option<PathBuf>,
    /// Use the published channel counts instead of a bundle.
    #[arg(long)]
    paper_scale: bool,
    /// Output resolution WxH; rounded up to a multiple of 16.
    #[arg(long, default_value = "768x512")]
    resolution: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 80)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::QualityOutOfRange { .. }
        | Error::BranchesOutOfRange { .. }
        | Error::BudgetInfeasible { .. }
        | Error::MissingAdapter(_)
        | Error::StageOrder(_) => 2,
        Error::Config(_) => 3,
        Error::Divergence { .. } | Error::NonFinite(_) => 5,
        _ => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Train(a) => train(a),
        Cmd::Encode(a) => encode(a),
        Cmd::Decode(a) => decode(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Bd(a) => bd(a),
        Cmd::Flops(a) => flops(a),
        Cmd::Synth(a) => write_synthetic_dataset(&a.out, a.count, a.size, a.size, a.seed),
        Cmd::Config(a) => a.load().map(|c| print!("{}", c.to_toml())),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_reports(reports: &[StageReport], dir: &Path) -> Result<()> {
    for r in reports {
        let violations = r.frozen_violations();
        if !violations.is_empty() {
            log::warn!("{}: frozen components changed: {violations:?}", r.stage);
        }
        let path = r.write(dir)?;
        println!("{}: final loss {:.4} -> {}", r.stage, r.final_loss(), path.display());
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    if a.quality.is_some() && !matches!(a.stage, Stage::Bam) {
        return Err(Error::InvalidArgument("--quality only applies to the bam stage".into()));
    }
    let images = load_dir(&a.data, cfg.train.crop_size)?;
    log::info!("{} training images from {}", images.len(), a.data.display());
    let (bundle, reports) = match a.stage {
        Stage::Base => {
            let mut bundle = init_bundle(cfg.codec.clone(), &cfg.train)?;
            let out = train_base(&mut bundle, &cfg.train, &images)?;
            (bundle, vec![out.report])
        }
        Stage::Cam | Stage::Bam => {
            if !a.out.join(cbanet::codec::bundle::MANIFEST).exists() {
                return Err(Error::StageOrder(format!(
                    "no bundle in {} (run base first)",
                    a.out.display()
                )));
            }
            let mut bundle = ModelBundle::load(&a.out)?;
            if bundle.config != cfg.codec {
                log::warn!("codec settings come from the bundle; config file [codec] ignored");
            }
            let reports = if matches!(a.stage, Stage::Cam) {
                if !bundle.has_stage("base") {
                    return Err(Error::StageOrder("decoder branches need a trained base (run base first)".into()));
                }
                train_cam_progressive(&mut bundle, &cfg.train, &images)?
            } else {
                let qualities: Vec<usize> = match a.quality {
                    Some(j) => vec![j],
                    None => (1..bundle.base_quality()).collect(),
                };
                let mut reports = Vec::new();
                for j in qualities {
                    let lambda = match a.lambda {
                        Some(l) => l,
                        None => bundle.config.lambda_for(j)?,
                    };
                    reports.push(train_bam(&mut bundle, &cfg.train, &images, j, lambda)?);
                }
                reports
            };
            (bundle, reports)
        }
    };
    bundle.save(&a.out)?;
    write_reports(&reports, &a.out)?;
    println!("bundle {} digest {}", a.out.display(), bundle.digest());
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    bundle.config.check_quality(a.quality)?;
    let image = load_png(&a.input)?;
    let bytes = compress(&bundle, &image, a.quality)?;
    fs::write(&a.output, &bytes)?;
    let (_, h, w) = image.shape();
    println!(
        "{} bytes, {:.4} bpp at quality {}",
        bytes.len(),
        cbanet::eval::bpp(bytes.len(), h, w)?,
        a.quality
    );
    Ok(())
}

fn padded(v: usize) -> usize {
    v.div_ceil(DOWNSAMPLE) * DOWNSAMPLE
}

fn decode(a: DecodeArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let bytes = fs::read(&a.input)?;
    let k = match (a.branches, a.budget_gflops) {
        (Some(k), _) => k,
        (None, Some(g)) => {
            let (header, _) = parse_bitstream(&bytes)?;
            let manifest = read_manifest(&a.model)?;
            let table = manifest.flops_table(padded(header.orig_h as usize), padded(header.orig_w as usize));
            select_branches(g * 1e9, &table)?
        }
        (None, None) => bundle.cam.k_max(),
    };
    let image = decompress(&bundle, &bytes, k)?;
    save_png(&a.output, &image)?;
    println!("decoded with {k} of {} branches", bundle.cam.k_max());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let qualities = if a.qualities.is_empty() {
        (1..=bundle.base_quality()).collect()
    } else {
        a.qualities
    };
    let branches = if a.branches.is_empty() {
        (1..=bundle.cam.k_max()).collect()
    } else {
        a.branches
    };
    for &j in &qualities {
        bundle.config.check_quality(j)?;
    }
    let images = load_dir(&a.data, 1)?;
    let rows = rd_sweep(&bundle, &images, &qualities, &branches)?;
    let csv = to_csv(&rows);
    fs::write(&a.report, &csv)?;
    print!("{csv}");
    if let Some(svg) = a.svg {
        fs::write(svg, to_svg(&curves(&rows)?))?;
    }
    Ok(())
}

fn read_curves(path: &Path) -> Result<Vec<RdCurve>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    curves(&parse_csv(&text)?)
}

fn pick<'a>(cs: &'a [RdCurve], label: &str, path: &Path) -> Result<&'a RdCurve> {
    cs.iter().find(|c| c.label == label).ok_or_else(|| {
        let have: Vec<&str> = cs.iter().map(|c| c.label.as_str()).collect();
        Error::InvalidArgument(format!("no curve '{label}' in {} (have {have:?})", path.display()))
    })
}

#[derive(Serialize)]
struct BdEntry {
    anchor: String,
    test: String,
    #[serde(flatten)]
    report: BdReport,
}

fn bd(a: BdArgs) -> Result<()> {
    let anchors = read_curves(&a.anchor)?;
    let tests = read_curves(&a.test)?;
    let pairs: Vec<(&RdCurve, &RdCurve)> = match (&a.anchor_label, &a.test_label) {
        (Some(la), Some(lt)) => vec![(pick(&anchors, la, &a.anchor)?, pick(&tests, lt, &a.test)?)],
        (Some(la), None) if tests.len() == 1 => vec![(pick(&anchors, la, &a.anchor)?, &tests[0])],
        (None, Some(lt)) if anchors.len() == 1 => vec![(&anchors[0], pick(&tests, lt, &a.test)?)],
        (None, None) if anchors.len() == 1 && tests.len() == 1 => vec![(&anchors[0], &tests[0])],
        (None, None) => {
            let p: Vec<_> = anchors
                .iter()
                .filter_map(|c| tests.iter().find(|t| t.label == c.label).map(|t| (c, t)))
                .collect();
            if p.is_empty() {
                return Err(Error::InvalidArgument(
                    "no common curve labels; pass --anchor-label and --test-label".into(),
                ));
            }
            p
        }
        _ => {
            return Err(Error::InvalidArgument(
                "a label is needed for each multi-curve CSV".into(),
            ))
        }
    };
    let mut out = Vec::with_capacity(pairs.len());
    for (an, te) in pairs {
        out.push(BdEntry {
            anchor: an.label.clone(),
            test: te.label.clone(),
            report: bd_metrics(an, te)?,
        });
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("resolution '{s}' is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[derive(Serialize)]
struct FlopsOut<'a> {
    widths: &'a [usize],
    fractions: Vec<f64>,
    bam_share: f64,
    #[serde(flatten)]
    report: &'a FlopsReport,
}

fn flops(a: FlopsArgs) -> Result<()> {
    let (w, h) = parse_resolution(&a.resolution)?;
    let (config, widths) = match &a.model {
        Some(dir) => {
            let m = read_manifest(dir)?;
            (m.config, m.branch_widths)
        }
        None => {
            let c = CodecConfig::paper_scale();
            let widths = size_branches(&c)?;
            (c, widths)
        }
    };
    let report = decoder_report(&config, &widths, padded(h), padded(w))?;
    let fractions = report.branch_fractions();
    if a.json {
        let out = FlopsOut {
            widths: &widths,
            fractions,
            bam_share: report.bam_share(),
            report: &report,
        };
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    let g = |f: u64| f as f64 / 1e9;
    println!("decoder FLOPs at {}x{} (C={})", padded(w), padded(h), config.latent_channels);
    println!("{:>6} {:>6} {:>10} {:>9} {:>14}", "branch", "width", "GFLOPs", "share", "cumulative");
    for (k, (&b, &t)) in report.branches.iter().zip(&widths).enumerate() {
        println!(
            "{:>6} {:>6} {:>10.3} {:>8.1}% {:>14.3}",
            k + 1,
            t,
            g(b),
            fractions[k] * 100.0,
            g(report.cumulative[k])
        );
    }
    println!(
        "BAL+IBAL {:.3} GFLOPs ({:.2}% of {:.3} total)",
        g(report.bam_gate),
        report.bam_share() * 100.0,
        g(report.total)
    );
    Ok(())
}
