//! Rate-distortion sweeps over (quality, branch count) and their file formats.

use std::fmt::Write as _;

use serde::Serialize;

use crate::codec::{compress, decompress, ModelBundle};
use crate::error::{Error, Result};
use crate::eval::bd::{RdCurve, RdPoint};
use crate::eval::metrics::{bpp, psnr};
use crate::nn::FeatureMap;

pub const CSV_HEADER: &str = "label,quality_index,branches,bpp,psnr_db";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RdRow {
    pub label: String,
    pub quality_index: usize,
    pub branches: usize,
    pub bpp: f64,
    pub psnr_db: f64,
}

/// Curve label for `k` branches, e.g. `CBANet-50%` for half the decoder FLOPs.
pub fn level_label(bundle: &ModelBundle, k: usize) -> String {
    let f = &bundle.config.branch_flops_fractions;
    let share: f64 = f[..k].iter().sum::<f64>() / f.iter().sum::<f64>();
    format!("CBANet-{:.0}%", share * 100.0)
}

/// Mean bpp and PSNR over `images` for every `(quality, k)`; rows ordered by k, then quality.
pub fn rd_sweep(
    bundle: &ModelBundle,
    images: &[FeatureMap],
    qualities: &[usize],
    branches: &[usize],
) -> Result<Vec<RdRow>> {
    if images.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    for &k in branches {
        bundle.cam.check_branches(k)?;
    }
    // [quality][k] sums
    let mut acc = vec![vec![(0.0f64, 0.0f64); branches.len()]; qualities.len()];
    for img in images {
        let (_, h, w) = img.shape();
        for (qi, &j) in qualities.iter().enumerate() {
            // the stream is fixed before any decoder choice
            let stream = compress(bundle, img, j)?;
            let rate = bpp(stream.len(), h, w)?;
            for (ki, &k) in branches.iter().enumerate() {
                let rec = decompress(bundle, &stream, k)?;
                acc[qi][ki].0 += rate;
                acc[qi][ki].1 += psnr(img, &rec)?;
            }
        }
    }
    let n = images.len() as f64;
    let mut rows = Vec::with_capacity(qualities.len() * branches.len());
    for (ki, &k) in branches.iter().enumerate() {
        for (qi, &j) in qualities.iter().enumerate() {
            rows.push(RdRow {
                label: level_label(bundle, k),
                quality_index: j,
                branches: k,
                bpp: acc[qi][ki].0 / n,
                psnr_db: acc[qi][ki].1 / n,
            });
        }
    }
    Ok(rows)
}

/// One curve per label, in first-seen order.
pub fn curves(rows: &[RdRow]) -> Result<Vec<RdCurve>> {
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|l| {
            let pts = rows
                .iter()
                .filter(|r| r.label == l)
                .map(|r| RdPoint {
                    bpp: r.bpp,
                    psnr_db: r.psnr_db,
                })
                .collect();
            RdCurve::new(l, pts)
        })
        .collect()
}

pub fn to_csv(rows: &[RdRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.6},{:.4}",
            r.label, r.quality_index, r.branches, r.bpp, r.psnr_db
        )
        .expect("string write");
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<RdRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Data(format!("CSV must start with '{CSV_HEADER}'"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Data(format!("CSV row {}: '{line}'", i + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(RdRow {
                label: f[0].to_string(),
                quality_index: f[1].parse().map_err(|_| bad())?,
                branches: f[2].parse().map_err(|_| bad())?,
                bpp: f[3].parse().map_err(|_| bad())?,
                psnr_db: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Line chart of PSNR against bpp, one polyline per curve.
pub fn to_svg(curves: &[RdCurve]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.psnr_db);
        y1 = y1.max(p.psnr_db);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |v: f64| M + (v - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\">bpp ({x0:.3} to {x1:.3})</text>\n\
         <text x=\"14\" y=\"{cy}\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">PSNR dB ({y0:.2} to {y1:.2})</text>\n",
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        ty = H - 12.0,
        cy = H / 2.0,
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.bpp), sy(p.psnr_db)))
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        )
        .expect("string write");
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            M + 10.0,
            M + 16.0 * i as f64,
            c.label
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}
