//! Bjøntegaard deltas between two rate-distortion curves.
//!
//! Each curve is interpolated with a monotone piecewise cubic (Fritsch-Carlson
//! Hermite) in log10-rate; the gap is averaged over the overlapping interval
//! with a 1000-interval Simpson rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIMPSON_INTERVALS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by rate; rejects non-positive or repeated rates.
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        for p in &points {
            if !(p.bpp > 0.0) || !p.bpp.is_finite() || !p.psnr_db.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "invalid RD point ({}, {})",
                    p.bpp, p.psnr_db
                )));
            }
        }
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::InvalidArgument("RD curve repeats a rate".into()));
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdReport {
    pub bdbr_percent: f64,
    pub bd_psnr_db: f64,
}

/// Monotone cubic Hermite interpolant through strictly increasing `xs`.
struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Pchip {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "BD fit needs strictly increasing abscissae".into(),
            ));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut ds = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        ds[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        ds[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { xs, ys, ds })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.ds[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.ds[i + 1]
    }
}

/// Three-point end condition, kept shape-preserving.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = SIMPSON_INTERVALS;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Mean of `test(x) − anchor(x)` over the shared range of the two abscissae.
fn mean_gap(anchor: (&[f64], &[f64]), test: (&[f64], &[f64])) -> Result<f64> {
    let lo = anchor.0[0].max(test.0[0]);
    let hi = anchor.0[anchor.0.len() - 1].min(test.0[test.0.len() - 1]);
    if !(hi > lo) {
        return Err(Error::InvalidArgument("RD curves do not overlap".into()));
    }
    let fa = Pchip::new(anchor.0.to_vec(), anchor.1.to_vec())?;
    let ft = Pchip::new(test.0.to_vec(), test.1.to_vec())?;
    Ok(simpson(|x| ft.eval(x) - fa.eval(x), lo, hi) / (hi - lo))
}

/// BD-rate (negative when `test` saves bits) and BD-PSNR (positive when `test` is better).
pub fn bd_metrics(anchor: &RdCurve, test: &RdCurve) -> Result<BdReport> {
    for c in [anchor, test] {
        if c.points.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "curve '{}' has {} points, BD needs at least 4",
                c.label,
                c.points.len()
            )));
        }
    }
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) {
        c.points.iter().map(|p| (p.bpp.log10(), p.psnr_db)).unzip()
    };
    let (ra, pa) = split(anchor);
    let (rt, pt) = split(test);
    let bd_psnr_db = mean_gap((&ra, &pa), (&rt, &pt))?;

    // rate as a function of quality
    let by_psnr = |r: &[f64], p: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut v: Vec<(f64, f64)> = p.iter().copied().zip(r.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.into_iter().unzip()
    };
    let (pa2, ra2) = by_psnr(&ra, &pa);
    let (pt2, rt2) = by_psnr(&rt, &pt);
    let dr = mean_gap((&pa2, &ra2), (&pt2, &rt2))?;
    Ok(BdReport {
        bdbr_percent: (10f64.powf(dr) - 1.0) * 100.0,
        bd_psnr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor() -> RdCurve {
        let pts = [(0.12, 27.1), (0.25, 29.4), (0.5, 32.0), (0.9, 34.6), (1.4, 36.5)];
        RdCurve::new(
            "anchor",
            pts.iter().map(|&(bpp, psnr_db)| RdPoint { bpp, psnr_db }).collect(),
        )
        .unwrap()
    }

    fn map(c: &RdCurve, f: impl Fn(&RdPoint) -> RdPoint) -> RdCurve {
        RdCurve::new("test", c.points.iter().map(f).collect()).unwrap()
    }

    #[test]
    fn identical_curves_give_exact_zero() {
        let r = bd_metrics(&anchor(), &anchor()).unwrap();
        assert_eq!(r.bdbr_percent, 0.0);
        assert_eq!(r.bd_psnr_db, 0.0);
    }

    #[test]
    fn uniform_quality_shift() {
        let t = map(&anchor(), |p| RdPoint { bpp: p.bpp, psnr_db: p.psnr_db + 1.0 });
        let r = bd_metrics(&anchor(), &t).unwrap();
        assert!((r.bd_psnr_db - 1.0).abs() < 0.01, "{r:?}");
        assert!(r.bdbr_percent < 0.0);
    }

    #[test]
    fn doubled_rate() {
        let t = map(&anchor(), |p| RdPoint { bpp: 2.0 * p.bpp, psnr_db: p.psnr_db });
        let r = bd_metrics(&anchor(), &t).unwrap();
        assert!((r.bdbr_percent - 100.0).abs() < 0.5, "{r:?}");
        assert!(r.bd_psnr_db < 0.0);
    }

    #[test]
    fn antisymmetric() {
        let t = map(&anchor(), |p| RdPoint {
            bpp: p.bpp * 0.9,
            psnr_db: p.psnr_db + 0.3 * p.bpp,
        });
        let ab = bd_metrics(&anchor(), &t).unwrap();
        let ba = bd_metrics(&t, &anchor()).unwrap();
        assert!((ab.bd_psnr_db + ba.bd_psnr_db).abs() < 1e-6);
    }

    #[test]
    fn interpolant_reproduces_a_cubic_free_line() {
        let f = Pchip::new(vec![0.0, 1.0, 2.0, 4.0], vec![1.0, 3.0, 5.0, 9.0]).unwrap();
        for x in [0.0, 0.3, 1.7, 3.2, 4.0] {
            assert!((f.eval(x) - (1.0 + 2.0 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_short_or_disjoint_curves() {
        let mut short = anchor();
        short.points.truncate(3);
        assert!(bd_metrics(&short, &anchor()).is_err());
        let far = map(&anchor(), |p| RdPoint { bpp: p.bpp * 100.0, psnr_db: p.psnr_db + 50.0 });
        assert!(bd_metrics(&anchor(), &far).is_err());
        assert!(RdCurve::new("x", vec![RdPoint { bpp: 0.0, psnr_db: 1.0 }]).is_err());
    }
}
