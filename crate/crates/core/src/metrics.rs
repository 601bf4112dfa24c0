//! Fidelity and rate-distortion metrics: PSNR, YCbCr-PSNR, ΔPSNR and
//! Bjøntegaard deltas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Channel, ColorSpace, PointCloud};

/// Value substituted for infinite PSNR wherever a finite number is required.
pub const PSNR_CAP: f64 = 99.99;

/// Luma/chroma weights of the combined YCbCr-PSNR.
pub const YCBCR_WEIGHTS: [f64; 3] = [6.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0];

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Argument("empty channel".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Per-channel PSNR between two clouds with identical point order.
pub fn cloud_psnr(reference: &PointCloud, test: &PointCloud) -> Result<[f64; 3]> {
    if reference.color_space() != test.color_space() {
        return Err(Error::State("clouds are in different color spaces".into()));
    }
    let mut out = [0.0; 3];
    for ch in Channel::ALL {
        out[ch.index()] = psnr(&reference.channel(ch), &test.channel(ch), 255.0)?;
    }
    Ok(out)
}

/// `(6 PSNR_Y + PSNR_Cb + PSNR_Cr) / 8`, infinite inputs capped at [`PSNR_CAP`].
pub fn ycbcr_psnr(psnr_y: f64, psnr_cb: f64, psnr_cr: f64) -> f64 {
    let cap = |v: f64| if v.is_infinite() && v > 0.0 { PSNR_CAP } else { v };
    YCBCR_WEIGHTS[0] * cap(psnr_y) + YCBCR_WEIGHTS[1] * cap(psnr_cb) + YCBCR_WEIGHTS[2] * cap(psnr_cr)
}

/// PSNR of `test` minus PSNR of `anchor` at one rate point.
pub fn delta_psnr(anchor_psnr: f64, test_psnr: f64) -> f64 {
    test_psnr - anchor_psnr
}

/// Convenience for YCbCr clouds: `[Y, Cb, Cr, YCbCr]` PSNRs.
pub fn full_psnr(reference: &PointCloud, test: &PointCloud) -> Result<[f64; 4]> {
    if reference.color_space() != ColorSpace::YCbCr {
        return Err(Error::State("full_psnr expects YCbCr clouds".into()));
    }
    let [y, cb, cr] = cloud_psnr(reference, test)?;
    Ok([y, cb, cr, ycbcr_psnr(y, cb, cr)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// Bits per input point.
    pub bitrate: f64,
    pub psnr: f64,
}

/// At least four rate points with distinct positive bitrates, stored in increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut points: Vec<RdPoint> = points
            .into_iter()
            .map(|(bitrate, psnr)| RdPoint { bitrate, psnr: if psnr == f64::INFINITY { PSNR_CAP } else { psnr } })
            .collect();
        if points.len() < 4 {
            return Err(Error::Argument(format!("RD curve needs at least 4 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.bitrate.is_finite() || !p.psnr.is_finite() || p.bitrate <= 0.0) {
            return Err(Error::Argument("RD curve points must be finite with positive bitrate".into()));
        }
        points.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));
        if points.windows(2).any(|w| w[0].bitrate == w[1].bitrate) {
            return Err(Error::Argument("RD curve bitrates must be distinct".into()));
        }
        if points.windows(2).any(|w| w[1].psnr < w[0].psnr) {
            log::warn!("RD curve PSNR is not monotone in bitrate; fitting anyway");
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.bitrate.ln()).collect()
    }

    fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psnr).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    /// Average bitrate change at equal PSNR, in percent (negative is better).
    pub bd_rate_percent: f64,
    /// Average PSNR change at equal bitrate, in dB (positive is better).
    pub bd_psnr_db: f64,
    /// Common bitrate range (bpip) used for the BD-PSNR integral.
    pub rate_overlap: (f64, f64),
    /// Common PSNR range (dB) used for the BD-rate integral.
    pub psnr_overlap: (f64, f64),
}

/// Cubic `y(x)` fitted by least squares in a centred, scaled abscissa.
#[derive(Debug, Clone)]
pub struct Cubic {
    center: f64,
    scale: f64,
    coef: [f64; 4],
}

impl Cubic {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        assert_eq!(x.len(), y.len());
        let center = x.iter().sum::<f64>() / x.len() as f64;
        let scale = x.iter().map(|v| (v - center).abs()).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(Error::Argument("cannot fit a curve to a single abscissa".into()));
        }
        let a = DMatrix::from_fn(x.len(), 4, |r, c| ((x[r] - center) / scale).powi(c as i32));
        let b = DVector::from_column_slice(y);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Numerical(format!("cubic fit failed: {e}")))?;
        Ok(Self { center, scale, coef: [sol[0], sol[1], sol[2], sol[3]] })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        self.coef[0] + t * (self.coef[1] + t * (self.coef[2] + t * self.coef[3]))
    }

    fn antiderivative_t(&self, t: f64) -> f64 {
        let c = &self.coef;
        t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
    }

    /// Exact integral of the fitted cubic over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let tl = (lo - self.center) / self.scale;
        let th = (hi - self.center) / self.scale;
        self.scale * (self.antiderivative_t(th) - self.antiderivative_t(tl))
    }
}

fn overlap(a: &[f64], b: &[f64]) -> (f64, f64) {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min(a).max(min(b)), max(a).min(max(b)))
}

fn average_gap(xa: &[f64], ya: &[f64], xt: &[f64], yt: &[f64], what: &'static str) -> Result<(f64, (f64, f64))> {
    let (lo, hi) = overlap(xa, xt);
    if !(hi > lo) {
        return Err(Error::NoOverlap(what));
    }
    let fa = Cubic::fit(xa, ya)?;
    let ft = Cubic::fit(xt, yt)?;
    Ok(((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo), (lo, hi)))
}

/// Bjøntegaard BD-rate and BD-PSNR of `test` relative to `anchor`.
pub fn bd_metrics(anchor: &RdCurve, test: &RdCurve) -> Result<BdResult> {
    let (ra, pa) = (anchor.log_rates(), anchor.psnrs());
    let (rt, pt) = (test.log_rates(), test.psnrs());
    let (bd_psnr_db, (lo_r, hi_r)) = average_gap(&ra, &pa, &rt, &pt, "bitrate range")?;
    let (avg_log_rate, psnr_overlap) = average_gap(&pa, &ra, &pt, &rt, "PSNR range")?;
    Ok(BdResult {
        bd_rate_percent: (avg_log_rate.exp() - 1.0) * 100.0,
        bd_psnr_db,
        rate_overlap: (lo_r.exp(), hi_r.exp()),
        psnr_overlap,
    })
}
