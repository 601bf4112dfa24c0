//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no binding helpers
//! beyond `JSON.parse`. Errors come back as a plain message string.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use pcqe_core::distortion::{bitrate_proxy, distort, DistortionProfile, QP_LADDER};
use pcqe_core::metrics::{bd_metrics, full_psnr, Cubic, RdCurve, PSNR_CAP};
use pcqe_core::patch::{coverage, generate_patches, group_patches, seeds_for_patch_size};
use pcqe_core::pointcloud::PointCloud;
use pcqe_core::synthetic::textured_cloud;

type JsResult = Result<String, String>;

fn json<S: Serialize>(v: &S) -> JsResult {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn rgb_bytes(pc: &PointCloud) -> Result<Vec<[u8; 3]>, String> {
    Ok(pc.ycbcr_to_rgb().map_err(|e| e.to_string())?.quantized_attributes())
}

#[derive(Serialize)]
struct PatchView {
    points: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
    patch_len: usize,
    /// Source indices of each patch.
    patches: Vec<Vec<usize>>,
    /// Grouped neighbour patches of each patch, nearest first.
    neighbors: Vec<Vec<usize>>,
    /// How many patches cover each point.
    coverage: Vec<usize>,
}

/// Synthetic cloud cut into overlapping patches with their groupings.
#[wasm_bindgen]
pub fn patch_layout(n: usize, patch_size: usize, overlap: f64, num_nei: usize, seed: u64) -> JsResult {
    if n == 0 || patch_size == 0 || !(overlap > 0.0) {
        return Err("n, patch_size and overlap must be positive".into());
    }
    let pc = textured_cloud(n, seed);
    let m = seeds_for_patch_size(n, patch_size, overlap);
    let patches = generate_patches(&pc, m, overlap).map_err(|e| e.to_string())?;
    let groups = group_patches(&patches, num_nei.min(m - 1)).map_err(|e| e.to_string())?;
    json(&PatchView {
        points: pc.geometry().iter().map(|p| p.map(|v| v as f32)).collect(),
        colors: rgb_bytes(&pc)?,
        patch_len: patches[0].len(),
        coverage: coverage(&patches, n),
        patches: patches.into_iter().map(|p| p.indices).collect(),
        neighbors: groups.into_iter().map(|g| g.neighbors).collect(),
    })
}

#[derive(Serialize)]
struct DistortionView {
    qp: i32,
    step: f64,
    effective_step: f64,
    bitrate_bpip: f64,
    /// Y, Cb, Cr, YCbCr in dB, capped for identical inputs.
    psnr: [f64; 4],
    points: Vec<[f32; 3]>,
    original: Vec<[u8; 3]>,
    distorted: Vec<[u8; 3]>,
    /// `(qp, bitrate, Y-PSNR)` over the standard ladder for the same cloud.
    ladder: Vec<(i32, f64, f64)>,
}

fn distorted_point(pc: &PointCloud, profile: &DistortionProfile) -> Result<(PointCloud, f64, [f64; 4]), String> {
    let d = distort(pc, profile).map_err(|e| e.to_string())?;
    let rate = bitrate_proxy(&d, profile);
    let psnr = full_psnr(pc, &d).map_err(|e| e.to_string())?.map(|v| v.min(PSNR_CAP));
    Ok((d, rate, psnr))
}

/// Distort a synthetic cloud at one QP and sweep the ladder for context.
#[wasm_bindgen]
pub fn distortion_explorer(n: usize, qp: i32, smoothing_k: usize, step_scale: f64, seed: u64) -> JsResult {
    let pc = textured_cloud(n.max(1), seed);
    let profile = DistortionProfile { qp, smoothing_k, seed, step_scale };
    profile.validate().map_err(|e| e.to_string())?;
    let (d, rate, psnr) = distorted_point(&pc, &profile)?;
    let mut ladder = Vec::with_capacity(QP_LADDER.len());
    for q in QP_LADDER {
        let (_, r, p) = distorted_point(&pc, &DistortionProfile { qp: q, ..profile.clone() })?;
        ladder.push((q, r, p[0]));
    }
    json(&DistortionView {
        qp,
        step: profile.step(),
        effective_step: profile.effective_step(),
        bitrate_bpip: rate,
        psnr,
        points: pc.geometry().iter().map(|p| p.map(|v| v as f32)).collect(),
        original: rgb_bytes(&pc)?,
        distorted: rgb_bytes(&d)?,
        ladder,
    })
}

/// `bitrate,psnr` pairs from pasted text: one pair per line, separated by a
/// comma, semicolon or whitespace. Lines starting with `#` or a letter are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c == ';' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() < 2 {
            return Err(format!("line {}: expected 'bitrate, psnr'", i + 1));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: '{s}' is not a number", i + 1));
        out.push((num(fields[0])?, num(fields[1])?));
    }
    Ok(out)
}

#[derive(Serialize)]
struct CurveFit {
    points: Vec<(f64, f64)>,
    /// Fitted PSNR sampled over the curve's own rate span.
    samples: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct BdView {
    bd_rate_percent: f64,
    bd_psnr_db: f64,
    rate_overlap: (f64, f64),
    anchor: CurveFit,
    test: CurveFit,
}

fn fit_curve(curve: &RdCurve) -> Result<CurveFit, String> {
    let pts: Vec<(f64, f64)> = curve.points().iter().map(|p| (p.bitrate, p.psnr)).collect();
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let cubic = Cubic::fit(&lx, &y).map_err(|e| e.to_string())?;
    let (lo, hi) = (lx[0], lx[lx.len() - 1]);
    let samples = (0..=64)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / 64.0;
            (t.exp(), cubic.eval(t))
        })
        .collect();
    Ok(CurveFit { points: pts, samples })
}

/// Fit both RD curves and report the Bjøntegaard deltas of `test` against `anchor`.
#[wasm_bindgen]
pub fn bd_fit(anchor_text: &str, test_text: &str) -> JsResult {
    let anchor = RdCurve::new(parse_pairs(anchor_text)?).map_err(|e| format!("anchor: {e}"))?;
    let test = RdCurve::new(parse_pairs(test_text)?).map_err(|e| format!("test: {e}"))?;
    let bd = bd_metrics(&anchor, &test).map_err(|e| e.to_string())?;
    json(&BdView {
        bd_rate_percent: bd.bd_rate_percent,
        bd_psnr_db: bd.bd_psnr_db,
        rate_overlap: bd.rate_overlap,
        anchor: fit_curve(&anchor)?,
        test: fit_curve(&test)?,
    })
}
