//! Synthetic attribute-coding distortion used in place of a real codec.
//!
//! Two effects are mimicked per channel: a transform-like low-pass (blend each
//! value 50/50 with the mean of its k nearest neighbours) followed by uniform
//! scalar quantization of the offset from mid-level 128 with step
//! `max(1, s * 2^((qp - 4) / 6))`. The scale `s` defaults to 1/4, which keeps
//! the coarsest ladder rung (step ~57) inside the 8-bit range; with `s = 1`
//! QP 51 would map every value to mid-level. Steps below one code value
//! collapse to the 8-bit grid, so integer-valued data passes unchanged. The bitrate proxy is the
//! zero-order entropy of the quantization indices. This is a proxy for
//! experiments and plumbing tests only; it does not model any real codec.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::knn_self;
use crate::pointcloud::{ColorSpace, PointCloud};

/// Attribute QPs of the six rate points, coarsest first.
pub const QP_LADDER: [i32; 6] = [51, 46, 40, 34, 28, 22];

const MID_LEVEL: f64 = 128.0;

/// Default multiplier on `2^((qp - 4) / 6)`.
pub const DEFAULT_STEP_SCALE: f64 = 0.25;

fn default_step_scale() -> f64 {
    DEFAULT_STEP_SCALE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionProfile {
    pub qp: i32,
    /// Neighbourhood size of the low-pass blend; 0 disables it.
    pub smoothing_k: usize,
    /// Recorded for provenance; the simulator itself is deterministic.
    pub seed: u64,
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
}

impl DistortionProfile {
    pub fn new(qp: i32) -> Self {
        Self { qp, smoothing_k: 8, seed: 0, step_scale: DEFAULT_STEP_SCALE }
    }

    /// Nominal step `step_scale * 2^((qp - 4) / 6)`.
    pub fn step(&self) -> f64 {
        self.step_scale * 2f64.powf((self.qp - 4) as f64 / 6.0)
    }

    /// Step actually applied: never finer than one code value.
    pub fn effective_step(&self) -> f64 {
        self.step().max(1.0)
    }

    pub fn quantization_index(&self, value: f64) -> i64 {
        ((value - MID_LEVEL) / self.effective_step()).round() as i64
    }

    pub fn dequantize(&self, index: i64) -> f64 {
        (MID_LEVEL + index as f64 * self.effective_step()).clamp(0.0, 255.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.qp < 1 {
            return Err(Error::Argument(format!("qp must be >= 1 (got {})", self.qp)));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Argument(format!("step_scale must be positive (got {})", self.step_scale)));
        }
        Ok(())
    }
}

/// Low-pass then quantize every channel; geometry is passed through untouched.
pub fn distort(pc: &PointCloud, profile: &DistortionProfile) -> Result<PointCloud> {
    profile.validate()?;
    if pc.color_space() != ColorSpace::YCbCr {
        return Err(Error::State("distort expects a YCbCr cloud".into()));
    }
    let k = profile.smoothing_k.min(pc.len());
    let attrs = pc.attributes();
    let blended: Vec<[f64; 3]> = if k > 1 {
        let nbrs = knn_self(pc.geometry(), k)?;
        attrs
            .iter()
            .zip(&nbrs)
            .map(|(a, row)| {
                let mut mean = [0.0; 3];
                for &j in row {
                    for c in 0..3 {
                        mean[c] += attrs[j][c];
                    }
                }
                [0, 1, 2].map(|c| 0.5 * a[c] + 0.5 * mean[c] / row.len() as f64)
            })
            .collect()
    } else {
        attrs.to_vec()
    };
    let out = blended.iter().map(|a| a.map(|v| profile.dequantize(profile.quantization_index(v)))).collect();
    pc.with_attributes(out)
}

/// Summed per-channel zero-order entropy of the quantization indices, in bits per point.
pub fn bitrate_proxy(distorted: &PointCloud, profile: &DistortionProfile) -> f64 {
    let n = distorted.len() as f64;
    (0..3)
        .map(|c| {
            let mut hist: HashMap<i64, usize> = HashMap::new();
            for a in distorted.attributes() {
                *hist.entry(profile.quantization_index(a[c])).or_default() += 1;
            }
            let mut counts: Vec<usize> = hist.into_values().collect();
            counts.sort_unstable();
            counts
                .iter()
                .map(|&cnt| {
                    let p = cnt as f64 / n;
                    -p * p.log2()
                })
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::pointcloud::Channel;
    use crate::synthetic::textured_cloud;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn integer_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = (0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(0.0..100.0))).collect();
        let a = (0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..256) as f64)).collect();
        PointCloud::new(g, a, ColorSpace::YCbCr).unwrap()
    }

    #[test]
    fn step_ladder() {
        assert_eq!(DistortionProfile::new(4).step(), 0.25);
        assert_eq!(DistortionProfile::new(16).step(), 1.0);
        assert_eq!(DistortionProfile::new(22).step(), 2.0);
        assert_eq!(DistortionProfile::new(40).step(), 16.0);
        let unscaled = DistortionProfile { step_scale: 1.0, ..DistortionProfile::new(40) };
        assert_eq!(unscaled.step(), 64.0);
        assert!(DistortionProfile::new(0).validate().is_err());
        assert!(DistortionProfile { step_scale: 0.0, ..DistortionProfile::new(4) }.validate().is_err());
    }

    #[test]
    fn unit_step_without_smoothing_is_identity() {
        let pc = integer_cloud(300, 1);
        for qp in [1, 2, 4] {
            let profile = DistortionProfile { smoothing_k: 0, ..DistortionProfile::new(qp) };
            assert_eq!(profile.effective_step(), 1.0);
            assert_eq!(distort(&pc, &profile).unwrap(), pc);
        }
    }

    #[test]
    fn constant_cloud_stays_constant() {
        let mut pc = integer_cloud(200, 2);
        let attrs = vec![[77.0, 130.0, 90.0]; 200];
        pc = pc.with_attributes(attrs).unwrap();
        for qp in QP_LADDER {
            let profile = DistortionProfile::new(qp);
            let d = distort(&pc, &profile).unwrap();
            let first = d.attributes()[0];
            assert!(d.attributes().iter().all(|a| *a == first));
            for c in 0..3 {
                assert!((first[c] - pc.attributes()[0][c]).abs() <= profile.effective_step());
            }
            assert!(bitrate_proxy(&d, &profile).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_is_untouched() {
        let pc = integer_cloud(100, 3);
        let d = distort(&pc, &DistortionProfile::new(34)).unwrap();
        assert_eq!(d.geometry(), pc.geometry());
    }

    #[test]
    fn psnr_and_rate_fall_along_the_ladder() {
        let pc = textured_cloud(2048, 5);
        let mut last_psnr = f64::INFINITY;
        let mut last_rate = f64::INFINITY;
        for qp in QP_LADDER.iter().rev() {
            let profile = DistortionProfile::new(*qp);
            let d = distort(&pc, &profile).unwrap();
            let p = psnr(&pc.channel(Channel::Y), &d.channel(Channel::Y), 255.0).unwrap();
            let r = bitrate_proxy(&d, &profile);
            assert!(p < last_psnr, "qp {qp}: psnr {p} vs previous {last_psnr}");
            assert!(r <= last_rate, "qp {qp}: rate {r} vs previous {last_rate}");
            last_psnr = p;
            last_rate = r;
        }
    }

    #[test]
    fn ladder_rates_are_positive_and_distinct() {
        for seed in 0..8 {
            let pc = textured_cloud(4096, seed);
            let rates: Vec<f64> = QP_LADDER
                .iter()
                .map(|&qp| {
                    let profile = DistortionProfile::new(qp);
                    bitrate_proxy(&distort(&pc, &profile).unwrap(), &profile)
                })
                .collect();
            assert!(rates[0] > 0.0, "seed {seed}: {rates:?}");
            assert!(rates.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {rates:?}");
        }
    }

    #[test]
    fn uniform_channel_has_eight_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 1 << 16;
        let g = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
        let a = (0..n).map(|_| [rng.gen_range(0..256) as f64, 0.0, 0.0]).collect();
        let pc = PointCloud::new(g, a, ColorSpace::YCbCr).unwrap();
        let profile = DistortionProfile { smoothing_k: 0, ..DistortionProfile::new(4) };
        let bits = bitrate_proxy(&pc, &profile);
        assert!((bits - 8.0).abs() < 0.01, "{bits}");
    }

    #[test]
    fn rejects_rgb_input() {
        let pc = integer_cloud(10, 1).ycbcr_to_rgb().unwrap();
        assert!(distort(&pc, &DistortionProfile::new(22)).is_err());
    }
}
