//! Procedurally textured test clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pointcloud::{ColorSpace, PointCloud};

/// `n` points on a bumpy sphere of radius ~100 with a smooth multi-frequency
/// color texture, returned in RGB.
pub fn textured_cloud_rgb(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<([f64; 3], f64, [f64; 3])> = (0..4)
        .map(|i| {
            let dir = unit(&mut rng);
            let freq = std::f64::consts::TAU / rng.gen_range(25.0..70.0) * (1.0 + 0.3 * i as f64);
            let amp = [0; 3].map(|_: i32| rng.gen_range(-45.0..45.0));
            (dir.map(|d| d * freq), rng.gen_range(0.0..std::f64::consts::TAU), amp)
        })
        .collect();
    let base = [0; 3].map(|_: i32| rng.gen_range(90.0..165.0));
    let bump_dir = unit(&mut rng);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut geometry = Vec::with_capacity(n);
    let mut attributes = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let theta = golden * i as f64 + rng.gen_range(-0.2..0.2);
        let s = [r * theta.cos(), r * theta.sin(), z];
        let radius = 100.0 + 8.0 * (3.0 * dot(&s, &bump_dir)).sin();
        let p = s.map(|v| v * radius + 128.0);
        let mut rgb = base;
        for (k, phase, amp) in &waves {
            let w = (dot(k, &p) + phase).sin();
            for c in 0..3 {
                rgb[c] += amp[c] * w;
            }
        }
        for v in &mut rgb {
            *v = (*v + rng.gen_range(-2.0..2.0)).round().clamp(0.0, 255.0);
        }
        geometry.push(p);
        attributes.push(rgb);
    }
    PointCloud::new(geometry, attributes, ColorSpace::Rgb).expect("n >= 1")
}

/// Same as [`textured_cloud_rgb`], converted to YCbCr.
pub fn textured_cloud(n: usize, seed: u64) -> PointCloud {
    textured_cloud_rgb(n, seed).rgb_to_ycbcr().expect("RGB input")
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [0; 3].map(|_: i32| rng.gen_range(-1.0..1.0));
        let len = dot(&v, &v).sqrt();
        if len > 0.1 && len <= 1.0 {
            return v.map(|x| x / len);
        }
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = textured_cloud(500, 3);
        assert_eq!(a, textured_cloud(500, 3));
        assert_ne!(a, textured_cloud(500, 4));
        assert!(a.attributes().iter().flatten().all(|v| (0.0..=255.0).contains(v)));
        assert_eq!(a.len(), 500);
    }
}
