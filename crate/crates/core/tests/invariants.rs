use proptest::prelude::*;

use pcqe_core::metrics::{bd_metrics, RdCurve};
use pcqe_core::patch::{coverage, fuse_patches, generate_patches};
use pcqe_core::pointcloud::{read_ply, rgb_to_ycbcr_pixel, write_ply, ycbcr_to_rgb_pixel, Channel, ColorSpace, PlyFormat, PointCloud};

fn rgb_cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((prop::array::uniform3(-1e3f64..1e3), prop::array::uniform3(0u8..=255)), 1..64).prop_map(|pts| {
        let (g, a): (Vec<_>, Vec<_>) = pts.into_iter().map(|(g, a)| (g, a.map(f64::from))).unzip();
        PointCloud::new(g, a, ColorSpace::Rgb).unwrap()
    })
}

fn rd_curve() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (prop::collection::vec(0.05f64..1.0, 4..7), prop::collection::vec(0.2f64..3.0, 4..7), 20.0f64..35.0).prop_map(
        |(dr, dp, p0)| {
            let (mut r, mut p) = (0.1, p0);
            dr.iter()
                .zip(&dp)
                .map(|(a, b)| {
                    r *= 1.0 + a;
                    p += b;
                    (r, p)
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn ply_round_trip_is_exact(pc in rgb_cloud(), binary in any::<bool>()) {
        let fmt = if binary { PlyFormat::BinaryLe } else { PlyFormat::Ascii };
        let back = read_ply(&write_ply(&pc, fmt).unwrap()).unwrap();
        prop_assert_eq!(back.geometry(), pc.geometry());
        prop_assert_eq!(back.attributes(), pc.attributes());
    }

    #[test]
    fn colour_conversion_inverts(rgb in prop::array::uniform3(0.0f64..255.0)) {
        let back = ycbcr_to_rgb_pixel(rgb_to_ycbcr_pixel(rgb));
        for (a, b) in back.iter().zip(rgb) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fusing_unchanged_patches_is_identity(pc in rgb_cloud(), m in 1usize..8, ol in 0.5f64..3.0) {
        let m = m.min(pc.len());
        let n = (pc.len() as f64 * ol / m as f64).floor() as usize;
        prop_assume!(n >= 1 && n <= pc.len());
        let patches = generate_patches(&pc, m, ol).unwrap();
        let y = pc.channel(Channel::Y);
        prop_assert_eq!(patches[0].len(), n);
        for p in &patches {
            prop_assert_eq!(p.len(), n);
            prop_assert_eq!(p.indices[0], p.seed_index);
            let mut seen = p.indices.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), n);
        }
        prop_assert_eq!(coverage(&patches, pc.len()).iter().sum::<usize>(), m * n);
        let values: Vec<Vec<f64>> = patches.iter().map(|p| p.indices.iter().map(|&i| y[i]).collect()).collect();
        let fused = fuse_patches(patches.iter().zip(&values).map(|(p, v)| (p.indices.as_slice(), v.as_slice())), pc.len(), &y).unwrap();
        prop_assert_eq!(fused, y);
    }

    #[test]
    fn bd_deltas_are_antisymmetric(a in rd_curve(), t in rd_curve()) {
        let (a, t) = (RdCurve::new(a).unwrap(), RdCurve::new(t).unwrap());
        let (Ok(at), Ok(ta)) = (bd_metrics(&a, &t), bd_metrics(&t, &a)) else { return Ok(()) };
        prop_assert!((at.bd_psnr_db + ta.bd_psnr_db).abs() < 1e-9);
        prop_assert!(((1.0 + at.bd_rate_percent / 100.0) * (1.0 + ta.bd_rate_percent / 100.0) - 1.0).abs() < 1e-9);
    }
}
