//! Desk-scale end-to-end run on synthetic clouds: train the Y generator on five
//! clouds distorted at QP 40 and report the PSNR change on a sixth.
//!
//! Widths and rates can be overridden through environment variables, e.g.
//! `SMOKE_STEPS=100 SMOKE_LR_G=5e-4 cargo run --release --example desk_smoke`.

use std::time::Instant;

use pcqe_core::critic::CriticConfig;
use pcqe_core::distortion::{distort, DistortionProfile};
use pcqe_core::generator::GeneratorConfig;
use pcqe_core::metrics::psnr;
use pcqe_core::objectives::LossConfig;
use pcqe_core::pointcloud::Channel;
use pcqe_core::synthetic::textured_cloud;
use pcqe_core::trainer::{build_dataset, enhance_cloud, train, ChannelModel, EnhanceModels, EnhanceOptions, TrainConfig};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> pcqe_core::Result<()> {
    let start = Instant::now();
    let clouds: Vec<_> = (0..6)
        .map(|s| {
            let orig = textured_cloud(4096, 1000 + s);
            let dist = distort(&orig, &DistortionProfile::new(40)).expect("distort");
            (orig, dist)
        })
        .collect();
    let (held_orig, held_dist) = clouds[5].clone();
    let train_cfg = TrainConfig {
        epochs: 1000,
        max_generator_steps: Some(env("SMOKE_STEPS", 300)),
        lr_generator: env("SMOKE_LR_G", 1e-3),
        lr_discriminator: env("SMOKE_LR_D", 1e-4),
        patch_size: 512,
        num_nei: 6,
        seed: env("SMOKE_SEED", 1),
        ..TrainConfig::default()
    };
    let gen_cfg = GeneratorConfig {
        k: 20,
        attention_width: env("SMOKE_L", 8),
        heads: env("SMOKE_HEADS", 2),
        qk_hidden: 4,
        feature_width: env("SMOKE_C", 16),
        grb_hidden: env("SMOKE_C", 16),
        fs_widths: [16, 8],
        ..GeneratorConfig::default()
    };
    let critic_cfg = CriticConfig { k: 20, widths: [16, 32], attention_dim: 8, mlp_widths: [32, 16] };
    let data = build_dataset(&clouds[..5], Channel::Y, train_cfg.patch_size, train_cfg.overlap, train_cfg.num_nei)?;
    println!("{} training patches, prepared in {:.1?}", data.len(), start.elapsed());
    let run = train(&data, &train_cfg, &gen_cfg, &critic_cfg, &LossConfig::default())?;
    for r in &run.log {
        println!("step {:4} L_G {:8.4} L_D {:8.4} RMSE {:7.3} val {:.3} dB", r.step, r.loss_g, r.loss_d, r.rmse, r.val_psnr);
    }
    println!("validation baseline {:.3} dB; trained in {:.1?}", run.val_psnr_baseline, start.elapsed());

    let mut models = EnhanceModels::new();
    models.insert(Channel::Y, ChannelModel { generator: run.generator, params: run.generator_params, train: None });
    let opts = EnhanceOptions { patch_size: 512, overlap: 2.0, num_nei: 6, channels: vec![Channel::Y] };
    let out = enhance_cloud(&held_dist, &models, &opts)?;
    let before = psnr(&held_orig.channel(Channel::Y), &held_dist.channel(Channel::Y), 255.0)?;
    let after = psnr(&held_orig.channel(Channel::Y), &out.channel(Channel::Y), 255.0)?;
    println!("held-out Y-PSNR {before:.3} -> {after:.3} dB ({:+.3}); total {:.1?}", after - before, start.elapsed());
    Ok(())
}

