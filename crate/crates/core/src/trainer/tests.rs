use super::*;
use crate::distortion::{distort, DistortionProfile};
use crate::pointcloud::PointCloud;
use crate::synthetic::textured_cloud;

fn tiny_gen() -> GeneratorConfig {
    GeneratorConfig {
        k: 6,
        attention_width: 4,
        heads: 2,
        qk_hidden: 3,
        feature_width: 8,
        grb_hidden: 8,
        fs_widths: [8, 4],
        ..GeneratorConfig::default()
    }
}

fn tiny_critic() -> CriticConfig {
    CriticConfig { k: 6, widths: [8, 8], attention_dim: 4, mlp_widths: [8, 4] }
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 2,
        lr_generator: 1e-3,
        lr_discriminator: 1e-3,
        patch_size: 48,
        num_nei: 3,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn pairs(count: u64) -> Vec<(PointCloud, PointCloud)> {
    (0..count)
        .map(|s| {
            let orig = textured_cloud(200, 40 + s);
            let dist = distort(&orig, &DistortionProfile::new(40)).unwrap();
            (orig, dist)
        })
        .collect()
}

fn dataset() -> Vec<TrainingSample> {
    let t = tiny_train();
    build_dataset(&pairs(2), t.channel, t.patch_size, t.overlap, t.num_nei).unwrap()
}

#[test]
fn dataset_layout() {
    let data = dataset();
    // ceil(200 * 2 / 48) = 9 patches of floor(400 / 9) = 44 points per cloud.
    assert_eq!(data.len(), 18);
    for s in &data {
        assert_eq!(s.geometry.len(), 44);
        assert_eq!(s.expanded.len(), 44 * 4);
        assert_eq!(&s.expanded[..44], s.geometry.as_slice());
        assert_eq!(s.distorted.len(), s.original.len());
    }
    assert!(data.iter().any(|s| s.distorted != s.original));
}

#[test]
fn zero_learning_rates_leave_parameters_bit_exact() {
    let data = dataset();
    let mut cfg = TrainConfig { epochs: 1, lr_generator: 0.0, lr_discriminator: 0.0, max_generator_steps: Some(1), ..tiny_train() };
    let run = train(&data, &cfg, &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    assert_eq!(run.generator_steps, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, g0) = Generator::init(&tiny_gen(), rng.gen()).unwrap();
    let (_, c0) = Critic::init(&tiny_critic(), rng.gen()).unwrap();
    assert_eq!(run.generator_params, g0.cast::<Scalar>());
    assert_eq!(run.critic_params, c0.cast::<Scalar>());

    // Each optimiser only ever touches its own network.
    cfg.lr_discriminator = 1e-3;
    let run = train(&data, &cfg, &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    assert_eq!(run.generator_params, g0.cast::<Scalar>());
    assert_ne!(run.critic_params, c0.cast::<Scalar>());
    cfg.lr_discriminator = 0.0;
    cfg.lr_generator = 1e-3;
    let run = train(&data, &cfg, &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    assert_ne!(run.generator_params, g0.cast::<Scalar>());
    assert_eq!(run.critic_params, c0.cast::<Scalar>());
}

#[test]
fn same_seed_same_run() {
    let data = dataset();
    let a = train(&data, &tiny_train(), &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    let b = train(&data, &tiny_train(), &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.generator_params, b.generator_params);
    assert_eq!(a.critic_params, b.critic_params);
    assert_eq!(a.log.len(), 2);
    for r in &a.log {
        assert!([r.loss_g, r.loss_d, r.rmse, r.val_psnr].iter().all(|v| v.is_finite()), "{r:?}");
    }
    let other = train(&data, &TrainConfig { seed: 6, ..tiny_train() }, &tiny_gen(), &tiny_critic(), &LossConfig::default())
        .unwrap();
    assert_ne!(a.log, other.log);
}

#[test]
fn step_budget_stops_mid_epoch() {
    let data = dataset();
    let cfg = TrainConfig { epochs: 5, max_generator_steps: Some(3), ..tiny_train() };
    let run = train(&data, &cfg, &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    assert_eq!(run.generator_steps, 3);
    assert_eq!(run.log.last().unwrap().step, 3);
}

#[test]
fn metrics_csv_format() {
    let rows = [LogRow { step: 4, loss_g: 1.5, loss_d: -0.25, rmse: 3.0, val_psnr: 30.125 }];
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "# pcqe metrics v1\nstep,L_G,L_D,RMSE,val_PSNR\n4,1.500000,-0.250000,3.000000,30.125000\n"
    );
}

fn identity_models() -> EnhanceModels {
    let mut models = EnhanceModels::new();
    for c in Channel::ALL {
        let cfg = GeneratorConfig { zero_init_fs: true, zero_init_gfp: true, ..tiny_gen() };
        models.insert(c, ChannelModel::init(&cfg, c.index() as u64).unwrap());
    }
    models
}

fn opts() -> EnhanceOptions {
    EnhanceOptions { patch_size: 48, overlap: 2.0, num_nei: 3, channels: Channel::ALL.to_vec() }
}

#[test]
fn zero_final_layers_reproduce_the_cloud() {
    let (_, dist) = pairs(1).remove(0);
    let out = enhance_cloud(&dist, &identity_models(), &opts()).unwrap();
    assert_eq!(out, dist);
}

#[test]
fn missing_channel_model_is_a_state_error() {
    let (_, dist) = pairs(1).remove(0);
    let mut models = EnhanceModels::new();
    models.insert(Channel::Y, identity_models().get(Channel::Y).unwrap().clone());
    let err = enhance_cloud(&dist, &models, &opts()).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
    let y_only = EnhanceOptions { channels: vec![Channel::Y], ..opts() };
    assert!(enhance_cloud(&dist, &models, &y_only).is_ok());
}

#[test]
fn checkpoints_round_trip_through_disk() {
    let data = dataset();
    let cfg = TrainConfig { max_generator_steps: Some(2), ..tiny_train() };
    let run = train(&data, &cfg, &tiny_gen(), &tiny_critic(), &LossConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_channel_checkpoints(dir.path(), &cfg, &run).unwrap();
    assert!(dir.path().join("Y/generator.ckpt").is_file());
    assert!(dir.path().join("Y/critic.ckpt").is_file());

    let models = load_channel_models(dir.path(), &[Channel::Y]).unwrap();
    assert_eq!(models.get(Channel::Y).unwrap().params, run.generator_params);
    assert_eq!(models.get(Channel::Y).unwrap().train.as_ref(), Some(&cfg));
    assert!(matches!(load_channel_models(dir.path(), &[Channel::Cb]), Err(Error::State(_))));

    let (_, dist) = pairs(1).remove(0);
    let y_only = EnhanceOptions { channels: vec![Channel::Y], ..opts() };
    let out = enhance_cloud(&dist, &models, &y_only).unwrap();
    assert_eq!(out.geometry(), dist.geometry());
    assert_eq!(out.channel(Channel::Cb), dist.channel(Channel::Cb));
    assert!(out.channel(Channel::Y).iter().all(|v| (0.0..=255.0).contains(v)));
}
