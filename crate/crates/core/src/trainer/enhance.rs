use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::patch_layout;
use super::{Scalar, TrainConfig, TrainOutcome};
use crate::autograd::{no_grad, Var};
use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, PatchContext};
use crate::nn::{read_checkpoint, write_checkpoint, Checkpoint, ParamStore};
use crate::patch::{fuse_patches, generate_patches, group_patches};
use crate::pointcloud::{Channel, ColorSpace, PointCloud};
use crate::tensor::Tensor;

/// A trained generator ready for inference.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub generator: Generator,
    pub params: ParamStore<Scalar>,
    /// Training settings recorded in the checkpoint, when present.
    pub train: Option<TrainConfig>,
}

impl ChannelModel {
    /// Randomly initialised model, mostly useful with `zero_init_fs` for identity runs.
    pub fn init(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        let (generator, params) = Generator::init(config, seed)?;
        Ok(Self { generator, params: params.cast(), train: None })
    }
}

/// Per-channel generators.
#[derive(Debug, Clone, Default)]
pub struct EnhanceModels {
    models: BTreeMap<Channel, ChannelModel>,
}

impl EnhanceModels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, channel: Channel, model: ChannelModel) {
        self.models.insert(channel, model);
    }

    pub fn get(&self, channel: Channel) -> Result<&ChannelModel> {
        self.models
            .get(&channel)
            .ok_or_else(|| Error::State(format!("no generator loaded for channel {channel}")))
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.models.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceOptions {
    pub patch_size: usize,
    pub overlap: f64,
    pub num_nei: usize,
    /// Channels to enhance; the others pass through unchanged.
    pub channels: Vec<Channel>,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { patch_size: t.patch_size, overlap: t.overlap, num_nei: t.num_nei, channels: Channel::ALL.to_vec() }
    }
}

/// Patchify, run each channel's generator on every patch, fuse, clamp.
///
/// Geometry and point order are untouched. With residual output the patch
/// values are `input + 255 * delta` computed in `f64`, so a model whose last
/// layer is zero reproduces the input exactly.
pub fn enhance_cloud(pc: &PointCloud, models: &EnhanceModels, opts: &EnhanceOptions) -> Result<PointCloud> {
    if pc.color_space() != ColorSpace::YCbCr {
        return Err(Error::State("enhance expects a YCbCr cloud".into()));
    }
    for &c in &opts.channels {
        models.get(c)?;
    }
    let (m, nei) = patch_layout(pc.len(), opts.patch_size, opts.overlap, opts.num_nei);
    let patches = generate_patches(pc, m, opts.overlap)?;
    let groups = group_patches(&patches, nei)?;
    let expanded: Vec<_> = groups.iter().map(|g| g.expanded_geometry(&patches)).collect();
    let mut out = pc.clone();
    let _g = no_grad();
    for &channel in &opts.channels {
        let model = models.get(channel)?;
        let k = model.generator.config().k;
        let p = model.params.bind(false);
        let c = channel.index();
        let mut values = Vec::with_capacity(patches.len());
        for (patch, exp) in patches.iter().zip(&expanded) {
            let ctx = PatchContext::<Scalar>::new(&patch.geometry, Some(exp), k)?;
            let input: Vec<f64> = patch.attributes.iter().map(|a| a[c]).collect();
            let x = Var::constant(Tensor::from_vec(input.len(), 1, input.iter().map(|v| (v / 255.0) as Scalar).collect()));
            let delta = model.generator.forward_delta(&p, &ctx, &x)?;
            let d = delta.value().data();
            let v: Vec<f64> = if model.generator.config().residual_output {
                input.iter().zip(d).map(|(&a, &d)| a + 255.0 * d as f64).collect()
            } else {
                d.iter().map(|&d| 255.0 * d as f64).collect()
            };
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite generator output on patch seeded at {}", patch.seed_index)));
            }
            values.push(v);
        }
        let fallback = pc.channel(channel);
        let fused = fuse_patches(
            patches.iter().zip(&values).map(|(p, v)| (p.indices.as_slice(), v.as_slice())),
            pc.len(),
            &fallback,
        )?;
        out.set_channel(channel, &fused)?;
    }
    Ok(out)
}

/// `{dir}/{channel}/{kind}.ckpt`
pub fn checkpoint_path(dir: &Path, channel: Channel, kind: &str) -> PathBuf {
    dir.join(channel.name()).join(format!("{kind}.ckpt"))
}

#[derive(Serialize, Deserialize)]
struct GeneratorMeta {
    channel: Channel,
    generator: GeneratorConfig,
    train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct CriticMeta {
    channel: Channel,
    critic: CriticConfig,
}

fn to_json<S: Serialize>(v: &S) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_file(path: &Path, kind: &str, config: &serde_json::Value, params: &ParamStore<Scalar>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), kind, config, params)
}

fn read_file(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

/// Write a generator checkpoint for `channel`.
pub fn save_generator(path: &Path, channel: Channel, model: &ChannelModel) -> Result<()> {
    let meta = GeneratorMeta { channel, generator: model.generator.config().clone(), train: model.train.clone() };
    write_file(path, "generator", &to_json(&meta)?, &model.params)
}

/// Write both networks of a finished run under `dir/{channel}/`.
pub fn save_channel_checkpoints(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    let model = ChannelModel {
        generator: outcome.generator.clone(),
        params: outcome.generator_params.clone(),
        train: Some(cfg.clone()),
    };
    save_generator(&checkpoint_path(dir, cfg.channel, "generator"), cfg.channel, &model)?;
    let meta = CriticMeta { channel: cfg.channel, critic: outcome.critic.config().clone() };
    write_file(&checkpoint_path(dir, cfg.channel, "critic"), "critic", &to_json(&meta)?, &outcome.critic_params)
}

/// Read one generator checkpoint and rebuild its network.
pub fn load_generator(path: &Path) -> Result<(Channel, ChannelModel)> {
    let ck = read_file(path)?;
    if ck.kind != "generator" {
        return Err(Error::Checkpoint(format!("{}: holds a {}, not a generator", path.display(), ck.kind)));
    }
    let meta: GeneratorMeta =
        serde_json::from_value(ck.config).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (generator, mut params) = Generator::init(&meta.generator, 0)?;
    params.load_from(&ck.params)?;
    Ok((meta.channel, ChannelModel { generator, params: params.cast(), train: meta.train }))
}

/// Load `dir/{channel}/generator.ckpt` for every requested channel.
pub fn load_channel_models(dir: &Path, channels: &[Channel]) -> Result<EnhanceModels> {
    let mut models = EnhanceModels::new();
    for &c in channels {
        let path = checkpoint_path(dir, c, "generator");
        if !path.exists() {
            return Err(Error::State(format!("missing checkpoint for channel {c}: {}", path.display())));
        }
        let (stored, model) = load_generator(&path)?;
        if stored != c {
            return Err(Error::Checkpoint(format!("{} holds a {stored} model", path.display())));
        }
        models.insert(c, model);
    }
    Ok(models)
}
