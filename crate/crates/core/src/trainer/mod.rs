//! Alternating critic/generator training for one colour channel, and
//! whole-cloud enhancement with trained models.
//!
//! Training runs in `f32` on a single thread and is fully determined by the
//! seed: shuffling, interpolation weights and both networks' initial weights
//! are all drawn from one ChaCha8 stream.

mod dataset;
mod enhance;

pub use dataset::{build_dataset, TrainingSample};
pub use enhance::{
    checkpoint_path, enhance_cloud, load_channel_models, load_generator, save_channel_checkpoints, save_generator,
    ChannelModel, EnhanceModels, EnhanceOptions,
};

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, no_grad, Var};
use crate::critic::{Critic, CriticConfig, CriticGraph};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig, PatchContext};
use crate::metrics::psnr_from_mse;
use crate::nn::{Adam, ParamStore};
use crate::objectives::{discriminator_loss, generator_loss, gradient_penalty, LossConfig};
use crate::pointcloud::Channel;
use crate::tensor::Tensor;

/// Precision of all training arithmetic.
pub type Scalar = f32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Critic updates before each generator update.
    pub n_critic: usize,
    pub betas: [f64; 2],
    /// Target points per patch.
    pub patch_size: usize,
    /// Overlap ratio: each point is covered about this many times.
    pub overlap: f64,
    pub num_nei: usize,
    pub channel: Channel,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Stop after this many generator updates, even mid-epoch.
    pub max_generator_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 5,
            lr_generator: 1e-4,
            lr_discriminator: 1e-6,
            n_critic: 1,
            betas: [0.5, 0.9],
            patch_size: 2048,
            overlap: 2.0,
            num_nei: 6,
            channel: Channel::Y,
            seed: 0,
            validation_fraction: 0.1,
            max_generator_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("train.epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.n_critic == 0 {
            return bad("train.batch_size and train.n_critic must be >= 1".into());
        }
        if !(self.lr_generator >= 0.0 && self.lr_discriminator >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad(format!("train.betas must lie in [0, 1) (got {:?})", self.betas));
        }
        if self.patch_size == 0 || !(self.overlap > 0.0) {
            return bad("train.patch_size and train.overlap must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("train.validation_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Generator updates so far.
    pub step: usize,
    /// Mean generator loss over the epoch.
    pub loss_g: f64,
    /// Mean critic loss over the epoch.
    pub loss_d: f64,
    /// Mean training RMSE, in code values.
    pub rmse: f64,
    /// PSNR of the enhanced validation patches, in dB.
    pub val_psnr: f64,
}

pub const METRICS_HEADER: &str = "# pcqe metrics v1\nstep,L_G,L_D,RMSE,val_PSNR";

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6},{:.6},{:.6}", r.step, r.loss_g, r.loss_d, r.rmse, r.val_psnr)?;
    }
    Ok(())
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: Generator,
    pub generator_params: ParamStore<Scalar>,
    pub critic: Critic,
    pub critic_params: ParamStore<Scalar>,
    pub log: Vec<LogRow>,
    /// Validation PSNR of the distorted input, for comparison with `log`.
    pub val_psnr_baseline: f64,
    pub generator_steps: usize,
}

/// A sample with its geometry-derived inputs precomputed.
struct Prepared {
    ctx: PatchContext<Scalar>,
    graph: CriticGraph,
    distorted: Tensor<Scalar>,
    original: Tensor<Scalar>,
}

impl Prepared {
    fn new(s: &TrainingSample, gk: usize, ck: usize) -> Result<Self> {
        let n = s.geometry.len();
        let norm = |v: &[f64]| Tensor::from_vec(n, 1, v.iter().map(|x| (x / 255.0) as Scalar).collect());
        Ok(Self {
            ctx: PatchContext::new(&s.geometry, Some(&s.expanded), gk)?,
            graph: CriticGraph::new(&s.geometry, ck)?,
            distorted: norm(&s.distorted),
            original: norm(&s.original),
        })
    }
}

/// Stack `[n_i, 1]` columns into one `[sum n_i, 1]` column.
fn stack_columns(parts: &[Var<Scalar>]) -> Var<Scalar> {
    let rows: Vec<Var<Scalar>> = parts.iter().map(|p| p.reshape(1, p.rows())).collect();
    let joined = Var::concat_cols(&rows);
    let total = joined.cols();
    joined.reshape(total, 1)
}

fn values(vars: &[Var<Scalar>]) -> Vec<Tensor<Scalar>> {
    vars.iter().map(|v| v.value().clone()).collect()
}

fn check_finite(what: &str, value: f64, epoch: usize, step: usize, batch: &[usize]) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    Err(Error::Numerical(format!(
        "{what} became {value} at epoch {epoch}, generator step {step}; offending batch (sample indices): {batch:?}"
    )))
}

/// Split sample indices into (train, validation) with a seeded shuffle.
pub fn split_indices(len: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let n_val = if len < 2 { 0 } else { ((len as f64 * fraction).round() as usize).min(len - 1) };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// PSNR of the clamped generator output over all points of `set`.
fn validation_psnr(gen: &Generator, params: &ParamStore<Scalar>, set: &[&Prepared], enhance: bool) -> Result<f64> {
    let _g = no_grad();
    let p = params.bind(false);
    let (mut se, mut count) = (0.0, 0usize);
    for s in set {
        let out = if enhance {
            gen.forward(&p, &s.ctx, &Var::constant(s.distorted.clone()))?.value().clone()
        } else {
            s.distorted.clone()
        };
        for (&o, &t) in out.data().iter().zip(s.original.data()) {
            let o = (o as f64 * 255.0).clamp(0.0, 255.0);
            se += (o - t as f64 * 255.0).powi(2);
            count += 1;
        }
    }
    Ok(psnr_from_mse(se / count as f64, 255.0))
}

/// Train one channel's generator against a critic.
pub fn train(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    gen_cfg: &GeneratorConfig,
    critic_cfg: &CriticConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    gen_cfg.validate()?;
    critic_cfg.validate()?;
    loss_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (generator, g_init) = Generator::init(gen_cfg, rng.gen())?;
    let (critic, c_init) = Critic::init(critic_cfg, rng.gen())?;
    let mut g_params = g_init.cast::<Scalar>();
    let mut c_params = c_init.cast::<Scalar>();
    let betas = (cfg.betas[0], cfg.betas[1]);
    let mut opt_g = Adam::new(&g_params, cfg.lr_generator, betas);
    let mut opt_d = Adam::new(&c_params, cfg.lr_discriminator, betas);

    let prepared = samples
        .iter()
        .map(|s| Prepared::new(s, gen_cfg.k, critic_cfg.k))
        .collect::<Result<Vec<_>>>()?;
    let (mut train_idx, val_idx) = split_indices(prepared.len(), cfg.validation_fraction, &mut rng);
    let val_set: Vec<&Prepared> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| &prepared[i]).collect()
    } else {
        val_idx.iter().map(|&i| &prepared[i]).collect()
    };
    let val_psnr_baseline = validation_psnr(&generator, &g_params, &val_set, false)?;
    info!(
        "training {} on {} patches ({} validation), baseline validation PSNR {:.3} dB",
        cfg.channel,
        train_idx.len(),
        val_idx.len(),
        val_psnr_baseline
    );

    let omega = loss_cfg.omega;
    let mut step = 0usize;
    let mut log = Vec::new();
    let budget = cfg.max_generator_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.epochs {
        if step >= budget {
            break;
        }
        train_idx.shuffle(&mut rng);
        let (mut sum_g, mut sum_d, mut sum_rmse, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in train_idx.chunks(cfg.batch_size) {
            if step >= budget {
                break;
            }
            let items: Vec<&Prepared> = batch.iter().map(|&i| &prepared[i]).collect();

            // Critic updates against the current generator output.
            let mut last_d = 0.0;
            for _ in 0..cfg.n_critic {
                let fakes: Vec<Tensor<Scalar>> = {
                    let _g = no_grad();
                    let gp = g_params.bind(false);
                    items
                        .iter()
                        .map(|s| Ok(generator.forward(&gp, &s.ctx, &Var::constant(s.distorted.clone()))?.value().clone()))
                        .collect::<Result<_>>()?
                };
                let reals: Vec<Tensor<Scalar>> = items.iter().map(|s| s.original.clone()).collect();
                let cp = c_params.bind(true);
                let mut real_scores = Vec::with_capacity(items.len());
                let mut fake_scores = Vec::with_capacity(items.len());
                for (s, f) in items.iter().zip(&fakes) {
                    real_scores.push(critic.forward(&cp, &s.graph, &Var::constant(s.original.clone()))?);
                    fake_scores.push(critic.forward(&cp, &s.graph, &Var::constant(f.clone()))?);
                }
                let u: Vec<f64> = (0..items.len()).map(|_| rng.gen()).collect();
                let gp = gradient_penalty(|b, x| critic.forward(&cp, &items[b].graph, x), &reals, &fakes, &u)?;
                let loss_d = discriminator_loss(&real_scores, &fake_scores, &gp, loss_cfg.beta);
                last_d = loss_d.item() as f64;
                check_finite("critic loss", last_d, epoch, step, batch)?;
                let wrt: Vec<&Var<Scalar>> = cp.vars().iter().collect();
                let grads = values(&grad(&loss_d, &wrt, false));
                opt_d.step(&mut c_params, &grads);
            }

            // Generator update with the critic frozen.
            let gp = g_params.bind(true);
            let cp = c_params.bind(false);
            let mut outs = Vec::with_capacity(items.len());
            let mut scores = Vec::with_capacity(items.len());
            for s in &items {
                let out = generator.forward(&gp, &s.ctx, &Var::constant(s.distorted.clone()))?;
                scores.push(critic.forward(&cp, &s.graph, &out)?);
                outs.push(out);
            }
            let enhanced = stack_columns(&outs);
            let originals: Vec<Var<Scalar>> = items.iter().map(|s| Var::constant(s.original.clone())).collect();
            let original = stack_columns(&originals);
            let loss_g = generator_loss(&enhanced, &original, &scores, omega)?;
            let rmse = crate::objectives::rmse_loss(&enhanced, &original)?.item() as f64 * 255.0;
            let lg = loss_g.item() as f64;
            check_finite("generator loss", lg, epoch, step, batch)?;
            let wrt: Vec<&Var<Scalar>> = gp.vars().iter().collect();
            let grads = values(&grad(&loss_g, &wrt, false));
            opt_g.step(&mut g_params, &grads);
            if !g_params.all_finite() {
                return Err(Error::Numerical(format!(
                    "generator parameters became non-finite at step {step}; batch {batch:?}, L_G = {lg}"
                )));
            }
            step += 1;
            debug!("step {step}: L_G {lg:.5} L_D {last_d:.5} RMSE {rmse:.4}");
            sum_g += lg;
            sum_d += last_d;
            sum_rmse += rmse;
            batches += 1;
        }
        if batches > 0 {
            let row = LogRow {
                step,
                loss_g: sum_g / batches as f64,
                loss_d: sum_d / batches as f64,
                rmse: sum_rmse / batches as f64,
                val_psnr: validation_psnr(&generator, &g_params, &val_set, true)?,
            };
            info!(
                "epoch {}: step {} L_G {:.5} L_D {:.5} RMSE {:.4} val PSNR {:.3} dB",
                epoch + 1,
                row.step,
                row.loss_g,
                row.loss_d,
                row.rmse,
                row.val_psnr
            );
            log.push(row);
        }
    }
    Ok(TrainOutcome {
        generator,
        generator_params: g_params,
        critic,
        critic_params: c_params,
        log,
        val_psnr_baseline,
        generator_steps: step,
    })
}

#[cfg(test)]
mod tests;
