//! Per-channel attribute enhancement network.
//!
//! One patch goes through
//! `SCFE -> FR -> GRB` (local features) then `GFP -> FR -> GRB` (grouped,
//! geometry-guided correction) and finally `FS`, which squeezes the features
//! to one value per point. Attributes enter the network divided by 255; with
//! `residual_output` the squeezed value is added to that input.

mod blocks;
mod context;

pub use blocks::{attend, attention_weights, dgc, edge_features, Fr, Fs, Gfp, Grb, Mgsa, Scfe};
pub use context::{
    estimate_normals, gsce_input, inverse_distance_weights, normalize_geometry, plane_normal, PatchContext,
    GSCE_INPUT_DIM,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Builder, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Neighbours per point in every graph.
    pub k: usize,
    /// Per-head value width of each attention stage; a stage outputs twice this.
    pub attention_width: usize,
    pub heads: usize,
    /// Hidden width of the query and key squeezes.
    pub qk_hidden: usize,
    /// Width of the features entering and leaving the GFP block.
    pub feature_width: usize,
    pub grb_hidden: usize,
    pub fs_widths: [usize; 2],
    pub residual_output: bool,
    pub batch_norm: bool,
    pub zero_init_fs: bool,
    pub zero_init_gfp: bool,
    pub gfp_softmax: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            k: 20,
            attention_width: 64,
            heads: 4,
            qk_hidden: 16,
            feature_width: 128,
            grb_hidden: 128,
            fs_widths: [128, 64],
            residual_output: true,
            batch_norm: true,
            zero_init_fs: true,
            zero_init_gfp: false,
            gfp_softmax: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("generator.k must be >= 2 (got {})", self.k)));
        }
        let widths = [
            ("attention_width", self.attention_width),
            ("heads", self.heads),
            ("qk_hidden", self.qk_hidden),
            ("feature_width", self.feature_width),
            ("grb_hidden", self.grb_hidden),
            ("fs_widths[0]", self.fs_widths[0]),
            ("fs_widths[1]", self.fs_widths[1]),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("generator.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    scfe: Scfe,
    fr1: Fr,
    grb1: Grb,
    gfp: Gfp,
    fr2: Fr,
    grb2: Grb,
    fs: Fs,
}

impl Generator {
    /// Lay out the parameters of `config` in the builder's store.
    pub fn build(config: &GeneratorConfig, b: &mut Builder<'_>) -> Result<Self> {
        config.validate()?;
        let c = config;
        let bn = c.batch_norm;
        let scfe = Scfe::new(b, 1, c.attention_width, c.heads, c.qk_hidden, bn);
        let local = scfe.out_dim();
        let fr1 = Fr::new(b, "fr1", local, bn);
        let grb1 = Grb::new(b, "grb1", 2 * local, c.grb_hidden, c.feature_width, bn);
        let gfp = Gfp::new(b, c.feature_width, c.gfp_softmax, c.zero_init_gfp);
        let fr2 = Fr::new(b, "fr2", c.feature_width, bn);
        let grb2 = Grb::new(b, "grb2", 2 * c.feature_width, c.grb_hidden, c.feature_width, bn);
        let fs = Fs::new(b, grb2.out_dim(), c.fs_widths, c.zero_init_fs, bn);
        Ok(Self { config: config.clone(), scfe, fr1, grb1, gfp, fr2, grb2, fs })
    }

    /// Network plus freshly initialised parameters.
    pub fn init(config: &GeneratorConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::build(config, &mut Builder::new(&mut store, &mut rng))?;
        Ok((net, store))
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// FS output `[n, 1]` for normalised attributes `attr: [n, 1]`.
    pub fn forward_delta<T: Real>(&self, p: &Bound<T>, ctx: &PatchContext<T>, attr: &Var<T>) -> Result<Var<T>> {
        if attr.shape() != (ctx.n, 1) {
            return Err(Error::Argument(format!("attribute shape {:?}, expected ({}, 1)", attr.shape(), ctx.n)));
        }
        if ctx.k != self.config.k {
            return Err(Error::Argument(format!("patch context built with k = {}, model uses {}", ctx.k, self.config.k)));
        }
        let k = ctx.k;
        let h = self.scfe.forward(p, ctx, attr);
        let h = self.fr1.forward(p, ctx, &h);
        let h = self.grb1.forward(p, &edge_features(&h, &ctx.knn, k), k);
        let h = self.gfp.forward(p, ctx, &h)?;
        let h = self.fr2.forward(p, ctx, &h);
        let h = self.grb2.forward(p, &edge_features(&h, &ctx.knn, k), k);
        Ok(self.fs.forward(p, &h))
    }

    /// Enhanced normalised attributes `[n, 1]`, unclamped.
    pub fn forward<T: Real>(&self, p: &Bound<T>, ctx: &PatchContext<T>, attr: &Var<T>) -> Result<Var<T>> {
        let delta = self.forward_delta(p, ctx, attr)?;
        Ok(if self.config.residual_output { attr.add(&delta) } else { delta })
    }
}
