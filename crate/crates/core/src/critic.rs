//! WGAN critic: scores how realistic one patch's attribute channel looks.
//!
//! Geometry only decides who is whose neighbour. The score is computed from
//! the attribute values through two edge-convolution stages, a self-attention
//! layer mixing all points, a global max-pool and an MLP. There is no batch
//! norm and no output squashing.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::generator::edge_features;
use crate::nn::{Bound, Builder, Linear, Mlp, ParamStore, LEAKY_SLOPE};
use crate::patch::{knn_self, Point3};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub k: usize,
    /// Output widths of the two edge-convolution stages.
    pub widths: [usize; 2],
    /// Query/key width of the self-attention layer.
    pub attention_dim: usize,
    /// Hidden widths of the scoring MLP.
    pub mlp_widths: [usize; 2],
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { k: 20, widths: [64, 128], attention_dim: 32, mlp_widths: [128, 64] }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("critic.k must be >= 1".into()));
        }
        if self.widths.contains(&0) || self.mlp_widths.contains(&0) || self.attention_dim == 0 {
            return Err(Error::Config("critic widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Neighbourhood graph of one patch as seen by the critic.
#[derive(Debug, Clone)]
pub struct CriticGraph {
    pub n: usize,
    pub k: usize,
    pub knn: Rc<Vec<usize>>,
}

impl CriticGraph {
    pub fn new(geometry: &[Point3], k: usize) -> Result<Self> {
        if k > geometry.len() {
            return Err(Error::Argument(format!("critic: k = {k} exceeds patch size {}", geometry.len())));
        }
        let rows = knn_self(geometry, k)?;
        Ok(Self { n: geometry.len(), k, knn: Rc::new(rows.into_iter().flatten().collect()) })
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    config: CriticConfig,
    stage1: Linear,
    stage2: Linear,
    query: Linear,
    key: Linear,
    value: Linear,
    gamma: usize,
    head: Mlp,
}

impl Critic {
    pub fn build(config: &CriticConfig, b: &mut Builder<'_>) -> Result<Self> {
        config.validate()?;
        let [w1, w2] = config.widths;
        b.scope("critic", |b| {
            Ok(Self {
                config: config.clone(),
                stage1: Linear::new(b, "stage1", 2, w1, false),
                stage2: Linear::new(b, "stage2", 2 * w1, w2, false),
                query: Linear::new(b, "query", w2, config.attention_dim, false),
                key: Linear::new(b, "key", w2, config.attention_dim, false),
                value: Linear::new(b, "value", w2, w2, false),
                gamma: b.constant("gamma", 1, 1, 0.0),
                head: Mlp::new(b, "head", &[w2, config.mlp_widths[0], config.mlp_widths[1], 1], false),
            })
        })
    }

    pub fn init(config: &CriticConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::build(config, &mut Builder::new(&mut store, &mut rng))?;
        Ok((net, store))
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    /// Score `[1, 1]` of normalised attributes `attr: [n, 1]`.
    pub fn forward<T: Real>(&self, p: &Bound<T>, graph: &CriticGraph, attr: &Var<T>) -> Result<Var<T>> {
        if attr.shape() != (graph.n, 1) {
            return Err(Error::Argument(format!("critic input shape {:?}, expected ({}, 1)", attr.shape(), graph.n)));
        }
        let (k, slope) = (graph.k, T::from_f64_lossy(LEAKY_SLOPE));
        let h = self.stage1.forward(p, &edge_features(attr, &graph.knn, k)).leaky_relu(slope).max_groups(k);
        let h = self.stage2.forward(p, &edge_features(&h, &graph.knn, k)).leaky_relu(slope).max_groups(k);

        let q = self.query.forward(p, &h);
        let kk = self.key.forward(p, &h);
        let scale = T::from_f64_lossy(1.0 / (self.config.attention_dim as f64).sqrt());
        let attn = q.matmul_t(&kk, false, true).scale(scale).softmax_rows();
        let mixed = attn.matmul(&self.value.forward(p, &h));
        let h = h.add(&mixed.mul(&p.get(self.gamma).expand(mixed.rows(), mixed.cols())));

        let pooled = h.max_groups(graph.n);
        Ok(self.head.forward(p, &pooled))
    }

    /// Convenience wrapper for a constant attribute vector.
    pub fn score<T: Real>(&self, p: &Bound<T>, graph: &CriticGraph, attr: &[f64]) -> Result<T> {
        Ok(self.forward(p, graph, &Var::constant(Tensor::from_f64(attr.len(), 1, attr)))?.item())
    }
}
