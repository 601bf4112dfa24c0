//! Building blocks of the generator. All of them work on one patch at a time.

use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Builder, Gcl, Linear, Mlp, LEAKY_SLOPE};
use crate::patch::{knn_self, Point3};
use crate::tensor::Real;

use super::context::{PatchContext, GSCE_INPUT_DIM};

/// Edge features `[f_i, f_j - f_i]` for every point `i` and each of its neighbours `j`.
///
/// `knn` holds `k` row indices per point. Output is `[n * k, 2L]`.
pub fn edge_features<T: Real>(features: &Var<T>, knn: &Rc<Vec<usize>>, k: usize) -> Var<T> {
    let center = features.repeat_groups(k);
    let neighbors = features.gather_rows(knn);
    let diff = neighbors.sub(&center);
    Var::concat_cols(&[center, diff])
}

/// Graph construction from geometry followed by [`edge_features`].
pub fn dgc<T: Real>(features: &Var<T>, geometry: &[Point3], k: usize) -> Result<Var<T>> {
    if features.rows() != geometry.len() {
        return Err(Error::Argument(format!("{} feature rows for {} points", features.rows(), geometry.len())));
    }
    if k > geometry.len() {
        return Err(Error::Argument(format!("k = {k} exceeds {} points", geometry.len())));
    }
    let rows = knn_self(geometry, k)?;
    let flat = Rc::new(rows.into_iter().flatten().collect());
    Ok(edge_features(features, &flat, k))
}

/// Softmax of `[n * k, 1]` logits within each point's `k` rows.
pub fn attention_weights<T: Real>(logits: &Var<T>, k: usize) -> Var<T> {
    logits.softmax_groups(k)
}

/// Attention-weighted sum of `values: [n * k, L]` over each group of `k`.
pub fn attend<T: Real>(logits: &Var<T>, values: &Var<T>, k: usize) -> Var<T> {
    let w = attention_weights(logits, k).broadcast_cols(values.cols());
    w.mul(values).sum_groups(k)
}

/// Multi-head graph self-attention: `[n * k, in] -> [n, 2 * width]`.
#[derive(Debug, Clone)]
pub struct Mgsa {
    heads: usize,
    width: usize,
    qk_hidden: usize,
    query: Gcl,
    key: Gcl,
    query_out: Vec<Linear>,
    key_out: Vec<Linear>,
    value: Gcl,
    combine: Gcl,
}

impl Mgsa {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, width: usize, heads: usize, qk_hidden: usize, bn: bool) -> Self {
        b.scope(name, |b| {
            // One wide first layer per role; column blocks belong to separate heads.
            let query = Gcl::new(b, "query", in_dim, heads * qk_hidden, bn);
            let key = Gcl::new(b, "key", in_dim, heads * qk_hidden, bn);
            let query_out = (0..heads).map(|h| Linear::new(b, &format!("query_out{h}"), qk_hidden, 1, false)).collect();
            let key_out = (0..heads).map(|h| Linear::new(b, &format!("key_out{h}"), qk_hidden, 1, false)).collect();
            let value = Gcl::new(b, "value", in_dim, heads * width, bn);
            let combine = Gcl::new(b, "combine", heads * width, 2 * width, bn);
            Self { heads, width, qk_hidden, query, key, query_out, key_out, value, combine }
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.width
    }

    /// Per-head attention logits `[n * k, 1]`, before the softmax.
    pub fn logits<T: Real>(&self, p: &Bound<T>, edges: &Var<T>) -> Vec<Var<T>> {
        let q = self.query.forward(p, edges);
        let kk = self.key.forward(p, edges);
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        (0..self.heads)
            .map(|h| {
                let qh = self.query_out[h].forward(p, &q.slice_cols(h * self.qk_hidden, self.qk_hidden));
                let kh = self.key_out[h].forward(p, &kk.slice_cols(h * self.qk_hidden, self.qk_hidden));
                qh.add(&kh).leaky_relu(slope)
            })
            .collect()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, edges: &Var<T>, k: usize) -> Var<T> {
        let v = self.value.forward(p, edges);
        let heads: Vec<Var<T>> = self
            .logits(p, edges)
            .iter()
            .enumerate()
            .map(|(h, logit)| attend(logit, &v.slice_cols(h * self.width, self.width), k))
            .collect();
        self.combine.forward(p, &Var::concat_cols(&heads))
    }
}

/// Two cascaded graph-attention stages whose outputs are concatenated: `[n, 1] -> [n, 4 * width]`.
#[derive(Debug, Clone)]
pub struct Scfe {
    first: Mgsa,
    second: Mgsa,
}

impl Scfe {
    pub fn new(b: &mut Builder<'_>, in_dim: usize, width: usize, heads: usize, qk_hidden: usize, bn: bool) -> Self {
        b.scope("scfe", |b| {
            let first = Mgsa::new(b, "dga1", 2 * in_dim, width, heads, qk_hidden, bn);
            let second = Mgsa::new(b, "dga2", 2 * first.out_dim(), width, heads, qk_hidden, bn);
            Self { first, second }
        })
    }

    pub fn out_dim(&self) -> usize {
        self.first.out_dim() + self.second.out_dim()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, ctx: &PatchContext<T>, x: &Var<T>) -> Var<T> {
        let f1 = self.first.forward(p, &edge_features(x, &ctx.knn, ctx.k), ctx.k);
        let f2 = self.second.forward(p, &edge_features(&f1, &ctx.knn, ctx.k), ctx.k);
        Var::concat_cols(&[f1, f2])
    }
}

/// Feature refinement: append normals, mix in inverse-distance-weighted
/// neighbour features, project back to the input width.
#[derive(Debug, Clone)]
pub struct Fr {
    dim: usize,
    out: Gcl,
}

impl Fr {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize, bn: bool) -> Self {
        b.scope(name, |b| Self { dim, out: Gcl::new(b, "out", 2 * (dim + 3), dim, bn) })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, ctx: &PatchContext<T>, h: &Var<T>) -> Var<T> {
        debug_assert_eq!(h.cols(), self.dim);
        let hn = Var::concat_cols(&[h.clone(), ctx.normals.clone()]);
        let w = ctx.fr_weights.broadcast_cols(hn.cols());
        let agg = hn.gather_rows(&ctx.fr_knn).mul(&w).sum_groups(ctx.fr_k);
        self.out.forward(p, &Var::concat_cols(&[hn, agg]))
    }
}

/// Graph residual block: `[n * k, in] -> [n, out]`.
#[derive(Debug, Clone)]
pub struct Grb {
    inner: [Gcl; 3],
    outer: [Gcl; 2],
}

impl Grb {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, hidden: usize, out_dim: usize, bn: bool) -> Self {
        b.scope(name, |b| Self {
            inner: [
                Gcl::new(b, "inner0", in_dim, hidden, bn),
                Gcl::new(b, "inner1", hidden, hidden, bn),
                Gcl::new(b, "inner2", hidden, in_dim, bn),
            ],
            outer: [Gcl::new(b, "outer0", in_dim, out_dim, bn), Gcl::new(b, "outer1", out_dim, out_dim, bn)],
        })
    }

    pub fn out_dim(&self) -> usize {
        self.outer[1].out_dim()
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, edges: &Var<T>, k: usize) -> Var<T> {
        let mut h = edges.clone();
        for layer in &self.inner {
            h = layer.forward(p, &h);
        }
        let mut h = h.add(edges);
        for layer in &self.outer {
            h = layer.forward(p, &h);
        }
        h.max_groups(k)
    }
}

/// Geometry-guided neighbour correction over the expanded neighbourhood:
///
/// `F_i + sum_k (phi(F_i) + delta(F_ik) + alpha(pos_ik)) * (eps(F_ik) + alpha(pos_ik))`
///
/// With `softmax` set, the first factor is normalised over the `k` neighbours.
#[derive(Debug, Clone)]
pub struct Gfp {
    phi: Mlp,
    delta: Mlp,
    eps: Mlp,
    alpha: Mlp,
    softmax: bool,
}

impl Gfp {
    pub fn new(b: &mut Builder<'_>, dim: usize, softmax: bool, zero_init: bool) -> Self {
        b.scope("gfp", |b| Self {
            phi: Mlp::new(b, "phi", &[dim, dim, dim], zero_init),
            delta: Mlp::new(b, "delta", &[dim, dim, dim], zero_init),
            eps: Mlp::new(b, "eps", &[dim, dim, dim], zero_init),
            alpha: Mlp::new(b, "alpha", &[GSCE_INPUT_DIM, dim, dim, dim], zero_init),
            softmax,
        })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, ctx: &PatchContext<T>, f: &Var<T>) -> Result<Var<T>> {
        let raw = ctx.gsce.as_ref().ok_or_else(|| Error::State("grouped patch missing for the GFP block".into()))?;
        let k = ctx.k;
        let pos = self.alpha.forward(p, raw);
        let f_ik = f.gather_rows(&ctx.knn);
        let lhs = self.phi.forward(p, f).repeat_groups(k).add(&self.delta.forward(p, &f_ik)).add(&pos);
        let rhs = self.eps.forward(p, &f_ik).add(&pos);
        let lhs = if self.softmax { lhs.softmax_groups(k) } else { lhs };
        Ok(f.add(&lhs.mul(&rhs).sum_groups(k)))
    }
}

/// Feature squeeze: two graph-convolution layers and a final linear map to one value per point.
#[derive(Debug, Clone)]
pub struct Fs {
    hidden: [Gcl; 2],
    last: Linear,
}

impl Fs {
    pub fn new(b: &mut Builder<'_>, in_dim: usize, widths: [usize; 2], zero_init: bool, bn: bool) -> Self {
        b.scope("fs", |b| Self {
            hidden: [Gcl::new(b, "0", in_dim, widths[0], bn), Gcl::new(b, "1", widths[0], widths[1], bn)],
            last: Linear::new(b, "2", widths[1], 1, zero_init),
        })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, h: &Var<T>) -> Var<T> {
        let h = self.hidden[1].forward(p, &self.hidden[0].forward(p, h));
        self.last.forward(p, &h)
    }
}
