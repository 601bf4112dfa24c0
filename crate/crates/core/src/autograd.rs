//! Tape-free reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every backward rule is itself written with differentiable [`Var`] operations,
//! so gradients can be differentiated again (`create_graph = true`). The
//! gradient penalty of the critic objective relies on this.
//!
//! Nodes only remember their parents while gradient recording is enabled and at
//! least one parent requires a gradient; inside [`no_grad`] every result is a
//! detached constant.

use std::cell::Cell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::tensor::{Real, Tensor};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous recording state when dropped.
pub struct NoGradGuard {
    previous: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.previous));
    }
}

/// Disable graph recording on this thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let previous = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { previous }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

enum Op<T: Real> {
    Leaf,
    MatMul { a: Var<T>, b: Var<T>, ta: bool, tb: bool },
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Scale(Var<T>, T),
    AddScalar(Var<T>),
    LeakyRelu(Var<T>, T),
    Exp(Var<T>),
    Recip(Var<T>),
    Sqrt(Var<T>),
    SumRows(Var<T>),
    BroadcastRows(Var<T>),
    SumCols(Var<T>),
    BroadcastCols(Var<T>),
    SumGroups(Var<T>, usize),
    RepeatGroups(Var<T>, usize),
    Gather(Var<T>, Rc<Vec<usize>>),
    ScatterAdd(Var<T>, Rc<Vec<usize>>),
    ConcatCols(Vec<Var<T>>),
    SliceCols(Var<T>, usize),
    PadCols(Var<T>, usize),
    Reshape(Var<T>),
    SumAll(Var<T>),
    Expand(Var<T>),
}

struct Node<T: Real> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// A tensor-valued node of a differentiable computation.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

impl<T: Real> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::ConcatCols(parts) => parts.iter().collect(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Recip(a)
            | Op::Sqrt(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::SumGroups(a, _)
            | Op::RepeatGroups(a, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _)
            | Op::SliceCols(a, _)
            | Op::PadCols(a, _)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::Expand(a) => vec![a],
        }
    }
}

impl<T: Real> Var<T> {
    fn make(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, op }))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad: false, op: Op::Leaf }))
    }

    /// A leaf whose gradient is tracked.
    pub fn param(value: Tensor<T>) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad: true, op: Op::Leaf }))
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.value.shape()
    }

    pub fn rows(&self) -> usize {
        self.0.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.value.cols()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    pub fn matmul_t(&self, other: &Self, ta: bool, tb: bool) -> Self {
        let value = self.value().matmul(other.value(), ta, tb);
        Self::make(value, Op::MatMul { a: self.clone(), b: other.clone(), ta, tb })
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(other, false, false)
    }

    pub fn add(&self, other: &Self) -> Self {
        let value = self.value().zip_map(other.value(), |a, b| a + b);
        Self::make(value, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let value = self.value().zip_map(other.value(), |a, b| a - b);
        Self::make(value, Op::Sub(self.clone(), other.clone()))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let value = self.value().zip_map(other.value(), |a, b| a * b);
        Self::make(value, Op::Mul(self.clone(), other.clone()))
    }

    pub fn scale(&self, s: T) -> Self {
        Self::make(self.value().map(|v| v * s), Op::Scale(self.clone(), s))
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, s: T) -> Self {
        Self::make(self.value().map(|v| v + s), Op::AddScalar(self.clone()))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        let value = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        Self::make(value, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn exp(&self) -> Self {
        Self::make(self.value().map(T::exp), Op::Exp(self.clone()))
    }

    /// Elementwise `1 / x`, defined as 0 where `x == 0`.
    pub fn recip(&self) -> Self {
        let value = self.value().map(|v| if v == T::zero() { T::zero() } else { v.recip() });
        Self::make(value, Op::Recip(self.clone()))
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&self) -> Self {
        Self::make(self.value().map(T::sqrt), Op::Sqrt(self.clone()))
    }

    /// `[R, C] -> [1, C]`, accumulated in `f64` so the result does not depend on row order.
    pub fn sum_rows(&self) -> Self {
        let (r, c) = self.shape();
        let mut acc = vec![0.0f64; c];
        for i in 0..r {
            for (o, &v) in acc.iter_mut().zip(self.value().row(i)) {
                *o += v.to_f64().unwrap_or(f64::NAN);
            }
        }
        let out = acc.into_iter().map(|v| T::from_f64(v).unwrap_or(T::nan())).collect();
        Self::make(Tensor::from_vec(1, c, out), Op::SumRows(self.clone()))
    }

    /// `[1, C] -> [rows, C]`
    pub fn broadcast_rows(&self, rows: usize) -> Self {
        assert_eq!(self.rows(), 1, "broadcast_rows expects a single row");
        let c = self.cols();
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(self.value().data());
        }
        Self::make(Tensor::from_vec(rows, c, data), Op::BroadcastRows(self.clone()))
    }

    /// `[R, C] -> [R, 1]`
    pub fn sum_cols(&self) -> Self {
        let r = self.rows();
        let data = (0..r).map(|i| self.value().row(i).iter().copied().sum()).collect();
        Self::make(Tensor::from_vec(r, 1, data), Op::SumCols(self.clone()))
    }

    /// `[R, 1] -> [R, cols]`
    pub fn broadcast_cols(&self, cols: usize) -> Self {
        assert_eq!(self.cols(), 1, "broadcast_cols expects a single column");
        let mut data = Vec::with_capacity(self.rows() * cols);
        for &v in self.value().data() {
            data.extend(std::iter::repeat_n(v, cols));
        }
        Self::make(Tensor::from_vec(self.rows(), cols, data), Op::BroadcastCols(self.clone()))
    }

    /// Sum consecutive blocks of `k` rows: `[n * k, C] -> [n, C]`.
    pub fn sum_groups(&self, k: usize) -> Self {
        let (r, c) = self.shape();
        assert!(k > 0 && r % k == 0, "sum_groups: {r} rows not divisible by {k}");
        let n = r / k;
        let src = self.value().data();
        let mut out = vec![T::zero(); n * c];
        for g in 0..n {
            let dst = &mut out[g * c..(g + 1) * c];
            for j in 0..k {
                let row = &src[(g * k + j) * c..(g * k + j + 1) * c];
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        Self::make(Tensor::from_vec(n, c, out), Op::SumGroups(self.clone(), k))
    }

    /// Repeat every row `k` times: `[n, C] -> [n * k, C]`.
    pub fn repeat_groups(&self, k: usize) -> Self {
        let (n, c) = self.shape();
        let mut data = Vec::with_capacity(n * k * c);
        for g in 0..n {
            let row = self.value().row(g);
            for _ in 0..k {
                data.extend_from_slice(row);
            }
        }
        Self::make(Tensor::from_vec(n * k, c, data), Op::RepeatGroups(self.clone(), k))
    }

    /// `out.flat[i] = self.flat[idx[i]]`, reshaped to `[rows, cols]`.
    pub fn gather(&self, idx: Rc<Vec<usize>>, rows: usize, cols: usize) -> Self {
        assert_eq!(idx.len(), rows * cols, "gather index length mismatch");
        let src = self.value().data();
        let data = idx.iter().map(|&i| src[i]).collect();
        Self::make(Tensor::from_vec(rows, cols, data), Op::Gather(self.clone(), idx))
    }

    /// `out = zeros(rows, cols); out.flat[idx[i]] += self.flat[i]`.
    pub fn scatter_add(&self, idx: Rc<Vec<usize>>, rows: usize, cols: usize) -> Self {
        assert_eq!(idx.len(), self.value().len(), "scatter index length mismatch");
        let mut data = vec![T::zero(); rows * cols];
        for (&i, &v) in idx.iter().zip(self.value().data()) {
            data[i] += v;
        }
        Self::make(Tensor::from_vec(rows, cols, data), Op::ScatterAdd(self.clone(), idx))
    }

    /// Select whole rows: `[R, C] -> [idx.len(), C]`.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let c = self.cols();
        let mut flat = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            flat.extend(r * c..(r + 1) * c);
        }
        self.gather(Rc::new(flat), rows.len(), c)
    }

    pub fn concat_cols(parts: &[Var<T>]) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let r = parts[0].rows();
        assert!(parts.iter().all(|p| p.rows() == r), "concat_cols row mismatch");
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.value().row(i));
            }
        }
        Self::make(Tensor::from_vec(r, total, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Self {
        let (r, c) = self.shape();
        assert!(start + width <= c, "slice_cols out of range");
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&self.value().row(i)[start..start + width]);
        }
        Self::make(Tensor::from_vec(r, width, data), Op::SliceCols(self.clone(), start))
    }

    /// Embed into `total` zero columns starting at `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Self {
        let (r, w) = self.shape();
        assert!(start + w <= total, "pad_cols out of range");
        let mut data = vec![T::zero(); r * total];
        for i in 0..r {
            data[i * total + start..i * total + start + w].copy_from_slice(self.value().row(i));
        }
        Self::make(Tensor::from_vec(r, total, data), Op::PadCols(self.clone(), start))
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Self {
        Self::make(self.value().reshape(rows, cols), Op::Reshape(self.clone()))
    }

    /// `[R, C] -> [1, 1]`
    pub fn sum(&self) -> Self {
        Self::make(Tensor::scalar(self.value().sum()), Op::SumAll(self.clone()))
    }

    pub fn mean(&self) -> Self {
        let n = T::from_usize(self.value().len()).expect("length fits");
        self.sum().scale(n.recip())
    }

    /// `[1, 1] -> [rows, cols]`
    pub fn expand(&self, rows: usize, cols: usize) -> Self {
        assert_eq!(self.shape(), (1, 1), "expand expects a scalar");
        Self::make(Tensor::full(rows, cols, self.item()), Op::Expand(self.clone()))
    }

    /// `x + bias` with `bias: [1, C]` broadcast over rows.
    pub fn add_row(&self, bias: &Self) -> Self {
        self.add(&bias.broadcast_rows(self.rows()))
    }

    /// Maximum over consecutive groups of `k` rows, per column: `[n * k, C] -> [n, C]`.
    /// Ties resolve to the first row of the group.
    pub fn max_groups(&self, k: usize) -> Self {
        let (r, c) = self.shape();
        assert!(k > 0 && r % k == 0, "max_groups: {r} rows not divisible by {k}");
        let n = r / k;
        let src = self.value().data();
        let mut idx = Vec::with_capacity(n * c);
        for g in 0..n {
            for col in 0..c {
                let mut best = g * k * c + col;
                for j in 1..k {
                    let cand = (g * k + j) * c + col;
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                idx.push(best);
            }
        }
        self.gather(Rc::new(idx), n, c)
    }

    /// Softmax over consecutive groups of `k` rows, independently per column.
    pub fn softmax_groups(&self, k: usize) -> Self {
        let (r, c) = self.shape();
        assert!(k > 0 && r % k == 0, "softmax_groups: {r} rows not divisible by {k}");
        let src = self.value().data();
        let mut shift = vec![T::zero(); r * c];
        for g in 0..r / k {
            for col in 0..c {
                let m = (0..k).map(|j| src[(g * k + j) * c + col]).fold(T::neg_infinity(), T::max);
                for j in 0..k {
                    shift[(g * k + j) * c + col] = m;
                }
            }
        }
        let e = self.sub(&Var::constant(Tensor::from_vec(r, c, shift))).exp();
        let denom = e.sum_groups(k).repeat_groups(k);
        e.mul(&denom.recip())
    }

    /// Row-wise softmax of a `[R, C]` matrix.
    pub fn softmax_rows(&self) -> Self {
        let (r, c) = self.shape();
        self.reshape(r * c, 1).softmax_groups(c).reshape(r, c)
    }
}

fn accumulate<T: Real>(grads: &mut HashMap<usize, Var<T>>, id: usize, g: Var<T>) {
    match grads.remove(&id) {
        Some(prev) => {
            grads.insert(id, prev.add(&g));
        }
        None => {
            grads.insert(id, g);
        }
    }
}

fn topo_order<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // (node, children expanded)
    let mut stack = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !v.requires_grad() || !visited.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in v.0.op.parents() {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

fn backward_rule<T: Real>(out: &Var<T>, g: &Var<T>, grads: &mut HashMap<usize, Var<T>>) {
    let push = |grads: &mut HashMap<usize, Var<T>>, v: &Var<T>, gv: Var<T>| {
        if v.requires_grad() {
            accumulate(grads, v.id(), gv);
        }
    };
    match &out.0.op {
        Op::Leaf => {}
        Op::MatMul { a, b, ta, tb } => {
            if a.requires_grad() {
                let ga = if *ta { b.matmul_t(g, *tb, true) } else { g.matmul_t(b, false, !*tb) };
                push(grads, a, ga);
            }
            if b.requires_grad() {
                let gb = if *tb { g.matmul_t(a, true, *ta) } else { a.matmul_t(g, !*ta, false) };
                push(grads, b, gb);
            }
        }
        Op::Add(a, b) => {
            push(grads, a, g.clone());
            push(grads, b, g.clone());
        }
        Op::Sub(a, b) => {
            push(grads, a, g.clone());
            if b.requires_grad() {
                push(grads, b, g.neg());
            }
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                push(grads, a, g.mul(b));
            }
            if b.requires_grad() {
                push(grads, b, g.mul(a));
            }
        }
        Op::Scale(a, s) => push(grads, a, g.scale(*s)),
        Op::AddScalar(a) => push(grads, a, g.clone()),
        Op::LeakyRelu(a, slope) => {
            let mask = a.value().map(|v| if v > T::zero() { T::one() } else { *slope });
            push(grads, a, g.mul(&Var::constant(mask)));
        }
        Op::Exp(a) => push(grads, a, g.mul(out)),
        Op::Recip(a) => push(grads, a, g.mul(&out.square()).neg()),
        Op::Sqrt(a) => {
            let half = T::from_f64_lossy(0.5);
            push(grads, a, g.mul(&out.recip()).scale(half));
        }
        Op::SumRows(a) => push(grads, a, g.broadcast_rows(a.rows())),
        Op::BroadcastRows(a) => push(grads, a, g.sum_rows()),
        Op::SumCols(a) => push(grads, a, g.broadcast_cols(a.cols())),
        Op::BroadcastCols(a) => push(grads, a, g.sum_cols()),
        Op::SumGroups(a, k) => push(grads, a, g.repeat_groups(*k)),
        Op::RepeatGroups(a, k) => push(grads, a, g.sum_groups(*k)),
        Op::Gather(a, idx) => {
            let (r, c) = a.shape();
            push(grads, a, g.scatter_add(Rc::clone(idx), r, c));
        }
        Op::ScatterAdd(a, idx) => {
            let (r, c) = a.shape();
            push(grads, a, g.gather(Rc::clone(idx), r, c));
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for p in parts {
                let w = p.cols();
                if p.requires_grad() {
                    push(grads, p, g.slice_cols(offset, w));
                }
                offset += w;
            }
        }
        Op::SliceCols(a, start) => push(grads, a, g.pad_cols(*start, a.cols())),
        Op::PadCols(a, start) => push(grads, a, g.slice_cols(*start, a.cols())),
        Op::Reshape(a) => push(grads, a, g.reshape(a.rows(), a.cols())),
        Op::SumAll(a) => push(grads, a, g.expand(a.rows(), a.cols())),
        Op::Expand(a) => push(grads, a, g.sum()),
    }
}

/// Gradients of `sum(output)` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are themselves differentiable.
/// Inputs that `output` does not depend on receive a zero gradient.
pub fn grad<T: Real>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    let _guard = if create_graph { None } else { Some(no_grad()) };
    let mut grads: HashMap<usize, Var<T>> = HashMap::new();
    if output.requires_grad() {
        let (r, c) = output.shape();
        grads.insert(output.id(), Var::constant(Tensor::full(r, c, T::one())));
        for node in topo_order(output).iter().rev() {
            if let Some(g) = grads.get(&node.id()).cloned() {
                backward_rule(node, &g, &mut grads);
                if !wrt.iter().any(|w| w.id() == node.id()) {
                    grads.remove(&node.id());
                }
            }
        }
    }
    wrt.iter()
        .map(|w| {
            grads.get(&w.id()).cloned().unwrap_or_else(|| {
                let (r, c) = w.shape();
                Var::constant(Tensor::zeros(r, c))
            })
        })
        .collect()
}
