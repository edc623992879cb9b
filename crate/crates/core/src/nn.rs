//! Parameter storage and the small layers every model component is built from.
//!
//! Parameters live outside any graph in a [`ParamSet`]. Each forward pass binds
//! them as leaves of a fresh [`Graph`] through a [`Ctx`], so one set of weights
//! can drive any number of independent passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a tensor in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named tensors in creation order. Creation order is the canonical order for
/// checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Freezes every parameter.
    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    /// Total scalar count, optionally restricted to trainable tensors.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.entries.iter().filter(|e| e.trainable || !trainable_only).map(|e| e.value.len()).sum()
    }

    /// Number of scalars whose names start with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
        }
    }
}

// ── Initialization ──────────────────────────────────────────────────────────

/// Seeded source of initial parameter values.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.rng.gen_range(-bound..=bound)))
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut self.rng)))
    }

    /// Identity (or truncated identity for non-square shapes) plus small noise.
    pub fn near_identity<T: Scalar>(&mut self, rows: usize, cols: usize, noise: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, noise).expect("finite std");
        Tensor::from_fn(&[rows, cols], |i| {
            let base = if i / cols == i % cols { 1.0 } else { 0.0 };
            T::from_f64(base + dist.sample(&mut self.rng))
        })
    }
}

// ── Binding ─────────────────────────────────────────────────────────────────

/// A forward pass in progress: the graph plus the leaves bound for every parameter.
pub struct Ctx<'g, T: Scalar> {
    pub graph: &'g mut Graph<T>,
    vars: Vec<Var>,
    probe: Option<Vec<Var>>,
}

impl<'g, T: Scalar> Ctx<'g, T> {
    /// Binds every parameter as a leaf. With `train` false no gradients are tracked.
    pub fn new(graph: &'g mut Graph<T>, params: &ParamSet<T>, train: bool) -> Self {
        let vars = params.entries.iter().map(|e| graph.leaf(e.value.clone(), train && e.trainable)).collect();
        Self { graph, vars, probe: None }
    }

    /// Like [`Ctx::new`], but the listed parameters are bound to existing vars
    /// (e.g. a gradient-checked input) instead of fresh leaves.
    pub fn with_overrides(graph: &'g mut Graph<T>, params: &ParamSet<T>, train: bool, overrides: &[(ParamId, Var)]) -> Self {
        let mut ctx = Self::new(graph, params, train);
        for &(id, var) in overrides {
            ctx.vars[id.0] = var;
        }
        ctx
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Starts recording every attention-weight matrix produced from now on.
    pub fn enable_probe(&mut self) {
        self.probe = Some(Vec::new());
    }

    pub fn probe_enabled(&self) -> bool {
        self.probe.is_some()
    }

    pub(crate) fn record_attention(&mut self, weights: Var) {
        if let Some(p) = &mut self.probe {
            p.push(weights);
        }
    }

    /// Attention weights recorded since [`Ctx::enable_probe`], one matrix per head per call.
    pub fn attention_maps(&self) -> Vec<&Tensor<T>> {
        self.probe.iter().flatten().map(|&v| self.graph.value(v)).collect()
    }

    /// Gradient of every parameter after `backward`; `None` for frozen ones.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .map(|&v| self.graph.requires_grad(v).then(|| self.graph.grad_tensor(v)))
            .collect()
    }
}

// ── Layers ──────────────────────────────────────────────────────────────────

/// Affine map `x·W + b` on row vectors; `W` is `[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = ps.add(format!("{name}.w"), init.uniform(&[d_in, d_out], bound), true);
        let b = ps.add(format!("{name}.b"), init.uniform(&[d_out], bound), true);
        Self { w, b: Some(b), d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = ctx.graph.matmul(x, ctx.p(self.w))?;
        match self.b {
            Some(b) => ctx.graph.add_row_bias(y, ctx.p(b)),
            None => Ok(y),
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[d], T::one()), true);
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[d]), true);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        ctx.graph.layer_norm(x, ctx.p(self.gamma), ctx.p(self.beta), LN_EPS)
    }

    /// Normalizes a `C×H×W` map across channels at every pixel.
    pub fn forward_channels<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        ctx.graph.layer_norm_channels(x, ctx.p(self.gamma), ctx.p(self.beta), LN_EPS)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        init: &mut Init,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Self {
        Self {
            fc1: Linear::new(ps, init, &format!("{name}.fc1"), d_in, hidden),
            fc2: Linear::new(ps, init, &format!("{name}.fc2"), hidden, d_out),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.graph.gelu(h);
        self.fc2.forward(ctx, h)
    }
}

/// Multi-head scaled dot-product attention with Q/K/V/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("channel width {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(ps, init, &format!("{name}.q"), dim, dim),
            k: Linear::new(ps, init, &format!("{name}.k"), dim, dim),
            v: Linear::new(ps, init, &format!("{name}.v"), dim, dim),
            o: Linear::new(ps, init, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        })
    }

    /// Attends from `query` (`Nq×C`) to `kv` (`Nk×C`); returns `Nq×C`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, query: Var, kv: Var) -> Result<Var> {
        let (qs, ks) = (ctx.graph.shape(query).to_vec(), ctx.graph.shape(kv).to_vec());
        if qs.len() != 2 || ks.len() != 2 || qs[1] != self.dim || ks[1] != self.dim {
            return Err(Error::dim("mha", format!("query {qs:?}, kv {ks:?}, width {}", self.dim)));
        }
        let q = self.q.forward(ctx, query)?;
        let k = self.k.forward(ctx, kv)?;
        let v = self.v.forward(ctx, kv)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let g = &mut *ctx.graph;
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores);
            let out = g.matmul(weights, vh)?;
            ctx.record_attention(weights);
            outs.push(out);
        }
        let joined = if outs.len() == 1 { outs[0] } else { ctx.graph.concat_cols(&outs)? };
        self.o.forward(ctx, joined)
    }
}
