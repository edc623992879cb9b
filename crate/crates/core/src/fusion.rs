//! Token aggregators and the pooled classification head.
//!
//! All attention blocks are post-norm: `x ← LN(x + sublayer(x))`. No
//! positional encodings are added here, so every aggregator is equivariant
//! under token permutations within a stream and the pooled head is invariant.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamSet};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    Co,
    Merged,
    Cross,
    NaiveMlp,
    VisionSelf,
    VisionNone,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 6] = [
        AggregatorKind::VisionNone,
        AggregatorKind::VisionSelf,
        AggregatorKind::NaiveMlp,
        AggregatorKind::Merged,
        AggregatorKind::Cross,
        AggregatorKind::Co,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Co => "co",
            AggregatorKind::Merged => "merged",
            AggregatorKind::Cross => "cross",
            AggregatorKind::NaiveMlp => "naive_mlp",
            AggregatorKind::VisionSelf => "vision_self",
            AggregatorKind::VisionNone => "vision_none",
        }
    }

    /// Whether the text stream participates at all.
    pub fn uses_text(self) -> bool {
        !matches!(self, AggregatorKind::VisionSelf | AggregatorKind::VisionNone)
    }

    pub fn default_depth(self) -> usize {
        match self {
            AggregatorKind::Co | AggregatorKind::Cross => 3,
            AggregatorKind::Merged | AggregatorKind::VisionSelf => 4,
            AggregatorKind::NaiveMlp | AggregatorKind::VisionNone => 0,
        }
    }

    pub fn default_heads(self) -> usize {
        match self {
            AggregatorKind::VisionSelf => 8,
            _ => 4,
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown aggregator `{s}` (expected one of co, merged, cross, naive_mlp, vision_self, vision_none)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pooling {
    Max,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::Config(format!("unknown pooling `{s}` (max, mean)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub depth: usize,
    pub heads: usize,
    pub pooling: Pooling,
}

impl AggregatorConfig {
    pub fn for_kind(kind: AggregatorKind) -> Self {
        Self { kind, depth: kind.default_depth(), heads: kind.default_heads(), pooling: Pooling::Max }
    }
}

// ── Blocks ──────────────────────────────────────────────────────────────────

/// Self-attention then MLP, each followed by residual add and layer norm.
#[derive(Clone, Debug)]
pub struct SelfBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub mlp: Mlp,
    pub ln2: LayerNorm,
}

impl SelfBlock {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, c: usize, h: usize) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(ps, init, &format!("{name}.attn"), c, h)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), c),
            mlp: Mlp::new(ps, init, &format!("{name}.mlp"), c, 4 * c, c),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), c),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let a = self.attn.forward(ctx, x, x)?;
        let x = residual_norm(ctx, &self.ln1, x, a)?;
        let m = self.mlp.forward(ctx, x)?;
        residual_norm(ctx, &self.ln2, x, m)
    }
}

/// Cross-attention to another stream then MLP (no self-attention).
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub mlp: Mlp,
    pub ln2: LayerNorm,
}

impl CrossBlock {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, c: usize, h: usize) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(ps, init, &format!("{name}.attn"), c, h)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), c),
            mlp: Mlp::new(ps, init, &format!("{name}.mlp"), c, 4 * c, c),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), c),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, other: Var) -> Result<Var> {
        let a = self.attn.forward(ctx, x, other)?;
        let x = residual_norm(ctx, &self.ln1, x, a)?;
        let m = self.mlp.forward(ctx, x)?;
        residual_norm(ctx, &self.ln2, x, m)
    }
}

/// One stream of a co-attention block.
#[derive(Clone, Debug)]
pub struct CoStream {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
    pub ln3: LayerNorm,
}

impl CoStream {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, c: usize, h: usize) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(ps, init, &format!("{name}.self_attn"), c, h)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), c),
            cross_attn: MultiHeadAttention::new(ps, init, &format!("{name}.cross_attn"), c, h)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), c),
            mlp: Mlp::new(ps, init, &format!("{name}.mlp"), c, 4 * c, c),
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), c),
        })
    }
}

/// Two intertwined streams: each self-attends, then cross-attends to the
/// other's post-self-attention state, then runs its MLP.
#[derive(Clone, Debug)]
pub struct CoBlock {
    pub vision: CoStream,
    pub text: CoStream,
}

impl CoBlock {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, c: usize, h: usize) -> Result<Self> {
        Ok(Self {
            vision: CoStream::new(ps, init, &format!("{name}.vision"), c, h)?,
            text: CoStream::new(ps, init, &format!("{name}.text"), c, h)?,
        })
    }

    /// Both streams share one parameter set.
    pub fn new_tied<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, name: &str, c: usize, h: usize) -> Result<Self> {
        let stream = CoStream::new(ps, init, &format!("{name}.tied"), c, h)?;
        Ok(Self { vision: stream.clone(), text: stream })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, v: Var, t: Var) -> Result<(Var, Var)> {
        if ctx.graph.shape(v) != ctx.graph.shape(t) {
            return Err(Error::dim(
                "co_attention_block",
                format!("streams {:?} vs {:?}", ctx.graph.shape(v), ctx.graph.shape(t)),
            ));
        }
        let (sv, st) = (&self.vision, &self.text);
        let a = sv.self_attn.forward(ctx, v, v)?;
        let v1 = residual_norm(ctx, &sv.ln1, v, a)?;
        let a = st.self_attn.forward(ctx, t, t)?;
        let t1 = residual_norm(ctx, &st.ln1, t, a)?;

        let a = sv.cross_attn.forward(ctx, v1, t1)?;
        let v2 = residual_norm(ctx, &sv.ln2, v1, a)?;
        let a = st.cross_attn.forward(ctx, t1, v1)?;
        let t2 = residual_norm(ctx, &st.ln2, t1, a)?;

        let m = sv.mlp.forward(ctx, v2)?;
        let v3 = residual_norm(ctx, &sv.ln3, v2, m)?;
        let m = st.mlp.forward(ctx, t2)?;
        let t3 = residual_norm(ctx, &st.ln3, t2, m)?;
        Ok((v3, t3))
    }
}

fn residual_norm<T: Scalar>(ctx: &mut Ctx<'_, T>, ln: &LayerNorm, x: Var, update: Var) -> Result<Var> {
    let s = ctx.graph.add(x, update)?;
    ln.forward(ctx, s)
}

// ── Aggregators ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
enum Blocks {
    Co(Vec<CoBlock>),
    Merged(Vec<SelfBlock>),
    Cross(Vec<(CrossBlock, CrossBlock)>),
    VisionSelf(Vec<SelfBlock>),
    Bypass,
    Identity,
}

/// Output of an aggregator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregated {
    /// Token-level visual and text streams.
    Streams { vision: Var, text: Var },
    /// Visual tokens only.
    Vision(Var),
    /// Untouched token sets for the attention-free MLP baseline; only pooled use is valid.
    Bypass { vision: Var, text: Var },
}

impl Aggregated {
    /// Token-level outputs of a two-stream aggregator.
    pub fn token_streams(&self) -> Result<(Var, Var)> {
        match *self {
            Aggregated::Streams { vision, text } => Ok((vision, text)),
            Aggregated::Vision(_) => Err(Error::Contract("vision-only aggregator has no text stream".into())),
            Aggregated::Bypass { .. } => {
                Err(Error::Contract("naive_mlp bypasses attention and has no token-level output".into()))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Aggregator {
    pub cfg: AggregatorConfig,
    blocks: Blocks,
}

impl Aggregator {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, cfg: AggregatorConfig, c: usize) -> Result<Self> {
        let (k, h) = (cfg.depth, cfg.heads);
        let blocks = match cfg.kind {
            AggregatorKind::Co => {
                Blocks::Co((0..k).map(|i| CoBlock::new(ps, init, &format!("agg.block{i}"), c, h)).collect::<Result<_>>()?)
            }
            AggregatorKind::Merged => Blocks::Merged(
                (0..k).map(|i| SelfBlock::new(ps, init, &format!("agg.block{i}"), c, h)).collect::<Result<_>>()?,
            ),
            AggregatorKind::VisionSelf => Blocks::VisionSelf(
                (0..k).map(|i| SelfBlock::new(ps, init, &format!("agg.block{i}"), c, h)).collect::<Result<_>>()?,
            ),
            AggregatorKind::Cross => Blocks::Cross(
                (0..k)
                    .map(|i| {
                        Ok((
                            CrossBlock::new(ps, init, &format!("agg.block{i}.vision"), c, h)?,
                            CrossBlock::new(ps, init, &format!("agg.block{i}.text"), c, h)?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            ),
            AggregatorKind::NaiveMlp => Blocks::Bypass,
            AggregatorKind::VisionNone => Blocks::Identity,
        };
        Ok(Self { cfg, blocks })
    }

    /// Joint `2N×C` token set of the merged aggregator, before splitting.
    pub fn merged_tokens<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, v: Var, t: Var) -> Result<Var> {
        let Blocks::Merged(blocks) = &self.blocks else {
            return Err(Error::Contract(format!("merged_tokens called on a {} aggregator", self.cfg.kind)));
        };
        let mut x = ctx.graph.concat_rows(&[v, t])?;
        for b in blocks {
            x = b.forward(ctx, x)?;
        }
        Ok(x)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, v: Var, t: Option<Var>) -> Result<Aggregated> {
        let need_text = || {
            t.ok_or_else(|| Error::Contract(format!("{} aggregator needs text tokens", self.cfg.kind)))
        };
        match &self.blocks {
            Blocks::Co(blocks) => {
                let (mut v, mut t) = (v, need_text()?);
                for b in blocks {
                    (v, t) = b.forward(ctx, v, t)?;
                }
                Ok(Aggregated::Streams { vision: v, text: t })
            }
            Blocks::Merged(_) => {
                let t = need_text()?;
                let nv = ctx.graph.shape(v)[0];
                let nt = ctx.graph.shape(t)[0];
                let x = self.merged_tokens(ctx, v, t)?;
                let vision = ctx.graph.slice_rows(x, 0, nv)?;
                let text = ctx.graph.slice_rows(x, nv, nt)?;
                Ok(Aggregated::Streams { vision, text })
            }
            Blocks::Cross(blocks) => {
                let (mut v, mut t) = (v, need_text()?);
                for (bv, bt) in blocks {
                    let nv = bv.forward(ctx, v, t)?;
                    let nt = bt.forward(ctx, t, v)?;
                    (v, t) = (nv, nt);
                }
                Ok(Aggregated::Streams { vision: v, text: t })
            }
            Blocks::VisionSelf(blocks) => {
                let mut v = v;
                for b in blocks {
                    v = b.forward(ctx, v)?;
                }
                Ok(Aggregated::Vision(v))
            }
            Blocks::Bypass => Ok(Aggregated::Bypass { vision: v, text: need_text()? }),
            Blocks::Identity => Ok(Aggregated::Vision(v)),
        }
    }
}

// ── Classifier ──────────────────────────────────────────────────────────────

/// Pools each stream, concatenates, and runs `in → hidden → out → 1` with GELUs.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub out: Linear,
    pub pooling: Pooling,
    pub in_width: usize,
}

impl ClassifierHead {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        init: &mut Init,
        in_width: usize,
        hidden: usize,
        out: usize,
        pooling: Pooling,
    ) -> Self {
        Self {
            fc1: Linear::new(ps, init, "head.fc1", in_width, hidden),
            fc2: Linear::new(ps, init, "head.fc2", hidden, out),
            out: Linear::new(ps, init, "head.out", out, 1),
            pooling,
            in_width,
        }
    }

    fn pool<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self.pooling {
            Pooling::Max => ctx.graph.max_pool_tokens(x),
            Pooling::Mean => ctx.graph.mean_rows(x),
        }
    }

    /// Pooled, concatenated feature vector `[in_width]` of one sample.
    pub fn pooled<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, agg: &Aggregated) -> Result<Var> {
        let v = match *agg {
            Aggregated::Streams { vision, text } | Aggregated::Bypass { vision, text } => {
                let pv = self.pool(ctx, vision)?;
                let pt = self.pool(ctx, text)?;
                ctx.graph.concat_cols(&[pv, pt])?
            }
            Aggregated::Vision(vision) => self.pool(ctx, vision)?,
        };
        let width = ctx.graph.shape(v)[0];
        if width != self.in_width {
            return Err(Error::dim("classify", format!("pooled width {width}, head expects {}", self.in_width)));
        }
        Ok(v)
    }

    /// MLP on stacked pooled vectors `B×in`; returns logits `[B]`.
    pub fn logits_from_pooled<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, pooled: &[Var]) -> Result<Var> {
        let x = ctx.graph.concat_rows(pooled)?;
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.graph.gelu(h);
        let h = self.fc2.forward(ctx, h)?;
        let h = ctx.graph.gelu(h);
        let z = self.out.forward(ctx, h)?;
        ctx.graph.reshape(z, &[pooled.len()])
    }

    /// Logits `[B]` for a batch of aggregator outputs.
    pub fn classify<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, items: &[Aggregated]) -> Result<Var> {
        let pooled = items.iter().map(|a| self.pooled(ctx, a)).collect::<Result<Vec<_>>>()?;
        self.logits_from_pooled(ctx, &pooled)
    }
}

#[cfg(test)]
mod tests;
