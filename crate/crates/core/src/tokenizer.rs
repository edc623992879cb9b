//! Maps both modalities onto `N` tokens of width `C`.
//!
//! Visual tokens come from the flattened feature map through a trainable
//! token-axis projection (shared across channels), or, for the ablation
//! variants, from the globally pooled feature vector through a linear layer or
//! a small MLP. Text tokens are first projected to width `C`, then pooled down
//! or linearly projected up to `N` rows.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, Linear, Mlp, ParamId, ParamSet};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenizerVariant {
    FeatureMap,
    EmbeddingLinear,
    EmbeddingMlp,
}

impl TokenizerVariant {
    pub const ALL: [TokenizerVariant; 3] =
        [TokenizerVariant::FeatureMap, TokenizerVariant::EmbeddingLinear, TokenizerVariant::EmbeddingMlp];

    pub fn name(self) -> &'static str {
        match self {
            TokenizerVariant::FeatureMap => "feature_map",
            TokenizerVariant::EmbeddingLinear => "embedding_linear",
            TokenizerVariant::EmbeddingMlp => "embedding_mlp",
        }
    }
}

impl fmt::Display for TokenizerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenizerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tokenizer variant `{s}` (feature_map, embedding_linear, embedding_mlp)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerConfig {
    pub n_tokens: usize,
    pub channels: usize,
    pub variant: TokenizerVariant,
    /// Hidden width of the `embedding_mlp` variant.
    pub mlp_hidden: usize,
}

#[derive(Clone, Debug)]
enum VisualKind {
    FeatureMap { proj: ParamId, spatial: usize },
    EmbeddingLinear(Linear),
    EmbeddingMlp(Mlp),
}

#[derive(Clone, Debug)]
pub struct VisualTokenizer {
    kind: VisualKind,
    pub n_tokens: usize,
    pub channels: usize,
}

impl VisualTokenizer {
    /// `spatial` is `H'·W'` of the feature maps this tokenizer will see.
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, cfg: &TokenizerConfig, spatial: usize) -> Result<Self> {
        let (n, c) = (cfg.n_tokens, cfg.channels);
        if n == 0 || c == 0 || spatial == 0 {
            return Err(Error::Config(format!("tokenizer needs N, C, H'·W' ≥ 1 (got {n}, {c}, {spatial})")));
        }
        let kind = match cfg.variant {
            TokenizerVariant::FeatureMap => {
                let w = if spatial == n {
                    init.near_identity(n, n, 0.01)
                } else {
                    init.uniform(&[n, spatial], 1.0 / (spatial as f64).sqrt())
                };
                VisualKind::FeatureMap { proj: ps.add("tokenizer.visual.proj", w, true), spatial }
            }
            TokenizerVariant::EmbeddingLinear => {
                VisualKind::EmbeddingLinear(Linear::new(ps, init, "tokenizer.visual.linear", c, n * c))
            }
            TokenizerVariant::EmbeddingMlp => {
                VisualKind::EmbeddingMlp(Mlp::new(ps, init, "tokenizer.visual.mlp", c, cfg.mlp_hidden, n * c))
            }
        };
        Ok(Self { kind, n_tokens: n, channels: c })
    }

    pub fn variant(&self) -> TokenizerVariant {
        match self.kind {
            VisualKind::FeatureMap { .. } => TokenizerVariant::FeatureMap,
            VisualKind::EmbeddingLinear(_) => TokenizerVariant::EmbeddingLinear,
            VisualKind::EmbeddingMlp(_) => TokenizerVariant::EmbeddingMlp,
        }
    }

    /// Tokenizes a `C×H'×W'` feature map with whichever variant this tokenizer was built as.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fmap: Var) -> Result<Var> {
        match self.kind {
            VisualKind::FeatureMap { .. } => self.feature_map_tokens(ctx, fmap),
            _ => {
                let flat = self.flatten(ctx, fmap)?;
                let e = ctx.graph.mean_rows(flat)?;
                self.embedding_tokens(ctx, e)
            }
        }
    }

    // C×H'×W' → (H'·W')×C
    fn flatten<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fmap: Var) -> Result<Var> {
        let shape = ctx.graph.shape(fmap).to_vec();
        match shape[..] {
            [c, h, w] if c == self.channels => {
                let m = ctx.graph.reshape(fmap, &[c, h * w])?;
                ctx.graph.transpose(m)
            }
            _ => Err(Error::dim("visual_tokens", format!("expected {}×H×W, got {shape:?}", self.channels))),
        }
    }

    /// Token-axis projection of the flattened feature map; `feature_map` variant only.
    pub fn feature_map_tokens<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fmap: Var) -> Result<Var> {
        let VisualKind::FeatureMap { proj, spatial } = self.kind else {
            return Err(Error::Contract(format!("visual_tokens called on a {} tokenizer", self.variant())));
        };
        let flat = self.flatten(ctx, fmap)?;
        let rows = ctx.graph.shape(flat)[0];
        if rows != spatial {
            return Err(Error::dim("visual_tokens", format!("tokenizer built for {spatial} positions, got {rows}")));
        }
        ctx.graph.matmul(ctx.p(proj), flat)
    }

    /// Maps a pooled `[C]` embedding to `N×C` tokens; embedding variants only.
    pub fn embedding_tokens<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, e: Var) -> Result<Var> {
        let e = ctx.graph.reshape(e, &[1, self.channels])?;
        let out = match &self.kind {
            VisualKind::EmbeddingLinear(lin) => lin.forward(ctx, e)?,
            VisualKind::EmbeddingMlp(mlp) => mlp.forward(ctx, e)?,
            VisualKind::FeatureMap { .. } => {
                return Err(Error::Contract("embedding_tokens called on a feature_map tokenizer".into()))
            }
        };
        ctx.graph.reshape(out, &[self.n_tokens, self.channels])
    }
}

/// Channel projection `d_text → C`, then adaptive pooling (`L > N`) or a
/// trainable token-axis up-projection (`L < N`).
#[derive(Clone, Debug)]
pub struct TextTokenizer {
    pub chan: Linear,
    pub up: Option<ParamId>,
    pub len: usize,
    pub n_tokens: usize,
}

impl TextTokenizer {
    pub fn new<T: Scalar>(
        ps: &mut ParamSet<T>,
        init: &mut Init,
        d_text: usize,
        channels: usize,
        len: usize,
        n_tokens: usize,
    ) -> Result<Self> {
        if len == 0 || n_tokens == 0 {
            return Err(Error::Config(format!("text tokenizer needs L, N ≥ 1 (got {len}, {n_tokens})")));
        }
        let chan = Linear::new(ps, init, "tokenizer.text.chan", d_text, channels);
        let up = (len < n_tokens).then(|| {
            ps.add("tokenizer.text.up", init.uniform(&[n_tokens, len], 1.0 / (len as f64).sqrt()), true)
        });
        Ok(Self { chan, up, len, n_tokens })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, text: Var) -> Result<Var> {
        let rows = ctx.graph.shape(text)[0];
        if rows != self.len {
            return Err(Error::dim("text_tokens", format!("tokenizer built for L={}, got {rows}", self.len)));
        }
        let x = self.chan.forward(ctx, text)?;
        match self.up {
            Some(up) => ctx.graph.matmul(ctx.p(up), x),
            None if self.len > self.n_tokens => ctx.graph.adaptive_avg_pool_tokens(x, self.n_tokens),
            None => Ok(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;
    use crate::tensor::Tensor;

    fn init(seed: u64) -> Init {
        Init::new(ChaCha8Rng::seed_from_u64(seed))
    }

    fn cfg(n: usize, c: usize, variant: TokenizerVariant) -> TokenizerConfig {
        TokenizerConfig { n_tokens: n, channels: c, variant, mlp_hidden: 4 * c }
    }

    #[test]
    fn single_position_identity_projection() {
        let mut ps = ParamSet::<f64>::new();
        let tok = VisualTokenizer::new(&mut ps, &mut init(0), &cfg(1, 2, TokenizerVariant::FeatureMap), 1).unwrap();
        *ps.get_mut(ps.id_of("tokenizer.visual.proj").unwrap()) = Tensor::full(&[1, 1], 1.0);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let f = ctx.graph.constant(Tensor::from_f64(&[2, 1, 1], &[0.25, -3.0]).unwrap());
        let t = tok.forward(&mut ctx, f).unwrap();
        assert_eq!(ctx.graph.value(t).data(), &[0.25, -3.0]);
        assert_eq!(ctx.graph.shape(t), &[1, 2]);
    }

    #[test]
    fn square_projection_is_applied_and_trainable() {
        let mut ps = ParamSet::<f64>::new();
        let tok = VisualTokenizer::new(&mut ps, &mut init(1), &cfg(16, 8, TokenizerVariant::FeatureMap), 16).unwrap();
        let proj = ps.get(ps.id_of("tokenizer.visual.proj").unwrap());
        assert!(proj.data().iter().any(|&v| v != 0.0 && v != 1.0), "noise applied, not a skipped identity");
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, true);
        let f = ctx.graph.constant(init(2).normal(&[8, 4, 4], 1.0));
        let t = tok.forward(&mut ctx, f).unwrap();
        assert_eq!(ctx.graph.shape(t), &[16, 8]);
    }

    #[test]
    fn feature_map_64_tokens_with_gradient() {
        let mut ps = ParamSet::<f64>::new();
        let tok =
            VisualTokenizer::new(&mut ps, &mut init(1), &cfg(64, 128, TokenizerVariant::FeatureMap), 16).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, true);
        let f = ctx.graph.constant(init(2).normal(&[128, 4, 4], 1.0));
        let t = tok.forward(&mut ctx, f).unwrap();
        assert_eq!(ctx.graph.shape(t), &[64, 128]);
        let sq = ctx.graph.mul(t, t).unwrap();
        let loss = ctx.graph.sum(sq);
        ctx.graph.backward(loss).unwrap();
        let grad = ctx.param_grads()[0].clone().unwrap();
        assert!(grad.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn variant_mismatch_is_a_contract_error() {
        let mut ps = ParamSet::<f64>::new();
        let fm = VisualTokenizer::new(&mut ps, &mut init(0), &cfg(4, 2, TokenizerVariant::FeatureMap), 4).unwrap();
        let lin = VisualTokenizer::new(&mut ps, &mut init(0), &cfg(4, 2, TokenizerVariant::EmbeddingLinear), 4).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let e = ctx.graph.constant(Tensor::zeros(&[2]));
        let f = ctx.graph.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(matches!(fm.embedding_tokens(&mut ctx, e), Err(Error::Contract(_))));
        assert!(matches!(lin.feature_map_tokens(&mut ctx, f), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_embedding_with_zero_bias_gives_zero_tokens() {
        let mut ps = ParamSet::<f64>::new();
        let tok =
            VisualTokenizer::new(&mut ps, &mut init(0), &cfg(3, 4, TokenizerVariant::EmbeddingLinear), 16).unwrap();
        *ps.get_mut(ps.id_of("tokenizer.visual.linear.b").unwrap()) = Tensor::zeros(&[12]);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let e = ctx.graph.constant(Tensor::zeros(&[4]));
        let t = tok.embedding_tokens(&mut ctx, e).unwrap();
        assert_eq!(ctx.graph.shape(t), &[3, 4]);
        assert!(ctx.graph.value(t).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_linear_is_plain_projection() {
        let mut ps = ParamSet::<f64>::new();
        let tok =
            VisualTokenizer::new(&mut ps, &mut init(0), &cfg(1, 3, TokenizerVariant::EmbeddingLinear), 16).unwrap();
        let w = ps.get(ps.id_of("tokenizer.visual.linear.w").unwrap()).clone();
        let b = ps.get(ps.id_of("tokenizer.visual.linear.b").unwrap()).clone();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let e = ctx.graph.constant(Tensor::from_f64(&[3], &[1.0, 2.0, -1.0]).unwrap());
        let t = tok.embedding_tokens(&mut ctx, e).unwrap();
        for j in 0..3 {
            let want = b.data()[j] + w.at(&[0, j]) + 2.0 * w.at(&[1, j]) - w.at(&[2, j]);
            assert!((ctx.graph.value(t).data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_variant_differs_from_linear() {
        let f: Tensor<f64> = init(9).normal(&[4, 2, 2], 1.0);
        let mut outs = Vec::new();
        for variant in [TokenizerVariant::EmbeddingLinear, TokenizerVariant::EmbeddingMlp] {
            let mut ps = ParamSet::<f64>::new();
            let tok = VisualTokenizer::new(&mut ps, &mut init(5), &cfg(2, 4, variant), 4).unwrap();
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, false);
            let fv = ctx.graph.constant(f.clone());
            let t = tok.forward(&mut ctx, fv).unwrap();
            outs.push(ctx.graph.value(t).clone());
        }
        assert!(outs[0].max_abs_diff(&outs[1]) > 1e-3);
    }

    #[test]
    fn text_equal_length_is_channel_projection_only() {
        let mut ps = ParamSet::<f64>::new();
        let tok = TextTokenizer::new(&mut ps, &mut init(0), 6, 4, 5, 5).unwrap();
        assert!(tok.up.is_none());
        assert_eq!(ps.count(true), 6 * 4 + 4);
    }

    #[test]
    fn text_down_sampling_averages_pairs() {
        let mut ps = ParamSet::<f64>::new();
        let tok = TextTokenizer::new(&mut ps, &mut init(0), 2, 2, 4, 2).unwrap();
        *ps.get_mut(tok.chan.w) = Tensor::eye(2);
        *ps.get_mut(tok.chan.b.unwrap()) = Tensor::zeros(&[2]);
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let t = ctx.graph.constant(Tensor::from_f64(&[4, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let out = tok.forward(&mut ctx, t).unwrap();
        assert_eq!(ctx.graph.value(out).data(), &[2., 3., 6., 7.]);
    }

    #[test]
    fn text_up_sampling_is_trainable() {
        let mut ps = ParamSet::<f64>::new();
        let tok = TextTokenizer::new(&mut ps, &mut init(0), 3, 4, 2, 4).unwrap();
        // down-sampling has no token-axis parameters; up-sampling adds N·L of them
        let mut ps_down = ParamSet::<f64>::new();
        TextTokenizer::new(&mut ps_down, &mut init(0), 3, 4, 8, 4).unwrap();
        assert_eq!(ps_down.count(true), 3 * 4 + 4);
        assert_eq!(ps.count(true), 3 * 4 + 4 + 4 * 2);

        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, true);
        let t = ctx.graph.constant(init(1).normal(&[2, 3], 1.0));
        let out = tok.forward(&mut ctx, t).unwrap();
        assert_eq!(ctx.graph.shape(out), &[4, 4]);
        let sq = ctx.graph.mul(out, out).unwrap();
        let loss = ctx.graph.sum(sq);
        ctx.graph.backward(loss).unwrap();
        for g in ctx.param_grads() {
            assert!(g.unwrap().data().iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn feature_map_tokens_depend_on_spatial_order() {
        let f: Tensor<f64> = init(3).normal(&[4, 3, 3], 1.0);
        // Swap spatial positions 0 and 5 in every channel.
        let mut swapped = f.clone();
        for c in 0..4 {
            swapped.data_mut().swap(c * 9, c * 9 + 5);
        }
        let run = |variant: TokenizerVariant, x: &Tensor<f64>| {
            let mut ps = ParamSet::<f64>::new();
            let tok = VisualTokenizer::new(&mut ps, &mut init(4), &cfg(5, 4, variant), 9).unwrap();
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, false);
            let fv = ctx.graph.constant(x.clone());
            let t = tok.forward(&mut ctx, fv).unwrap();
            ctx.graph.value(t).clone()
        };
        assert!(run(TokenizerVariant::FeatureMap, &f).max_abs_diff(&run(TokenizerVariant::FeatureMap, &swapped)) > 1e-6);
        for v in [TokenizerVariant::EmbeddingLinear, TokenizerVariant::EmbeddingMlp] {
            assert!(run(v, &f).max_abs_diff(&run(v, &swapped)) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn output_is_always_n_by_c(h in 1usize..5, w in 1usize..5, l in 1usize..12, n in 1usize..9, v in 0usize..3) {
            let c = 4;
            let mut ps = ParamSet::<f32>::new();
            let mut it = init(7);
            let vt = VisualTokenizer::new(&mut ps, &mut it, &cfg(n, c, TokenizerVariant::ALL[v]), h * w).unwrap();
            let tt = TextTokenizer::new(&mut ps, &mut it, 6, c, l, n).unwrap();
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, false);
            let f = ctx.graph.constant(it.normal(&[c, h, w], 1.0));
            let t = ctx.graph.constant(it.normal(&[l, 6], 1.0));
            let vo = vt.forward(&mut ctx, f).unwrap();
            let to = tt.forward(&mut ctx, t).unwrap();
            prop_assert_eq!(ctx.graph.shape(vo), &[n, c]);
            prop_assert_eq!(ctx.graph.shape(to), &[n, c]);
        }
    }
}
