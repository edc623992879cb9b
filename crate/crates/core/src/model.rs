//! The full pipeline: encoders → tokenizers → aggregator → pooled head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::encoders::{TextEncoder, TextEncoderConfig, VisionConfig, VisionEncoder};
use crate::error::{Error, Result};
use crate::fusion::{AggregatorConfig, Aggregated, Aggregator, ClassifierHead};
use crate::nn::{Ctx, Init, ParamSet};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{TextTokenizer, TokenizerConfig, VisualTokenizer};

/// Bumped whenever parameter layout or forward semantics change; part of every config hash.
pub const MODEL_VERSION: &str = "cofuse-model-1";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub vision: VisionConfig,
    pub text: TextEncoderConfig,
    /// `channels` must equal the vision encoder's output width.
    pub tokenizer: TokenizerConfig,
    pub aggregator: AggregatorConfig,
    pub head_hidden: usize,
    pub head_out: usize,
}

/// Post-tokenizer token matrices of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenPair {
    pub vision: Var,
    pub text: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub text_encoder: Option<TextEncoder>,
    pub vision: VisionEncoder,
    pub visual_tokenizer: VisualTokenizer,
    pub text_tokenizer: Option<TextTokenizer>,
    pub aggregator: Aggregator,
    pub head: ClassifierHead,
}

impl Model {
    /// Builds the model and its seeded initial parameters.
    pub fn new<T: Scalar>(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        let mut ps = ParamSet::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        let uses_text = cfg.aggregator.kind.uses_text();

        let text_encoder = uses_text.then(|| TextEncoder::new(&mut ps, &mut init, cfg.text.clone())).transpose()?;
        let vision = VisionEncoder::new(&mut ps, &mut init, cfg.vision.clone())?;
        let c = vision.out_channels();
        if cfg.tokenizer.channels != c {
            return Err(Error::Config(format!(
                "tokenizer width {} does not match vision output width {c}",
                cfg.tokenizer.channels
            )));
        }
        let s = vision.stride();
        if cfg.image_h % s != 0 || cfg.image_w % s != 0 {
            return Err(Error::Config(format!(
                "image {}×{} is not divisible by the encoder stride {s}",
                cfg.image_h, cfg.image_w
            )));
        }
        let spatial = (cfg.image_h / s) * (cfg.image_w / s);
        let visual_tokenizer = VisualTokenizer::new(&mut ps, &mut init, &cfg.tokenizer, spatial)?;
        let text_tokenizer = uses_text
            .then(|| TextTokenizer::new(&mut ps, &mut init, cfg.text.d_text, c, cfg.text.l_max, cfg.tokenizer.n_tokens))
            .transpose()?;
        let aggregator = Aggregator::new(&mut ps, &mut init, cfg.aggregator.clone(), c)?;
        let in_width = if uses_text { 2 * c } else { c };
        let head = ClassifierHead::new(&mut ps, &mut init, in_width, cfg.head_hidden, cfg.head_out, cfg.aggregator.pooling);
        Ok((Self { cfg, text_encoder, vision, visual_tokenizer, text_tokenizer, aggregator, head }, ps))
    }

    pub fn uses_text(&self) -> bool {
        self.text_encoder.is_some()
    }

    /// Frozen text token rows `L×d_text` for padded ids; `None` for vision-only models.
    pub fn encode_text<T: Scalar>(&self, ps: &ParamSet<T>, ids: &[u32]) -> Result<Option<Tensor<T>>> {
        self.text_encoder.as_ref().map(|enc| enc.encode(ps, ids).map(|t| t.tokens)).transpose()
    }

    /// Runs both encoders and tokenizers for one sample.
    pub fn tokens<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var, text: Option<Var>) -> Result<TokenPair> {
        let fmap = self.vision.forward(ctx, image)?;
        let vision = self.visual_tokenizer.forward(ctx, fmap)?;
        let text = match (&self.text_tokenizer, text) {
            (Some(tok), Some(t)) => Some(tok.forward(ctx, t)?),
            (Some(_), None) => return Err(Error::Contract("model needs text for every sample".into())),
            (None, _) => None,
        };
        Ok(TokenPair { vision, text })
    }

    /// Aggregates and classifies a batch of token pairs; returns logits `[B]`.
    pub fn logits_from_tokens<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, pairs: &[TokenPair]) -> Result<Var> {
        let aggregated = pairs
            .iter()
            .map(|p| self.aggregator.forward(ctx, p.vision, p.text))
            .collect::<Result<Vec<Aggregated>>>()?;
        self.head.classify(ctx, &aggregated)
    }

    /// Logits `[B]` for images `1×H×W` and (for text models) encoded text rows.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, images: &[Var], texts: &[Var]) -> Result<Var> {
        if images.is_empty() {
            return Err(Error::dim("forward", "empty batch"));
        }
        if self.uses_text() && texts.len() != images.len() {
            return Err(Error::dim("forward", format!("{} images but {} texts", images.len(), texts.len())));
        }
        let pairs = images
            .iter()
            .enumerate()
            .map(|(i, &img)| self.tokens(ctx, img, texts.get(i).copied()))
            .collect::<Result<Vec<_>>>()?;
        self.logits_from_tokens(ctx, &pairs)
    }
}
