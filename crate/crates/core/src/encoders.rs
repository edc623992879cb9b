//! Modality encoders: a frozen token-embedding text encoder and a small ConvNet.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, LayerNorm, ParamId, ParamSet};
use crate::report::PAD_ID;
use crate::tensor::{Scalar, Tensor};

// ── Text ────────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub d_text: usize,
    pub l_max: usize,
    /// Standard deviation of the random embedding table.
    pub embed_std: f64,
    /// Multiplier on the sinusoidal table, keeping positions on the scale of the embeddings.
    pub pos_scale: f64,
}

/// Token rows plus a validity mask (`false` at padding positions).
#[derive(Clone, Debug, PartialEq)]
pub struct TextTokens<T: Scalar> {
    pub tokens: Tensor<T>,
    pub mask: Vec<bool>,
}

/// Frozen embedding lookup plus a fixed sinusoidal position table.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub table: ParamId,
    pub positions: ParamId,
    pub cfg: TextEncoderConfig,
}

pub fn sinusoidal_table(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

impl TextEncoder {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, cfg: TextEncoderConfig) -> Result<Self> {
        if cfg.vocab_size < 2 || cfg.d_text == 0 || cfg.l_max == 0 {
            return Err(Error::Config(format!("invalid text encoder config {cfg:?}")));
        }
        let table = ps.add("text.embedding", init.normal(&[cfg.vocab_size, cfg.d_text], cfg.embed_std), false);
        let pe: Vec<f64> = sinusoidal_table(cfg.l_max, cfg.d_text).iter().map(|v| v * cfg.pos_scale).collect();
        let positions = ps.add("text.positions", Tensor::from_f64(&[cfg.l_max, cfg.d_text], &pe)?, false);
        Ok(Self { table, positions, cfg })
    }

    /// Looks up `ids` (length `L ≤ l_max`) and adds position rows.
    pub fn encode<T: Scalar>(&self, ps: &ParamSet<T>, ids: &[u32]) -> Result<TextTokens<T>> {
        let (v, d) = (self.cfg.vocab_size, self.cfg.d_text);
        if ids.is_empty() || ids.len() > self.cfg.l_max {
            return Err(Error::dim("text_encode", format!("{} ids for l_max {}", ids.len(), self.cfg.l_max)));
        }
        let table = ps.get(self.table).data();
        let pos = ps.get(self.positions).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for (p, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= v {
                return Err(Error::Index(format!("token id {id} at position {p} is outside vocabulary of {v}")));
            }
            data.extend(table[id * d..(id + 1) * d].iter().zip(&pos[p * d..(p + 1) * d]).map(|(&e, &q)| e + q));
        }
        let tokens = Tensor::new(&[ids.len(), d], data)?;
        Ok(TextTokens { tokens, mask: ids.iter().map(|&id| id != PAD_ID).collect() })
    }
}

// ── Vision ──────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct VisionConfig {
    /// Output channels of each stage; every stage halves the spatial size.
    pub channels: Vec<usize>,
    /// Replicate the grayscale input into three channels before the first conv.
    pub rgb_input: bool,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self { channels: vec![16, 32, 64, 128], rgb_input: false }
    }
}

#[derive(Clone, Debug)]
pub struct ConvStage {
    pub w: ParamId,
    pub b: ParamId,
    pub norm: LayerNorm,
    pub cin: usize,
    pub cout: usize,
}

/// Stages of conv3×3 → channel layer norm → GELU → 2×2 max-pool.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub stages: Vec<ConvStage>,
    pub cfg: VisionConfig,
}

impl VisionEncoder {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, init: &mut Init, cfg: VisionConfig) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.channels.contains(&0) {
            return Err(Error::Config(format!("vision channels {:?} must be non-empty and positive", cfg.channels)));
        }
        let mut cin = if cfg.rgb_input { 3 } else { 1 };
        let mut stages = Vec::new();
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            let w = ps.add(format!("vision.stage{i}.conv.w"), init.uniform(&[cout, cin, 3, 3], bound), true);
            let b = ps.add(format!("vision.stage{i}.conv.b"), init.uniform(&[cout], bound), true);
            let norm = LayerNorm::new(ps, &format!("vision.stage{i}.norm"), cout);
            stages.push(ConvStage { w, b, norm, cin, cout });
            cin = cout;
        }
        Ok(Self { stages, cfg })
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.cout)
    }

    /// Total spatial down-sampling factor.
    pub fn stride(&self) -> usize {
        1 << self.stages.len()
    }

    /// Maps a `1×H×W` image to a `C×H/s×W/s` feature map (`s` = [`Self::stride`]).
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let shape = ctx.graph.shape(image).to_vec();
        let s = self.stride();
        let (h, w) = match shape[..] {
            [1, h, w] if h % s == 0 && w % s == 0 => (h, w),
            _ => {
                return Err(Error::dim(
                    "vision_encode",
                    format!("expected 1×H×W with H, W divisible by {s}, got {shape:?}"),
                ))
            }
        };
        let mut x = image;
        if self.cfg.rgb_input {
            let flat = ctx.graph.reshape(x, &[1, h * w])?;
            let rgb = ctx.graph.concat_rows(&[flat, flat, flat])?;
            x = ctx.graph.reshape(rgb, &[3, h, w])?;
        }
        for st in &self.stages {
            let (wv, bv) = (ctx.p(st.w), ctx.p(st.b));
            let g = &mut *ctx.graph;
            let y = g.conv2d(x, wv, 1, 1)?;
            let y = g.add_channel_bias(y, bv)?;
            let y = st.norm.forward_channels(ctx, y)?;
            let g = &mut *ctx.graph;
            let y = g.gelu(y);
            x = g.max_pool2d(y, 2)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;

    fn text_cfg() -> TextEncoderConfig {
        TextEncoderConfig { vocab_size: 10, d_text: 8, l_max: 6, embed_std: 0.02, pos_scale: 0.02 }
    }

    fn text_encoder(seed: u64) -> (ParamSet<f32>, TextEncoder) {
        let mut ps = ParamSet::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(seed));
        let enc = TextEncoder::new(&mut ps, &mut init, text_cfg()).unwrap();
        (ps, enc)
    }

    #[test]
    fn all_pad_rows_are_pad_embedding_plus_positions() {
        let (ps, enc) = text_encoder(1);
        let out = enc.encode(&ps, &[PAD_ID; 4]).unwrap();
        assert_eq!(out.mask, vec![false; 4]);
        let (table, pos) = (ps.get(enc.table).data(), ps.get(enc.positions).data());
        for p in 0..4 {
            for j in 0..8 {
                assert_eq!(out.tokens.data()[p * 8 + j], table[j] + pos[p * 8 + j]);
            }
        }
    }

    #[test]
    fn text_encoding_is_deterministic_and_local() {
        let (ps, enc) = text_encoder(2);
        let (ps2, enc2) = text_encoder(2);
        let a = enc.encode(&ps, &[2, 3, 4, 5]).unwrap();
        assert!(a.tokens.bitwise_eq(&enc2.encode(&ps2, &[2, 3, 4, 5]).unwrap().tokens));
        let b = enc.encode(&ps, &[2, 3, 9, 5]).unwrap();
        for row in 0..4 {
            let same = a.tokens.data()[row * 8..(row + 1) * 8] == b.tokens.data()[row * 8..(row + 1) * 8];
            assert_eq!(same, row != 2, "row {row}");
        }
        assert!(!ps.entries()[enc.table.index()].trainable);
    }

    #[test]
    fn text_rejects_out_of_vocab_and_overlong() {
        let (ps, enc) = text_encoder(3);
        assert!(matches!(enc.encode(&ps, &[1, 10]), Err(Error::Index(_))));
        assert!(matches!(enc.encode(&ps, &[1; 7]), Err(Error::Dimension { .. })));
    }

    fn vision(cfg: VisionConfig) -> (ParamSet<f32>, VisionEncoder) {
        let mut ps = ParamSet::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(4));
        let enc = VisionEncoder::new(&mut ps, &mut init, cfg).unwrap();
        (ps, enc)
    }

    #[test]
    fn default_vision_maps_64_to_128x4x4() {
        let (ps, enc) = vision(VisionConfig::default());
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let img = ctx.graph.constant(Tensor::full(&[1, 64, 64], 0.5));
        let f = enc.forward(&mut ctx, img).unwrap();
        assert_eq!(ctx.graph.shape(f), &[128, 4, 4]);
        // conv weights + biases + norm gains/biases per stage
        let expect: usize = [(1, 16), (16, 32), (32, 64), (64, 128)].iter().map(|&(i, o)| o * i * 9 + 3 * o).sum();
        assert_eq!(ps.count(false), expect);
    }

    #[test]
    fn zero_image_is_finite_and_rgb_adapter_works() {
        for rgb in [false, true] {
            let (ps, enc) = vision(VisionConfig { channels: vec![4, 8], rgb_input: rgb });
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, false);
            let img = ctx.graph.constant(Tensor::zeros(&[1, 16, 16]));
            let f = enc.forward(&mut ctx, img).unwrap();
            assert_eq!(ctx.graph.shape(f), &[8, 4, 4]);
            assert!(ctx.graph.value(f).all_finite());
        }
    }

    #[test]
    fn vision_rejects_indivisible_sizes() {
        let (ps, enc) = vision(VisionConfig::default());
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let img = ctx.graph.constant(Tensor::zeros(&[1, 40, 64]));
        assert!(matches!(enc.forward(&mut ctx, img), Err(Error::Dimension { .. })));
    }

    #[test]
    fn every_stage_receives_gradient() {
        let (ps, enc) = vision(VisionConfig { channels: vec![4, 4, 8, 8], rgb_input: false });
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(9));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, true);
        let img = ctx.graph.constant(init.uniform(&[1, 32, 32], 0.5));
        let f = enc.forward(&mut ctx, img).unwrap();
        let loss = ctx.graph.sum(f);
        ctx.graph.backward(loss).unwrap();
        let grads = ctx.param_grads();
        for st in &enc.stages {
            let gw = grads[st.w.index()].as_ref().unwrap();
            assert!(gw.data().iter().any(|&v| v != 0.0));
        }
    }
}
