//! Numerical self-checks behind `cofuse verify`.
//!
//! Each check measures one worst-case quantity and compares it to a fixed
//! tolerance. A check that errors or measures NaN fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{grad_check_coords, Graph, Var};
use crate::data::{preprocess, AugmentConfig, AugmentParams, DEFAULT_THRESHOLD};
use crate::encoders::{TextEncoderConfig, VisionConfig, VisionEncoder};
use crate::error::{Error, Result};
use crate::fusion::{AggregatorConfig, AggregatorKind, Aggregator, ClassifierHead, CoBlock, CrossBlock, Pooling, SelfBlock};
use crate::metrics::{auc, auc_pairs, auc_trapezoid};
use crate::model::{Model, ModelConfig, TokenPair};
use crate::nn::{Ctx, Init, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamId, ParamSet};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{TextTokenizer, TokenizerConfig, TokenizerVariant, VisualTokenizer};
use crate::training::{adamw_step, lr_at, AdamState, TrainConfig};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const ROW_SUM_TOL: f64 = 1e-6;
pub const PERMUTATION_TOL: f64 = 1e-5;
pub const AUC_TOL: f64 = 1e-9;
pub const IDEMPOTENCE_TOL: f64 = 1e-6;
pub const SCHEDULE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Fault injection: run every graph with the unshifted softmax.
    pub naive_softmax: bool,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { naive_softmax: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Worst value seen so far plus the number of cases; NaN is sticky.
#[derive(Clone, Copy, Debug, Default)]
struct Worst {
    value: f64,
    cases: usize,
}

impl Worst {
    fn see(&mut self, v: f64) {
        self.cases += 1;
        if v.is_nan() || self.value.is_nan() {
            self.value = f64::NAN;
        } else {
            self.value = self.value.max(v);
        }
    }

    fn merge(&mut self, (v, n): (f64, usize)) {
        self.see(v);
        self.cases += n - 1;
    }
}

fn finish(name: &str, tolerance: f64, outcome: Result<Worst>) -> CheckResult {
    match outcome {
        Ok(w) => CheckResult {
            name: name.into(),
            measured: w.value,
            tolerance,
            cases: w.cases,
            // NaN compares false, so it fails here.
            passed: w.value <= tolerance,
            error: None,
        },
        Err(e) => CheckResult {
            name: name.into(),
            measured: f64::INFINITY,
            tolerance,
            cases: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every check in a fixed order.
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let naive = opts.naive_softmax;
    let seed = opts.seed;
    let mut checks = Vec::new();
    for (name, result) in layer_grad_checks(seed, naive) {
        checks.push(finish(&format!("grad/{name}"), GRAD_TOL, result));
    }
    checks.push(finish("grad/model_co_bce", GRAD_TOL, model_grad_check(seed, naive)));
    checks.push(finish("attention_row_sums", ROW_SUM_TOL, attention_row_sums(seed, naive, 100, 10)));
    checks.push(finish("permutation_invariance", PERMUTATION_TOL, permutation_invariance(seed, naive, 50)));
    checks.push(finish("auc_dual_oracle", AUC_TOL, auc_fuzz(seed, 1000)));
    checks.push(finish("preprocess_idempotence", IDEMPOTENCE_TOL, preprocess_idempotence(seed, 200)));
    checks.push(finish("augment_ranges", 0.0, augment_ranges(seed, 10_000)));
    checks.push(finish("adamw_schedule", SCHEDULE_TOL, optimizer_contracts()));
    VerifyReport { checks }
}

// ── Gradient checks ─────────────────────────────────────────────────────────

type Forward = dyn Fn(&mut Ctx<'_, f64>, Var) -> Result<Var>;

fn gauss(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// Moves every parameter off its initial value so no gradient is trivially zero.
fn perturb(ps: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, std: f64) {
    for e in ps.entries_mut() {
        for v in e.value.data_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// `Σ out ⊙ R` for a fixed pseudo-random `R`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 {
        return Ok(g.sum(out));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = g.constant(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

fn sample_coords(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Gradient check of `fwd` w.r.t. its input and sampled coordinates of every trainable parameter.
fn check_module(
    ps: &ParamSet<f64>,
    input: &Tensor<f64>,
    fwd: &Forward,
    naive: bool,
    rng: &mut ChaCha8Rng,
    per_param: usize,
) -> Result<(f64, usize)> {
    let mut worst = Worst::default();
    let input_fn = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
        g.set_naive_softmax(naive);
        let mut ctx = Ctx::new(g, ps, false);
        let out = fwd(&mut ctx, x)?;
        project(g, out)
    };
    let coords = sample_coords(input.len(), 256, rng);
    worst.merge((grad_check_coords(input_fn, input, GRAD_EPS, &coords)?, coords.len()));

    for (i, e) in ps.entries().iter().enumerate() {
        if !e.trainable {
            continue;
        }
        let id = ParamId(i);
        let param_fn = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
            g.set_naive_softmax(naive);
            let inp = g.constant(input.clone());
            let mut ctx = Ctx::with_overrides(g, ps, false, &[(id, x)]);
            let out = fwd(&mut ctx, inp)?;
            project(g, out)
        };
        let coords = sample_coords(e.value.len(), per_param, rng);
        worst.merge((grad_check_coords(param_fn, &e.value, GRAD_EPS, &coords)?, coords.len()));
    }
    Ok((worst.value, worst.cases))
}

struct LayerCase {
    name: String,
    ps: ParamSet<f64>,
    input: Tensor<f64>,
    fwd: Box<Forward>,
}

fn layer_cases(seed: u64) -> Result<Vec<LayerCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6752_4144);
    let mut cases = Vec::new();
    let mut add = |name: &str, build: &mut dyn FnMut(&mut ParamSet<f64>, &mut Init) -> Result<(Vec<usize>, Box<Forward>)>| -> Result<()> {
        let mut ps = ParamSet::new();
        let mut init = Init::new(ChaCha8Rng::seed_from_u64(rng.gen()));
        let (shape, fwd) = build(&mut ps, &mut init)?;
        perturb(&mut ps, &mut rng, 0.1);
        let input = gauss(&mut rng, &shape, 1.0);
        cases.push(LayerCase { name: name.into(), ps, input, fwd });
        Ok(())
    };

    add("linear", &mut |ps, init| {
        let l = Linear::new(ps, init, "l", 6, 5);
        Ok((vec![4, 6], Box::new(move |ctx, x| l.forward(ctx, x))))
    })?;
    add("layer_norm", &mut |ps, _| {
        let l = LayerNorm::new(ps, "ln", 6);
        Ok((vec![4, 6], Box::new(move |ctx, x| l.forward(ctx, x))))
    })?;
    add("mlp", &mut |ps, init| {
        let m = Mlp::new(ps, init, "mlp", 6, 12, 5);
        Ok((vec![4, 6], Box::new(move |ctx, x| m.forward(ctx, x))))
    })?;
    add("attention", &mut |ps, init| {
        let m = MultiHeadAttention::new(ps, init, "attn", 8, 2)?;
        // Rows 0..3 are queries, rows 3..8 keys/values.
        Ok((
            vec![8, 8],
            Box::new(move |ctx, x| {
                let q = ctx.graph.slice_rows(x, 0, 3)?;
                let kv = ctx.graph.slice_rows(x, 3, 5)?;
                m.forward(ctx, q, kv)
            }),
        ))
    })?;
    add("vision_encoder", &mut |ps, init| {
        let enc = VisionEncoder::new(ps, init, VisionConfig { channels: vec![2, 4], rgb_input: false })?;
        Ok((vec![1, 8, 8], Box::new(move |ctx, x| enc.forward(ctx, x))))
    })?;
    add("vision_encoder_rgb", &mut |ps, init| {
        let enc = VisionEncoder::new(ps, init, VisionConfig { channels: vec![3], rgb_input: true })?;
        Ok((vec![1, 4, 4], Box::new(move |ctx, x| enc.forward(ctx, x))))
    })?;
    for variant in TokenizerVariant::ALL {
        add(&format!("visual_tokenizer_{variant}"), &mut |ps, init| {
            let cfg = TokenizerConfig { n_tokens: 5, channels: 4, variant, mlp_hidden: 8 };
            let tok = VisualTokenizer::new(ps, init, &cfg, 9)?;
            Ok((vec![4, 3, 3], Box::new(move |ctx, x| tok.forward(ctx, x))))
        })?;
    }
    add("text_tokenizer_up", &mut |ps, init| {
        let tok = TextTokenizer::new(ps, init, 6, 4, 3, 5)?;
        Ok((vec![3, 6], Box::new(move |ctx, x| tok.forward(ctx, x))))
    })?;
    add("text_tokenizer_pool", &mut |ps, init| {
        let tok = TextTokenizer::new(ps, init, 6, 4, 7, 3)?;
        Ok((vec![7, 6], Box::new(move |ctx, x| tok.forward(ctx, x))))
    })?;
    add("self_block", &mut |ps, init| {
        let b = SelfBlock::new(ps, init, "sb", 8, 2)?;
        Ok((vec![5, 8], Box::new(move |ctx, x| b.forward(ctx, x))))
    })?;
    add("cross_block", &mut |ps, init| {
        let b = CrossBlock::new(ps, init, "cb", 8, 2)?;
        Ok((
            vec![7, 8],
            Box::new(move |ctx, x| {
                let a = ctx.graph.slice_rows(x, 0, 3)?;
                let o = ctx.graph.slice_rows(x, 3, 4)?;
                b.forward(ctx, a, o)
            }),
        ))
    })?;
    for tied in [false, true] {
        let name = if tied { "co_block_tied" } else { "co_block" };
        add(name, &mut |ps, init| {
            let b = if tied { CoBlock::new_tied(ps, init, "co", 8, 2)? } else { CoBlock::new(ps, init, "co", 8, 2)? };
            Ok((
                vec![8, 8],
                Box::new(move |ctx, x| {
                    let v = ctx.graph.slice_rows(x, 0, 4)?;
                    let t = ctx.graph.slice_rows(x, 4, 4)?;
                    let (v, t) = b.forward(ctx, v, t)?;
                    ctx.graph.concat_rows(&[v, t])
                }),
            ))
        })?;
    }
    // Every aggregator kind, each followed by the pooled head (alternating pooling).
    for (i, kind) in AggregatorKind::ALL.into_iter().enumerate() {
        let pooling = if i % 2 == 0 { Pooling::Max } else { Pooling::Mean };
        add(&format!("aggregator_{kind}_{}", pooling.name()), &mut |ps, init| {
            let cfg = AggregatorConfig { kind, depth: 1, heads: 2, pooling };
            let agg = Aggregator::new(ps, init, cfg, 8)?;
            let width = if kind.uses_text() { 16 } else { 8 };
            let head = ClassifierHead::new(ps, init, width, 12, 6, pooling);
            // Both streams carry N tokens, as after the tokenizers.
            Ok((
                vec![8, 8],
                Box::new(move |ctx, x| {
                    let v = ctx.graph.slice_rows(x, 0, 4)?;
                    let t = ctx.graph.slice_rows(x, 4, 4)?;
                    let a = agg.forward(ctx, v, kind.uses_text().then_some(t))?;
                    head.classify(ctx, &[a])
                }),
            ))
        })?;
    }
    Ok(cases)
}

fn layer_grad_checks(seed: u64, naive: bool) -> Vec<(String, Result<Worst>)> {
    let cases = match layer_cases(seed) {
        Ok(c) => c,
        Err(e) => return vec![("layers".into(), Err(e))],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_0d);
    cases
        .into_iter()
        .map(|c| {
            let r = check_module(&c.ps, &c.input, c.fwd.as_ref(), naive, &mut rng, 6)
                .map(|(value, cases)| Worst { value, cases });
            (c.name, r)
        })
        .collect()
}

/// Small co-attention model used by the model-level checks.
pub fn toy_model_config(kind: AggregatorKind) -> ModelConfig {
    ModelConfig {
        image_h: 16,
        image_w: 16,
        vision: VisionConfig { channels: vec![4, 8], rgb_input: false },
        text: TextEncoderConfig { vocab_size: 20, d_text: 6, l_max: 8, embed_std: 1.0, pos_scale: 0.1 },
        tokenizer: TokenizerConfig { n_tokens: 8, channels: 8, variant: TokenizerVariant::FeatureMap, mlp_hidden: 32 },
        aggregator: AggregatorConfig { kind, depth: 2, heads: 2, pooling: Pooling::Max },
        head_hidden: 16,
        head_out: 8,
    }
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<u32> {
    let used = rng.gen_range(len / 2..=len);
    (0..len).map(|i| if i < used { rng.gen_range(1..vocab as u32) } else { 0 }).collect()
}

fn random_image<T: Scalar>(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(&[1, h, w], |_| T::from_f64(rng.gen_range(0.0..1.0)))
}

/// Full co-attention model, BCE loss on one 16×16 image with an 8-token report.
fn model_grad_check(seed: u64, naive: bool) -> Result<Worst> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00de_1c0);
    let cfg = toy_model_config(AggregatorKind::Co);
    let (model, mut ps) = Model::new::<f64>(cfg.clone(), seed)?;
    perturb(&mut ps, &mut rng, 0.05);
    let ids = random_ids(&mut rng, cfg.text.vocab_size, cfg.text.l_max);
    let text = model.encode_text(&ps, &ids)?.ok_or_else(|| Error::Contract("co model has no text encoder".into()))?;
    let image = random_image::<f64>(&mut rng, 16, 16);
    let fwd: Box<Forward> = Box::new(move |ctx, x| {
        let t = ctx.graph.constant(text.clone());
        let z = model.forward(ctx, &[x], &[t])?;
        ctx.graph.bce_with_logits(z, &[1.0])
    });
    let (value, cases) = check_module(&ps, &image, fwd.as_ref(), naive, &mut rng, 4)?;
    Ok(Worst { value, cases })
}

// ── Attention and permutation checks ────────────────────────────────────────

const ATTENTION_KINDS: [AggregatorKind; 4] =
    [AggregatorKind::Co, AggregatorKind::Cross, AggregatorKind::Merged, AggregatorKind::VisionSelf];

fn sample_inputs<T: Scalar>(
    model: &Model,
    ps: &ParamSet<T>,
    ctx: &mut Ctx<'_, T>,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Option<Var>)> {
    let image = ctx.graph.constant(random_image(rng, model.cfg.image_h, model.cfg.image_w));
    let ids = random_ids(rng, model.cfg.text.vocab_size, model.cfg.text.l_max);
    let text = model.encode_text(ps, &ids)?.map(|t| ctx.graph.constant(t));
    Ok((image, text))
}

/// `|Σ row − 1|` over every head of `forwards` seeded f32 forwards, plus
/// `stress` forwards whose query weights are scaled to push logits into the
/// thousands (where an unshifted softmax overflows).
fn attention_row_sums(seed: u64, naive: bool, forwards: usize, stress: usize) -> Result<Worst> {
    let mut worst = Worst::default();
    for i in 0..forwards + stress {
        let kind = ATTENTION_KINDS[i % ATTENTION_KINDS.len()];
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let (model, mut ps) = Model::new::<f32>(toy_model_config(kind), case_seed)?;
        if i >= forwards {
            for e in ps.entries_mut() {
                if e.name.starts_with("agg.") && e.name.ends_with(".q.w") {
                    e.value.data_mut().iter_mut().for_each(|w| *w *= 2_000.0);
                }
            }
        }
        let mut g = Graph::new();
        g.set_naive_softmax(naive);
        let mut ctx = Ctx::new(&mut g, &ps, false);
        ctx.enable_probe();
        let (image, text) = sample_inputs(&model, &ps, &mut ctx, &mut rng)?;
        let texts: Vec<Var> = text.into_iter().collect();
        model.forward(&mut ctx, &[image], &texts)?;
        let maps = ctx.attention_maps();
        if maps.is_empty() {
            return Err(Error::Contract(format!("{kind} model recorded no attention maps")));
        }
        let mut dev = 0.0f64;
        for m in maps {
            let (_, n) = m.dims2()?;
            for row in m.data().chunks_exact(n) {
                let s: f64 = row.iter().map(|v| v.as_f64()).sum();
                let d = (s - 1.0).abs();
                dev = if d.is_nan() { f64::NAN } else if dev.is_nan() { dev } else { dev.max(d) };
            }
        }
        worst.see(dev);
    }
    Ok(worst)
}

/// Rows of `x` reordered by a random permutation (exact: gather via slices).
fn permute_rows<T: Scalar>(g: &mut Graph<T>, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let n = g.shape(x)[0];
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let rows = order.iter().map(|&r| g.slice_rows(x, r, 1)).collect::<Result<Vec<_>>>()?;
    g.concat_rows(&rows)
}

/// Final-logit change when the post-tokenizer visual and text tokens are
/// permuted independently (f32, kinds cycled).
fn permutation_invariance(seed: u64, naive: bool, cases: usize) -> Result<Worst> {
    let mut worst = Worst::default();
    for i in 0..cases {
        let kind = AggregatorKind::ALL[i % AggregatorKind::ALL.len()];
        let case_seed = seed.wrapping_mul(7_919).wrapping_add(1_000 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let (model, ps) = Model::new::<f32>(toy_model_config(kind), case_seed)?;
        let mut g = Graph::new();
        g.set_naive_softmax(naive);
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let (image, text) = sample_inputs(&model, &ps, &mut ctx, &mut rng)?;
        let pair = model.tokens(&mut ctx, image, text)?;
        let base = model.logits_from_tokens(&mut ctx, &[pair])?;
        let vision = permute_rows(ctx.graph, pair.vision, &mut rng)?;
        let text = pair.text.map(|t| permute_rows(ctx.graph, t, &mut rng)).transpose()?;
        let shuffled = model.logits_from_tokens(&mut ctx, &[TokenPair { vision, text }])?;
        let a = ctx.graph.value(base).data()[0].as_f64();
        let b = ctx.graph.value(shuffled).data()[0].as_f64();
        worst.see((a - b).abs());
    }
    Ok(worst)
}

// ── Metric, data and optimizer checks ───────────────────────────────────────

/// Largest disagreement among the three AUC implementations on tied, fuzzed inputs.
fn auc_fuzz(seed: u64, instances: usize) -> Result<Worst> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0c);
    let mut worst = Worst::default();
    while worst.cases < instances {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(1..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let p = rng.gen_range(0.05..0.95);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(p))).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        let a = auc(&scores, &labels)?;
        let b = auc_pairs(&scores, &labels)?;
        let c = auc_trapezoid(&scores, &labels)?;
        worst.see((a - b).abs().max((b - c).abs()).max((a - c).abs()));
    }
    Ok(worst)
}

/// `|pre(pre(x)) − pre(x)|` on random images with a bright region on a dim background.
fn preprocess_idempotence(seed: u64, cases: usize) -> Result<Worst> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1de);
    let mut worst = Worst::default();
    for _ in 0..cases {
        let (h, w) = (rng.gen_range(8..48), rng.gen_range(8..48));
        let out = rng.gen_range(8..40);
        let (y0, x0) = (rng.gen_range(0..h - 2), rng.gen_range(0..w - 2));
        let (y1, x1) = (rng.gen_range(y0 + 1..h), rng.gen_range(x0 + 1..w));
        let img: Vec<f32> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let inside = (y0..=y1).contains(&y) && (x0..=x1).contains(&x);
                if inside { rng.gen_range(0.0..1.0) } else { rng.gen_range(0.0..0.1) }
            })
            .collect();
        let once = preprocess(&img, h, w, out, out, DEFAULT_THRESHOLD);
        let twice = preprocess(&once, out, out, out, out, DEFAULT_THRESHOLD);
        let diff = once.iter().zip(&twice).map(|(a, b)| f64::from((a - b).abs())).fold(0.0, f64::max);
        worst.see(diff);
    }
    Ok(worst)
}

/// Largest excursion of drawn augmentation parameters outside their quoted ranges.
fn augment_ranges(seed: u64, draws: usize) -> Result<Worst> {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa06);
    let mut worst = Worst::default();
    for _ in 0..draws {
        let p = AugmentParams::draw(&cfg, &mut rng);
        let excess = [
            p.rotation_deg.abs() - 20.0,
            p.shear_deg.abs() - 20.0,
            0.8 - p.scale,
            p.scale - 1.2,
            p.translate_x.abs() - cfg.max_translate,
            p.translate_y.abs() - cfg.max_translate,
            (p.elastic_alpha - 10.0).abs(),
            (p.elastic_sigma - 5.0).abs(),
        ]
        .into_iter()
        .fold(0.0f64, f64::max);
        worst.see(excess);
    }
    Ok(worst)
}

/// Decay-only AdamW step, warmup endpoint and cosine midpoint, in f64.
fn optimizer_contracts() -> Result<Worst> {
    let mut worst = Worst::default();
    let peak = 1e-3;
    worst.see((lr_at(0, 100, 10, peak) - 0.0).abs());
    worst.see((lr_at(10, 100, 10, peak) - peak).abs());
    worst.see((lr_at(55, 100, 10, peak) - peak / 2.0).abs());
    worst.see((lr_at(100, 100, 10, peak) - 0.0).abs());

    let cfg = TrainConfig { weight_decay: 0.1, ..TrainConfig::default() };
    let theta = [0.5, -1.25, 2.0, 0.0];
    let mut ps = ParamSet::<f64>::new();
    ps.add("w", Tensor::new(&[4], theta.to_vec())?, true);
    let mut state = AdamState::new(&ps);
    let lr = 0.01;
    adamw_step(&mut ps, &[Some(Tensor::zeros(&[4]))], &mut state, &cfg, lr)?;
    for (got, th) in ps.entries()[0].value.data().iter().zip(theta) {
        worst.see((got - th * (1.0 - lr * cfg.weight_decay)).abs());
    }
    Ok(worst)
}
