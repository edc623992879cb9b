use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Graph};
use crate::tensor::Tensor;

const C: usize = 8;

fn init(seed: u64) -> Init {
    Init::new(ChaCha8Rng::seed_from_u64(seed))
}

fn tokens(seed: u64, n: usize) -> Tensor<f64> {
    init(seed).normal(&[n, C], 1.0)
}

fn aggregator(kind: AggregatorKind, depth: usize, seed: u64) -> (ParamSet<f64>, Aggregator) {
    let mut ps = ParamSet::new();
    let cfg = AggregatorConfig { kind, depth, heads: 2, pooling: Pooling::Max };
    let agg = Aggregator::new(&mut ps, &mut init(seed), cfg, C).unwrap();
    (ps, agg)
}

fn run(ps: &ParamSet<f64>, agg: &Aggregator, v: &Tensor<f64>, t: &Tensor<f64>) -> (Tensor<f64>, Option<Tensor<f64>>) {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, ps, false);
    let (vv, tv) = (ctx.graph.constant(v.clone()), ctx.graph.constant(t.clone()));
    match agg.forward(&mut ctx, vv, Some(tv)).unwrap() {
        Aggregated::Streams { vision, text } | Aggregated::Bypass { vision, text } => {
            (ctx.graph.value(vision).clone(), Some(ctx.graph.value(text).clone()))
        }
        Aggregated::Vision(vision) => (ctx.graph.value(vision).clone(), None),
    }
}

#[test]
fn zero_depth_is_identity_for_attention_kinds() {
    let (v, t) = (tokens(1, 5), tokens(2, 5));
    for kind in [AggregatorKind::Co, AggregatorKind::Merged, AggregatorKind::Cross, AggregatorKind::VisionSelf] {
        let (ps, agg) = aggregator(kind, 0, 0);
        assert_eq!(ps.len(), 0);
        let (vo, to) = run(&ps, &agg, &v, &t);
        assert!(vo.bitwise_eq(&v), "{kind}");
        if let Some(to) = to {
            assert!(to.bitwise_eq(&t), "{kind}");
        }
    }
}

#[test]
fn merged_runs_on_2n_tokens() {
    let (ps, agg) = aggregator(AggregatorKind::Merged, 2, 0);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let v = ctx.graph.constant(tokens(1, 6));
    let t = ctx.graph.constant(tokens(2, 6));
    let joint = agg.merged_tokens(&mut ctx, v, t).unwrap();
    assert_eq!(ctx.graph.shape(joint), &[12, C]);
    let out = agg.forward(&mut ctx, v, Some(t)).unwrap();
    let (vo, to) = out.token_streams().unwrap();
    assert_eq!(ctx.graph.shape(vo), &[6, C]);
    assert_eq!(ctx.graph.shape(to), &[6, C]);
}

#[test]
fn co_depth_three_matches_manual_chain() {
    let (ps, agg) = aggregator(AggregatorKind::Co, 3, 4);
    let mut ps2 = ParamSet::<f64>::new();
    let mut it = init(4);
    let blocks: Vec<CoBlock> = (0..3).map(|i| CoBlock::new(&mut ps2, &mut it, &format!("agg.block{i}"), C, 2).unwrap()).collect();
    assert_eq!(ps, ps2);

    let (v, t) = (tokens(5, 4), tokens(6, 4));
    let (vo, to) = run(&ps, &agg, &v, &t);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps2, false);
    let (mut a, mut b) = (ctx.graph.constant(v), ctx.graph.constant(t));
    for blk in &blocks {
        (a, b) = blk.forward(&mut ctx, a, b).unwrap();
    }
    assert!(ctx.graph.value(a).max_abs_diff(&vo) < 1e-6);
    assert!(ctx.graph.value(b).max_abs_diff(&to.unwrap()) < 1e-6);
}

#[test]
fn co_block_with_zero_output_projections_is_triple_layer_norm() {
    let mut ps = ParamSet::<f64>::new();
    let blk = CoBlock::new(&mut ps, &mut init(0), "b", C, 2).unwrap();
    for e in ps.entries_mut() {
        if e.name.contains(".o.") || e.name.contains(".fc2.") {
            e.value = Tensor::zeros(e.value.shape());
        }
    }
    let (v, t, t_other) = (tokens(1, 4), tokens(2, 4), tokens(3, 4));
    let forward = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let (vv, tv) = (ctx.graph.constant(v.clone()), ctx.graph.constant(t.clone()));
        let (vo, _) = blk.forward(&mut ctx, vv, tv).unwrap();
        // LN∘LN∘LN with unit gains and zero biases.
        let mut x = vv;
        for ln in [&blk.vision.ln1, &blk.vision.ln2, &blk.vision.ln3] {
            x = ln.forward(&mut ctx, x).unwrap();
        }
        (ctx.graph.value(vo).clone(), ctx.graph.value(x).clone())
    };
    let (a, expect) = forward(&t);
    let (b, _) = forward(&t_other);
    assert!(a.max_abs_diff(&expect) < 1e-12);
    assert!(a.bitwise_eq(&b), "streams must not mix");
}

#[test]
fn tied_co_block_is_symmetric() {
    let mut ps = ParamSet::<f64>::new();
    let blk = CoBlock::new_tied(&mut ps, &mut init(2), "b", C, 4).unwrap();
    let (v, t) = (tokens(7, 3), tokens(8, 3));
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let (vv, tv) = (ctx.graph.constant(v), ctx.graph.constant(t));
    let (a1, b1) = blk.forward(&mut ctx, vv, tv).unwrap();
    let (a2, b2) = blk.forward(&mut ctx, tv, vv).unwrap();
    assert!(ctx.graph.value(a1).bitwise_eq(ctx.graph.value(b2)));
    assert!(ctx.graph.value(b1).bitwise_eq(ctx.graph.value(a2)));
}

#[test]
fn co_block_streams_interact() {
    let mut ps = ParamSet::<f64>::new();
    let blk = CoBlock::new(&mut ps, &mut init(3), "b", C, 2).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let v = ctx.graph.constant(tokens(1, 4));
    let t = ctx.graph.leaf(tokens(2, 4), true);
    let (vo, _) = blk.forward(&mut ctx, v, t).unwrap();
    let loss = ctx.graph.sum(vo);
    let sq = ctx.graph.mul(vo, vo).unwrap();
    let loss2 = ctx.graph.sum(sq);
    let total = ctx.graph.add(loss, loss2).unwrap();
    ctx.graph.backward(total).unwrap();
    let grad = ctx.graph.grad_tensor(t);
    assert!(grad.data().iter().map(|g| g.abs()).sum::<f64>() > 1e-6);
}

#[test]
fn co_block_rejects_mismatched_streams() {
    let (ps, agg) = aggregator(AggregatorKind::Co, 1, 0);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let v = ctx.graph.constant(tokens(1, 4));
    let t = ctx.graph.constant(tokens(2, 3));
    assert!(matches!(agg.forward(&mut ctx, v, Some(t)), Err(Error::Dimension { .. })));
}

#[test]
fn co_block_gradient_check() {
    let mut ps = ParamSet::<f64>::new();
    let blk = CoBlock::new(&mut ps, &mut init(5), "b", C, 2).unwrap();
    let t = tokens(9, 3);
    let err = grad_check(
        |g, x| {
            let mut ctx = Ctx::new(g, &ps, false);
            let tv = ctx.graph.constant(t.clone());
            let (vo, to) = blk.forward(&mut ctx, x, tv)?;
            let pv = ctx.graph.max_pool_tokens(vo)?;
            let pt = ctx.graph.mean_rows(to)?;
            let z = ctx.graph.concat_cols(&[pv, pt])?;
            ctx.graph.bce_with_logits(z, &[1., 0., 1., 1., 0., 0., 1., 0., 1., 0., 0., 1., 1., 0., 1., 0.])
        },
        &tokens(10, 3),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn attention_rows_sum_to_one_everywhere() {
    for kind in [AggregatorKind::Co, AggregatorKind::Merged, AggregatorKind::Cross, AggregatorKind::VisionSelf] {
        let (ps, agg) = aggregator(kind, 2, 1);
        let ps32 = ps.cast::<f32>();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps32, false);
        ctx.enable_probe();
        let v = ctx.graph.constant(tokens(1, 6).cast());
        let t = ctx.graph.constant(tokens(2, 6).cast());
        agg.forward(&mut ctx, v, Some(t)).unwrap();
        let maps = ctx.attention_maps();
        assert!(!maps.is_empty());
        for m in maps {
            let n = m.shape()[1];
            for row in m.data().chunks(n) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "{kind}: {s}");
            }
        }
    }
}

fn head(in_width: usize, pooling: Pooling) -> (ParamSet<f64>, ClassifierHead) {
    let mut ps = ParamSet::new();
    let h = ClassifierHead::new(&mut ps, &mut init(6), in_width, 32, 16, pooling);
    (ps, h)
}

#[test]
fn classify_is_invariant_to_row_permutations() {
    for pooling in [Pooling::Max, Pooling::Mean] {
        let (ps, h) = head(2 * C, pooling);
        let (v, t) = (tokens(1, 5), tokens(2, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let permute = |x: &Tensor<f64>, rng: &mut ChaCha8Rng| {
            let mut rows: Vec<&[f64]> = x.data().chunks(C).collect();
            rows.shuffle(rng);
            Tensor::new(x.shape(), rows.concat()).unwrap()
        };
        let (pv, pt) = (permute(&v, &mut rng), permute(&t, &mut rng));
        let logit = |v: &Tensor<f64>, t: &Tensor<f64>| {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, false);
            let agg = Aggregated::Streams { vision: ctx.graph.constant(v.clone()), text: ctx.graph.constant(t.clone()) };
            let z = h.classify(&mut ctx, &[agg]).unwrap();
            ctx.graph.value(z).data()[0]
        };
        let (a, b) = (logit(&v, &t), logit(&pv, &pt));
        if pooling == Pooling::Max {
            assert_eq!(a.to_bits(), b.to_bits());
        } else {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_pooled_features_give_finite_bias_path() {
    let (ps, h) = head(C, Pooling::Max);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let v = ctx.graph.constant(Tensor::zeros(&[3, C]));
    let z = h.classify(&mut ctx, &[Aggregated::Vision(v)]).unwrap();
    let got = ctx.graph.value(z).data()[0];
    assert!(got.is_finite());
    // Bias path: gelu(b1)·W2 + b2 → gelu → ·W3 + b3.
    let gelu = |x: f64| x * 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    let b1: Vec<f64> = ps.get(h.fc1.b.unwrap()).data().iter().map(|&x| gelu(x)).collect();
    let (w2, b2) = (ps.get(h.fc2.w), ps.get(h.fc2.b.unwrap()));
    let h2: Vec<f64> = (0..16).map(|j| gelu(b2.data()[j] + (0..32).map(|i| b1[i] * w2.at(&[i, j])).sum::<f64>())).collect();
    let (w3, b3) = (ps.get(h.out.w), ps.get(h.out.b.unwrap()));
    let want = b3.data()[0] + (0..16).map(|i| h2[i] * w3.data()[i]).sum::<f64>();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn naive_mlp_is_pooled_only_and_text_neutral() {
    let (ps, agg) = aggregator(AggregatorKind::NaiveMlp, 0, 0);
    let (hps, h) = head(2 * C, Pooling::Max);
    let pooled = |t: &Tensor<f64>| {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &ps, false);
        let v = ctx.graph.constant(tokens(1, 4));
        let tv = ctx.graph.constant(t.clone());
        let out = agg.forward(&mut ctx, v, Some(tv)).unwrap();
        assert!(matches!(out.token_streams(), Err(Error::Contract(_))));
        let mut ctx = Ctx::new(ctx.graph, &hps, false);
        let p = h.pooled(&mut ctx, &out).unwrap();
        ctx.graph.value(p).clone()
    };
    let a = pooled(&tokens(2, 4));
    let b = pooled(&Tensor::zeros(&[4, C]));
    assert_eq!(&a.data()[..C], &b.data()[..C]);
    assert!(b.data()[C..].iter().all(|&x| x == 0.0));
}

#[test]
fn head_rejects_wrong_width() {
    let (ps, h) = head(2 * C, Pooling::Max);
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &ps, false);
    let v = ctx.graph.constant(tokens(1, 4));
    assert!(matches!(h.classify(&mut ctx, &[Aggregated::Vision(v)]), Err(Error::Dimension { .. })));
}

#[test]
fn kind_names_round_trip() {
    for k in AggregatorKind::ALL {
        assert_eq!(k.name().parse::<AggregatorKind>().unwrap(), k);
    }
    assert!("attention".parse::<AggregatorKind>().is_err());
    assert_eq!(AggregatorConfig::for_kind(AggregatorKind::VisionSelf).heads, 8);
    assert_eq!(AggregatorConfig::for_kind(AggregatorKind::Merged).depth, 4);
    assert_eq!(AggregatorConfig::for_kind(AggregatorKind::Co).depth, 3);
}
