use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cofuse_core::fusion::{AggregatorKind, CoBlock};
use cofuse_core::metrics::auc;
use cofuse_core::model::Model;
use cofuse_core::nn::{Ctx, Init, ParamSet};
use cofuse_core::verify::toy_model_config;
use cofuse_core::{Graph, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_fwd_bwd");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [16usize, 64, 256] {
        let (a, b) = (random(&[n, n], &mut rng), random(&[n, n], &mut rng));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, y) = (g.leaf(a.clone(), true), g.leaf(b.clone(), true));
                let z = g.matmul(x, y).unwrap();
                let s = g.sum(z);
                g.backward(s).unwrap();
                black_box(g.grad(x).map(|v| v[0]))
            })
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[8, 32, 32], &mut rng);
    let w = random(&[16, 8, 3, 3], &mut rng);
    c.bench_function("conv3x3_8to16_32x32_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, wv) = (g.leaf(x.clone(), true), g.leaf(w.clone(), true));
            let y = g.conv2d(xv, wv, 1, 1).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
            black_box(g.grad(wv).map(|v| v[0]))
        })
    });
}

fn co_block(c: &mut Criterion) {
    let mut ps = ParamSet::<f32>::new();
    let mut init = Init::new(ChaCha8Rng::seed_from_u64(2));
    let block = CoBlock::new(&mut ps, &mut init, "co", 16, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (v, t) = (random(&[16, 16], &mut rng), random(&[16, 16], &mut rng));
    c.bench_function("co_block_16x16_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, true);
            let (vv, tv) = (ctx.graph.constant(v.clone()), ctx.graph.constant(t.clone()));
            let (a, b) = block.forward(&mut ctx, vv, tv).unwrap();
            let joined = ctx.graph.concat_rows(&[a, b]).unwrap();
            let s = ctx.graph.sum(joined);
            ctx.graph.backward(s).unwrap();
            black_box(ctx.param_grads().len())
        })
    });
}

fn train_step(c: &mut Criterion) {
    let (model, ps) = Model::new::<f32>(toy_model_config(AggregatorKind::Co), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images: Vec<Tensor<f32>> = (0..8).map(|_| random(&[1, 16, 16], &mut rng)).collect();
    let texts: Vec<Tensor<f32>> = (0..8)
        .map(|i| model.encode_text(&ps, &[1, 2, 3 + i, 4, 5, 0, 0, 0]).unwrap().unwrap())
        .collect();
    let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    c.bench_function("toy_co_model_batch8_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &ps, true);
            let iv: Vec<_> = images.iter().map(|t| ctx.graph.constant(t.clone())).collect();
            let tv: Vec<_> = texts.iter().map(|t| ctx.graph.constant(t.clone())).collect();
            let z = model.forward(&mut ctx, &iv, &tv).unwrap();
            let loss = ctx.graph.bce_with_logits(z, &labels).unwrap();
            ctx.graph.backward(loss).unwrap();
            black_box(ctx.param_grads().len())
        })
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scores: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
    let labels: Vec<u8> = (0..2000).map(|_| u8::from(rng.gen_bool(0.3))).collect();
    c.bench_function("auc_2000", |bench| bench.iter(|| black_box(auc(&scores, &labels).unwrap())));
}

criterion_group!(benches, matmul, conv, co_block, train_step, metrics);
criterion_main!(benches);
