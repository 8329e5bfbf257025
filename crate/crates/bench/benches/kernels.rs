use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use acr_bench::{randn, ring, tiny_setup};
use acr_core::metrics::{concave_hull, convex_hull, jaccard};
use acr_core::training::batch_loss;
use acr_core::Graph;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for &(ch, side) in &[(8, 32), (16, 16), (32, 8)] {
        let x = randn(&[ch, side, side], 1);
        let w = randn(&[ch, ch, 3, 3], 2);
        group.bench_with_input(BenchmarkId::new("forward_backward", format!("{ch}x{side}")), &(), |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.param(x.clone());
                let wv = g.param(w.clone());
                let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
                let s = g.sum(y).unwrap();
                g.backward(s).unwrap();
                black_box(g.grad(wv).is_some())
            })
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &n in &[32, 64, 128] {
        let a = randn(&[n, n], 3);
        let bm = randn(&[n, n], 4);
        group.bench_with_input(BenchmarkId::new("forward_backward", n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let av = g.param(a.clone());
                let bv = g.param(bm.clone());
                let y = g.matmul(av, bv).unwrap();
                let s = g.sum(y).unwrap();
                g.backward(s).unwrap();
                black_box(g.len())
            })
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let (cfg, model, cube, samples) = tiny_setup();
    c.bench_function("tiny_model/predict", |b| {
        b.iter(|| black_box(model.predict(&samples[0].views, &cube).unwrap()))
    });
    let batch: Vec<_> = samples.iter().take(cfg.training.batch_size).collect();
    let beta = cfg.training.loss.beta_for(cube.mode);
    c.bench_function("tiny_model/batch_loss_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let p = model.params().bind(&mut g);
            let l = batch_loss(&mut g, &model, &p, &batch, &cube, beta, &cfg.training.loss).unwrap();
            g.backward(l).unwrap();
            black_box(g.value(l).item())
        })
    });
}

fn workspace(c: &mut Criterion) {
    let mut group = c.benchmark_group("workspace");
    for &n in &[64, 256] {
        let pts = ring(n, 5);
        group.bench_with_input(BenchmarkId::new("convex_hull", n), &pts, |b, p| b.iter(|| convex_hull(p).unwrap()));
        group.bench_with_input(BenchmarkId::new("concave_hull", n), &pts, |b, p| {
            b.iter(|| concave_hull(p, 0.5).unwrap())
        });
    }
    let a = convex_hull(&ring(128, 6)).unwrap();
    let b = convex_hull(&ring(128, 7)).unwrap();
    for &res in &[256, 512] {
        group.bench_with_input(BenchmarkId::new("jaccard", res), &res, |bn, &r| bn.iter(|| jaccard(&a, &b, r).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, conv, matmul, model, workspace);
criterion_main!(benches);
