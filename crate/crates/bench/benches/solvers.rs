use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icsr::classical::{fista_solve, ista_solve, LassoProblem};
use icsr::instance::{sample_instance, InstanceConfig};
use icsr::learned::{grad_unrolled, lista_vm_forward, Example, LearnedParams, ListaVmParams};
use icsr::transformer::{embed_instance, forward, lista_vm_weights, Gate};

fn classical(c: &mut Criterion) {
    let inst = sample_instance(&InstanceConfig::desk_default(), 1).unwrap();
    let p = LassoProblem::from_instance(&inst, 0.1).unwrap();
    let mut g = c.benchmark_group("classical");
    for k in [12, 500] {
        g.bench_with_input(BenchmarkId::new("ista", k), &k, |b, &k| b.iter(|| ista_solve(black_box(&p), k, None).unwrap()));
        g.bench_with_input(BenchmarkId::new("fista", k), &k, |b, &k| b.iter(|| fista_solve(black_box(&p), k, None).unwrap()));
    }
    g.finish();
}

fn learned(c: &mut Criterion) {
    let inst = sample_instance(&InstanceConfig::desk_default(), 2).unwrap();
    let p = ListaVmParams::scaled_identity(20, 0.5, vec![0.05; 12]);
    c.bench_function("lista_vm_forward_k12", |b| {
        b.iter(|| lista_vm_forward(black_box(&p), inst.x.view(), inst.y.view(), 21.0, None).unwrap())
    });
    let params = LearnedParams::ListaVm(p);
    let batch: Vec<Example> = (0..100)
        .map(|s| Example::from_instance(&sample_instance(&InstanceConfig::desk_default(), s).unwrap()))
        .collect();
    c.bench_function("lista_vm_grad_batch100", |b| b.iter(|| grad_unrolled(black_box(&params), None, &batch).unwrap()));
}

fn transformer(c: &mut Criterion) {
    let mut g = c.benchmark_group("transformer_forward");
    for n in [10, 40] {
        let cfg = InstanceConfig::new(20, n, 3);
        let inst = sample_instance(&cfg, 3).unwrap();
        let p = ListaVmParams::scaled_identity(20, 0.5, vec![0.05; 12]);
        let w = lista_vm_weights(&p, Gate::Fixed(1e4)).unwrap();
        let h = embed_instance(&inst).h;
        g.bench_with_input(BenchmarkId::from_parameter(n), &h, |b, h| b.iter(|| forward(&w, black_box(h)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, classical, learned, transformer);
criterion_main!(benches);
