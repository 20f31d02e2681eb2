//! Attention benchmarks: pooled self-attention across strides against the
//! unpooled baseline, each under single-thread and multi-thread pools.
//!
//! Run with `cargo bench -p evit-model`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use evit_model::backbone::esa;
use evit_model::params::{Init, Initializer, ParamStore};
use evit_model::vit::msa;
use evit_tensor::{Tape, Tensor};

const LATTICE: usize = 32;
const WIDTH: usize = 64;
const HEADS: usize = 4;

fn attention_params(seed: u64) -> ParamStore<f32> {
    let mut ini = Initializer::new(Init::Seeded(seed));
    let mut store = ParamStore::new();
    let dh = WIDTH / HEADS;
    for w in ["wq", "wk", "wv"] {
        store
            .insert(format!("attn.{w}"), ini.weight(&[HEADS, dh, dh], dh))
            .unwrap();
    }
    store
        .insert("attn.wo", ini.weight(&[WIDTH, WIDTH], WIDTH))
        .unwrap();
    store
}

fn tokens(seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(&[LATTICE * LATTICE, WIDTH], |_| {
        state = state.wrapping_mul(0xbf58_476d_1ce4_e5b9).wrapping_add(1);
        ((state >> 40) as f32 / (1u64 << 24) as f32) - 0.5
    })
}

fn run_esa(store: &ParamStore<f32>, x: &Tensor<f32>, s: usize) {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let bound = store.bind(&mut tape);
    let out = esa(&mut tape, input, LATTICE, LATTICE, &bound, "attn", HEADS, s).unwrap();
    black_box(tape.value(out).max_abs());
}

fn bench_esa_strides(c: &mut Criterion) {
    let store = attention_params(1);
    let x = tokens(2);
    let mut group = c.benchmark_group("esa_1024_tokens");
    for s in [1usize, 2, 4, 8] {
        group.bench_with_input(BenchmarkId::new("stride", s), &s, |b, &s| {
            b.iter(|| run_esa(&store, &x, s))
        });
    }
    group.finish();
}

fn bench_esa_vs_msa(c: &mut Criterion) {
    // Single head, full-width projections on both sides.
    let mut ini = Initializer::new(Init::Seeded(3));
    let mut store = ParamStore::<f32>::new();
    for w in ["wq", "wk", "wv"] {
        store
            .insert(format!("attn.{w}"), ini.weight(&[1, WIDTH, WIDTH], WIDTH))
            .unwrap();
    }
    store
        .insert("attn.wo", ini.weight(&[WIDTH, WIDTH], WIDTH))
        .unwrap();
    let x = tokens(4);

    let mut group = c.benchmark_group("esa_vs_msa_1024_tokens");
    for s in [1usize, 4] {
        group.bench_with_input(BenchmarkId::new("esa_stride", s), &s, |b, &s| {
            b.iter(|| run_esa(&store, &x, s))
        });
    }
    group.bench_function("msa", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let input = tape.leaf(x.clone());
            let bound = store.bind(&mut tape);
            let flat = |tape: &mut Tape<f32>, name: &str| {
                let v = bound.var(name).unwrap();
                tape.reshape(v, &[WIDTH, WIDTH]).unwrap()
            };
            let wq = flat(&mut tape, "attn.wq");
            let wk = flat(&mut tape, "attn.wk");
            let wv = flat(&mut tape, "attn.wv");
            let wo = bound.var("attn.wo").unwrap();
            let out = msa(&mut tape, input, wq, wk, wv, wo, 1).unwrap();
            black_box(tape.value(out).max_abs());
        })
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench_thread_scaling(c: &mut Criterion) {
    let store = attention_params(5);
    let x = tokens(6);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    let mut group = c.benchmark_group("esa_s2_threads");
    group.bench_function(BenchmarkId::new("seq", 1), |b| {
        b.iter(|| single.install(|| run_esa(&store, &x, 2)))
    });
    group.bench_function(
        BenchmarkId::new("par", rayon::current_num_threads()),
        |b| b.iter(|| run_esa(&store, &x, 2)),
    );
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench_thread_scaling(_c: &mut Criterion) {}

criterion_group!(benches, bench_esa_strides, bench_esa_vs_msa, bench_thread_scaling);
criterion_main!(benches);
