//! Benchmarks for the hot kernels: excursion sampling, erasure with tree
//! construction, atom emission from a marked tree, and the forward
//! event-driven simulation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use snakelab::erasure::{build_tree, h_erase};
use snakelab::excursion::sample_excursion_conditioned;
use snakelab::motion::{mark_tree, passage_table};
use snakelab::particles::{forward_oobbm, oobbm_from_snake_tree};
use snakelab::rng::{rng_for, tag};

const H: f64 = 0.25;
const DT: f64 = 1e-4;
const MAX_POINTS: usize = 5_000_000;

fn bench_excursion(c: &mut Criterion) {
    c.bench_function("conditioned excursion, h 0.25 dt 1e-4", |b| {
        let mut i = 0u64;
        b.iter(|| {
            let mut rng = rng_for(7, tag::EXCURSION, i);
            i += 1;
            black_box(sample_excursion_conditioned(H, DT, MAX_POINTS, &mut rng))
        });
    });
}

fn bench_erasure(c: &mut Criterion) {
    let mut rng = rng_for(7, tag::EXCURSION, 3);
    let exc = sample_excursion_conditioned(H, DT, MAX_POINTS, &mut rng);
    c.bench_function("h-erasure and tree build", |b| {
        b.iter(|| {
            let walk = h_erase(black_box(&exc.path), H);
            black_box(build_tree(&walk).expect("excursion exceeds h"))
        });
    });
}

fn bench_atoms(c: &mut Criterion) {
    let mut rng = rng_for(7, tag::EXCURSION, 3);
    let exc = sample_excursion_conditioned(H, DT, MAX_POINTS, &mut rng);
    let walk = h_erase(&exc.path, H);
    let tree = build_tree(&walk).expect("excursion exceeds h");
    let marks = mark_tree(&tree, 0.0, 1.0, 2.0, &mut rng_for(7, tag::MARKS, 3));
    c.bench_function("atom emission at three ages", |b| {
        b.iter(|| {
            for s in [0.2, 0.5, 1.0] {
                let table = passage_table(black_box(&tree), &marks, s);
                black_box(oobbm_from_snake_tree(&tree, &table));
            }
        });
    });
}

fn bench_forward(c: &mut Criterion) {
    c.bench_function("forward population to age 0.5", |b| {
        let mut i = 0u64;
        b.iter(|| {
            let mut rng = rng_for(7, tag::FORWARD, i);
            i += 1;
            black_box(forward_oobbm(8.0, 1.0, 2.0, 1, 0, 0.5, 200_000, &mut rng))
        });
    });
}

criterion_group!(kernels, bench_excursion, bench_erasure, bench_atoms, bench_forward);
criterion_main!(kernels);
