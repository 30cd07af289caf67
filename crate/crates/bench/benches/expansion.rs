//! Benchmarks for the hot paths: equiamplitude expansion construction,
//! adapted expansions with their counting bounds, product expansions over
//! branch families, CHSH evaluation, and seeded sampling.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use equibell::{
    adapted_expand, chsh, equiamplitude_expand, joint_distribution, monte_carlo,
    probability_bounds, Backend, BranchWeightModel, Choice, EPRBScenario, Projector, StateVector,
};

fn random_state(rng: &mut ChaCha12Rng, dim: usize) -> StateVector {
    let amps: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    StateVector::new(amps).unwrap().normalized().unwrap()
}

fn bench_equiamplitude(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let psi = random_state(&mut rng, 256);
    let mut group = c.benchmark_group("equiamplitude_expand_dim256");
    for &n in &[8usize, 32, 128] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| equiamplitude_expand(black_box(&psi), n, None).unwrap())
        });
    }
    group.finish();
}

fn bench_adapted_bounds(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let psi = random_state(&mut rng, 256);
    let indices: Vec<usize> = (0..128).collect();
    let target = Projector::standard(256, &indices).unwrap();
    let mut group = c.benchmark_group("adapted_bounds_dim256");
    for &n in &[16usize, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                let ae = adapted_expand(black_box(&psi), &target, n).unwrap();
                probability_bounds(&ae)
            })
        });
    }
    group.finish();
}

fn standard_scenario(backend: Backend) -> EPRBScenario {
    EPRBScenario::standard(backend)
}

fn bench_product_expansion(c: &mut Criterion) {
    let sc = standard_scenario(Backend::Counting { n: 32 });
    c.bench_function("product_expansion_n32", |b| {
        b.iter(|| {
            sc.product_expansion(Choice::Primary, Choice::Primary, 32)
                .unwrap()
        })
    });
}

fn bench_chsh(c: &mut Criterion) {
    let born = standard_scenario(Backend::Born);
    c.bench_function("chsh_born", |b| b.iter(|| chsh(black_box(&born)).unwrap()));

    let counting = standard_scenario(Backend::Counting { n: 16 });
    c.bench_function("chsh_counting_n16", |b| {
        b.iter(|| chsh(black_box(&counting)).unwrap())
    });
}

fn bench_monte_carlo(c: &mut Criterion) {
    let sc = standard_scenario(Backend::Born);
    let settings = sc.settings(Choice::Primary, Choice::Primary);
    let jd = joint_distribution(&sc, Choice::Primary, Choice::Primary).unwrap();
    let mut cells = [[0.0; 2]; 2];
    for (s, row) in cells.iter_mut().enumerate() {
        for (t, cell) in row.iter_mut().enumerate() {
            *cell = jd.cells[s][t].midpoint();
        }
    }
    let model = BranchWeightModel::from_cells(cells, settings).unwrap();
    c.bench_function("monte_carlo_100k_draws", |b| {
        b.iter(|| monte_carlo(&model, &settings, 100_000, 7, 0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_equiamplitude,
    bench_adapted_bounds,
    bench_product_expansion,
    bench_chsh,
    bench_monte_carlo
);
criterion_main!(benches);
