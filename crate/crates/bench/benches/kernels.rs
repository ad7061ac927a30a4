use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dss_core::channel::{rrc_shape, ssfm_propagate, FiberParams};
use dss_core::ess::{random_index, EnergyTrellis, PamAlphabet};
use dss_core::metrics::{d_edi, edi, DispersionSchedule, EdiWindow};
use dss_core::{normalize_power, ComplexSample, DualPolSymbolBlock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_block(len: usize, seed: u64) -> DualPolSymbolBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pt = || f64::from(2 * rng.random_range(0..8i32) - 7);
    let mut sym = || ComplexSample::new(pt(), pt());
    let p1 = (0..len).map(|_| sym()).collect();
    let p2 = (0..len).map(|_| sym()).collect();
    DualPolSymbolBlock::new(p1, p2).unwrap()
}

fn ess(c: &mut Criterion) {
    let alphabet = PamAlphabet::pam(4);
    let e = EnergyTrellis::smallest_e_max(108, &alphabet, 166).unwrap();
    let t = EnergyTrellis::build(108, alphabet.clone(), e).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let idx = random_index(&mut rng, t.bits());
    let seq = t.encode(&idx).unwrap();
    c.bench_function("ess_build_l108", |b| b.iter(|| EnergyTrellis::build(108, alphabet.clone(), black_box(e)).unwrap()));
    c.bench_function("ess_encode_l108", |b| b.iter(|| t.encode(black_box(&idx)).unwrap()));
    c.bench_function("ess_decode_l108", |b| b.iter(|| t.decode(black_box(&seq)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let x = random_block(108, 2);
    let w = EdiWindow::new(2).unwrap();
    let sched = DispersionSchedule::contiguous(17.0, 1550.0, 80.0, 13.75, 29).unwrap();
    c.bench_function("edi_108", |b| b.iter(|| edi(black_box(&x), w).unwrap()));
    c.bench_function("d_edi_108_30pts", |b| b.iter(|| d_edi(black_box(&x), w, &sched).unwrap()));
}

fn ssfm(c: &mut Criterion) {
    let x = random_block(4096, 3);
    let w = normalize_power(&rrc_shape(&x, 0.1, 2, 50e9).unwrap(), 5.0).unwrap();
    let fiber = FiberParams::ssmf(10.0);
    let mut g = c.benchmark_group("ssfm");
    g.sample_size(10);
    g.bench_function("8192_samples_10km_1km_step", |b| b.iter(|| ssfm_propagate(black_box(&w), &fiber, 1.0, 7).unwrap()));
    g.finish();
}

criterion_group!(benches, ess, metrics, ssfm);
criterion_main!(benches);
