//! Criterion benchmarks of the hot paths: operator assembly, dense spectra,
//! the kernel propagator, the nonlinear term and evolution steps.

use burgers_core::operators::{assemble_l_alpha_h, assemble_stretched_generator};
use burgers_core::propagate::{advection_term, evolve_stretched, kernel_step_h, random_solenoidal_field, EvolveOptions};
use burgers_core::spectra::compute_spectrum;
use burgers_core::spectral_grid::random_hermite_field;
use burgers_core::{build_grid, FieldKind, SpectralGrid};
use criterion::{BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(n_r: usize, n_max: usize) -> SpectralGrid {
    build_grid(n_r, n_max, 20.0).expect("benchmark grid")
}

pub fn benchmarks(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for (n_r, n_max) in [(32, 4), (64, 8)] {
        let g = grid(n_r, n_max);
        group.bench_with_input(BenchmarkId::new("stretched_generator", n_r), &g, |b, g| {
            b.iter(|| assemble_stretched_generator(g, 10.0, 1.0).unwrap())
        });
    }
    group.finish();

    let g = grid(64, 8);
    let op = assemble_l_alpha_h(&g, 10.0).unwrap();
    c.bench_function("spectrum/l_alpha_h_64x8", |b| b.iter(|| compute_spectrum(&op, false).unwrap()));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = random_hermite_field(&g, FieldKind::Scalar, 6, true, &mut rng).unwrap();
    c.bench_function("kernel_step_h/64x8", |b| b.iter(|| kernel_step_h(&g, &f, 0.5).unwrap()));
    c.bench_function("advection_term/64x8", |b| b.iter(|| advection_term(&g, &f, &f).unwrap()));

    let g = grid(32, 4);
    let w0 = random_solenoidal_field(&g, 1.0, 2, &mut rng).unwrap();
    let opts = EvolveOptions { dt: 0.01, dt_out: 0.1, ..Default::default() };
    c.bench_function("evolve_stretched/32x4_10_steps", |b| {
        b.iter(|| evolve_stretched(&g, &w0, 1.0, 10.0, 0.1, &opts).unwrap())
    });
}
