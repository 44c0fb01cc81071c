use std::f64::consts::PI;

use burgers_core::biot_savart::velocity_2d;
use burgers_core::fields::{a_of_t, burgers_velocity, gaussian_profile, ug_scalar};
use burgers_core::linalg::{self, CVec, C64};
use burgers_core::operators::{assemble_lh, assemble_stretched_generator};
use burgers_core::propagate::*;
use burgers_core::spectra::{block_propagator, GrowthOptions};
use burgers_core::spectral_grid::{hermite_eigenfunction, hermite_he, random_hermite_field};
use burgers_core::{build_grid, FieldKind, ModeField, SpectralGrid, WeightSpec};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dg(g: &SpectralGrid, j: usize, k: usize) -> ModeField {
    hermite_eigenfunction(g, j, k).unwrap()
}

fn norm(g: &SpectralGrid, f: &ModeField) -> f64 {
    g.inner(f, f).re.sqrt()
}

fn rel(g: &SpectralGrid, a: &ModeField, b: &ModeField) -> f64 {
    norm(g, &a.sub(b)) / norm(g, b)
}

/// `d_1^j d_2^k g` evaluated in closed form.
fn dg_exact(j: usize, k: usize, x: [f64; 2]) -> f64 {
    let s = std::f64::consts::SQRT_2;
    (-1.0 / s).powi((j + k) as i32) * hermite_he(j, x[0] / s) * hermite_he(k, x[1] / s) * gaussian_profile(x)
}

fn sample_points() -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    for i in 0..12 {
        let r = 0.3 + 0.65 * i as f64;
        for j in 0..7 {
            let th = 0.37 + 2.0 * PI * j as f64 / 7.0;
            pts.push([r * th.cos(), r * th.sin()]);
        }
    }
    pts
}

/// Off-center Gaussian bump with all angular modes present.
fn bump(g: &SpectralGrid) -> ModeField {
    let n_theta = 64;
    let mut vals = Array3::zeros((1, g.n_r(), n_theta));
    for (i, &r) in g.r_nodes().iter().enumerate() {
        for t in 0..n_theta {
            let th = 2.0 * PI * t as f64 / n_theta as f64;
            let (x1, x2) = (r * th.cos(), r * th.sin());
            let d2 = (x1 - 1.0).powi(2) + (x2 - 0.5).powi(2);
            vals[[0, i, t]] = C64::new((1.0 + x1 - 0.3 * x2 * x2) * (-d2 / 3.0).exp(), 0.0);
        }
    }
    g.analyze(&vals).unwrap()
}

#[test]
fn kernel_preserves_gaussian_and_damps_hermite_modes() {
    let g = build_grid(64, 8, 20.0).unwrap();
    for t in [0.1, 1.0, 5.0] {
        for (j, k) in [(0, 0), (1, 0), (1, 2), (3, 1)] {
            let f = dg(&g, j, k);
            let out = kernel_step_h(&g, &f, t).unwrap();
            let exact = f.scaled(C64::new((-0.5 * (j + k) as f64 * t).exp(), 0.0));
            assert!(rel(&g, &out, &exact) < 1e-8, "t={t} ({j},{k}) {}", rel(&g, &out, &exact));
        }
    }
}

#[test]
fn kernel_matches_matrix_exponential() {
    let g = build_grid(64, 8, 20.0).unwrap();
    let f = bump(&g);
    let lh = assemble_lh(&g).unwrap();
    for t in [0.1, 1.0, 5.0] {
        let mut exact = ModeField::zeros(g.spec(), FieldKind::Scalar);
        for b in &lh.blocks {
            let e = linalg::expm(&b.matrix.mapv(|v| v * t)).unwrap();
            g.scatter_add(&mut exact, b.m, &e.dot(&g.gather(&f, b.m)));
        }
        let quad = kernel_step_h(&g, &f, t).unwrap();
        let spec = kernel_step_h_spectral(&g, &f, t).unwrap();
        assert!(rel(&g, &quad, &exact) < 1e-6, "t={t} quadrature {}", rel(&g, &quad, &exact));
        assert!(rel(&g, &spec, &exact) < 1e-10, "t={t} spectral {}", rel(&g, &spec, &exact));
    }
    assert!(kernel_step_h(&g, &f, 0.0).is_err());
}

#[test]
fn vertical_kernel_moment_identities() {
    let x3: Vec<f64> = (0..=1200).map(|i| -30.0 + 0.05 * i as f64).collect();
    let interior = |x: f64| x.abs() <= 10.0;
    for t in [0.1f64, 1.0, 3.0] {
        let decay = (-t).exp();
        let a2 = a_of_t(2.0 * t).unwrap();
        let ones = vec![C64::new(1.0, 0.0); x3.len()];
        let lin: Vec<C64> = x3.iter().map(|x| C64::new(*x, 0.0)).collect();
        let k = 1.3;
        let wave: Vec<C64> = x3.iter().map(|x| C64::from_polar(1.0, k * x)).collect();
        let o1 = kernel_step_3(&x3, &ones, t).unwrap();
        let ol = kernel_step_3(&x3, &lin, t).unwrap();
        let ow = kernel_step_3(&x3, &wave, t).unwrap();
        for (i, &x) in x3.iter().enumerate().filter(|(_, x)| interior(**x)) {
            assert!((o1[i] - 1.0).norm() < 1e-8, "t={t} x={x}");
            assert!((ol[i] - decay * x).norm() < 1e-8, "t={t} x={x}");
            let expect = C64::from_polar((-0.5 * k * k * a2).exp(), k * decay * x);
            assert!((ow[i] - expect).norm() < 1e-8, "t={t} x={x}");
        }
    }
    assert!(kernel_step_3(&x3, &[C64::new(0.0, 0.0); 3], 1.0).is_err());
}

#[test]
fn advection_by_the_vortex_matches_closed_forms() {
    let g = build_grid(64, 8, 20.0).unwrap();
    let pts = sample_points();
    let g0 = dg(&g, 0, 0);
    let g1 = dg(&g, 1, 0);
    // (u^g x^perp) . grad d1 g = x2 u^g g / 2 and (d1 u^g x^perp) . grad g = -x2 u^g g / 2
    let a = g.synthesize(&advection_term(&g, &g0, &g1).unwrap(), &pts).unwrap();
    let b = g.synthesize(&advection_term(&g, &g1, &g0).unwrap(), &pts).unwrap();
    let c = g.synthesize(&advection_term(&g, &g0, &g0).unwrap(), &pts).unwrap();
    for (p, x) in pts.iter().enumerate() {
        let e = 0.5 * x[1] * ug_scalar(x[0] * x[0] + x[1] * x[1]).unwrap() * gaussian_profile(*x);
        assert!((a[[0, p]] - e).norm() < 1e-10, "{x:?}: {} vs {e}", a[[0, p]]);
        assert!((b[[0, p]] + e).norm() < 1e-10, "{x:?}: {} vs {}", b[[0, p]], -e);
        assert!(c[[0, p]].norm() < 1e-12);
    }
    // velocity field of g itself
    let u = velocity_2d(&g, &g0).unwrap().evaluate(&g, &pts).unwrap();
    for (p, x) in pts.iter().enumerate() {
        let e = burgers_velocity(*x);
        assert!((u[[0, p]].re - e[0]).abs() < 1e-10 && (u[[1, p]].re - e[1]).abs() < 1e-10);
    }
}

#[test]
fn advection_of_hermite_modes_matches_pointwise_product() {
    let g = build_grid(64, 8, 20.0).unwrap();
    let pts = sample_points();
    for ((ja, ka), (jb, kb)) in [((1, 1), (2, 0)), ((0, 2), (1, 2)), ((2, 1), (0, 1))] {
        let a = dg(&g, ja, ka);
        let b = dg(&g, jb, kb);
        let u = velocity_2d(&g, &a).unwrap().evaluate(&g, &pts).unwrap();
        let q = g.synthesize(&advection_term(&g, &a, &b).unwrap(), &pts).unwrap();
        let scale = q.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (p, x) in pts.iter().enumerate() {
            let e = u[[0, p]] * dg_exact(jb + 1, kb, *x) + u[[1, p]] * dg_exact(jb, kb + 1, *x);
            assert!((q[[0, p]] - e).norm() < 1e-8 * scale, "{x:?}: {} vs {e}", q[[0, p]]);
        }
    }
}

#[test]
fn circulation_of_gaussian_is_one() {
    let g = build_grid(64, 8, 20.0).unwrap();
    assert!((circulation(&g, &dg(&g, 0, 0)).unwrap() - 1.0).abs() < 1e-12);
    assert!(circulation(&g, &dg(&g, 1, 1)).unwrap().abs() < 1e-12);
}

/// Full three-component field with `(w1, w2, w3)` from scalar parts.
fn full(parts: [&ModeField; 3]) -> ModeField {
    ModeField::from_components(&parts).unwrap()
}

fn dense_linear_2d(g: &SpectralGrid, w0: &ModeField, alpha: f64, t: f64) -> ModeField {
    let gen = assemble_stretched_generator(g, alpha, 0.0).unwrap();
    let mut out = ModeField::zeros(g.spec(), FieldKind::Full);
    for b in &gen.blocks {
        let e = linalg::expm(&b.matrix.mapv(|v| v * t)).unwrap();
        g.scatter_add(&mut out, b.m, &e.dot(&g.gather(w0, b.m)));
    }
    out
}

fn random_full(g: &SpectralGrid, seed: u64) -> ModeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = g.hermite_order_limit().min(3);
    random_hermite_field(g, FieldKind::Full, order, false, &mut rng).unwrap()
}

#[test]
fn splitting_matches_dense_exponential_at_second_order() {
    let g = build_grid(32, 4, 20.0).unwrap();
    let w0 = random_full(&g, 7);
    let t = 2.0;
    let exact = dense_linear_2d(&g, &w0, 1.0, t);
    let err = |dt: f64| {
        let opts = EvolveOptions { dt, snapshots: vec![t], ..Default::default() };
        let tr = evolve_linear_2dvec(&g, &w0, 1.0, t, &opts).unwrap();
        rel(&g, &tr.snapshot(t).unwrap().unwrap(), &exact)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    assert!(e2 < 1e-4, "{e2}");
    let order = (e1 / e2).log2();
    assert!((order - 2.0).abs() < 0.3, "observed order {order} ({e1}, {e2})");
}

#[test]
fn passive_stretched_mode_carries_the_analytic_factor() {
    let g = build_grid(32, 4, 20.0).unwrap();
    // x^perp g in the horizontal part (rate -2), d1 g in the vertical part (rate -1/2)
    let wh1 = dg(&g, 0, 1).scaled(C64::new(2.0, 0.0));
    let wh2 = dg(&g, 1, 0).scaled(C64::new(-2.0, 0.0));
    let w0 = full([&wh1, &wh2, &dg(&g, 1, 0)]);
    let k0 = 1.2;
    let opts = EvolveOptions::default();
    let tr = evolve_stretched(&g, &w0, k0, 0.0, 3.0, &opts).unwrap();
    let (h0, v0) = (tr.norm_h[0], tr.norm_3[0]);
    for (i, &t) in tr.times.iter().enumerate() {
        let f = (-0.5 * k0 * k0 * a_of_t(2.0 * t).unwrap()).exp();
        assert!((tr.k[i] - k0 * (-t).exp()).abs() <= 1e-15 * k0);
        assert!((tr.norm_h[i] / (h0 * f * (-2.0 * t).exp()) - 1.0).abs() < 1e-6, "t={t}");
        assert!((tr.norm_3[i] / (v0 * f * (-0.5 * t).exp()) - 1.0).abs() < 1e-6, "t={t}");
    }
}

#[test]
fn zero_wavenumber_stretched_run_is_the_planar_run() {
    let g = build_grid(32, 4, 20.0).unwrap();
    let w0 = random_full(&g, 3);
    let opts = EvolveOptions { snapshots: vec![1.0], ..Default::default() };
    let a = evolve_stretched(&g, &w0, 0.0, 4.0, 1.0, &opts).unwrap();
    let b = evolve_linear_2dvec(&g, &w0, 4.0, 1.0, &opts).unwrap();
    for (x, y) in a.norm_h.iter().zip(&b.norm_h).chain(a.norm_3.iter().zip(&b.norm_3)) {
        assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-300), "{x} vs {y}");
    }
    let (fa, fb) = (a.snapshot(1.0).unwrap().unwrap(), b.snapshot(1.0).unwrap().unwrap());
    assert!(rel(&g, &fa, &fb) < 1e-10);
}

fn solenoidal(g: &SpectralGrid, k: f64, seed: u64) -> ModeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_solenoidal_field(g, k, 2, &mut rng).unwrap()
}

#[test]
fn stretched_evolution_matches_block_propagator_and_stays_solenoidal() {
    let g = build_grid(48, 6, 20.0).unwrap();
    let (alpha, k0, t) = (3.0, 1.0, 1.0);
    let w0 = solenoidal(&g, k0, 11);
    let opts = EvolveOptions { snapshots: vec![t], ..Default::default() };
    let tr = evolve_stretched(&g, &w0, k0, alpha, t, &opts).unwrap();
    let w = tr.snapshot(t).unwrap().unwrap();
    for m in -2..=2 {
        let x0 = g.gather(&w0, m).insert_axis(ndarray::Axis(1));
        let exact: CVec = block_propagator(&g, alpha, k0, m, t, &x0, &GrowthOptions::default())
            .unwrap()
            .column(0)
            .to_owned();
        let got = g.gather(&w, m);
        let e = linalg::vec_norm((&got - &exact).view()) / linalg::vec_norm(exact.view());
        assert!(e < 1e-4, "m={m}: {e}");
    }
    let worst = tr.divergence.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-6, "divergence {worst}");
}

#[test]
fn two_segment_composition() {
    let g = build_grid(24, 3, 20.0).unwrap();
    let (alpha, k0, s, t) = (5.0, 1.0, 0.7, 2.0);
    let w0 = solenoidal(&g, k0, 5);
    let opts = EvolveOptions { snapshots: vec![s, t], ..Default::default() };
    let whole = evolve_stretched(&g, &w0, k0, alpha, t, &opts).unwrap();
    let mid = whole.snapshot(s).unwrap().unwrap();
    let rest_opts = EvolveOptions { snapshots: vec![t - s], ..Default::default() };
    let rest = evolve_stretched(&g, &mid, k0 * (-s).exp(), alpha, t - s, &rest_opts).unwrap();
    let a = whole.snapshot(t).unwrap().unwrap();
    let b = rest.snapshot(t - s).unwrap().unwrap();
    assert!(rel(&g, &b, &a) < 1e-6, "{}", rel(&g, &b, &a));
}

#[test]
fn planar_linear_decay_rates() {
    let g = build_grid(48, 6, 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w0 = random_hermite_field(&g, FieldKind::Full, 4, true, &mut rng).unwrap();
    let mut tr = evolve_linear_2dvec(&g, &w0, 10.0, 15.0, &EvolveOptions::default()).unwrap();
    let h = tr.fit(Series::NormH, [5.0, 15.0]).unwrap();
    let v = tr.fit(Series::Norm3, [5.0, 15.0]).unwrap();
    assert!(h.rate <= -1.45, "{h:?}");
    assert!((v.rate + 0.5).abs() < 0.05, "{v:?}");
    assert!(tr.circulation.iter().all(|c| c.abs() < 1e-10));
}

#[test]
fn nonlinear_perturbation_decays_at_rate_one_half() {
    let g = build_grid(48, 6, 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_hermite_field(&g, FieldKind::Scalar, 4, true, &mut rng).unwrap();
    let w0 = f.scaled(C64::new(1e-3 / g.weighted_norm(&f, WeightSpec::Gaussian), 0.0));
    let mut tr = evolve_nonlinear_2d(&g, &w0, 1.0, 12.0, &EvolveOptions::default()).unwrap();
    let fit = tr.fit(Series::Norm3, [5.0, 12.0]).unwrap();
    assert!((fit.rate + 0.5).abs() <= 0.1, "{fit:?}");
    let c0 = tr.circulation[0];
    assert!(tr.circulation.iter().all(|c| (c - c0).abs() < 1e-8));
    assert!(evolve_nonlinear_2d(&g, &dg(&g, 0, 0), 1.0, 1.0, &EvolveOptions::default()).is_err());
}

#[test]
fn smoothing_exponent_is_near_one_half() {
    let g = build_grid(64, 8, 20.0).unwrap();
    let fit = smoothing_exponent(&g, 1e-3, 1.0, 16).unwrap();
    assert!((fit.rate + 0.5).abs() <= 0.1, "{fit:?}");
}

#[test]
fn trace_serializations() {
    let g = build_grid(16, 2, 20.0).unwrap();
    let w0 = random_full(&g, 0);
    let opts = EvolveOptions { dt: 0.05, dt_out: 0.1, snapshots: vec![0.2], ..Default::default() };
    let tr = evolve_linear_2dvec(&g, &w0, 1.0, 0.3, &opts).unwrap();
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# burgers-spectra v1"));
    assert_eq!(lines.next(), Some("t,norm_h,norm_3,k,circulation"));
    assert_eq!(lines.count(), 4);
    let v: serde_json::Value = serde_json::from_str(&tr.to_json().unwrap()).unwrap();
    assert_eq!(v["format"], "burgers-spectra/evolution/v1");
    assert_eq!(v["model"], "linear2d");
    assert_eq!(v["snapshots"][0]["field"]["format"], "burgers-spectra/modefield/v1");
    let back: EvolutionTrace = serde_json::from_str(&tr.to_json().unwrap()).unwrap();
    assert_eq!(back, tr);
    let bad = EvolveOptions { dt: 0.03, ..opts };
    assert!(evolve_linear_2dvec(&g, &w0, 1.0, 0.3, &bad).is_err());
}
