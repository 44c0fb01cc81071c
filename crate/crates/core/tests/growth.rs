use burgers_core::linalg::{self, CMat, C64};
use burgers_core::spectra::*;
use burgers_core::spectral_grid::{block_segments, FieldKind};
use burgers_core::{build_grid, SpectralGrid, WeightSpec};
use ndarray_linalg::{Eigh, UPLO};

fn small() -> SpectralGrid {
    build_grid(24, 3, 20.0).unwrap()
}

fn basis(g: &SpectralGrid, m: i32) -> CMat {
    resolved_basis(g, &block_segments(&g.spec(), FieldKind::Full, m), None)
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    linalg::rel_diff(a, b)
}

#[test]
fn passive_vortex_never_amplifies() {
    let g = small();
    let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
    let c = transient_growth(&g, 0.0, 0.0, WeightSpec::Gaussian, &times, &GrowthOptions::default()).unwrap();
    assert!((c.gain[0] - 1.0).abs() < 1e-12);
    for w in c.gain.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12));
    }
    // slowest mean-zero mode is d_j g in w3, rate 1/2
    let last = *c.gain.last().unwrap();
    assert!((last - (-2.5f64).exp()).abs() < 1e-8, "{last}");
}

#[test]
fn zero_circulation_propagator_is_the_analytic_exponential() {
    let g = small();
    let (k0, t, m) = (1.5, 2.0, 1);
    let x0 = basis(&g, m);
    let phi = block_propagator(&g, 0.0, k0, m, t, &x0, &GrowthOptions::default()).unwrap();
    // the alpha = 0 block is real symmetric: exp(tL) = V e^{t lambda} V^T
    let l = generator_block(&g, 0.0, 0.0, m).unwrap();
    let (vals, vecs) = l.eigh(UPLO::Lower).unwrap();
    let damp = (-0.5 * k0 * k0 * (1.0 - (-2.0 * t).exp())).exp();
    let e = CMat::from_diag(&vals.mapv(|v| C64::new((t * v).exp() * damp, 0.0)));
    let exact = vecs.dot(&e).dot(&vecs.t().mapv(|v| v.conj())).dot(&x0);
    assert!(rel(&phi, &exact) < 1e-6, "{}", rel(&phi, &exact));
}

/// Exponential midpoint rule with `n` steps on `[0, t]`.
fn midpoint(g: &SpectralGrid, alpha: f64, k0: f64, m: i32, t: f64, n: usize, x0: &CMat) -> CMat {
    let h = t / n as f64;
    let mut x = x0.clone();
    for i in 0..n {
        let tm = (i as f64 + 0.5) * h;
        let a = generator_block(g, alpha, k0 * (-tm).exp(), m).unwrap();
        x = linalg::expm(&a.mapv(|v| v * h)).unwrap().dot(&x);
    }
    x
}

#[test]
fn propagator_matches_fine_exponential_midpoint() {
    let g = build_grid(16, 2, 20.0).unwrap();
    let (alpha, k0, m, t) = (3.0, 1.0, 1, 1.0);
    let x0 = basis(&g, m);
    let phi = block_propagator(&g, alpha, k0, m, t, &x0, &GrowthOptions::default()).unwrap();
    let coarse = midpoint(&g, alpha, k0, m, t, 200, &x0);
    let fine = midpoint(&g, alpha, k0, m, t, 400, &x0);
    let extrap = (&fine * C64::new(4.0 / 3.0, 0.0)) - (&coarse * C64::new(1.0 / 3.0, 0.0));
    assert!(rel(&fine, &coarse) > 1e-7, "reference is not exercising the coupling");
    assert!(rel(&phi, &extrap) < 1e-6, "{}", rel(&phi, &extrap));
}

#[test]
fn two_segment_composition() {
    let g = build_grid(20, 2, 20.0).unwrap();
    let (alpha, k0, m, s, t) = (5.0, 1.0, 1, 0.7, 2.0);
    let opts = GrowthOptions::default();
    let x0 = basis(&g, m);
    let whole = block_propagator(&g, alpha, k0, m, t, &x0, &opts).unwrap();
    let first = block_propagator(&g, alpha, k0, m, s, &x0, &opts).unwrap();
    let second = block_propagator(&g, alpha, k0 * (-s).exp(), m, t - s, &first, &opts).unwrap();
    assert!(rel(&second, &whole) < 1e-6, "{}", rel(&second, &whole));
}

#[test]
fn mirrored_blocks_have_equal_gain() {
    let g = build_grid(16, 2, 20.0).unwrap();
    let times = [0.0, 0.5, 1.0];
    for m in 1..=2 {
        let mut opts = GrowthOptions { blocks: Some(vec![m]), ..Default::default() };
        let a = transient_growth(&g, 6.0, 0.8, WeightSpec::Gaussian, &times, &opts).unwrap();
        opts.blocks = Some(vec![-m]);
        let b = transient_growth(&g, 6.0, 0.8, WeightSpec::Gaussian, &times, &opts).unwrap();
        for (x, y) in a.gain.iter().zip(&b.gain) {
            assert!((x - y).abs() < 1e-8 * x, "m={m}: {x} vs {y}");
        }
    }
}

#[test]
fn growth_curve_json_schema() {
    let g = build_grid(12, 1, 20.0).unwrap();
    let c = transient_growth(&g, 2.0, 1.0, WeightSpec::finite(4.0).unwrap(), &[0.0, 0.5], &GrowthOptions::default()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    assert_eq!(v["weight"], "4");
    assert_eq!(v["times"].as_array().unwrap().len(), 2);
    assert!((v["gain"][0].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!((v["k"][1].as_f64().unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    assert!(transient_growth(&g, 2.0, 1.0, WeightSpec::Gaussian, &[0.5, 1.0], &GrowthOptions::default()).is_err());
}
