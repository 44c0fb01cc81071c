use burgers_core::linalg::C64;
use burgers_core::propagate::{decay_rate_fit, kernel_step_h_spectral, scaled_bessel_i};
use burgers_core::{build_grid, FieldKind, ModeField, SpectralGrid, WeightSpec};
use proptest::prelude::*;

fn grid() -> SpectralGrid {
    build_grid(12, 2, 20.0).unwrap()
}

fn field(kind: FieldKind, vals: &[(f64, f64)]) -> ModeField {
    let mut f = ModeField::zeros(grid().spec(), kind);
    for (c, v) in f.coeffs.iter_mut().zip(vals.iter().cycle()) {
        *c = C64::new(v.0, v.1);
    }
    f
}

fn coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn modefield_json_roundtrip(vals in coeffs(), k in 0usize..3) {
        let kind = [FieldKind::Scalar, FieldKind::Horizontal, FieldKind::Full][k];
        let f = field(kind, &vals);
        prop_assert_eq!(ModeField::from_json(&f.to_json().unwrap()).unwrap(), f);
    }

    #[test]
    fn block_flattening_roundtrip_preserves_the_norm(vals in coeffs(), k in 0usize..3) {
        let g = grid();
        let kind = [FieldKind::Scalar, FieldKind::Horizontal, FieldKind::Full][k];
        let f = field(kind, &vals);
        let blocks = g.to_blocks(&f);
        let back = g.from_blocks(kind, &blocks);
        let d = back.sub(&f).max_abs();
        prop_assert!(d <= 1e-12 * f.max_abs().max(1.0));
        let flat: f64 = blocks.iter().flat_map(|b| b.iter().map(|v| v.norm_sqr())).sum();
        let direct = g.inner(&f, &f).re;
        prop_assert!((flat - direct).abs() <= 1e-10 * direct.max(1e-300));
    }

    #[test]
    fn weight_label_roundtrip(m in 1.01..1e3f64) {
        let w = WeightSpec::finite(m).unwrap();
        prop_assert_eq!(WeightSpec::parse(&w.label()).unwrap(), w);
    }

    #[test]
    fn scaled_bessel_recurrence(z in 0.05..800.0f64) {
        // I_{n-1}(z) - I_{n+1}(z) = (2n / z) I_n(z)
        let b = scaled_bessel_i(z, 8);
        for n in 1..8 {
            let lhs = b[n - 1] - b[n + 1];
            let rhs = 2.0 * n as f64 / z * b[n];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * b[0], "n={} z={}", n, z);
        }
    }

    #[test]
    fn rate_fit_recovers_exponentials(rate in -3.0..1.0f64, c in 1e-3..1e3f64) {
        let t: Vec<f64> = (0..=50).map(|i| i as f64 * 0.2).collect();
        let v: Vec<f64> = t.iter().map(|t| c * (rate * t).exp()).collect();
        let fit = decay_rate_fit(&t, &v, [2.0, 10.0]).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-9);
        prop_assert!(fit.halfwidth < 1e-9);
    }

    #[test]
    fn fokker_planck_semigroup_composes(vals in coeffs(), s in 0.01..2.0f64, t in 0.01..2.0f64) {
        let g = grid();
        let f = field(FieldKind::Scalar, &vals);
        let whole = kernel_step_h_spectral(&g, &f, s + t).unwrap();
        let split = kernel_step_h_spectral(&g, &kernel_step_h_spectral(&g, &f, s).unwrap(), t).unwrap();
        let n = g.inner(&f, &f).re.sqrt();
        prop_assert!(g.inner(&whole.sub(&split), &whole.sub(&split)).re.sqrt() <= 1e-10 * n);
    }
}
