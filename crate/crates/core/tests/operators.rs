use burgers_core::linalg::{CMat, C64, I};
use burgers_core::operators::*;
use burgers_core::spectral_grid::{block_segments, hermite_eigenfunction, Comp};
use burgers_core::{build_grid, FieldKind, ModeField, SpectralGrid};
use ndarray_linalg::{Eig, Eigh, UPLO};

fn grid() -> SpectralGrid {
    build_grid(64, 6, 20.0).unwrap()
}

/// `d_1^j d_2^k g`.
fn dg(g: &SpectralGrid, j: usize, k: usize) -> ModeField {
    hermite_eigenfunction(g, j, k).unwrap()
}

fn norm(g: &SpectralGrid, f: &ModeField) -> f64 {
    g.inner(f, f).re.sqrt()
}

fn residual(g: &SpectralGrid, op: &OperatorMatrix, f: &ModeField, lambda: f64) -> f64 {
    let mut lf = op.apply(g, f).unwrap();
    lf.axpy(C64::new(-lambda, 0.0), f);
    norm(g, &lf) / norm(g, f)
}

#[test]
fn fokker_planck_blocks_have_hermite_ladder() {
    let g = grid();
    let op = assemble_lh(&g).unwrap();
    for m in 0..=4 {
        let b = &op.block(m).unwrap().matrix;
        let (vals, _) = b.mapv(|v| v.re).eigh(UPLO::Lower).unwrap();
        let mut v = vals.to_vec();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..4 {
            let exact = -(m as f64 + 2.0 * j as f64) / 2.0;
            assert!((v[j] - exact).abs() < 1e-10, "m={m} j={j} {} vs {exact}", v[j]);
        }
    }
}

#[test]
fn gaussian_is_steady_for_every_circulation() {
    let g = grid();
    let f = dg(&g, 0, 0);
    for alpha in [0.0, 5.0, -3.0, 40.0] {
        let op = assemble_l_alpha_3(&g, alpha).unwrap();
        assert!(residual(&g, &op, &f, 0.0) < 1e-10, "alpha={alpha}");
    }
}

#[test]
fn translation_modes_decay_at_rate_one_half() {
    let g = grid();
    for alpha in [0.0, 10.0, -25.0] {
        let op = assemble_l_alpha_3(&g, alpha).unwrap();
        for f in [dg(&g, 1, 0), dg(&g, 0, 1)] {
            let r = residual(&g, &op, &f, -0.5);
            assert!(r < 1e-9, "alpha={alpha} residual={r}");
        }
    }
}

#[test]
fn rotational_field_is_eigenvector_of_horizontal_operator() {
    // x^perp g = (2 d_2 g, -2 d_1 g)
    let g = grid();
    let c1 = dg(&g, 0, 1).scaled(C64::new(2.0, 0.0));
    let c2 = dg(&g, 1, 0).scaled(C64::new(-2.0, 0.0));
    let f = ModeField::from_components(&[&c1, &c2]).unwrap();
    for alpha in [0.0, 7.0, -12.0] {
        let op = assemble_l_alpha_h(&g, alpha).unwrap();
        let r = residual(&g, &op, &f, -2.0);
        assert!(r < 1e-10, "alpha={alpha} residual={r}");
    }
}

#[test]
fn vortex_transport_is_skew_adjoint_on_resolved_fields() {
    let g = grid();
    let adv = assemble_advection(&g).unwrap();
    let fb = assemble_feedback3(&g).unwrap();
    let lam = adv.plus_scaled(C64::new(1.0, 0.0), &fb).unwrap();
    let fields: Vec<ModeField> = (0..=4)
        .flat_map(|t| (0..=t).map(move |j| (j, t - j)))
        .map(|(j, k)| dg(&g, j, k))
        .collect();
    for a in &fields {
        let la = lam.apply(&g, a).unwrap();
        for b in &fields {
            let lb = lam.apply(&g, b).unwrap();
            let s = g.inner(&la, b) + g.inner(a, &lb);
            let scale = norm(&g, a) * norm(&g, b);
            assert!(s.norm() < 1e-10 * scale, "{s}");
        }
    }
}

#[test]
fn coupling_vanishes_at_zero_wavenumber() {
    let g = build_grid(24, 3, 20.0).unwrap();
    let h = assemble_coupling(&g, 0.0).unwrap();
    assert!(h.blocks.iter().all(|b| b.matrix.iter().all(|v| *v == C64::new(0.0, 0.0))));
    let gen = assemble_stretched_generator(&g, 3.0, 0.0).unwrap();
    let lah = assemble_l_alpha_h(&g, 3.0).unwrap();
    // w+ block of the generator at k = 0 equals the horizontal operator
    let b = gen.block(1).unwrap();
    let bh = lah.block(1).unwrap();
    let n_r = g.n_r();
    let p = b.segments.iter().position(|s| s.comp == Comp::Plus).unwrap();
    let ph = bh.segments.iter().position(|s| s.comp == Comp::Plus).unwrap();
    for i in 0..n_r {
        for j in 0..n_r {
            assert_eq!(b.matrix[[p * n_r + i, p * n_r + j]], bh.matrix[[ph * n_r + i, ph * n_r + j]]);
        }
    }
}

/// `curl_k A` for `A = sum_c e_c d^{(j,k)} g` with Hermite multi-indices per component.
fn curl_of_hermite(g: &SpectralGrid, a: [(usize, usize); 3], k: f64) -> ModeField {
    let d = |c: usize, dj: usize, dk: usize| dg(g, a[c].0 + dj, a[c].1 + dk);
    let ik = I * k;
    // w1 = d2 A3 - ik A2, w2 = ik A1 - d1 A3, w3 = d1 A2 - d2 A1
    let mut w1 = d(2, 0, 1);
    w1.axpy(-ik, &d(1, 0, 0));
    let w2 = d(0, 0, 0).scaled(ik).sub(&d(2, 1, 0));
    let w3 = d(1, 1, 0).sub(&d(0, 0, 1));
    ModeField::from_components(&[&w1, &w2, &w3]).unwrap()
}

fn divergence(g: &SpectralGrid, f: &ModeField, k: f64) -> Vec<CMat> {
    // per block m: scalar mode m, flattened
    let spec = g.spec();
    (-(spec.n_max as i32)..=spec.n_max as i32)
        .map(|m| {
            let segs = block_segments(&spec, FieldKind::Full, m);
            let v = g.gather(f, m);
            let d = divergence_block(g, m, &segs, k);
            d.dot(&v).insert_axis(ndarray::Axis(1))
        })
        .collect()
}

#[test]
fn generator_maps_solenoidal_fields_by_the_stretching_identity() {
    let g = build_grid(64, 8, 20.0).unwrap();
    let k = 0.7;
    let w = curl_of_hermite(&g, [(1, 0), (0, 2), (1, 1)], k);
    let scale = norm(&g, &w);
    let dw = divergence(&g, &w, k);
    let dmax = dw.iter().flat_map(|b| b.iter().map(|v| v.norm())).fold(0.0, f64::max);
    assert!(dmax < 1e-10 * scale, "input divergence {dmax}");

    for alpha in [0.0, 4.0] {
        let gen = assemble_stretched_generator(&g, alpha, k).unwrap();
        let gw = gen.apply(&g, &w).unwrap();
        let dg_ = divergence(&g, &gw, k);
        let w3 = w.component(2);
        let mut worst: f64 = 0.0;
        for (idx, m) in (-(g.n_max() as i32)..=g.n_max() as i32).enumerate() {
            let v3 = g.gather(&w3, m);
            for i in 0..g.n_r() {
                let expect = I * k * v3[i];
                worst = worst.max((dg_[idx][[i, 0]] - expect).norm());
            }
        }
        assert!(worst < 1e-8 * scale, "alpha={alpha} divergence defect {worst}");
    }
}

#[test]
fn mirrored_blocks_are_conjugate() {
    let g = build_grid(24, 3, 20.0).unwrap();
    let gen = assemble_stretched_generator(&g, 2.5, 0.9).unwrap();
    let n_r = g.n_r();
    for m in 1..=4 {
        let a = gen.block(m).unwrap();
        let b = gen.block(-m).unwrap();
        // segment (+, n) of block m mirrors (-, -n) of block -m
        let mirror = |s: &burgers_core::spectral_grid::Segment| {
            let comp = match s.comp {
                Comp::Plus => Comp::Minus,
                Comp::Minus => Comp::Plus,
                Comp::Vertical => Comp::Vertical,
            };
            b.segments.iter().position(|t| t.comp == comp && t.n == -s.n).unwrap()
        };
        for (ra, sa) in a.segments.iter().enumerate() {
            for (ca, ta) in a.segments.iter().enumerate() {
                let (rb, cb) = (mirror(sa), mirror(ta));
                // conjugation sends k to -k, which flips the sign of w3 relative to w_h
                let sign = if (sa.comp == Comp::Vertical) != (ta.comp == Comp::Vertical) { -1.0 } else { 1.0 };
                for i in 0..n_r {
                    for j in 0..n_r {
                        let x = a.matrix[[ra * n_r + i, ca * n_r + j]];
                        let y = b.matrix[[rb * n_r + i, cb * n_r + j]];
                        assert!((x - sign * y.conj()).norm() < 1e-12 * (1.0 + x.norm()), "m={m}");
                    }
                }
            }
        }
        let ea = a.matrix.eig().unwrap().0;
        let eb = b.matrix.eig().unwrap().0;
        let sa: f64 = ea.iter().map(|v| v.re).sum();
        let sb: f64 = eb.iter().map(|v| v.re).sum();
        assert!((sa - sb).abs() < 1e-8 * sa.abs());
    }
}

#[test]
fn generator_export_roundtrips() {
    let g = build_grid(12, 1, 20.0).unwrap();
    let gen = assemble_stretched_generator(&g, 1.0, 0.5).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&gen.to_json().unwrap()).unwrap();
    assert_eq!(doc["dim"].as_u64().unwrap() as usize, gen.dim());
    assert_eq!(doc["kind"]["type"], "generator");
    let back = OperatorMatrix::from_json(&gen.to_json().unwrap()).unwrap();
    assert_eq!(back, gen);
}

