//! The acceptance criteria as runnable checks. `verify` and the acceptance test
//! target both call [`run_criteria`]; a numerical failure or panic inside a check
//! becomes a failed result rather than aborting the run.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anyhow::{anyhow, Result};
use burgers_core::biot_savart::velocity_2d;
use burgers_core::fields::{a_of_t, burgers_velocity};
use burgers_core::linalg;
use burgers_core::operators::{
    assemble_advection, assemble_l_alpha_3, assemble_l_alpha_h, assemble_lh, OperatorMatrix,
};
use burgers_core::propagate::{
    evolve_linear_2dvec, evolve_nonlinear_2d, evolve_stretched, kernel_step_3, kernel_step_h, random_solenoidal_field,
    smoothing_exponent, EvolveOptions, Series,
};
use burgers_core::spectra::{
    classify_modes, compute_spectrum, spectral_gap, transient_growth, Classification, GrowthOptions, Subspace, TAU_MAX,
};
use burgers_core::spectral_grid::{hermite_eigenfunction, random_hermite_field};
use burgers_core::{FieldKind, GridSpec, ModeField, SpectralGrid, WeightSpec, C64};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const VERIFY_FORMAT: &str = "burgers-spectra/verify/v1";

/// Criterion numbers and short names.
pub const CRITERIA: [(u8, &str); 12] = [
    (1, "fokker-planck ladder"),
    (2, "biot-savart closed form"),
    (3, "universal eigenvalue -2"),
    (4, "uniform spectral gap"),
    (5, "transport skew-symmetry"),
    (6, "kernel vs matrix exponential"),
    (7, "smoothing rate"),
    (8, "stretched-mode structure"),
    (9, "linear decay rates"),
    (10, "transient amplification trend"),
    (11, "nonlinear decay"),
    (12, "mode classification"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<32} {} ({:.1} s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format: String,
    pub grid: GridSpec,
    pub seed: u64,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

/// Runs the listed criteria (all when `ids` is empty) in order.
pub fn run_criteria(spec: GridSpec, seed: u64, ids: &[u8]) -> VerifyReport {
    let wanted: Vec<u8> = if ids.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { ids.to_vec() };
    let criteria: Vec<CriterionResult> = wanted.iter().map(|&id| run_criterion(spec, seed, id)).collect();
    VerifyReport {
        format: VERIFY_FORMAT.into(),
        grid: spec,
        seed,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

pub fn run_criterion(spec: GridSpec, seed: u64, id: u8) -> CriterionResult {
    let name = CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).unwrap_or("unknown");
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(|| -> Result<Outcome> {
        let grid = SpectralGrid::new(spec)?;
        match id {
            1 => ladder(&grid),
            2 => biot_savart(&grid),
            3 => universal_mode(&grid),
            4 => uniform_gap(&grid),
            5 => skew_symmetry(&grid, seed),
            6 => kernels(&grid),
            7 => smoothing(&grid),
            8 => stretched_structure(&grid, seed),
            9 => linear_rates(&grid, seed),
            10 => amplification(&grid),
            11 => nonlinear_decay(&grid, seed),
            12 => classification(&grid),
            _ => Err(anyhow!("no criterion {id}")),
        }
    }));
    let (passed, detail) = match res {
        Ok(Ok(o)) => (o.passed, o.detail),
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            (false, format!("panic: {msg}"))
        }
    };
    CriterionResult { id, name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn dg(g: &SpectralGrid, j: usize, k: usize) -> Result<ModeField> {
    Ok(hermite_eigenfunction(g, j, k)?)
}

fn norm(g: &SpectralGrid, f: &ModeField) -> f64 {
    g.inner(f, f).re.sqrt()
}

/// `x_h^perp g = (2 d2 g, -2 d1 g)`.
fn rotational_field(g: &SpectralGrid) -> Result<ModeField> {
    let c1 = dg(g, 0, 1)?.scaled(C64::new(2.0, 0.0));
    let c2 = dg(g, 1, 0)?.scaled(C64::new(-2.0, 0.0));
    Ok(ModeField::from_components(&[&c1, &c2])?)
}

fn residual(g: &SpectralGrid, op: &OperatorMatrix, f: &ModeField, lambda: f64) -> Result<f64> {
    let mut lf = op.apply(g, f)?;
    lf.axpy(C64::new(-lambda, 0.0), f);
    Ok(norm(g, &lf) / norm(g, f))
}

fn ladder(g: &SpectralGrid) -> Result<Outcome> {
    let vals = compute_spectrum(&assemble_lh(g)?, false)?.eigenvalues();
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for j in 0..=6usize {
        let exact = C64::new(-(j as f64) / 2.0, 0.0);
        let mut d: Vec<f64> = vals.iter().map(|v| (v - exact).norm()).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        worst = worst.max(d[j]);
        if d[j] >= 1e-8 || d.get(j + 1).is_some_and(|x| *x < 1e-8) {
            bad.push(j);
        }
    }
    outcome(bad.is_empty(), format!("max error {worst:.2e}, wrong multiplicity at j = {bad:?}"))
}

fn biot_savart(g: &SpectralGrid) -> Result<Outcome> {
    let u = velocity_2d(g, &dg(g, 0, 0)?)?;
    let n_theta = g.min_theta();
    let mut worst: f64 = 0.0;
    for (i, &r) in g.r_nodes().iter().enumerate() {
        for l in 0..n_theta {
            let th = 2.0 * PI * l as f64 / n_theta as f64;
            let e = burgers_velocity([r * th.cos(), r * th.sin()]);
            for (c, ec) in e.iter().enumerate() {
                worst = worst.max((u.at_node(c, i, th) - ec).norm());
            }
        }
    }
    outcome(worst < 1e-8, format!("max abs error {worst:.2e}"))
}

fn universal_mode(g: &SpectralGrid) -> Result<Outcome> {
    let f = rotational_field(g)?;
    let mut worst: f64 = 0.0;
    for alpha in [0.0, 1.0, 10.0, 100.0] {
        worst = worst.max(residual(g, &assemble_l_alpha_h(g, alpha)?, &f, -2.0)?);
    }
    outcome(worst < 1e-7, format!("max relative residual {worst:.2e}"))
}

fn uniform_gap(g: &SpectralGrid) -> Result<Outcome> {
    let w = WeightSpec::Gaussian;
    let rows: Vec<Result<(f64, f64, f64, f64)>> = [0.0, 1.0, 5.0, 10.0, 50.0, 100.0]
        .par_iter()
        .map(|&alpha| {
            let h = classify_modes(&compute_spectrum(&assemble_l_alpha_h(g, alpha)?, true)?, g, w)?;
            let v = classify_modes(&compute_spectrum(&assemble_l_alpha_3(g, alpha)?, true)?, g, w)?;
            Ok((
                alpha,
                spectral_gap(&h, g, Subspace::All)?,
                spectral_gap(&h, g, Subspace::DivergenceFree)?,
                spectral_gap(&v, g, Subspace::MeanZero)?,
            ))
        })
        .collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for row in rows {
        let (alpha, gh, gd, g3) = row?;
        ok &= gh <= -1.5 + 1e-6 && gd <= -2.0 + 1e-6 && g3 <= -0.5 + 1e-6;
        detail.push(format!("a={alpha}: {gh:.6}/{gd:.6}/{g3:.6}"));
    }
    outcome(ok, format!("gap_h/div-free/gap_3 {}", detail.join(", ")))
}

fn white_field(g: &SpectralGrid, kind: FieldKind, rng: &mut ChaCha8Rng) -> ModeField {
    let mut f = ModeField::zeros(g.spec(), kind);
    for c in f.coeffs.iter_mut() {
        *c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    f
}

fn skew_symmetry(g: &SpectralGrid, seed: u64) -> Result<Outcome> {
    let op = assemble_advection(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = white_field(g, FieldKind::Scalar, &mut rng);
        let lf = op.apply(g, &f)?;
        worst = worst.max(g.inner(&lf, &f).re.abs() / g.inner(&f, &f).re);
    }
    outcome(worst < 1e-10, format!("max |Re<L f, f>| / |f|^2 = {worst:.2e}"))
}

/// Off-center Gaussian bump carrying every angular mode.
fn bump(g: &SpectralGrid) -> Result<ModeField> {
    let n_theta = 4 * g.n_max() + 8;
    let mut vals = Array3::zeros((1, g.n_r(), n_theta));
    for (i, &r) in g.r_nodes().iter().enumerate() {
        for t in 0..n_theta {
            let th = 2.0 * PI * t as f64 / n_theta as f64;
            let (x1, x2) = (r * th.cos(), r * th.sin());
            let d2 = (x1 - 1.0).powi(2) + (x2 - 0.5).powi(2);
            vals[[0, i, t]] = C64::new((1.0 + x1 - 0.3 * x2 * x2) * (-d2 / 3.0).exp(), 0.0);
        }
    }
    Ok(g.analyze(&vals)?)
}

fn kernels(g: &SpectralGrid) -> Result<Outcome> {
    let f = bump(g)?;
    let lh = assemble_lh(g)?;
    let mut worst_h: f64 = 0.0;
    for t in [0.1, 1.0, 5.0] {
        let mut exact = ModeField::zeros(g.spec(), FieldKind::Scalar);
        for b in &lh.blocks {
            let e = linalg::expm(&b.matrix.mapv(|v| v * t))?;
            g.scatter_add(&mut exact, b.m, &e.dot(&g.gather(&f, b.m)));
        }
        let quad = kernel_step_h(g, &f, t)?;
        worst_h = worst_h.max(norm(g, &quad.sub(&exact)) / norm(g, &exact));
    }
    // constants, linear functions and Fourier modes in x3, away from the grid ends
    let x3: Vec<f64> = (0..=1200).map(|i| -30.0 + 0.05 * i as f64).collect();
    let k = 1.3;
    let ones = vec![C64::new(1.0, 0.0); x3.len()];
    let lin: Vec<C64> = x3.iter().map(|x| C64::new(*x, 0.0)).collect();
    let wave: Vec<C64> = x3.iter().map(|x| C64::from_polar(1.0, k * x)).collect();
    let mut worst_3: f64 = 0.0;
    for t in [0.1f64, 1.0, 5.0] {
        let (decay, a2) = ((-t).exp(), a_of_t(2.0 * t)?);
        let o1 = kernel_step_3(&x3, &ones, t)?;
        let ol = kernel_step_3(&x3, &lin, t)?;
        let ow = kernel_step_3(&x3, &wave, t)?;
        for (i, &x) in x3.iter().enumerate().filter(|(_, x)| x.abs() <= 10.0) {
            let fourier = C64::from_polar((-0.5 * k * k * a2).exp(), k * decay * x);
            worst_3 = worst_3.max((o1[i] - 1.0).norm()).max((ol[i] - decay * x).norm()).max((ow[i] - fourier).norm());
        }
    }
    outcome(
        worst_h < 1e-6 && worst_3 < 1e-8,
        format!("kernel_h rel error {worst_h:.2e}, kernel_3 moment error {worst_3:.2e}"),
    )
}

fn smoothing(g: &SpectralGrid) -> Result<Outcome> {
    let fit = smoothing_exponent(g, 1e-3, 1.0, 16)?;
    outcome((fit.rate + 0.5).abs() <= 0.1, format!("fitted exponent {:.4}", fit.rate))
}

fn stretched_structure(g: &SpectralGrid, seed: u64) -> Result<Outcome> {
    let opts = EvolveOptions::default();
    // x^perp g (rate -2) horizontally and d1 g (rate -1/2) vertically
    let rot = rotational_field(g)?;
    let w0 = ModeField::from_components(&[&rot.component(0), &rot.component(1), &dg(g, 1, 0)?])?;
    let k0 = 1.0;
    let tr = evolve_stretched(g, &w0, k0, 0.0, 5.0, &opts)?;
    let mut k_exact = true;
    let mut worst_f: f64 = 0.0;
    for (i, &t) in tr.times.iter().enumerate() {
        k_exact &= tr.k[i] == k0 * (-t).exp();
        let f = (-0.5 * k0 * k0 * a_of_t(2.0 * t)?).exp();
        worst_f = worst_f
            .max((tr.norm_h[i] / (tr.norm_h[0] * f * (-2.0 * t).exp()) - 1.0).abs())
            .max((tr.norm_3[i] / (tr.norm_3[0] * f * (-0.5 * t).exp()) - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = random_solenoidal_field(g, 0.0, 3, &mut rng)?;
    let a = evolve_stretched(g, &w0, 0.0, 4.0, 2.0, &opts)?;
    let b = evolve_linear_2dvec(g, &w0, 4.0, 2.0, &opts)?;
    let mut worst_2d: f64 = 0.0;
    for (x, y) in a.norm_h.iter().zip(&b.norm_h).chain(a.norm_3.iter().zip(&b.norm_3)) {
        worst_2d = worst_2d.max((x - y).abs() / y.abs().max(f64::MIN_POSITIVE));
    }
    outcome(
        k_exact && worst_f < 1e-6 && worst_2d < 1e-10,
        format!("k(t) exact: {k_exact}, factor error {worst_f:.2e}, k0=0 vs 2D {worst_2d:.2e}"),
    )
}

fn linear_rates(g: &SpectralGrid, seed: u64) -> Result<Outcome> {
    let cases: Vec<(f64, f64)> = [1.0, 10.0, 50.0].iter().flat_map(|&a| [(a, 0.0), (a, 1.0)]).collect();
    let rows: Vec<Result<(f64, f64, f64, f64)>> = cases
        .par_iter()
        .map(|&(alpha, k0)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w0 = random_solenoidal_field(g, k0, 3, &mut rng)?;
            let opts = EvolveOptions::default();
            let mut tr = if k0 == 0.0 {
                evolve_linear_2dvec(g, &w0, alpha, 15.0, &opts)?
            } else {
                evolve_stretched(g, &w0, k0, alpha, 15.0, &opts)?
            };
            let h = tr.fit(Series::NormH, [5.0, 15.0])?;
            let v = tr.fit(Series::Norm3, [5.0, 15.0])?;
            Ok((alpha, k0, h.rate, v.rate))
        })
        .collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for row in rows {
        let (alpha, k0, rh, r3) = row?;
        ok &= rh <= -1.0 + 0.1 && r3 <= -0.5 + 0.1;
        detail.push(format!("a={alpha},k0={k0}: {rh:.3}/{r3:.3}"));
    }
    outcome(ok, format!("rate_h/rate_3 {}", detail.join(", ")))
}

fn amplification(g: &SpectralGrid) -> Result<Outcome> {
    let times: Vec<f64> = (0..=80).map(|i| i as f64 * 0.5).collect();
    let curves: Vec<Result<(f64, f64, f64)>> = [0.0, 10.0, 100.0]
        .par_iter()
        .map(|&alpha| {
            let c = transient_growth(g, alpha, 1.0, WeightSpec::Gaussian, &times, &GrowthOptions::default())?;
            Ok((alpha, c.max_gain().1, *c.gain.last().expect("nonempty")))
        })
        .collect();
    let curves: Vec<(f64, f64, f64)> = curves.into_iter().collect::<Result<_>>()?;
    let ordered = curves[2].1 > curves[1].1 && curves[1].1 > curves[0].1;
    let decayed = curves.iter().all(|c| c.2 < 1e-3);
    let detail = curves
        .iter()
        .map(|(a, m, l)| format!("a={a}: max G {m:.6}, G(40) {l:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(ordered && decayed, format!("ordered: {ordered}, decayed: {decayed}; {detail}"))
}

/// Random mean-zero scalar perturbation with `L^2(inf)` norm `amplitude`.
pub fn perturbation(g: &SpectralGrid, order: usize, amplitude: f64, seed: u64) -> Result<ModeField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_hermite_field(g, FieldKind::Scalar, order, true, &mut rng)?;
    let n = g.weighted_norm(&f, WeightSpec::Gaussian);
    Ok(f.scaled(C64::new(amplitude / n, 0.0)))
}

fn nonlinear_decay(g: &SpectralGrid, seed: u64) -> Result<Outcome> {
    let w0 = perturbation(g, 4, 1e-3, seed)?;
    let mut tr = evolve_nonlinear_2d(g, &w0, 1.0, 12.0, &EvolveOptions::default())?;
    let fit = tr.fit(Series::Norm3, [5.0, 12.0])?;
    let c0 = tr.circulation[0];
    let drift = tr.circulation.iter().map(|c| (c - c0).abs()).fold(0.0, f64::max);
    outcome(
        (fit.rate + 0.5).abs() <= 0.1 && drift < 1e-8,
        format!("rate {:.4}, circulation drift {drift:.2e}", fit.rate),
    )
}

fn classification(g: &SpectralGrid) -> Result<Outcome> {
    let w = WeightSpec::finite(4.0)?;
    let threshold = w.essential_threshold();
    let rep = classify_modes(&compute_spectrum(&assemble_lh(g)?, true)?, g, w)?;
    let mut misclassified = Vec::new();
    let mut tail_failures = 0;
    for (i, p) in rep.modes.iter().enumerate() {
        let j = (-2.0 * p.value.re).round();
        let exact = (p.value - C64::new(-j / 2.0, 0.0)).norm() < 1e-8;
        if exact && p.value.re > threshold && rep.classification[i] != Classification::Resolved {
            misclassified.push(p.value.re);
        }
        if rep.classification[i] == Classification::Resolved && p.value.re > threshold && rep.tail[i] >= TAU_MAX {
            tail_failures += 1;
        }
    }
    for alpha in [1.0, 10.0] {
        let rep = classify_modes(&compute_spectrum(&assemble_l_alpha_h(g, alpha)?, true)?, g, w)?;
        tail_failures += rep
            .modes
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                rep.classification[*i] == Classification::Resolved && p.value.re > threshold && rep.tail[*i] >= TAU_MAX
            })
            .count();
    }
    outcome(
        misclassified.is_empty() && tail_failures == 0,
        format!("misclassified Hermite modes {misclassified:?}, tail-test failures {tail_failures}"),
    )
}
