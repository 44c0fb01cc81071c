//! Time evolution: the explicit Gaussian kernels of the Fokker-Planck
//! semigroups, Strang splitting for the vortex-linearized planar and
//! stretched-mode problems, the planar nonlinear perturbation stepper, and
//! rate fits.
//!
//! The splitting steppers treat `L_h` (with its constant shifts) exactly
//! through the eigendecomposition of each radial block and integrate the
//! remaining bounded transport, stretching and coupling terms with classical
//! RK4 over a full step between two exact half steps. The `-k(t)^2` part of the
//! stretched generator is scalar and enters as the factor `exp(-k0^2 a(2t) / 2)`.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, Axis};
use ndarray_linalg::SVD;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::biot_savart::{self, ScreenedSolver};
use crate::error::{Error, Result};
use crate::fields::{a_unchecked, WeightSpec};
use crate::linalg::{self, CMat, CVec, C64, I};
use crate::operators::{self, circulation_row, divergence_block, gradient_mode};
use crate::spectra::gram_diagonal;
use crate::spectral_grid::{
    hermite_eigenfunction, standard_normal, Comp, FieldKind, GridSpec, ModeField,
    ModeFieldDoc, Segment, SpectralGrid,
};

/// Header line of every CSV file written by the toolkit.
pub const CSV_HEADER: &str = "# burgers-spectra v1";

/// Norm growth factor over one step that is reported as an instability.
pub const BLOWUP_FACTOR: f64 = 10.0;

// ---------------------------------------------------------------------------
// Kernel propagators

/// `I_n(z) e^{-z}` for `n = 0..=n_max`, from the periodic trapezoid rule applied to
/// `(1 / 2 pi) int_0^{2 pi} e^{z (cos th - 1)} cos(n th) dth`.
pub fn scaled_bessel_i(z: f64, n_max: usize) -> Vec<f64> {
    // aliasing error ~ I_{N-n}(z) e^{-z} ~ exp(-(N - n)^2 / 2z)
    let n_pts = (2 * n_max + 16).max((9.0 * z.sqrt()).ceil() as usize + n_max + 16);
    let mut out = vec![0.0; n_max + 1];
    for j in 0..n_pts {
        let th = 2.0 * PI * j as f64 / n_pts as f64;
        let c = th.cos();
        let e = (z * (c - 1.0)).exp();
        let (mut prev, mut cur) = (c, 1.0);
        for o in out.iter_mut() {
            *o += e * cur;
            let next = 2.0 * c * cur - prev;
            prev = cur;
            cur = next;
        }
    }
    out.iter_mut().for_each(|o| *o /= n_pts as f64);
    out
}

/// Radial kernel matrices of `e^{t L_h}` per `|n|`, acting on envelope coefficients.
///
/// Mode `n` of `(e^t / 4 pi a) int e^{-|x - y|^2 / 4a} f(y e^{t/2}) dy` is
/// `(1 / 2a) int_0^R e^{-(r - s e^{-t/2})^2 / 4a} I~_n(r s e^{-t/2} / 2a) f_n(s) s ds`
/// with `I~_n = I_n e^{-z}`; the integral uses composite Gauss panels no wider than
/// `min(1/2, sqrt(a))` on values interpolated from the radial nodes.
fn kernel_matrices_h(grid: &SpectralGrid, t: f64) -> Result<Vec<Array2<f64>>> {
    let a = a_unchecked(t);
    let b = (-0.5 * t).exp();
    let r_max = grid.r_max();
    let width = a.sqrt().min(0.5);
    let panels = (r_max / width).ceil() as usize;
    let (sig, wq) = linalg::composite_gauss(0.0, r_max, panels, 16);
    let interp = grid.interp_matrix(&sig)?;
    let n_max = grid.n_max();
    let r = grid.r_nodes();
    let mut q = vec![Array2::<f64>::zeros((grid.n_r(), sig.len())); n_max + 1];
    for (i, &ri) in r.iter().enumerate() {
        for (j, &sj) in sig.iter().enumerate() {
            let d = ri - sj * b;
            let lg = (ri * ri - sj * sj) / 8.0 - d * d / (4.0 * a);
            if lg < -60.0 {
                continue;
            }
            let z = ri * sj * b / (2.0 * a);
            let c = wq[j] * sj * lg.exp() / (2.0 * a);
            for (n, bes) in scaled_bessel_i(z, n_max).into_iter().enumerate() {
                q[n][[i, j]] = c * bes;
            }
        }
    }
    Ok(q.into_iter().map(|qn| qn.dot(&interp)).collect())
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("propagation time must be positive, got {t}")))
    }
}

/// `e^{t L_h} f` from the explicit Gaussian kernel, by radial quadrature per mode.
/// Vector fields are propagated componentwise.
pub fn kernel_step_h(grid: &SpectralGrid, f: &ModeField, t: f64) -> Result<ModeField> {
    check_time(t)?;
    grid.check_field(f)?;
    let k = kernel_matrices_h(grid, t)?;
    let mut out = ModeField::zeros(f.grid, f.kind);
    let nm = grid.n_max() as i32;
    for c in 0..f.components() {
        for n in -nm..=nm {
            let kn = &k[n.unsigned_abs() as usize];
            let src = f.mode(c, n);
            for (i, o) in out.mode_mut(c, n).iter_mut().enumerate() {
                *o = kn.row(i).iter().zip(src).map(|(a, v)| v * *a).sum();
            }
        }
    }
    Ok(out)
}

/// `V diag(e^{t (lambda + shift)}) V^T` for the flattened Fokker-Planck block of `|n|`.
fn lh_exp(grid: &SpectralGrid, n: i32, t: f64, shift: f64) -> Array2<f64> {
    let (vals, vecs) = operators::lh_eigh(grid, n);
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let e = (t * (vals[j] + shift)).exp();
        col.mapv_inplace(|v| v * e);
    }
    scaled.dot(&vecs.t())
}

/// `e^{t L_h} f` for the assembled (discrete) operator, by eigendecomposition.
pub fn kernel_step_h_spectral(grid: &SpectralGrid, f: &ModeField, t: f64) -> Result<ModeField> {
    check_time(t)?;
    grid.check_field(f)?;
    let sw: Vec<f64> = grid.quad_weights().iter().map(|w| w.sqrt()).collect();
    let nm = grid.n_max() as i32;
    let mut out = ModeField::zeros(f.grid, f.kind);
    for n in -nm..=nm {
        let e = lh_exp(grid, n, t, 0.0);
        for c in 0..f.components() {
            let v: Vec<C64> = f.mode(c, n).iter().zip(&sw).map(|(h, s)| h * *s).collect();
            for (i, o) in out.mode_mut(c, n).iter_mut().enumerate() {
                let acc: C64 = e.row(i).iter().zip(&v).map(|(a, x)| x * *a).sum();
                *o = acc / sw[i];
            }
        }
    }
    Ok(out)
}

/// `e^{t L_3} f` on a uniform `x3` grid:
/// `(2 pi a(2t))^{-1/2} int e^{-(x3 e^{-t} - y)^2 / 2a(2t)} f(y) dy` by the trapezoid rule.
///
/// Values at points whose kernel reaches past the ends of the grid see `f = 0` outside.
pub fn kernel_step_3(x3: &[f64], f: &[C64], t: f64) -> Result<Vec<C64>> {
    check_time(t)?;
    if x3.len() != f.len() || x3.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need matching sample and value arrays with >= 3 points, got {} and {}",
            x3.len(),
            f.len()
        )));
    }
    let h = x3[1] - x3[0];
    if !(h > 0.0) || x3.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::InvalidArgument("x3 samples must be uniformly spaced and increasing".into()));
    }
    let a2 = a_unchecked(2.0 * t);
    let norm = h / (2.0 * PI * a2).sqrt();
    let decay = (-t).exp();
    let last = x3.len() - 1;
    Ok(x3
        .iter()
        .map(|&x| {
            let xc = x * decay;
            f.iter()
                .zip(x3)
                .enumerate()
                .map(|(j, (v, y))| {
                    let w = if j == 0 || j == last { 0.5 } else { 1.0 };
                    v * (w * norm * (-(xc - y) * (xc - y) / (2.0 * a2)).exp())
                })
                .sum()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Smoothing

/// `sup_f ||grad_h e^{t L_h} f|| / ||f||` in `L^2(inf)` over discrete scalar fields.
pub fn smoothing_norm(grid: &SpectralGrid, t: f64) -> Result<f64> {
    check_time(t)?;
    let mut best: f64 = 0.0;
    for n in 0..=grid.n_max() as i32 {
        let a = gradient_mode(grid, n).dot(&lh_exp(grid, n, t, 0.0));
        let (_, sv, _) = a.svd(false, false)?;
        best = best.max(sv.iter().cloned().fold(0.0, f64::max));
    }
    Ok(best)
}

/// Least-squares exponent `p` in `smoothing_norm(t) ~ a(t)^p` over `samples`
/// log-spaced times in `[t_min, t_max]`.
pub fn smoothing_exponent(grid: &SpectralGrid, t_min: f64, t_max: f64, samples: usize) -> Result<FittedRate> {
    check_time(t_min)?;
    if !(t_max > t_min) || samples < 10 {
        return Err(Error::InvalidArgument("need t_max > t_min and at least 10 samples".into()));
    }
    let step = (t_max / t_min).ln() / (samples - 1) as f64;
    let mut x = Vec::with_capacity(samples);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = t_min * (step * i as f64).exp();
        x.push(a_unchecked(t).ln());
        y.push(smoothing_norm(grid, t)?.ln());
    }
    let (rate, halfwidth) = fit_line(&x, &y)?;
    Ok(FittedRate { rate, halfwidth, window: [t_min, t_max], samples })
}

// ---------------------------------------------------------------------------
// Rate fitting

/// Fitted exponential rate with the slope change allowed by the residual band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedRate {
    pub rate: f64,
    pub halfwidth: f64,
    pub window: [f64; 2],
    pub samples: usize,
}

/// Least-squares slope of `y` against `x`, with halfwidth
/// `(max residual - min residual) / (x range)`.
fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("fit abscissae are degenerate".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in x.iter().zip(y) {
        let res = b - ym - slope * (a - xm);
        lo = lo.min(res);
        hi = hi.max(res);
    }
    let span = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((slope, (hi - lo) / span))
}

/// Exponential rate of `values(times)` on `window = [t_a, t_b]` from a log-linear fit.
pub fn decay_rate_fit(times: &[f64], values: &[f64], window: [f64; 2]) -> Result<FittedRate> {
    if times.len() != values.len() || times.is_empty() {
        return Err(Error::InvalidArgument("times and values must be nonempty and of equal length".into()));
    }
    let (first, last) = (times[0], times[times.len() - 1]);
    let eps = 1e-9 * (1.0 + last.abs());
    if !(window[1] > window[0]) || window[0] < first - eps || window[1] > last + eps {
        return Err(Error::InvalidArgument(format!(
            "window [{}, {}] lies outside the trace [{first}, {last}]",
            window[0], window[1]
        )));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (t, v) in times.iter().zip(values) {
        if *t >= window[0] - eps && *t <= window[1] + eps {
            if !(*v > 1e-300) {
                return Err(Error::Precondition(format!("norm {v:e} at t = {t} is too small to fit")));
            }
            x.push(*t);
            y.push(v.ln());
        }
    }
    if x.len() < 10 {
        return Err(Error::Precondition(format!("only {} samples in the fit window", x.len())));
    }
    let (rate, halfwidth) = fit_line(&x, &y)?;
    Ok(FittedRate { rate, halfwidth, window, samples: x.len() })
}

// ---------------------------------------------------------------------------
// Evolution traces

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionModel {
    Linear2d,
    Stretched,
    Nonlinear2d,
}

/// Norm series of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    NormH,
    Norm3,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRate {
    pub series: Series,
    pub fit: FittedRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub field: ModeFieldDoc,
}

/// Sampled history of one evolution run.
///
/// Norms are `L^2(m)` norms of the horizontal and vertical vorticity including
/// the factor `exp(-k0^2 a(2t) / 2)`; `divergence` is the relative `L^2(inf)`
/// size of `div_{k(t)} w` (three-component runs only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub format: String,
    pub model: EvolutionModel,
    pub grid: GridSpec,
    pub alpha: f64,
    pub k0: f64,
    pub weight: String,
    pub dt: f64,
    pub dt_out: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub norm_h: Vec<f64>,
    pub norm_3: Vec<f64>,
    pub k: Vec<f64>,
    pub circulation: Vec<f64>,
    pub divergence: Vec<f64>,
    pub rates: Vec<NamedRate>,
    pub snapshots: Vec<Snapshot>,
}

impl EvolutionTrace {
    pub fn series(&self, s: Series) -> Vec<f64> {
        match s {
            Series::NormH => self.norm_h.clone(),
            Series::Norm3 => self.norm_3.clone(),
            Series::Total => self.norm_h.iter().zip(&self.norm_3).map(|(a, b)| a.hypot(*b)).collect(),
        }
    }

    /// Fits a rate on `window` and records it in `rates`.
    pub fn fit(&mut self, s: Series, window: [f64; 2]) -> Result<FittedRate> {
        let fit = decay_rate_fit(&self.times, &self.series(s), window)?;
        self.rates.push(NamedRate { series: s, fit });
        Ok(fit)
    }

    pub fn snapshot(&self, t: f64) -> Option<Result<ModeField>> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .map(|s| ModeField::try_from(s.field.clone()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\nt,norm_h,norm_3,k,circulation\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{:.6},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.times[i], self.norm_h[i], self.norm_3[i], self.k[i], self.circulation[i]
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// Splitting steppers

/// Step and output settings of an evolution run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    pub dt_out: f64,
    pub weight: WeightSpec,
    /// Times at which the field is stored; each must be a multiple of `dt`.
    pub snapshots: Vec<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { dt: 0.01, dt_out: 0.1, weight: WeightSpec::Gaussian, snapshots: Vec::new() }
    }
}

fn steps_for(span: f64, dt: f64, what: &str) -> Result<usize> {
    let n = (span / dt).round();
    if !(n >= 0.0) || (n * dt - span).abs() > 1e-9 * span.abs().max(dt) {
        return Err(Error::InvalidArgument(format!("{what} = {span} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

struct BlockParts {
    m: i32,
    segments: Vec<Segment>,
    /// Generator minus its exactly integrated Fokker-Planck part.
    b0: CMat,
    half: Vec<CMat>,
    gram: Vec<f64>,
}

struct Splitting<'g> {
    grid: &'g SpectralGrid,
    model: EvolutionModel,
    alpha: f64,
    k0: f64,
    dt: f64,
    kind: FieldKind,
    blocks: Vec<BlockParts>,
    solvers: Vec<ScreenedSolver>,
    weight: WeightSpec,
}

fn segment_shift(kind: FieldKind, seg: &Segment) -> f64 {
    match (kind, seg.comp) {
        (FieldKind::Full, Comp::Plus | Comp::Minus) => -1.5,
        _ => 0.0,
    }
}

impl<'g> Splitting<'g> {
    fn new(grid: &'g SpectralGrid, model: EvolutionModel, alpha: f64, k0: f64, opts: &EvolveOptions) -> Result<Self> {
        if !(opts.dt > 0.0 && opts.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", opts.dt)));
        }
        if !alpha.is_finite() || !(k0 >= 0.0 && k0.is_finite()) {
            return Err(Error::InvalidArgument(format!("need finite alpha and k0 >= 0, got {alpha}, {k0}")));
        }
        let (kind, gen) = match model {
            EvolutionModel::Nonlinear2d => (FieldKind::Scalar, operators::assemble_l_alpha_3(grid, alpha)?),
            _ => (FieldKind::Full, operators::assemble_stretched_generator(grid, alpha, 0.0)?),
        };
        let n_r = grid.n_r();
        let mut halves = std::collections::HashMap::new();
        let blocks = gen
            .blocks
            .iter()
            .map(|b| {
                let mut b0 = b.matrix.clone();
                let mut half = Vec::with_capacity(b.segments.len());
                for (si, seg) in b.segments.iter().enumerate() {
                    let shift = segment_shift(kind, seg);
                    let l = operators::lh_block(grid, seg.n);
                    let mut sub = b0.slice_mut(s![si * n_r..(si + 1) * n_r, si * n_r..(si + 1) * n_r]);
                    for i in 0..n_r {
                        for j in 0..n_r {
                            sub[[i, j]] -= l[[i, j]];
                        }
                        sub[[i, i]] -= shift;
                    }
                    let key = (seg.n.unsigned_abs(), shift.to_bits());
                    let e = halves
                        .entry(key)
                        .or_insert_with(|| linalg::to_complex(&lh_exp(grid, seg.n, 0.5 * opts.dt, shift)))
                        .clone();
                    half.push(e);
                }
                let gram = gram_diagonal(grid, &b.segments, opts.weight);
                BlockParts { m: b.m, segments: b.segments.clone(), b0, half, gram }
            })
            .collect();
        Ok(Splitting {
            grid,
            model,
            alpha,
            k0,
            dt: opts.dt,
            kind,
            blocks,
            solvers: Vec::new(),
            weight: opts.weight,
        })
    }

    fn k_at(&self, t: f64) -> f64 {
        self.k0 * (-t).exp()
    }

    fn factor(&self, t: f64) -> f64 {
        (-0.5 * self.k0 * self.k0 * a_unchecked(2.0 * t)).exp()
    }

    fn half_step(&self, state: &mut [CVec]) {
        let n_r = self.grid.n_r();
        for (b, v) in self.blocks.iter().zip(state.iter_mut()) {
            for (si, e) in b.half.iter().enumerate() {
                let mut seg = v.slice_mut(s![si * n_r..(si + 1) * n_r]);
                let new = e.dot(&seg);
                seg.assign(&new);
            }
        }
    }

    /// Index of the cached Biot-Savart solver at wavenumber `k`.
    fn solver_index(&mut self, k: f64) -> Result<usize> {
        if let Some(pos) = self.solvers.iter().position(|s| s.k == k) {
            return Ok(pos);
        }
        if self.solvers.len() >= 3 {
            self.solvers.remove(0);
        }
        self.solvers.push(ScreenedSolver::new(self.grid, k, self.grid.n_max() + 1)?);
        Ok(self.solvers.len() - 1)
    }

    fn rhs(&mut self, t: f64, state: &[CVec]) -> Result<Vec<CVec>> {
        let mut out: Vec<CVec> = self.blocks.iter().zip(state).map(|(b, v)| b.b0.dot(v)).collect();
        let k = self.k_at(t);
        if self.kind == FieldKind::Full && self.alpha != 0.0 && k > 0.0 {
            let idx = self.solver_index(k)?;
            let solver = &self.solvers[idx];
            for ((b, v), o) in self.blocks.iter().zip(state).zip(out.iter_mut()) {
                let col = v.clone().insert_axis(Axis(1));
                let h = operators::coupling_apply(self.grid, solver, b.m, &b.segments, &col)?;
                o.scaled_add(C64::new(-self.alpha, 0.0), &h.column(0));
            }
        }
        if self.model == EvolutionModel::Nonlinear2d {
            let f = self.field(state);
            let q = self.gather(&advection_term(self.grid, &f, &f)?);
            for (o, qb) in out.iter_mut().zip(&q) {
                *o -= qb;
            }
        }
        Ok(out)
    }

    fn rk4(&mut self, t: f64, state: &[CVec]) -> Result<Vec<CVec>> {
        let h = self.dt;
        let comb = |x: &[CVec], k: &[CVec], c: f64| -> Vec<CVec> {
            x.iter().zip(k).map(|(a, b)| a + &b.mapv(|v| v * c)).collect()
        };
        let k1 = self.rhs(t, state)?;
        let k2 = self.rhs(t + 0.5 * h, &comb(state, &k1, 0.5 * h))?;
        let k3 = self.rhs(t + 0.5 * h, &comb(state, &k2, 0.5 * h))?;
        let k4 = self.rhs(t + h, &comb(state, &k3, h))?;
        Ok(state
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let incr = &k1[i] + &k2[i].mapv(|v| v * 2.0) + &k3[i].mapv(|v| v * 2.0) + &k4[i];
                x + &incr.mapv(|v| v * (h / 6.0))
            })
            .collect())
    }

    fn step(&mut self, t: f64, state: &mut Vec<CVec>) -> Result<()> {
        self.half_step(state);
        *state = self.rk4(t, state)?;
        self.half_step(state);
        Ok(())
    }

    fn gather(&self, f: &ModeField) -> Vec<CVec> {
        self.blocks.iter().map(|b| self.grid.gather(f, b.m)).collect()
    }

    fn field(&self, state: &[CVec]) -> ModeField {
        let mut f = ModeField::zeros(self.grid.spec(), self.kind);
        for (b, v) in self.blocks.iter().zip(state) {
            self.grid.scatter_add(&mut f, b.m, v);
        }
        f
    }

    fn euclid(state: &[CVec]) -> f64 {
        state.iter().map(|v| v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// `(norm_h, norm_3, circulation, relative divergence)` at time `t`.
    fn measure(&self, t: f64, state: &[CVec]) -> (f64, f64, f64, f64) {
        let n_r = self.grid.n_r();
        let f = self.factor(t);
        let k = self.k_at(t);
        let (mut nh, mut n3, mut circ, mut div, mut tot) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (b, v) in self.blocks.iter().zip(state) {
            for (si, seg) in b.segments.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..n_r {
                    acc += (v[si * n_r + i] * b.gram[si * n_r + i]).norm_sqr();
                    tot += v[si * n_r + i].norm_sqr();
                }
                match seg.comp {
                    Comp::Vertical => n3 += acc,
                    _ => nh += acc,
                }
                if seg.comp == Comp::Vertical && seg.n == 0 {
                    let row = circulation_row(self.grid);
                    circ = (0..n_r).map(|i| v[si * n_r + i] * row[i]).sum::<C64>().re;
                }
            }
            if self.kind == FieldKind::Full {
                let d = divergence_block(self.grid, b.m, &b.segments, k).dot(v);
                div += d.iter().map(|x| x.norm_sqr()).sum::<f64>();
            }
        }
        let rel_div = if tot > 0.0 { (div / tot).sqrt() } else { 0.0 };
        (f * nh.sqrt(), f * n3.sqrt(), f * circ, rel_div)
    }

    fn run(mut self, w0: &ModeField, t_end: f64, opts: &EvolveOptions) -> Result<EvolutionTrace> {
        self.grid.check_field(w0)?;
        if w0.kind != self.kind {
            return Err(Error::InvalidArgument(format!("expected a {:?} field, got {:?}", self.kind, w0.kind)));
        }
        if w0.coeffs.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("initial field has non-finite coefficients".into()));
        }
        let n_steps = steps_for(t_end, self.dt, "final time")?;
        let every = steps_for(opts.dt_out, self.dt, "dt_out")?.max(1);
        let mut snap_steps = Vec::new();
        for &ts in &opts.snapshots {
            let s = steps_for(ts, self.dt, "snapshot time")?;
            if s > n_steps {
                return Err(Error::InvalidArgument(format!("snapshot time {ts} exceeds the final time {t_end}")));
            }
            snap_steps.push(s);
        }
        let mut trace = EvolutionTrace {
            format: "burgers-spectra/evolution/v1".into(),
            model: self.model,
            grid: self.grid.spec(),
            alpha: self.alpha,
            k0: self.k0,
            weight: self.weight.label(),
            dt: self.dt,
            dt_out: every as f64 * self.dt,
            steps: n_steps,
            times: Vec::new(),
            norm_h: Vec::new(),
            norm_3: Vec::new(),
            k: Vec::new(),
            circulation: Vec::new(),
            divergence: Vec::new(),
            rates: Vec::new(),
            snapshots: Vec::new(),
        };
        let mut state = self.gather(w0);
        for step in 0..=n_steps {
            let t = step as f64 * self.dt;
            if step > 0 {
                let before = Self::euclid(&state);
                self.step(t - self.dt, &mut state)?;
                let after = Self::euclid(&state);
                if !after.is_finite() || after > BLOWUP_FACTOR * before {
                    return Err(Error::Instability { t, before, after });
                }
            }
            if step % every == 0 || step == n_steps {
                let (nh, n3, circ, div) = self.measure(t, &state);
                trace.times.push(t);
                trace.norm_h.push(nh);
                trace.norm_3.push(n3);
                trace.k.push(self.k_at(t));
                trace.circulation.push(circ);
                trace.divergence.push(div);
            }
            if snap_steps.contains(&step) {
                let f = self.field(&state).scaled(C64::new(self.factor(t), 0.0));
                trace.snapshots.push(Snapshot { t, field: ModeFieldDoc::from(&f) });
            }
        }
        Ok(trace)
    }
}

/// Integrates `w' = L_alpha w` for three-component fields independent of `x3`:
/// `L_{alpha,h}` on the horizontal and `L_{alpha,3}` on the vertical vorticity.
pub fn evolve_linear_2dvec(
    grid: &SpectralGrid,
    w0: &ModeField,
    alpha: f64,
    t_end: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    Splitting::new(grid, EvolutionModel::Linear2d, alpha, 0.0, opts)?.run(w0, t_end, opts)
}

/// Integrates the stretched-mode system `w' = G(alpha, k(t)) w`, `k(t) = k0 e^{-t}`,
/// for the vorticity `w(x_h, t) e^{i k(t) x3}`.
pub fn evolve_stretched(
    grid: &SpectralGrid,
    w0: &ModeField,
    k0: f64,
    alpha: f64,
    t_end: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    Splitting::new(grid, EvolutionModel::Stretched, alpha, k0, opts)?.run(w0, t_end, opts)
}

/// Integrates the planar perturbation equation
/// `w' = L_h w - alpha (Lambda_1 + Lambda~_3) w - (K_2D * w) . grad_h w`
/// for a mean-zero scalar vorticity perturbation `w`.
pub fn evolve_nonlinear_2d(
    grid: &SpectralGrid,
    omega0: &ModeField,
    alpha: f64,
    t_end: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    grid.check_field(omega0)?;
    if omega0.kind != FieldKind::Scalar {
        return Err(Error::InvalidArgument("the planar nonlinear stepper expects a scalar field".into()));
    }
    let c = circulation(grid, omega0)?;
    let scale = grid.weighted_norm(omega0, WeightSpec::Gaussian);
    if c.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Precondition(format!(
            "perturbation must carry zero circulation, got {c:e}"
        )));
    }
    Splitting::new(grid, EvolutionModel::Nonlinear2d, alpha, 0.0, opts)?.run(omega0, t_end, opts)
}

// ---------------------------------------------------------------------------
// Nonlinear term and invariants

/// `(K_2D * a) . grad_h b` for scalar fields `a`, `b`, in envelope coefficients.
///
/// Products are formed on `3 (n_max + 1)` angles and `ceil(1.5 n_r)` Gauss radii,
/// then projected back onto the radial nodes in the `r dr` inner product.
pub fn advection_term(grid: &SpectralGrid, a: &ModeField, b: &ModeField) -> Result<ModeField> {
    grid.check_field(a)?;
    grid.check_field(b)?;
    if a.kind != FieldKind::Scalar || b.kind != FieldKind::Scalar {
        return Err(Error::InvalidArgument("advection_term expects scalar fields".into()));
    }
    let u = biot_savart::velocity_2d(grid, a)?;
    let n_r = grid.n_r();
    let nm = grid.n_max() as i32;
    let np = nm + 1;
    let r = grid.r_nodes();
    let d = grid.diff();

    // helical velocity u+- = u1 +- i u2 and envelope gradient G+- per mode, |mode| <= n_max + 1
    let width = (2 * np + 1) as usize;
    let idx = |n: i32| (n + np) as usize;
    let mut coarse = Array3::<C64>::zeros((4, width, n_r));
    for n in -np..=np {
        for i in 0..n_r {
            coarse[[0, idx(n), i]] = u.get(0, n, i) + I * u.get(1, n, i);
            coarse[[1, idx(n), i]] = u.get(0, n, i) - I * u.get(1, n, i);
        }
    }
    for n in -nm..=nm {
        let h = b.mode(0, n);
        for i in 0..n_r {
            let dh: C64 = (0..n_r).map(|j| h[j] * d[[i, j]]).sum();
            let base = dh - h[i] * (r[i] / 4.0);
            let nf = n as f64 / r[i];
            coarse[[2, idx(n + 1), i]] += base - h[i] * nf;
            coarse[[3, idx(n - 1), i]] += base + h[i] * nf;
        }
    }

    let n_f = (3 * n_r).div_ceil(2);
    let (x, w) = linalg::gauss_legendre(n_f);
    let r_max = grid.r_max();
    let rf: Vec<f64> = x.iter().map(|xi| 0.5 * r_max * (xi + 1.0)).collect();
    let wf: Vec<f64> = w.iter().zip(&rf).map(|(wi, ri)| 0.5 * r_max * wi * ri).collect();
    let p = linalg::to_complex(&grid.interp_matrix(&rf)?);

    let n_theta = 3 * np as usize;
    let mut planner = FftPlanner::<f64>::new();
    let inv = planner.plan_fft_inverse(n_theta);
    let fwd = planner.plan_fft_forward(n_theta);
    let mut phys = Array3::<C64>::zeros((4, n_f, n_theta));
    for c in 0..4 {
        let fine = coarse.index_axis(Axis(0), c).dot(&p.t());
        for j in 0..n_f {
            let mut buf = vec![C64::new(0.0, 0.0); n_theta];
            for n in -np..=np {
                buf[n.rem_euclid(n_theta as i32) as usize] += fine[[idx(n), j]];
            }
            inv.process(&mut buf);
            phys.slice_mut(s![c, j, ..]).assign(&ndarray::Array1::from(buf));
        }
    }
    let mut out = ModeField::zeros(grid.spec(), FieldKind::Scalar);
    let mut qf = Array2::<C64>::zeros((width, n_f));
    for j in 0..n_f {
        let mut buf: Vec<C64> = (0..n_theta)
            .map(|l| 0.5 * (phys[[0, j, l]] * phys[[3, j, l]] + phys[[1, j, l]] * phys[[2, j, l]]))
            .collect();
        fwd.process(&mut buf);
        for n in -nm..=nm {
            qf[[idx(n), j]] = buf[n.rem_euclid(n_theta as i32) as usize] / n_theta as f64;
        }
    }
    // Galerkin projection: h_i = sum_j wf_j l_i(r_j) q_j / W_i
    let wq = grid.quad_weights();
    for n in -nm..=nm {
        let row = qf.row(idx(n));
        for (i, o) in out.mode_mut(0, n).iter_mut().enumerate() {
            let acc: C64 = (0..n_f).map(|j| row[j] * (wf[j] * p[[j, i]].re)).sum();
            *o = acc / wq[i];
        }
    }
    Ok(out)
}

/// `int w dx_h` of a scalar field (the vertical component of a three-component field).
pub fn circulation(grid: &SpectralGrid, f: &ModeField) -> Result<f64> {
    grid.check_field(f)?;
    let c = match f.kind {
        FieldKind::Scalar => 0,
        FieldKind::Full => 2,
        FieldKind::Horizontal => {
            return Err(Error::InvalidArgument("horizontal fields carry no vertical vorticity".into()))
        }
    };
    let h = f.mode(c, 0);
    let env = grid.envelope();
    Ok(grid
        .quad_weights()
        .iter()
        .zip(&env)
        .zip(h)
        .map(|((w, e), v)| 2.0 * PI * w * e * v.re)
        .sum())
}

/// Divergence-free three-component field `curl_k A` for a vector potential whose
/// components are random combinations of Hermite functions of order `<= order`.
pub fn random_solenoidal_field<R: Rng + ?Sized>(
    grid: &SpectralGrid,
    k: f64,
    order: usize,
    rng: &mut R,
) -> Result<ModeField> {
    let limit = grid.hermite_order_limit();
    if order + 1 > limit {
        return Err(Error::Resolution { order: order + 1, limit });
    }
    let ik = I * k;
    let mut out = ModeField::zeros(grid.spec(), FieldKind::Full);
    for total in 0..=order {
        for j in 0..=total {
            let l = total - j;
            let base = hermite_eigenfunction(grid, j, l)?;
            let d1 = hermite_eigenfunction(grid, j + 1, l)?;
            let d2 = hermite_eigenfunction(grid, j, l + 1)?;
            let a = [standard_normal(rng), standard_normal(rng), standard_normal(rng)].map(|v| C64::new(v, 0.0));
            // w1 = d2 A3 - ik A2, w2 = ik A1 - d1 A3, w3 = d1 A2 - d2 A1
            out.add_scaled_component(0, &d2, a[2]);
            out.add_scaled_component(0, &base, -ik * a[1]);
            out.add_scaled_component(1, &base, ik * a[0]);
            out.add_scaled_component(1, &d1, -a[2]);
            out.add_scaled_component(2, &d1, a[1]);
            out.add_scaled_component(2, &d2, -a[0]);
        }
    }
    Ok(out)
}
