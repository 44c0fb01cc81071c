//! Velocity from vorticity: the planar Biot-Savart law per azimuthal mode and
//! the three-dimensional law for a single vertical wavenumber through screened
//! vector potentials.
//!
//! All radial problems are solved in weak (Galerkin) form on the Gauss nodes.
//! The exterior of the truncated disc enters through a Robin condition
//! `A'(R) = kappa_n A(R)` with `kappa_n = k K_n'(kR) / K_n(kR)` (`-|n|/R` when
//! `k = 0`), which is exact for sources supported inside the disc.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64, I};
use crate::spectral_grid::{FieldKind, GridSpec, ModeField, SpectralGrid};

/// Velocity samples per azimuthal mode. Values are physical (no envelope).
///
/// Modes run over `|n| <= n_max + 1` because the curl shifts helical components
/// by one mode; storage is row-major over `(component, n + n_max + 1, radial node)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub n_max: usize,
    pub components: usize,
    pub horizontal_only: bool,
    pub values: Vec<C64>,
}

impl VelocityField {
    fn zeros(grid: GridSpec, components: usize) -> Self {
        let n_max = grid.n_max + 1;
        VelocityField {
            grid,
            n_max,
            components,
            horizontal_only: components == 2,
            values: vec![C64::new(0.0, 0.0); components * (2 * n_max + 1) * grid.n_r],
        }
    }

    #[inline]
    fn index(&self, c: usize, n: i32, i: usize) -> usize {
        (c * (2 * self.n_max + 1) + (n + self.n_max as i32) as usize) * self.grid.n_r + i
    }

    pub fn get(&self, c: usize, n: i32, i: usize) -> C64 {
        if n.unsigned_abs() as usize > self.n_max {
            return C64::new(0.0, 0.0);
        }
        self.values[self.index(c, n, i)]
    }

    fn get_mut(&mut self, c: usize, n: i32, i: usize) -> &mut C64 {
        let k = self.index(c, n, i);
        &mut self.values[k]
    }

    /// Value of component `c` at the radial node `i` and angle `theta`.
    pub fn at_node(&self, c: usize, i: usize, theta: f64) -> C64 {
        let nm = self.n_max as i32;
        (-nm..=nm)
            .map(|n| self.get(c, n, i) * C64::from_polar(1.0, n as f64 * theta))
            .sum()
    }

    /// Evaluates the velocity at arbitrary points inside the disc.
    pub fn evaluate(&self, grid: &SpectralGrid, points: &[[f64; 2]]) -> Result<Array2<C64>> {
        let nm = self.n_max as i32;
        let mut out = Array2::zeros((self.components, points.len()));
        for (p, pt) in points.iter().enumerate() {
            let r = (pt[0] * pt[0] + pt[1] * pt[1]).sqrt();
            let row = grid.interp_row(r)?;
            let th = pt[1].atan2(pt[0]);
            for c in 0..self.components {
                let mut acc = C64::new(0.0, 0.0);
                for n in -nm..=nm {
                    let v: C64 = row.iter().enumerate().map(|(i, l)| self.get(c, n, i) * *l).sum();
                    acc += v * C64::from_polar(1.0, n as f64 * th);
                }
                out[[c, p]] = acc;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Logarithm of the modified Bessel function `K_nu(z)`, `z > 0`, from
/// `K_nu(z) = int_0^inf e^{-z cosh t} cosh(nu t) dt` (trapezoid rule, log-sum-exp).
pub fn bessel_k_ln(nu: usize, z: f64) -> f64 {
    assert!(z > 0.0, "bessel_k_ln needs z > 0");
    let h = 0.02;
    let nu = nu as f64;
    let term = |t: f64| -> f64 {
        // ln cosh(nu t) = nu t + ln(1 + e^{-2 nu t}) - ln 2
        -z * t.cosh() + nu * t + (-2.0 * nu * t).exp().ln_1p() - std::f64::consts::LN_2
    };
    let mut logs = Vec::new();
    let mut t: f64 = 0.0;
    let mut peak = f64::NEG_INFINITY;
    loop {
        let v = term(t);
        let w = if t == 0.0 { v - std::f64::consts::LN_2 } else { v };
        logs.push(w);
        peak = peak.max(v);
        if v < peak - 60.0 && t > 1.0 {
            break;
        }
        t += h;
        if t > 800.0 {
            break;
        }
    }
    let s: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
    peak + (s * h).ln()
}

/// `K_nu(z)` from [`bessel_k_ln`].
pub fn bessel_k(nu: usize, z: f64) -> f64 {
    bessel_k_ln(nu, z).exp()
}

/// Robin coefficient `kappa_n(k) = k K_n'(kR) / K_n(kR)`, or `-|n|/R` for `k = 0`.
pub fn robin_coefficient(n: usize, k: f64, r_max: f64) -> f64 {
    let k = k.abs();
    if k == 0.0 {
        return -(n as f64) / r_max;
    }
    let z = k * r_max;
    let ln_n = bessel_k_ln(n, z);
    let ln_lo = bessel_k_ln(if n == 0 { 1 } else { n - 1 }, z);
    let ln_hi = bessel_k_ln(n + 1, z);
    -0.5 * k * ((ln_lo - ln_n).exp() + (ln_hi - ln_n).exp())
}

/// Solver for `(Delta_h - k^2) A = -w` on one azimuthal mode at a fixed `k`.
///
/// `solve[n]` maps physical source samples to potential samples for `|n| >= 1`.
/// Mode zero is handled through its radial derivative, which solves the
/// `|n| = 1` problem with source `w'`.
#[derive(Debug, Clone)]
pub struct ScreenedSolver {
    pub k: f64,
    kappa: Vec<f64>,
    solve: Vec<CMat>,
}

impl ScreenedSolver {
    pub fn new(grid: &SpectralGrid, k: f64, n_abs_max: usize) -> Result<Self> {
        Self::for_modes(grid, k, n_abs_max, |_| true)
    }

    /// Solver holding only the modes `1 <= |n| <= n_abs_max` accepted by `keep`.
    pub fn for_modes(grid: &SpectralGrid, k: f64, n_abs_max: usize, keep: impl Fn(usize) -> bool) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::InvalidArgument(format!("wavenumber must be finite, got {k}")));
        }
        let k = k.abs();
        let n_r = grid.n_r();
        let r = grid.r_nodes();
        let w = grid.quad_weights();
        let b = grid.boundary_row();
        let r_max = grid.r_max();
        let mut kappa = vec![0.0; n_abs_max + 1];
        let mut solve = vec![CMat::zeros((0, 0))];
        let wdiag = Array2::from_diag(&ndarray::Array1::from(w.to_vec()));
        for n in 1..=n_abs_max {
            if !keep(n) {
                solve.push(CMat::zeros((0, 0)));
                continue;
            }
            let kap = robin_coefficient(n, k, r_max);
            kappa[n] = kap;
            let nf = n as f64;
            let mut a = grid.stiffness().clone();
            for i in 0..n_r {
                a[[i, i]] += w[i] * (nf * nf / (r[i] * r[i]) + k * k);
                for j in 0..n_r {
                    a[[i, j]] -= r_max * kap * b[i] * b[j];
                }
            }
            let s = linalg::solve_matrix_real(&a, &wdiag)?;
            solve.push(linalg::to_complex(&s));
        }
        kappa[0] = if k == 0.0 { 0.0 } else { robin_coefficient(0, k, r_max) };
        Ok(ScreenedSolver { k, kappa, solve })
    }

    pub fn n_abs_max(&self) -> usize {
        self.solve.len() - 1
    }

    /// Potential `A` and its radial derivative `A'` for physical source samples `w`
    /// (columns are independent right-hand sides) on mode `n`.
    ///
    /// For `n = 0` and `k = 0` the potential itself is defined only up to a
    /// constant and is returned as zero; only `A'` (and `k A = 0`) enter the velocity.
    pub fn potential(&self, grid: &SpectralGrid, n: i32, w: &CMat) -> Result<(CMat, CMat)> {
        let na = n.unsigned_abs() as usize;
        let need = na.max(1);
        if need > self.n_abs_max() || self.solve[need].is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mode {n} exceeds solver range {}",
                self.n_abs_max()
            )));
        }
        let d = linalg::to_complex(grid.diff());
        if na >= 1 {
            let a = self.solve[na].dot(w);
            let da = d.dot(&a);
            return Ok((a, da));
        }
        let dw = d.dot(w);
        let da = self.solve[1].dot(&dw);
        let mut a = CMat::zeros(w.raw_dim());
        if self.k > 0.0 {
            // A(r) = A(R) - int_r^R A', with A(R) = A'(R) / kappa_0
            let b = grid.boundary_row();
            let lw = grid.line_weights();
            let q = grid.integration();
            for c in 0..w.ncols() {
                let col = da.column(c);
                let da_r: C64 = b.iter().zip(col.iter()).map(|(b, v)| v * *b).sum();
                let total: C64 = lw.iter().zip(col.iter()).map(|(l, v)| v * *l).sum();
                let a_r = da_r / self.kappa[0];
                for i in 0..grid.n_r() {
                    let partial: C64 = (0..grid.n_r()).map(|j| col[j] * q[[i, j]]).sum();
                    a[[i, c]] = a_r - (total - partial);
                }
            }
        }
        Ok((a, da))
    }
}

/// `d+ f = f' - n f / r` (maps mode `n` to `n + 1`).
pub(crate) fn d_plus(grid: &SpectralGrid, n: i32, a: &CMat, da: &CMat) -> CMat {
    let r = grid.r_nodes();
    let mut out = da.clone();
    if n != 0 {
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let f = n as f64 / r[i];
            row.zip_mut_with(&a.row(i), |o, v| *o -= v * f);
        }
    }
    out
}

/// `d- f = f' + n f / r` (maps mode `n` to `n - 1`).
pub(crate) fn d_minus(grid: &SpectralGrid, n: i32, a: &CMat, da: &CMat) -> CMat {
    let r = grid.r_nodes();
    let mut out = da.clone();
    if n != 0 {
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let f = n as f64 / r[i];
            row.zip_mut_with(&a.row(i), |o, v| *o += v * f);
        }
    }
    out
}

pub(crate) fn screened0(grid: &SpectralGrid) -> &ScreenedSolver {
    grid.cache.screened0.get_or_init(|| {
        ScreenedSolver::new(grid, 0.0, grid.n_max() + 1).expect("Laplace solve on a validated grid")
    })
}

/// Streamfunction `psi` with `Delta psi = omega` for physical samples of mode `n != 0`.
pub(crate) fn streamfunction_mode(grid: &SpectralGrid, n: i32, omega: &CMat) -> Result<(CMat, CMat)> {
    let (a, da) = screened0(grid).potential(grid, n, omega)?;
    Ok((-a, -da))
}

/// Helical velocity `(u+ at n+1, u- at n-1)` induced by planar vorticity samples on mode `n`.
pub(crate) fn velocity2d_mode(grid: &SpectralGrid, n: i32, omega: &CMat) -> Result<(CMat, CMat)> {
    if n == 0 {
        let r = grid.r_nodes();
        let mut ro = omega.clone();
        for (i, mut row) in ro.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v * r[i]);
        }
        let mut ut = linalg::to_complex(grid.integration()).dot(&ro);
        for (i, mut row) in ut.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v / r[i]);
        }
        return Ok((ut.mapv(|v| I * v), ut.mapv(|v| -I * v)));
    }
    let (psi, dpsi) = streamfunction_mode(grid, n, omega)?;
    let up = d_plus(grid, n, &psi, &dpsi).mapv(|v| I * v);
    let um = d_minus(grid, n, &psi, &dpsi).mapv(|v| -I * v);
    Ok((up, um))
}

/// Helical velocity of block `m` from physical source samples
/// `w+` (mode `m+1`), `w-` (mode `m-1`), `w3` (mode `m`); absent inputs are zero.
/// Returns `(u+ at m+1, u- at m-1, u3 at m)`.
pub(crate) fn curl_block(
    grid: &SpectralGrid,
    solver: &ScreenedSolver,
    m: i32,
    wp: Option<&CMat>,
    wm: Option<&CMat>,
    w3: Option<&CMat>,
    ncols: usize,
) -> Result<(CMat, CMat, CMat)> {
    let n_r = grid.n_r();
    let k = solver.k;
    let mut up = CMat::zeros((n_r, ncols));
    let mut um = CMat::zeros((n_r, ncols));
    let mut u3 = CMat::zeros((n_r, ncols));
    if let Some(w3) = w3 {
        let (a, da) = solver.potential(grid, m, w3)?;
        up = up - d_plus(grid, m, &a, &da).mapv(|v| I * v);
        um = um + d_minus(grid, m, &a, &da).mapv(|v| I * v);
    }
    if let Some(wp) = wp {
        let (a, da) = solver.potential(grid, m + 1, wp)?;
        if k != 0.0 {
            up = up - a.mapv(|v| v * k);
        }
        u3 = u3 - d_minus(grid, m + 1, &a, &da).mapv(|v| 0.5 * I * v);
    }
    if let Some(wm) = wm {
        let (a, da) = solver.potential(grid, m - 1, wm)?;
        if k != 0.0 {
            um = um + a.mapv(|v| v * k);
        }
        u3 = u3 + d_plus(grid, m - 1, &a, &da).mapv(|v| 0.5 * I * v);
    }
    Ok((up, um, u3))
}

fn physical_column(grid: &SpectralGrid, h: &[C64]) -> CMat {
    let n_r = grid.n_r();
    let mut col = CMat::zeros((n_r, 1));
    for (i, r) in grid.r_nodes().iter().enumerate() {
        col[[i, 0]] = h[i] * (-r * r / 8.0).exp();
    }
    col
}

fn store_helical(out: &mut VelocityField, n_plus: i32, up: &CMat, n_minus: i32, um: &CMat) {
    // u1 = (u+ + u-)/2, u2 = (u+ - u-)/(2i)
    for i in 0..out.grid.n_r {
        let p = up[[i, 0]];
        let q = um[[i, 0]];
        *out.get_mut(0, n_plus, i) += 0.5 * p;
        *out.get_mut(1, n_plus, i) += -0.5 * I * p;
        *out.get_mut(0, n_minus, i) += 0.5 * q;
        *out.get_mut(1, n_minus, i) += 0.5 * I * q;
    }
}

/// Planar Biot-Savart law `u_h = K_2D * omega3`, mode by mode.
///
/// Mode zero uses `u_theta(r) = (1/r) int_0^r omega(s) s ds`; other modes solve
/// for the streamfunction and return `u = grad^perp psi`.
pub fn velocity_2d(grid: &SpectralGrid, omega3: &ModeField) -> Result<VelocityField> {
    grid.check_field(omega3)?;
    if omega3.kind != FieldKind::Scalar {
        return Err(Error::InvalidArgument("velocity_2d expects a scalar field".into()));
    }
    let nm = grid.n_max() as i32;
    let mut out = VelocityField::zeros(grid.spec(), 2);
    for n in -nm..=nm {
        let col = physical_column(grid, omega3.mode(0, n));
        let (up, um) = velocity2d_mode(grid, n, &col)?;
        store_helical(&mut out, n + 1, &up, n - 1, &um);
    }
    Ok(out)
}

/// Biot-Savart law for the vorticity `w(x_h) e^{i k x3}`: solves
/// `(Delta_h - k^2) A = -w` componentwise and returns `u = curl_k A`.
///
/// At `k = 0` the horizontal velocity equals `velocity_2d(w3)` and the vertical
/// velocity is the planar law applied to the horizontal vorticity.
pub fn velocity_mode3d(grid: &SpectralGrid, w: &ModeField, k: f64) -> Result<VelocityField> {
    grid.check_field(w)?;
    if w.kind != FieldKind::Full {
        return Err(Error::InvalidArgument("velocity_mode3d expects a three-component field".into()));
    }
    let solver = ScreenedSolver::new(grid, k, grid.n_max() + 1)?;
    velocity_mode3d_with(grid, &solver, w)
}

pub fn velocity_mode3d_with(grid: &SpectralGrid, solver: &ScreenedSolver, w: &ModeField) -> Result<VelocityField> {
    let nm = grid.n_max() as i32;
    let n_r = grid.n_r();
    let mut out = VelocityField::zeros(grid.spec(), 3);
    out.horizontal_only = false;
    let helical = |n: i32, sign: f64| -> Vec<C64> {
        (0..n_r).map(|i| w.get(0, n, i) + sign * I * w.get(1, n, i)).collect()
    };
    for m in -(nm + 1)..=(nm + 1) {
        let wp = ((m + 1).abs() <= nm).then(|| physical_column(grid, &helical(m + 1, 1.0)));
        let wm = ((m - 1).abs() <= nm).then(|| physical_column(grid, &helical(m - 1, -1.0)));
        let w3 = (m.abs() <= nm).then(|| physical_column(grid, w.mode(2, m)));
        if wp.is_none() && wm.is_none() && w3.is_none() {
            continue;
        }
        let (up, um, u3) = curl_block(grid, solver, m, wp.as_ref(), wm.as_ref(), w3.as_ref(), 1)?;
        // u+ and u- of block m live on modes m+1 and m-1; both stay within n_max + 1
        // except at the outermost blocks, whose shifted parts fall outside the store.
        let lim = out.n_max as i32;
        for i in 0..n_r {
            if (m + 1).abs() <= lim {
                *out.get_mut(0, m + 1, i) += 0.5 * up[[i, 0]];
                *out.get_mut(1, m + 1, i) += -0.5 * I * up[[i, 0]];
            }
            if (m - 1).abs() <= lim {
                *out.get_mut(0, m - 1, i) += 0.5 * um[[i, 0]];
                *out.get_mut(1, m - 1, i) += 0.5 * I * um[[i, 0]];
            }
            if m.abs() <= lim {
                *out.get_mut(2, m, i) += u3[[i, 0]];
            }
        }
    }
    Ok(out)
}

/// Total circulation carried by the azimuthal velocity at radius `r_i`: `2 pi r u_theta`.
pub fn circulation_at_node(u: &VelocityField, grid: &SpectralGrid, i: usize) -> f64 {
    // u_theta on mode 0 = Im(u+ at mode 1) from u1, u2 at mode +-1
    let r = grid.r_nodes()[i];
    let up = u.get(0, 1, i) + I * u.get(1, 1, i);
    2.0 * PI * r * up.im
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ug_scalar, WeightSpec};
    use crate::spectral_grid::{build_grid, hermite_eigenfunction};

    #[test]
    fn bessel_reference_values() {
        // K_0(1), K_1(1), K_2(3), K_0(1e-6)
        assert!((bessel_k(0, 1.0) - 0.42102443824070834).abs() < 1e-13);
        assert!((bessel_k(1, 1.0) - 0.6019072301972346).abs() < 1e-13);
        assert!((bessel_k(2, 3.0) - 0.06151045847174204).abs() < 1e-14);
        let z: f64 = 1e-6;
        let k0 = -(z / 2.0).ln() - 0.5772156649015329;
        assert!((bessel_k(0, z) - k0).abs() < 1e-9);
        // recurrence K_{n+1} = K_{n-1} + (2n/z) K_n
        let z = 7.5;
        let lhs = bessel_k(4, z);
        let rhs = bessel_k(2, z) + 6.0 / z * bessel_k(3, z);
        assert!((lhs - rhs).abs() < 1e-13 * lhs);
    }

    #[test]
    fn robin_limits() {
        let r = 20.0;
        assert!((robin_coefficient(3, 1e-9, r) + 3.0 / r).abs() < 1e-8);
        // large argument: K_n'/K_n -> -1
        assert!((robin_coefficient(1, 5.0, r) / 5.0 + 1.0).abs() < 1e-2);
    }

    #[test]
    fn gaussian_vorticity_gives_burgers_velocity() {
        let g = build_grid(64, 8, 20.0).unwrap();
        let f = hermite_eigenfunction(&g, 0, 0).unwrap();
        let u = velocity_2d(&g, &f).unwrap();
        let mut err: f64 = 0.0;
        for (i, &r) in g.r_nodes().iter().enumerate() {
            for t in 0..5 {
                let th = 0.7 * t as f64;
                let ex = ug_scalar(r * r).unwrap() * r;
                let u1 = u.at_node(0, i, th);
                let u2 = u.at_node(1, i, th);
                err = err.max((u1.re + ex * th.sin()).abs()).max((u2.re - ex * th.cos()).abs());
                err = err.max(u1.im.abs()).max(u2.im.abs());
            }
        }
        assert!(err < 1e-8, "{err}");
        assert!((circulation_at_node(&u, &g, g.n_r() - 1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_in_zero_out() {
        let g = build_grid(24, 3, 20.0).unwrap();
        let z = ModeField::zeros(g.spec(), FieldKind::Scalar);
        assert_eq!(velocity_2d(&g, &z).unwrap().max_abs(), 0.0);
        let z3 = ModeField::zeros(g.spec(), FieldKind::Full);
        assert_eq!(velocity_mode3d(&g, &z3, 1.3).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn k_zero_reduces_to_planar_law() {
        let g = build_grid(48, 4, 20.0).unwrap();
        let w3 = hermite_eigenfunction(&g, 2, 1).unwrap();
        let z = ModeField::zeros(g.spec(), FieldKind::Scalar);
        let w = ModeField::from_components(&[&z, &z, &w3]).unwrap();
        let u3 = velocity_mode3d(&g, &w, 0.0).unwrap();
        let u2 = velocity_2d(&g, &w3).unwrap();
        let nm = u2.n_max as i32;
        let mut err: f64 = 0.0;
        for n in -nm..=nm {
            for i in 0..g.n_r() {
                err = err.max((u3.get(0, n, i) - u2.get(0, n, i)).norm());
                err = err.max((u3.get(1, n, i) - u2.get(1, n, i)).norm());
                err = err.max(u3.get(2, n, i).norm());
            }
        }
        assert!(err < 1e-12, "{err}");
        let _ = WeightSpec::Gaussian;
    }
}
