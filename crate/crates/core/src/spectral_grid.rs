//! Polar spectral discretization of the plane.
//!
//! Radial nodes are Gauss-Legendre points mapped affinely onto `(0, r_max)`;
//! the angular direction is a truncated Fourier series `|n| <= n_max`. Fields
//! are stored through the envelope convention `f = h(r, n) e^{-r^2/8} e^{i n theta}`,
//! so that the Gaussian-weighted `L^2` inner product becomes a plain weighted
//! sum over the coefficients `h`.
//!
//! Vector fields are stored with Cartesian components. Operators work on the
//! helical combinations `w+ = w1 + i w2`, `w- = w1 - i w2`, for which the
//! block with index `m` collects `w+` at mode `m + 1`, `w-` at mode `m - 1` and
//! `w3` at mode `m`. Block vectors are "flattened": each coefficient is scaled
//! by the square root of its quadrature weight, so the Euclidean norm of a
//! block vector equals the `L^2(inf)` norm of the field it represents.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::WeightSpec;
use crate::linalg::{self, CVec, C64, I};

pub const MIN_RADIAL_NODES: usize = 8;
pub const MAX_RADIAL_NODES: usize = 1024;
const ENVELOPE_FLOOR: f64 = 1e-14;
const QUADRATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_r: usize,
    pub n_max: usize,
    pub r_max: f64,
}

impl GridSpec {
    pub fn n_modes(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn refined(&self, factor: f64) -> GridSpec {
        GridSpec {
            n_r: ((self.n_r as f64) * factor).round() as usize,
            ..*self
        }
    }
}

/// Which components a field carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// One scalar component (typically `w3`).
    Scalar,
    /// Horizontal vector `(w1, w2)`.
    Horizontal,
    /// Full vector `(w1, w2, w3)`.
    Full,
}

impl FieldKind {
    pub fn components(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Horizontal => 2,
            FieldKind::Full => 3,
        }
    }

    pub fn from_components(c: usize) -> Result<Self> {
        match c {
            1 => Ok(FieldKind::Scalar),
            2 => Ok(FieldKind::Horizontal),
            3 => Ok(FieldKind::Full),
            _ => Err(Error::InvalidArgument(format!("unsupported component count {c}"))),
        }
    }

    pub fn has_horizontal(self) -> bool {
        !matches!(self, FieldKind::Scalar)
    }

    pub fn has_vertical(self) -> bool {
        !matches!(self, FieldKind::Horizontal)
    }
}

/// Component of a helical block segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comp {
    Plus,
    Minus,
    Vertical,
}

/// One radial segment of a block: component and azimuthal mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub comp: Comp,
    pub n: i32,
}

impl Segment {
    /// Scale factor applied to `quad_weight` before the square root when flattening.
    fn weight_factor(&self) -> f64 {
        match self.comp {
            Comp::Vertical => 2.0 * PI,
            Comp::Plus | Comp::Minus => PI,
        }
    }
}

/// Segments present in block `m` for a field of the given kind.
pub fn block_segments(spec: &GridSpec, kind: FieldKind, m: i32) -> Vec<Segment> {
    let nm = spec.n_max as i32;
    let mut segs = Vec::with_capacity(3);
    if kind.has_horizontal() {
        if (m + 1).abs() <= nm {
            segs.push(Segment { comp: Comp::Plus, n: m + 1 });
        }
        if (m - 1).abs() <= nm {
            segs.push(Segment { comp: Comp::Minus, n: m - 1 });
        }
    }
    if kind.has_vertical() && m.abs() <= nm {
        segs.push(Segment { comp: Comp::Vertical, n: m });
    }
    segs
}

/// Block indices carrying at least one segment, ascending.
pub fn block_indices(spec: &GridSpec, kind: FieldKind) -> Vec<i32> {
    let nm = spec.n_max as i32;
    let lim = if kind.has_horizontal() { nm + 1 } else { nm };
    (-lim..=lim)
        .filter(|&m| !block_segments(spec, kind, m).is_empty())
        .collect()
}

/// Shared lazily-built matrices. Each slot is written once and then read.
#[derive(Debug, Default)]
pub(crate) struct GridCache {
    /// Symmetric flattened Fokker-Planck block per `|n|`.
    pub lh_blocks: Vec<OnceLock<Array2<f64>>>,
    /// Eigendecomposition of `lh_blocks`.
    pub lh_eigh: Vec<OnceLock<(Vec<f64>, Array2<f64>)>>,
    /// Laplace (`k = 0`) potential solver shared by the planar Biot-Savart law.
    pub screened0: OnceLock<crate::biot_savart::ScreenedSolver>,
    /// Collocation versus weak-form Fokker-Planck discrepancy.
    pub lh_check: OnceLock<f64>,
}

#[derive(Debug)]
pub struct SpectralGrid {
    spec: GridSpec,
    r: Vec<f64>,
    x: Vec<f64>,
    lam: Vec<f64>,
    quad_weights: Vec<f64>,
    line_weights: Vec<f64>,
    diff: Array2<f64>,
    stiffness: Array2<f64>,
    boundary_row: Vec<f64>,
    integration: Array2<f64>,
    pub(crate) cache: GridCache,
}

/// Builds and validates a grid with `n_r` radial nodes, modes `|n| <= n_max` and truncation radius `r_max`.
pub fn build_grid(n_r: usize, n_max: usize, r_max: f64) -> Result<SpectralGrid> {
    SpectralGrid::new(GridSpec { n_r, n_max, r_max })
}

impl SpectralGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec { n_r, n_max, r_max } = spec;
        if n_r < MIN_RADIAL_NODES {
            return Err(Error::InvalidArgument(format!(
                "n_r = {n_r} is below the minimum {MIN_RADIAL_NODES}"
            )));
        }
        if n_r > MAX_RADIAL_NODES {
            return Err(Error::InvalidArgument(format!(
                "n_r = {n_r} exceeds the maximum {MAX_RADIAL_NODES}"
            )));
        }
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::InvalidArgument(format!("r_max must be positive, got {r_max}")));
        }
        if (-r_max * r_max / 8.0).exp() >= ENVELOPE_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "r_max = {r_max} leaves envelope e^(-r_max^2/8) = {:e} above {ENVELOPE_FLOOR:e}",
                (-r_max * r_max / 8.0).exp()
            )));
        }
        if n_max > 512 {
            return Err(Error::InvalidArgument(format!("n_max = {n_max} too large")));
        }

        let (x, w) = linalg::gauss_legendre(n_r);
        let lam = linalg::legendre_barycentric_weights(&x, &w);
        let r: Vec<f64> = x.iter().map(|xi| 0.5 * r_max * (xi + 1.0)).collect();
        let line_weights: Vec<f64> = w.iter().map(|wi| 0.5 * r_max * wi).collect();
        let quad_weights: Vec<f64> = line_weights.iter().zip(&r).map(|(w, r)| w * r).collect();

        let mut diff = linalg::diff_matrix(&x, &lam);
        diff.mapv_inplace(|v| v * 2.0 / r_max);
        let wd = Array2::from_shape_fn((n_r, n_r), |(i, j)| quad_weights[i] * diff[[i, j]]);
        let stiffness = diff.t().dot(&wd);
        let boundary_row = linalg::interp_row(&x, &lam, 1.0);

        // integration[i][j] = int_0^{r_i} l_j(s) ds
        let mut integration = Array2::zeros((n_r, n_r));
        for i in 0..n_r {
            let pts: Vec<f64> = x.iter().map(|xi| r[i] * 0.5 * (xi + 1.0)).collect();
            let ux: Vec<f64> = pts.iter().map(|p| 2.0 * p / r_max - 1.0).collect();
            let interp = linalg::interp_matrix(&x, &lam, &ux);
            for q in 0..n_r {
                let wq = 0.5 * r[i] * w[q];
                for j in 0..n_r {
                    integration[[i, j]] += wq * interp[[q, j]];
                }
            }
        }

        let slots = n_max + 3;
        let cache = GridCache {
            lh_blocks: (0..slots).map(|_| OnceLock::new()).collect(),
            lh_eigh: (0..slots).map(|_| OnceLock::new()).collect(),
            screened0: OnceLock::new(),
            lh_check: OnceLock::new(),
        };
        let grid = SpectralGrid {
            spec,
            r,
            x,
            lam,
            quad_weights,
            line_weights,
            diff,
            stiffness,
            boundary_row,
            integration,
            cache,
        };
        grid.self_test()?;
        Ok(grid)
    }

    /// Polynomial exactness of the radial rule: `int_0^R r^j r dr` for `j <= 2 n_r - 2`,
    /// plus positivity and ordering of nodes and weights.
    fn self_test(&self) -> Result<()> {
        let n = self.spec.n_r;
        let rm = self.spec.r_max;
        for i in 0..n {
            if !(self.quad_weights[i] > 0.0) {
                return Err(Error::Quadrature(format!("weight {i} not positive")));
            }
            if i > 0 && !(self.r[i] > self.r[i - 1]) {
                return Err(Error::Quadrature(format!("nodes not increasing at {i}")));
            }
        }
        if !(self.r[0] > 0.0 && self.r[n - 1] < rm) {
            return Err(Error::Quadrature("nodes escape (0, r_max)".into()));
        }
        for j in 0..=(2 * n - 2) {
            let exact = 1.0 / (j as f64 + 2.0);
            let q: f64 = self
                .r
                .iter()
                .zip(&self.quad_weights)
                .map(|(r, w)| w * (r / rm).powi(j as i32) / (rm * rm))
                .sum();
            let err = (q - exact).abs() / exact;
            if err > QUADRATURE_TOL {
                return Err(Error::Quadrature(format!(
                    "moment r^{j}: relative error {err:e} exceeds {QUADRATURE_TOL:e}"
                )));
            }
        }
        Ok(())
    }

    /// Relative errors of the Gaussian moments `int_0^inf r^{2p+1} e^{-r^2/4} dr = 2 4^p p!`
    /// for `p = 0..=p_max`.
    pub fn gaussian_moment_errors(&self, p_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(p_max + 1);
        let mut exact = 2.0;
        for p in 0..=p_max {
            if p > 0 {
                exact *= 4.0 * p as f64;
            }
            let q: f64 = self
                .r
                .iter()
                .zip(&self.quad_weights)
                .map(|(r, w)| w * r.powi(2 * p as i32) * (-r * r / 4.0).exp())
                .sum();
            out.push((q - exact).abs() / exact);
        }
        out
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }
    pub fn n_r(&self) -> usize {
        self.spec.n_r
    }
    pub fn n_max(&self) -> usize {
        self.spec.n_max
    }
    pub fn r_max(&self) -> f64 {
        self.spec.r_max
    }
    pub fn r_nodes(&self) -> &[f64] {
        &self.r
    }
    /// Weights for `int_0^{r_max} f(r) r dr`.
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }
    /// Weights for `int_0^{r_max} f(r) dr`.
    pub fn line_weights(&self) -> &[f64] {
        &self.line_weights
    }
    /// Radial derivative on the nodes (exact for polynomials of degree `< n_r`).
    pub fn diff(&self) -> &Array2<f64> {
        &self.diff
    }
    /// `D^T diag(W) D`, the discrete Dirichlet form `int h' k' r dr`.
    pub fn stiffness(&self) -> &Array2<f64> {
        &self.stiffness
    }
    /// Interpolation row evaluating a nodal function at `r_max`.
    pub fn boundary_row(&self) -> &[f64] {
        &self.boundary_row
    }
    /// `integration[i][j] = int_0^{r_i} l_j(s) ds` for the Lagrange basis `l_j`.
    pub fn integration(&self) -> &Array2<f64> {
        &self.integration
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.r.iter().map(|r| (-r * r / 8.0).exp()).collect()
    }

    /// Interpolation row at radius `r` in `[0, r_max]`.
    pub fn interp_row(&self, r: f64) -> Result<Vec<f64>> {
        if !(r >= 0.0) || r > self.spec.r_max * (1.0 + 1e-14) {
            return Err(Error::Extrapolation { r, r_max: self.spec.r_max });
        }
        let u = (2.0 * r / self.spec.r_max - 1.0).min(1.0);
        Ok(linalg::interp_row(&self.x, &self.lam, u))
    }

    pub fn interp_matrix(&self, radii: &[f64]) -> Result<Array2<f64>> {
        for &r in radii {
            if !(r >= 0.0) || r > self.spec.r_max * (1.0 + 1e-14) {
                return Err(Error::Extrapolation { r, r_max: self.spec.r_max });
            }
        }
        let u: Vec<f64> = radii
            .iter()
            .map(|r| (2.0 * r / self.spec.r_max - 1.0).min(1.0))
            .collect();
        Ok(linalg::interp_matrix(&self.x, &self.lam, &u))
    }

    /// Flattening scale `sqrt(c W_i)` of a segment.
    pub fn segment_scale(&self, seg: Segment) -> Vec<f64> {
        let c = seg.weight_factor();
        self.quad_weights.iter().map(|w| (c * w).sqrt()).collect()
    }

    pub fn check_field(&self, f: &ModeField) -> Result<()> {
        if f.grid != self.spec {
            return Err(Error::GridMismatch(format!(
                "field built on {:?}, grid is {:?}",
                f.grid, self.spec
            )));
        }
        Ok(())
    }

    /// Discrete `L^2(m)` norm: `(2 pi sum_{c,n,i} W_i |h|^2 e^{-r_i^2/4} rho_m(r_i^2))^{1/2}`.
    pub fn weighted_norm(&self, f: &ModeField, w: WeightSpec) -> f64 {
        let rho: Vec<f64> = self
            .r
            .iter()
            .zip(&self.quad_weights)
            .map(|(r, q)| 2.0 * PI * q * w.flattened_rho(r * r))
            .collect();
        let n_r = self.spec.n_r;
        let mut acc = 0.0;
        for (k, v) in f.coeffs.iter().enumerate() {
            acc += rho[k % n_r] * v.norm_sqr();
        }
        acc.sqrt()
    }

    /// `L^2(inf)` inner product `<f, g>` (linear in `f`, conjugate-linear in `g`).
    pub fn inner(&self, f: &ModeField, g: &ModeField) -> C64 {
        let n_r = self.spec.n_r;
        f.coeffs
            .iter()
            .zip(&g.coeffs)
            .enumerate()
            .map(|(k, (a, b))| a * b.conj() * (2.0 * PI * self.quad_weights[k % n_r]))
            .sum()
    }

    /// Splits a field into flattened helical block vectors, one per entry of `block_indices`.
    pub fn to_blocks(&self, f: &ModeField) -> Vec<CVec> {
        let kind = f.kind;
        block_indices(&self.spec, kind)
            .into_iter()
            .map(|m| self.gather(f, m))
            .collect()
    }

    /// Flattened block vector of block `m`.
    pub fn gather(&self, f: &ModeField, m: i32) -> CVec {
        let segs = block_segments(&self.spec, f.kind, m);
        let n_r = self.spec.n_r;
        let mut v = CVec::zeros(segs.len() * n_r);
        for (s, seg) in segs.iter().enumerate() {
            let scale = self.segment_scale(*seg);
            for i in 0..n_r {
                let h = match (f.kind, seg.comp) {
                    (FieldKind::Scalar, Comp::Vertical) => f.get(0, seg.n, i),
                    (FieldKind::Full, Comp::Vertical) => f.get(2, seg.n, i),
                    (_, Comp::Plus) => f.get(0, seg.n, i) + I * f.get(1, seg.n, i),
                    (_, Comp::Minus) => f.get(0, seg.n, i) - I * f.get(1, seg.n, i),
                    _ => unreachable!("vertical segment on a horizontal field"),
                };
                v[s * n_r + i] = h * scale[i];
            }
        }
        v
    }

    /// Inverse of [`SpectralGrid::to_blocks`].
    pub fn from_blocks(&self, kind: FieldKind, blocks: &[CVec]) -> ModeField {
        let mut f = ModeField::zeros(self.spec, kind);
        for (m, v) in block_indices(&self.spec, kind).into_iter().zip(blocks) {
            self.scatter_add(&mut f, m, v);
        }
        f
    }

    /// Adds the field represented by block vector `v` of block `m` into `f`.
    pub fn scatter_add(&self, f: &mut ModeField, m: i32, v: &CVec) {
        let segs = block_segments(&self.spec, f.kind, m);
        let n_r = self.spec.n_r;
        for (s, seg) in segs.iter().enumerate() {
            let scale = self.segment_scale(*seg);
            for i in 0..n_r {
                let h = v[s * n_r + i] / scale[i];
                match (f.kind, seg.comp) {
                    (FieldKind::Scalar, Comp::Vertical) => *f.get_mut(0, seg.n, i) += h,
                    (FieldKind::Full, Comp::Vertical) => *f.get_mut(2, seg.n, i) += h,
                    (_, Comp::Plus) => {
                        *f.get_mut(0, seg.n, i) += 0.5 * h;
                        *f.get_mut(1, seg.n, i) += -0.5 * I * h;
                    }
                    (_, Comp::Minus) => {
                        *f.get_mut(0, seg.n, i) += 0.5 * h;
                        *f.get_mut(1, seg.n, i) += 0.5 * I * h;
                    }
                    _ => unreachable!("vertical segment on a horizontal field"),
                }
            }
        }
    }

    /// Cartesian sample points `(r_i cos theta_j, r_i sin theta_j)`, radial index major.
    pub fn polar_points(&self, n_theta: usize) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity(self.spec.n_r * n_theta);
        for &r in &self.r {
            for j in 0..n_theta {
                let th = 2.0 * PI * j as f64 / n_theta as f64;
                pts.push([r * th.cos(), r * th.sin()]);
            }
        }
        pts
    }

    /// Smallest angular sample count that represents every retained mode.
    pub fn min_theta(&self) -> usize {
        2 * self.spec.n_max + 1
    }

    /// Evaluates the physical field at arbitrary points. Output shape `(component, point)`.
    pub fn synthesize(&self, f: &ModeField, points: &[[f64; 2]]) -> Result<Array2<C64>> {
        self.check_field(f)?;
        let nc = f.kind.components();
        let nm = self.spec.n_max as i32;
        let mut out = Array2::zeros((nc, points.len()));
        for (p, pt) in points.iter().enumerate() {
            let r = (pt[0] * pt[0] + pt[1] * pt[1]).sqrt();
            let row = self.interp_row(r)?;
            let th = pt[1].atan2(pt[0]);
            let env = (-r * r / 8.0).exp();
            for c in 0..nc {
                let mut acc = C64::new(0.0, 0.0);
                for n in -nm..=nm {
                    let hn: C64 = row
                        .iter()
                        .enumerate()
                        .map(|(i, l)| f.get(c, n, i) * *l)
                        .sum();
                    acc += hn * C64::from_polar(1.0, n as f64 * th);
                }
                out[[c, p]] = acc * env;
            }
        }
        Ok(out)
    }

    /// Physical values on the tensor grid `(component, radial node, angle)`.
    pub fn synthesize_grid(&self, f: &ModeField, n_theta: usize) -> Result<Array3<C64>> {
        self.check_field(f)?;
        if n_theta < self.min_theta() {
            return Err(Error::InvalidArgument(format!(
                "n_theta = {n_theta} cannot carry modes up to {}",
                self.spec.n_max
            )));
        }
        let nc = f.kind.components();
        let n_r = self.spec.n_r;
        let nm = self.spec.n_max as i32;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_inverse(n_theta);
        let mut out = Array3::zeros((nc, n_r, n_theta));
        let mut buf = vec![C64::new(0.0, 0.0); n_theta];
        for c in 0..nc {
            for i in 0..n_r {
                buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
                for n in -nm..=nm {
                    let idx = n.rem_euclid(n_theta as i32) as usize;
                    buf[idx] += f.get(c, n, i);
                }
                fft.process(&mut buf);
                let env = (-self.r[i] * self.r[i] / 8.0).exp();
                for j in 0..n_theta {
                    out[[c, i, j]] = buf[j] * env;
                }
            }
        }
        Ok(out)
    }

    /// Mode coefficients from physical values on the tensor grid `(component, radial node, angle)`.
    pub fn analyze(&self, values: &Array3<C64>) -> Result<ModeField> {
        let (nc, n_r, n_theta) = values.dim();
        if n_r != self.spec.n_r {
            return Err(Error::GridMismatch(format!(
                "values carry {n_r} radial nodes, grid has {}",
                self.spec.n_r
            )));
        }
        if n_theta < self.min_theta() {
            return Err(Error::InvalidArgument(format!(
                "n_theta = {n_theta} cannot resolve modes up to {}",
                self.spec.n_max
            )));
        }
        let kind = FieldKind::from_components(nc)?;
        let nm = self.spec.n_max as i32;
        let mut f = ModeField::zeros(self.spec, kind);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_theta);
        let mut buf = vec![C64::new(0.0, 0.0); n_theta];
        for c in 0..nc {
            for i in 0..n_r {
                for j in 0..n_theta {
                    buf[j] = values[[c, i, j]];
                }
                fft.process(&mut buf);
                let scale = (self.r[i] * self.r[i] / 8.0).exp() / n_theta as f64;
                for n in -nm..=nm {
                    let idx = n.rem_euclid(n_theta as i32) as usize;
                    *f.get_mut(c, n, i) = buf[idx] * scale;
                }
            }
        }
        Ok(f)
    }

    /// Largest Hermite order `j + k` that the grid represents exactly in angle
    /// and resolves radially.
    pub fn hermite_order_limit(&self) -> usize {
        self.spec.n_max.min(self.spec.n_r / 4)
    }
}

/// Probabilists' Hermite polynomial `He_j(x)`.
pub fn hermite_he(j: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    if j == 0 {
        return p0;
    }
    let mut p1 = x;
    for k in 1..j {
        let p2 = x * p1 - k as f64 * p0;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `d_1^j d_2^k g` from `(-1/sqrt 2)^{j+k} He_j(x_1/sqrt 2) He_k(x_2/sqrt 2) g`.
/// These are eigenfunctions of the Fokker-Planck operator with eigenvalue `-(j+k)/2`.
pub fn hermite_eigenfunction(grid: &SpectralGrid, j: usize, k: usize) -> Result<ModeField> {
    let order = j + k;
    let limit = grid.hermite_order_limit();
    if order > limit {
        return Err(Error::Resolution { order, limit });
    }
    let n_theta = (2 * order + 1).max(grid.min_theta());
    let n_r = grid.n_r();
    let c = (-std::f64::consts::FRAC_1_SQRT_2).powi(order as i32) / (4.0 * PI);
    let s2 = std::f64::consts::SQRT_2;
    let mut vals = Array3::zeros((1, n_r, n_theta));
    for (i, &r) in grid.r_nodes().iter().enumerate() {
        let env = (-r * r / 8.0).exp();
        for t in 0..n_theta {
            let th = 2.0 * PI * t as f64 / n_theta as f64;
            let (x1, x2) = (r * th.cos(), r * th.sin());
            // physical value = c He_j He_k e^{-r^2/4}; analyze divides by e^{-r^2/8}
            let v = c * hermite_he(j, x1 / s2) * hermite_he(k, x2 / s2) * env * env;
            vals[[0, i, t]] = C64::new(v, 0.0);
        }
    }
    grid.analyze(&vals)
}

/// Random real field built from Hermite eigenfunctions of order `<= order`
/// with standard normal coefficients. With `mean_zero` the `g` component is omitted.
pub fn random_hermite_field<R: Rng + ?Sized>(
    grid: &SpectralGrid,
    kind: FieldKind,
    order: usize,
    mean_zero: bool,
    rng: &mut R,
) -> Result<ModeField> {
    let mut out = ModeField::zeros(grid.spec(), kind);
    let nc = kind.components();
    for total in 0..=order {
        for j in 0..=total {
            let basis = hermite_eigenfunction(grid, j, total - j)?;
            for c in 0..nc {
                if total == 0 && mean_zero && (kind == FieldKind::Scalar || c == 2) {
                    continue;
                }
                let a: f64 = standard_normal(rng);
                out.add_scaled_component(c, &basis, C64::new(a, 0.0));
            }
        }
    }
    Ok(out)
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Per-mode radial coefficient arrays of a scalar or vector field.
///
/// Coefficients are stored row-major over `(component, n + n_max, radial node)`;
/// the physical field is `sum_n h(r, n) e^{-r^2/8} e^{i n theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeField {
    pub grid: GridSpec,
    pub kind: FieldKind,
    pub coeffs: Vec<C64>,
}

impl ModeField {
    pub fn zeros(grid: GridSpec, kind: FieldKind) -> Self {
        ModeField {
            grid,
            kind,
            coeffs: vec![C64::new(0.0, 0.0); kind.components() * grid.n_modes() * grid.n_r],
        }
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }

    #[inline]
    pub fn index(&self, c: usize, n: i32, i: usize) -> usize {
        let nm = self.grid.n_max as i32;
        debug_assert!(n.abs() <= nm);
        (c * self.grid.n_modes() + (n + nm) as usize) * self.grid.n_r + i
    }

    #[inline]
    pub fn get(&self, c: usize, n: i32, i: usize) -> C64 {
        self.coeffs[self.index(c, n, i)]
    }

    #[inline]
    pub fn get_mut(&mut self, c: usize, n: i32, i: usize) -> &mut C64 {
        let k = self.index(c, n, i);
        &mut self.coeffs[k]
    }

    /// Radial coefficients of component `c`, mode `n`.
    pub fn mode(&self, c: usize, n: i32) -> &[C64] {
        let k = self.index(c, n, 0);
        &self.coeffs[k..k + self.grid.n_r]
    }

    pub fn mode_mut(&mut self, c: usize, n: i32) -> &mut [C64] {
        let k = self.index(c, n, 0);
        let n_r = self.grid.n_r;
        &mut self.coeffs[k..k + n_r]
    }

    /// Adds `a` times the scalar field `basis` into component `c`.
    pub fn add_scaled_component(&mut self, c: usize, basis: &ModeField, a: C64) {
        let nm = self.grid.n_max as i32;
        for n in -nm..=nm {
            for i in 0..self.grid.n_r {
                *self.get_mut(c, n, i) += a * basis.get(0, n, i);
            }
        }
    }

    /// Extracts component `c` as a scalar field.
    pub fn component(&self, c: usize) -> ModeField {
        let len = self.grid.n_modes() * self.grid.n_r;
        ModeField {
            grid: self.grid,
            kind: FieldKind::Scalar,
            coeffs: self.coeffs[c * len..(c + 1) * len].to_vec(),
        }
    }

    /// Builds a vector field from scalar components.
    pub fn from_components(parts: &[&ModeField]) -> Result<ModeField> {
        let kind = FieldKind::from_components(parts.len())?;
        let grid = parts[0].grid;
        let mut coeffs = Vec::new();
        for p in parts {
            if p.grid != grid || p.kind != FieldKind::Scalar {
                return Err(Error::InvalidArgument("components must be scalar fields on one grid".into()));
            }
            coeffs.extend_from_slice(&p.coeffs);
        }
        Ok(ModeField { grid, kind, coeffs })
    }

    pub fn scaled(&self, a: C64) -> ModeField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn axpy(&mut self, a: C64, other: &ModeField) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &ModeField) -> ModeField {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    /// Largest deviation from `h(r, -n) = conj(h(r, n))`, i.e. from being a real physical field.
    pub fn reality_defect(&self) -> f64 {
        let nm = self.grid.n_max as i32;
        let mut d: f64 = 0.0;
        for c in 0..self.components() {
            for n in 0..=nm {
                for i in 0..self.grid.n_r {
                    d = d.max((self.get(c, -n, i) - self.get(c, n, i).conj()).norm());
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModeFieldDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<ModeField> {
        let doc: ModeFieldDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// On-disk layout of a [`ModeField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFieldDoc {
    pub format: String,
    pub grid: GridSpec,
    pub components: usize,
    pub envelope: String,
    pub layout: String,
    pub coeffs: Vec<[f64; 2]>,
}

pub const MODEFIELD_FORMAT: &str = "burgers-spectra/modefield/v1";

impl From<&ModeField> for ModeFieldDoc {
    fn from(f: &ModeField) -> Self {
        ModeFieldDoc {
            format: MODEFIELD_FORMAT.to_string(),
            grid: f.grid,
            components: f.components(),
            envelope: "h(r,n) exp(-r^2/8) exp(i n theta)".to_string(),
            layout: "row-major (component, n + n_max, radial node)".to_string(),
            coeffs: f.coeffs.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

impl TryFrom<ModeFieldDoc> for ModeField {
    type Error = Error;
    fn try_from(doc: ModeFieldDoc) -> Result<ModeField> {
        if doc.format != MODEFIELD_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown format {:?}", doc.format)));
        }
        let kind = FieldKind::from_components(doc.components)?;
        let expected = doc.components * doc.grid.n_modes() * doc.grid.n_r;
        if doc.coeffs.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} coefficients, found {}",
                doc.coeffs.len()
            )));
        }
        Ok(ModeField {
            grid: doc.grid,
            kind,
            coeffs: doc.coeffs.iter().map(|c| C64::new(c[0], c[1])).collect(),
        })
    }
}
