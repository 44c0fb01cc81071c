//! Eigenvalues, mode classification, spectral gaps and transient growth.

use std::collections::HashMap;
use std::str::FromStr;

use ndarray_linalg::{Eig, Eigh, QR, SVD, UPLO};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biot_savart::ScreenedSolver;
use crate::error::{Error, Result};
use crate::fields::{a_unchecked, WeightSpec};
use crate::linalg::{self, CMat, CVec, C64};
use crate::operators::{
    assemble_stretched_generator, circulation_row, coupling_block, divergence_block, OperatorKind,
    OperatorMatrix,
};
use crate::spectral_grid::{Comp, FieldKind, GridSpec, ModeField, Segment, SpectralGrid};

/// Tail radius as a fraction of `r_max` for the Gaussian-tail statistic.
pub const TAIL_FRACTION: f64 = 0.6;
/// Largest tail statistic of a resolved eigenvector.
pub const TAU_MAX: f64 = 0.05;
/// Radial refinement factor of the convergence test.
pub const REFINE_FACTOR: f64 = 1.5;
/// Largest eigenvalue shift under refinement for a resolved mode.
pub const REFINE_TOL: f64 = 1e-5;
/// Largest relative eigen-residual of a resolved mode.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Distance below which an eigenvector counts as lying in a constraint subspace.
pub const SUBSPACE_TOL: f64 = 1e-6;
/// Relative distance below which eigenvalues of one block form a cluster.
pub const CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Resolved,
    EssentialArtifact,
    Unconverged,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Resolved => "resolved",
            Classification::EssentialArtifact => "essential-artifact",
            Classification::Unconverged => "unconverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subspace {
    All,
    MeanZero,
    DivergenceFree,
}

impl FromStr for Subspace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subspace::All),
            "mean-zero" | "mean_zero" => Ok(Subspace::MeanZero),
            "divergence-free" | "divergence_free" => Ok(Subspace::DivergenceFree),
            _ => Err(Error::InvalidArgument(format!("unknown subspace {s:?}"))),
        }
    }
}

/// One eigenpair; the vector is a unit block vector in flattened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: C64,
    pub block: i32,
    pub vector: Option<CVec>,
    /// `||A v - lambda v|| / ||v||`, when the vector is present.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub kind: OperatorKind,
    pub grid: GridSpec,
    pub field: FieldKind,
    pub alpha: f64,
    pub k: f64,
    /// Sorted by real part, descending.
    pub modes: Vec<Eigenpair>,
    /// Filled by [`classify_modes`]; empty before.
    pub classification: Vec<Classification>,
    pub tail: Vec<f64>,
    pub refinement_shift: Vec<f64>,
    pub weight: Option<WeightSpec>,
    /// Largest real part over resolved modes.
    pub gap: Option<f64>,
}

impl SpectrumReport {
    pub fn eigenvalues(&self) -> Vec<C64> {
        self.modes.iter().map(|p| p.value).collect()
    }

    pub fn is_classified(&self) -> bool {
        self.classification.len() == self.modes.len()
    }

    pub fn resolved(&self) -> impl Iterator<Item = (usize, &Eigenpair)> {
        self.modes
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.classification.get(*i) == Some(&Classification::Resolved))
    }

    /// Eigenvector `i` as a field.
    pub fn eigenvector_field(&self, grid: &SpectralGrid, i: usize) -> Result<ModeField> {
        let p = &self.modes[i];
        let v = p
            .vector
            .as_ref()
            .ok_or_else(|| Error::Precondition("report holds no eigenvectors".into()))?;
        let mut f = ModeField::zeros(self.grid, self.field);
        grid.scatter_add(&mut f, p.block, v);
        Ok(f)
    }

    pub fn to_doc(&self) -> SpectrumDoc {
        SpectrumDoc {
            format: SPECTRUM_FORMAT.to_string(),
            operator: self.kind.clone(),
            alpha: self.alpha,
            k: self.k,
            grid: self.grid,
            field: self.field,
            weight: self.weight.map(|w| w.label()),
            gap: self.gap,
            eigenvalues: self.modes.iter().map(|p| [p.value.re, p.value.im]).collect(),
            blocks: self.modes.iter().map(|p| p.block).collect(),
            classification: self.classification.iter().map(|c| c.as_str().to_string()).collect(),
            tail: self.tail.clone(),
            refinement_shift: self.refinement_shift.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }
}

pub const SPECTRUM_FORMAT: &str = "burgers-spectra/spectrum/v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDoc {
    pub format: String,
    pub operator: OperatorKind,
    pub alpha: f64,
    pub k: f64,
    pub grid: GridSpec,
    pub field: FieldKind,
    pub weight: Option<String>,
    pub gap: Option<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub blocks: Vec<i32>,
    pub classification: Vec<String>,
    pub tail: Vec<f64>,
    pub refinement_shift: Vec<f64>,
}

fn eig_error(m: i32, a: &CMat, e: impl std::fmt::Display) -> Error {
    let fro = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bad = a.iter().filter(|v| !v.re.is_finite() || !v.im.is_finite()).count();
    Error::Eigen {
        block: m,
        message: format!("{e}; dim {}, Frobenius norm {fro:e}, {bad} non-finite entries", a.nrows()),
    }
}

fn block_eig(m: i32, a: &CMat, hermitian: bool, vectors: bool) -> Result<(Vec<C64>, Option<CMat>)> {
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(eig_error(m, a, "non-finite matrix"));
    }
    if hermitian {
        let (vals, vecs) = a.eigh(UPLO::Lower).map_err(|e| eig_error(m, a, e))?;
        let vals = vals.iter().map(|v| C64::new(*v, 0.0)).collect();
        Ok((vals, vectors.then_some(vecs)))
    } else {
        let (vals, vecs) = a.eig().map_err(|e| eig_error(m, a, e))?;
        Ok((vals.to_vec(), vectors.then_some(vecs)))
    }
}

/// All eigenpairs of `op`, block by block. Classification is left empty.
pub fn compute_spectrum(op: &OperatorMatrix, want_vectors: bool) -> Result<SpectrumReport> {
    let per_block: Vec<Result<Vec<Eigenpair>>> = op
        .blocks
        .par_iter()
        .map(|b| {
            let (vals, vecs) = block_eig(b.m, &b.matrix, op.symmetric, want_vectors)?;
            let mut out = Vec::with_capacity(vals.len());
            for (j, lam) in vals.into_iter().enumerate() {
                let (vector, residual) = match &vecs {
                    Some(v) => {
                        let mut col = v.column(j).to_owned();
                        let nrm = linalg::vec_norm(col.view());
                        col.mapv_inplace(|x| x / nrm);
                        let r = b.matrix.dot(&col) - col.mapv(|x| x * lam);
                        (Some(col), Some(linalg::vec_norm(r.view())))
                    }
                    None => (None, None),
                };
                out.push(Eigenpair { value: lam, block: b.m, vector, residual });
            }
            Ok(out)
        })
        .collect();
    let mut modes = Vec::with_capacity(op.dim());
    for r in per_block {
        modes.extend(r?);
    }
    modes.sort_by(|a, b| {
        b.value
            .re
            .total_cmp(&a.value.re)
            .then(b.value.im.total_cmp(&a.value.im))
            .then(a.block.cmp(&b.block))
    });
    Ok(SpectrumReport {
        kind: op.kind.clone(),
        grid: op.grid,
        field: op.field,
        alpha: op.alpha,
        k: op.k,
        modes,
        classification: Vec::new(),
        tail: Vec::new(),
        refinement_shift: Vec::new(),
        weight: None,
        gap: None,
    })
}

/// Fraction of the flattened norm carried by nodes with `r > TAIL_FRACTION r_max`.
pub fn tail_statistic(grid: &SpectralGrid, v: &CVec) -> f64 {
    let n_r = grid.n_r();
    let cut = TAIL_FRACTION * grid.r_max();
    let r = grid.r_nodes();
    let mut tail = 0.0;
    let mut total = 0.0;
    for (idx, x) in v.iter().enumerate() {
        let a = x.norm_sqr();
        total += a;
        if r[idx % n_r] > cut {
            tail += a;
        }
    }
    (tail / total.max(f64::MIN_POSITIVE)).sqrt()
}

/// Classifies the eigenpairs of `report` in `L^2(weight)`.
///
/// The operator is rebuilt on a grid refined radially by [`REFINE_FACTOR`].
/// A mode with real part above the essential threshold `-(m/2+1)` is resolved
/// if its residual, tail statistic and refinement shift are all below their
/// limits. A failed tail test marks it as an essential artifact; a passed tail
/// test with a failed residual or refinement test marks it unconverged. Modes
/// at or below the threshold lie in the essential spectrum of `L^2(m)` and are
/// marked as essential artifacts.
pub fn classify_modes(report: &SpectrumReport, grid: &SpectralGrid, weight: WeightSpec) -> Result<SpectrumReport> {
    if let OperatorKind::Custom { label } = &report.kind {
        return Err(Error::Precondition(format!(
            "operator {label:?} cannot be rebuilt for the refinement test"
        )));
    }
    let fine = SpectralGrid::new(report.grid.refined(REFINE_FACTOR))?;
    let refined = compute_spectrum(&report.kind.assemble(&fine)?, false)?;
    classify_modes_with(report, grid, &refined, weight)
}

/// As [`classify_modes`], with the refined spectrum supplied by the caller.
pub fn classify_modes_with(
    report: &SpectrumReport,
    grid: &SpectralGrid,
    refined: &SpectrumReport,
    weight: WeightSpec,
) -> Result<SpectrumReport> {
    if grid.spec() != report.grid {
        return Err(Error::GridMismatch("report was computed on another grid".into()));
    }
    let mut by_block: HashMap<i32, Vec<C64>> = HashMap::new();
    for p in &refined.modes {
        by_block.entry(p.block).or_default().push(p.value);
    }
    let threshold = weight.essential_threshold();
    let mut out = report.clone();
    out.classification.clear();
    out.tail.clear();
    out.refinement_shift.clear();
    for p in &report.modes {
        let v = p
            .vector
            .as_ref()
            .ok_or_else(|| Error::Precondition("classification needs eigenvectors".into()))?;
        let tau = tail_statistic(grid, v);
        let shift = by_block
            .get(&p.block)
            .map(|vals| vals.iter().map(|z| (z - p.value).norm()).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::INFINITY);
        let residual = p.residual.unwrap_or(f64::INFINITY);
        let class = if p.value.re <= threshold || tau >= TAU_MAX {
            Classification::EssentialArtifact
        } else if residual < RESIDUAL_TOL && shift < REFINE_TOL {
            Classification::Resolved
        } else {
            Classification::Unconverged
        };
        out.classification.push(class);
        out.tail.push(tau);
        out.refinement_shift.push(shift);
    }
    out.weight = Some(weight);
    out.gap = out.resolved().map(|(_, p)| p.value.re).reduce(f64::max);
    Ok(out)
}

/// Constraint rows of `subspace` on block `m`, or `None` when the block is unconstrained.
fn constraint(grid: &SpectralGrid, field: FieldKind, k: f64, m: i32, segments: &[Segment], subspace: Subspace) -> Result<Option<CMat>> {
    match subspace {
        Subspace::All => Ok(None),
        Subspace::MeanZero => {
            if !field.has_vertical() {
                return Err(Error::InvalidArgument("mean-zero subspace needs a vertical component".into()));
            }
            let Some(pos) = segments.iter().position(|s| s.comp == Comp::Vertical && s.n == 0) else {
                return Ok(None);
            };
            let n_r = grid.n_r();
            let mut c = CMat::zeros((1, segments.len() * n_r));
            for (i, v) in circulation_row(grid).into_iter().enumerate() {
                c[[0, pos * n_r + i]] = C64::new(v, 0.0);
            }
            Ok(Some(c))
        }
        Subspace::DivergenceFree => {
            if !field.has_horizontal() {
                return Err(Error::InvalidArgument("divergence-free subspace needs a horizontal field".into()));
            }
            Ok(Some(divergence_block(grid, m, segments, k)))
        }
    }
}

fn orthonormal_basis(vs: &[&CVec]) -> CMat {
    let n = vs[0].len();
    let mut q: Vec<CVec> = Vec::new();
    for v in vs {
        let mut w = (*v).clone();
        for _ in 0..2 {
            for u in &q {
                let c: C64 = u.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
                w.scaled_add(-c, u);
            }
        }
        let nrm = linalg::vec_norm(w.view());
        if nrm > 1e-8 {
            q.push(w.mapv(|x| x / nrm));
        }
    }
    let mut out = CMat::zeros((n, q.len()));
    for (j, u) in q.iter().enumerate() {
        out.column_mut(j).assign(u);
    }
    out
}

/// Distance of each resolved eigenspace cluster from the constraint subspace:
/// the smallest singular value of the constraint map on the cluster basis.
pub fn subspace_defects(report: &SpectrumReport, grid: &SpectralGrid, subspace: Subspace) -> Result<Vec<(usize, f64)>> {
    if !report.is_classified() {
        return Err(Error::Precondition("report is not classified".into()));
    }
    let spec = grid.spec();
    let resolved: Vec<(usize, &Eigenpair)> = report.resolved().collect();
    let mut out = Vec::with_capacity(resolved.len());
    for &(i, p) in &resolved {
        let segments = crate::spectral_grid::block_segments(&spec, report.field, p.block);
        let Some(c) = constraint(grid, report.field, report.k, p.block, &segments, subspace)? else {
            out.push((i, 0.0));
            continue;
        };
        let cluster: Vec<&CVec> = resolved
            .iter()
            .filter(|(_, q)| q.block == p.block && (q.value - p.value).norm() <= CLUSTER_TOL * (1.0 + p.value.norm()))
            .map(|(_, q)| q.vector.as_ref().expect("classified modes carry vectors"))
            .collect();
        let basis = orthonormal_basis(&cluster);
        let cv = c.dot(&basis);
        let (_, sv, _) = cv.svd(false, false)?;
        let smin = if cv.nrows() < cv.ncols() {
            0.0
        } else {
            sv.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        out.push((i, smin));
    }
    Ok(out)
}

/// Largest real part over resolved modes whose eigenspace meets `subspace` to [`SUBSPACE_TOL`].
pub fn spectral_gap(report: &SpectrumReport, grid: &SpectralGrid, subspace: Subspace) -> Result<f64> {
    let defects = subspace_defects(report, grid, subspace)?;
    defects
        .into_iter()
        .filter(|(_, d)| *d < SUBSPACE_TOL)
        .map(|(i, _)| report.modes[i].value.re)
        .reduce(f64::max)
        .ok_or_else(|| Error::Precondition(format!("no resolved modes in the {subspace:?} subspace")))
}

// ---------------------------------------------------------------------------
// Transient growth

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthOptions {
    /// Absolute local error allowed per unit time.
    pub tol: f64,
    /// Deepest dyadic subdivision of an output interval before giving up.
    pub max_level: u32,
    /// Restrict initial data to vanishing circulation of `w3`.
    pub mean_zero: bool,
    /// Blocks to include; default all `m >= 0` (negative blocks mirror them).
    pub blocks: Option<Vec<i32>>,
    /// Initial data range over Fokker-Planck eigenvectors of Hermite order
    /// `<= resolved_order`; default the grid's Hermite order limit.
    pub resolved_order: Option<usize>,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions { tol: 1e-9, max_level: 24, mean_zero: true, blocks: None, resolved_order: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGrowth {
    pub m: i32,
    pub gain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub format: String,
    pub alpha: f64,
    pub k0: f64,
    pub weight: String,
    pub grid: GridSpec,
    pub mean_zero: bool,
    pub times: Vec<f64>,
    /// `G(t)`, the largest singular value of the propagator in `L^2(m)`.
    pub gain: Vec<f64>,
    /// `k(t) = k0 e^{-t}`.
    pub k: Vec<f64>,
    pub blocks: Vec<BlockGrowth>,
    /// Accepted integration steps summed over blocks.
    pub steps: usize,
}

pub const GROWTH_FORMAT: &str = "burgers-spectra/growth/v1";

impl GrowthCurve {
    /// `(t, G)` at the largest sampled gain.
    pub fn max_gain(&self) -> (f64, f64) {
        let mut best = (self.times[0], self.gain[0]);
        for (t, g) in self.times.iter().zip(&self.gain) {
            if *g > best.1 {
                best = (*t, *g);
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Integrates the propagator of one block of `w' = G(alpha, k0 e^{-t}) w`.
///
/// The `k`-independent part `L` is applied exactly through cached matrix
/// exponentials (Lawson RK4), the scalar `-k^2` factor analytically, and the
/// coupling `-alpha H(k(t))` explicitly with step-doubling error control on
/// dyadic subdivisions of each output interval. The error control assumes
/// smooth data: on unresolved columns the Lawson scheme loses its order.
pub struct BlockPropagator<'a> {
    grid: &'a SpectralGrid,
    alpha: f64,
    k0: f64,
    m: i32,
    segments: Vec<Segment>,
    l: CMat,
    expm: HashMap<u64, CMat>,
    coupling: HashMap<u64, Option<CMat>>,
    tol: f64,
    max_level: u32,
    level: u32,
    pub steps: usize,
}

impl<'a> BlockPropagator<'a> {
    pub fn new(grid: &'a SpectralGrid, alpha: f64, k0: f64, m: i32, opts: &GrowthOptions) -> Result<Self> {
        if !(k0 >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("need finite alpha and k0 >= 0, got {alpha}, {k0}")));
        }
        let base = assemble_stretched_generator(grid, alpha, 0.0)?;
        let b = base
            .block(m)
            .ok_or_else(|| Error::InvalidArgument(format!("block {m} is empty on this grid")))?;
        Ok(BlockPropagator {
            grid,
            alpha,
            k0,
            m,
            segments: b.segments.clone(),
            l: b.matrix.clone(),
            expm: HashMap::new(),
            coupling: HashMap::new(),
            tol: opts.tol,
            max_level: opts.max_level,
            level: 0,
            steps: 0,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    fn exp(&mut self, h: f64) -> Result<&CMat> {
        let key = h.to_bits();
        if !self.expm.contains_key(&key) {
            let e = linalg::expm(&self.l.mapv(|v| v * h))?;
            self.expm.insert(key, e);
        }
        Ok(&self.expm[&key])
    }

    /// `-alpha H(k(t))` on this block, `None` when it vanishes.
    fn coupling_at(&mut self, t: f64) -> Result<Option<CMat>> {
        if self.alpha == 0.0 || self.k0 == 0.0 {
            return Ok(None);
        }
        let key = t.to_bits();
        if let Some(c) = self.coupling.get(&key) {
            return Ok(c.clone());
        }
        let k = self.k0 * (-t).exp();
        let ma = self.m.unsigned_abs() as usize;
        let solver = ScreenedSolver::for_modes(self.grid, k, ma + 1, |n| n + 1 >= ma || n == 1)?;
        let h = coupling_block(self.grid, &solver, self.m, &self.segments)?.mapv(|v| v * (-self.alpha));
        let out = Some(h);
        if self.coupling.len() > 64 {
            self.coupling.clear();
        }
        self.coupling.insert(key, out.clone());
        Ok(out)
    }

    /// One Lawson RK4 step of size `h` from `t`.
    fn lawson(&mut self, phi: &CMat, t: f64, h: f64) -> Result<CMat> {
        let e = self.exp(0.5 * h)?.clone();
        let n0 = self.coupling_at(t)?;
        let n1 = self.coupling_at(t + 0.5 * h)?;
        let n2 = self.coupling_at(t + h)?;
        let (Some(n0), Some(n1), Some(n2)) = (n0, n1, n2) else {
            return Ok(e.dot(&e.dot(phi)));
        };
        let c = |x: f64| C64::new(x, 0.0);
        let k1 = n0.dot(phi);
        let ephi = e.dot(phi);
        let ek1 = e.dot(&k1);
        let k2 = n1.dot(&(&ephi + &(&ek1 * c(0.5 * h))));
        let k3 = n1.dot(&(&ephi + &(&k2 * c(0.5 * h))));
        let eephi = e.dot(&ephi);
        let ek3 = e.dot(&k3);
        let k4 = n2.dot(&(&eephi + &(&ek3 * c(h))));
        let inner = &ek1 + &(&(&k2 + &k3) * c(2.0));
        let out = eephi + (e.dot(&inner) + k4) * c(h / 6.0);
        Ok(out)
    }

    /// Advances `phi` (the propagator without the `-k^2` factor) from `t0` to `t1`.
    pub fn advance(&mut self, phi: &CMat, t0: f64, t1: f64) -> Result<CMat> {
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(phi.clone());
        }
        if !(span > 0.0) {
            return Err(Error::InvalidArgument(format!("times must increase, got {t0} -> {t1}")));
        }
        if self.alpha == 0.0 || self.k0 == 0.0 {
            self.steps += 1;
            return Ok(self.exp(span)?.dot(phi));
        }
        let mut phi = phi.clone();
        let mut level = self.level;
        let mut pos: u64 = 0;
        while pos < (1u64 << level) {
            let h = span / (1u64 << level) as f64;
            let t = t0 + pos as f64 * h;
            let full = self.lawson(&phi, t, h)?;
            let half = self.lawson(&phi, t, 0.5 * h)?;
            let two = self.lawson(&half, t + 0.5 * h, 0.5 * h)?;
            let diff = &two - &full;
            let err = diff.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / 15.0;
            if err <= self.tol * h {
                phi = &two + &(diff.mapv(|v| v / 15.0));
                pos += 1;
                self.steps += 1;
                // local error scales as h^5, so a doubled step keeps err <= tol h
                if err < self.tol * h / 20.0 && level > 0 && pos % 2 == 0 {
                    level -= 1;
                    pos /= 2;
                }
            } else {
                level += 1;
                pos *= 2;
                if level > self.max_level {
                    return Err(Error::Integration(format!(
                        "block {}: step {h:e} at t = {t} rejected (error {err:e})",
                        self.m
                    )));
                }
            }
        }
        self.level = level;
        Ok(phi)
    }
}

/// Orthonormal columns spanning the Fokker-Planck eigenvectors of each segment
/// with Hermite order `<= order` (eigenvalue `>= -order/2`).
pub fn resolved_basis(grid: &SpectralGrid, segments: &[Segment], order: Option<usize>) -> CMat {
    let order = order.unwrap_or_else(|| grid.hermite_order_limit()) as f64;
    let n_r = grid.n_r();
    let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
    for (s, seg) in segments.iter().enumerate() {
        let (vals, vecs) = crate::operators::lh_eigh(grid, seg.n);
        for (j, v) in vals.iter().enumerate() {
            if *v >= -order / 2.0 - 1e-6 {
                cols.push((s, vecs.column(j).to_vec()));
            }
        }
    }
    let mut q = CMat::zeros((segments.len() * n_r, cols.len()));
    for (c, (s, v)) in cols.iter().enumerate() {
        for i in 0..n_r {
            q[[s * n_r + i, c]] = C64::new(v[i], 0.0);
        }
    }
    q
}

/// `sqrt(rho_m e^{-r^2/4})` per flattened coordinate of a block.
pub(crate) fn gram_diagonal(grid: &SpectralGrid, segments: &[Segment], weight: WeightSpec) -> Vec<f64> {
    let d: Vec<f64> = grid.r_nodes().iter().map(|r| weight.flattened_rho(r * r).sqrt()).collect();
    segments.iter().flat_map(|_| d.iter().cloned()).collect()
}

/// Map `T` with `sup_y ||D Phi Q T y|| / ||y|| = sup_x ||D Phi x|| / ||D x||` over the
/// initial data `x = Q z` (optionally with vanishing circulation `c . x = 0`),
/// where `D` is the Gram diagonal of `L^2(m)`.
fn input_map(q: &CMat, d: &[f64], circ: Option<&CVec>) -> Result<CMat> {
    let p = q.ncols();
    if p == 0 {
        return Ok(CMat::zeros((0, 0)));
    }
    let y = match circ {
        Some(c) => {
            let r = c.dot(q).insert_axis(ndarray::Axis(0));
            let (_, _, vt) = r.svd(false, true)?;
            let vt = vt.expect("requested right singular vectors");
            // rows 1.. of vt span the null space of r
            let mut y = CMat::zeros((p, p - 1));
            for j in 1..p {
                for i in 0..p {
                    y[[i, j - 1]] = vt[[j, i]].conj();
                }
            }
            y
        }
        None => linalg::identity(p),
    };
    if y.ncols() == 0 {
        return Ok(y);
    }
    let mut b = q.dot(&y);
    for (i, mut row) in b.axis_iter_mut(ndarray::Axis(0)).enumerate() {
        row.mapv_inplace(|v| v * d[i]);
    }
    let (_, r) = b.qr()?;
    let n = r.nrows();
    let rinv = linalg::solve_matrix(&r, &linalg::identity(n))?;
    Ok(y.dot(&rinv))
}

fn weighted_gain(phi: &CMat, d: &[f64]) -> Result<f64> {
    if phi.is_empty() {
        return Ok(0.0);
    }
    let mut a = phi.clone();
    for (i, mut row) in a.axis_iter_mut(ndarray::Axis(0)).enumerate() {
        row.mapv_inplace(|v| v * d[i]);
    }
    let (_, sv, _) = a.svd(false, false)?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

/// Transient growth `G(t) = ||Phi(t, 0)||` in `L^2(m)` for `w' = G(alpha, k0 e^{-t}) w`.
///
/// `times` must start at 0 and increase. Only blocks `m >= 0` are integrated;
/// block `-m` has the same singular values by conjugation symmetry.
pub fn transient_growth(
    grid: &SpectralGrid,
    alpha: f64,
    k0: f64,
    weight: WeightSpec,
    times: &[f64],
    opts: &GrowthOptions,
) -> Result<GrowthCurve> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must increase from 0".into()));
    }
    let spec = grid.spec();
    let blocks: Vec<i32> = match &opts.blocks {
        Some(b) => b.clone(),
        None => crate::spectral_grid::block_indices(&spec, FieldKind::Full)
            .into_iter()
            .filter(|m| *m >= 0)
            .collect(),
    };
    let results: Vec<Result<(BlockGrowth, usize)>> = blocks
        .par_iter()
        .map(|&m| {
            let mut prop = BlockPropagator::new(grid, alpha, k0, m, opts)?;
            let d = gram_diagonal(grid, prop.segments(), weight);
            let circ = if opts.mean_zero {
                prop.segments().iter().position(|s| s.comp == Comp::Vertical && s.n == 0).map(|pos| {
                    let n_r = grid.n_r();
                    let mut c = CVec::zeros(prop.dim());
                    for (i, v) in circulation_row(grid).into_iter().enumerate() {
                        c[pos * n_r + i] = C64::new(v, 0.0);
                    }
                    c
                })
            } else {
                None
            };
            let q = resolved_basis(grid, prop.segments(), opts.resolved_order);
            let mut phi = q.dot(&input_map(&q, &d, circ.as_ref())?);
            if phi.ncols() == 0 {
                return Ok((BlockGrowth { m, gain: vec![0.0; times.len()] }, 0));
            }
            let mut gain = Vec::with_capacity(times.len());
            gain.push(weighted_gain(&phi, &d)?);
            for w in times.windows(2) {
                phi = prop.advance(&phi, w[0], w[1])?;
                if phi.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                    return Err(Error::Integration(format!("block {m}: propagator overflow at t = {}", w[1])));
                }
                let damp = (-0.5 * k0 * k0 * a_unchecked(2.0 * w[1])).exp();
                gain.push(damp * weighted_gain(&phi, &d)?);
            }
            Ok((BlockGrowth { m, gain }, prop.steps))
        })
        .collect();
    let mut per_block = Vec::new();
    let mut steps = 0;
    for r in results {
        let (b, s) = r?;
        steps += s;
        per_block.push(b);
    }
    let gain: Vec<f64> = (0..times.len())
        .map(|i| per_block.iter().map(|b| b.gain[i]).fold(0.0, f64::max))
        .collect();
    Ok(GrowthCurve {
        format: GROWTH_FORMAT.to_string(),
        alpha,
        k0,
        weight: weight.label(),
        grid: spec,
        mean_zero: opts.mean_zero,
        times: times.to_vec(),
        gain,
        k: times.iter().map(|t| k0 * (-t).exp()).collect(),
        blocks: per_block,
        steps,
    })
}

/// Propagator of block `m` over `[0, t]` applied to the columns of `x0`,
/// including the `-k^2` factor. `x0` should be resolved (see [`resolved_basis`]).
pub fn block_propagator(grid: &SpectralGrid, alpha: f64, k0: f64, m: i32, t: f64, x0: &CMat, opts: &GrowthOptions) -> Result<CMat> {
    let mut prop = BlockPropagator::new(grid, alpha, k0, m, opts)?;
    if x0.nrows() != prop.dim() {
        return Err(Error::InvalidArgument(format!("block {m} has dimension {}, got {} rows", prop.dim(), x0.nrows())));
    }
    let phi = prop.advance(x0, 0.0, t)?;
    let damp = (-0.5 * k0 * k0 * a_unchecked(2.0 * t)).exp();
    Ok(phi.mapv(|v| v * damp))
}

/// Dense block of the stretched generator at `(alpha, k)`, used as an oracle.
pub fn generator_block(grid: &SpectralGrid, alpha: f64, k: f64, m: i32) -> Result<CMat> {
    let g = assemble_stretched_generator(grid, alpha, k)?;
    g.block(m)
        .map(|b| b.matrix.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("block {m} is empty on this grid")))
}
