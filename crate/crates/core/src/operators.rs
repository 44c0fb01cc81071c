//! Dense block assembly of the linearized operators around the vortex.
//!
//! Every operator here commutes with rotations, so it is block diagonal over
//! the helical block index `m` (see [`crate::spectral_grid`]). Blocks act on
//! flattened coordinates, in which the Gaussian-weighted `L^2` norm is the
//! Euclidean norm and the Fokker-Planck operator is a symmetric matrix.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::biot_savart::{self, ScreenedSolver};
use crate::error::{Error, Result};
use crate::fields::{gaussian_profile_r2, ug_unchecked};
use crate::linalg::{self, CMat, CVec, C64, I};
use crate::spectral_grid::{
    block_indices, block_segments, hermite_eigenfunction, Comp, FieldKind, GridSpec, ModeField,
    Segment, SpectralGrid,
};

/// Agreement expected between the collocation and weak-form assemblies of the
/// Fokker-Planck operator on resolved fields (reached at `n_r = 64`, `r_max = 20`).
pub const LH_PATH_TOL: f64 = 1e-9;

/// Recipe of an assembled operator, sufficient to rebuild it on another grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorKind {
    /// `Delta_h + (x_h/2).grad_h + 1` acting componentwise.
    FokkerPlanck { field: FieldKind },
    /// `(U^G . grad)` acting componentwise.
    Advection { field: FieldKind },
    /// `(w_h . grad_h) U^G_h` on horizontal fields.
    StretchH,
    /// `(K_2D * w3 . grad_h) g` on scalar fields.
    Feedback3,
    /// Horizontal vectorial operator with circulation `alpha`.
    LAlphaH { alpha: f64 },
    /// Vertical vectorial operator with circulation `alpha`.
    LAlpha3 { alpha: f64 },
    /// Horizontal/vertical coupling at vertical wavenumber `k`.
    Coupling { k: f64 },
    /// Full generator at circulation `alpha` and wavenumber `k`.
    Generator { alpha: f64, k: f64 },
    /// Anything else; cannot be rebuilt on a refined grid.
    Custom { label: String },
}

impl OperatorKind {
    pub fn field(&self) -> Option<FieldKind> {
        Some(match self {
            OperatorKind::FokkerPlanck { field } | OperatorKind::Advection { field } => *field,
            OperatorKind::StretchH | OperatorKind::LAlphaH { .. } => FieldKind::Horizontal,
            OperatorKind::Feedback3 | OperatorKind::LAlpha3 { .. } => FieldKind::Scalar,
            OperatorKind::Coupling { .. } | OperatorKind::Generator { .. } => FieldKind::Full,
            OperatorKind::Custom { .. } => return None,
        })
    }

    /// Assembles this operator on `grid`.
    pub fn assemble(&self, grid: &SpectralGrid) -> Result<OperatorMatrix> {
        match self {
            OperatorKind::FokkerPlanck { field } => assemble_lh_on(grid, *field),
            OperatorKind::Advection { field } => assemble_advection_on(grid, *field),
            OperatorKind::StretchH => assemble_stretch_h(grid),
            OperatorKind::Feedback3 => assemble_feedback3(grid),
            OperatorKind::LAlphaH { alpha } => assemble_l_alpha_h(grid, *alpha),
            OperatorKind::LAlpha3 { alpha } => assemble_l_alpha_3(grid, *alpha),
            OperatorKind::Coupling { k } => assemble_coupling(grid, *k),
            OperatorKind::Generator { alpha, k } => assemble_stretched_generator(grid, *alpha, *k),
            OperatorKind::Custom { label } => Err(Error::Assembly(format!(
                "custom operator {label:?} has no assembly recipe"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorBlock {
    pub m: i32,
    pub segments: Vec<Segment>,
    pub matrix: CMat,
}

/// Dense operator stored as helical blocks over flattened coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    pub grid: GridSpec,
    pub field: FieldKind,
    pub alpha: f64,
    pub k: f64,
    /// Set when every block is symmetric (real symmetric in flattened coordinates).
    pub symmetric: bool,
    pub blocks: Vec<OperatorBlock>,
}

impl OperatorMatrix {
    pub fn zeros(grid: &SpectralGrid, field: FieldKind, kind: OperatorKind) -> Self {
        let spec = grid.spec();
        let n_r = spec.n_r;
        let blocks = block_indices(&spec, field)
            .into_iter()
            .map(|m| {
                let segments = block_segments(&spec, field, m);
                let d = segments.len() * n_r;
                OperatorBlock { m, segments, matrix: CMat::zeros((d, d)) }
            })
            .collect();
        OperatorMatrix { kind, grid: spec, field, alpha: 0.0, k: 0.0, symmetric: false, blocks }
    }

    /// Total dimension.
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.matrix.nrows()).sum()
    }

    pub fn block(&self, m: i32) -> Option<&OperatorBlock> {
        self.blocks.iter().find(|b| b.m == m)
    }

    /// `self + c * other`, block by block.
    pub fn plus_scaled(&self, c: C64, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        if self.grid != other.grid || self.field != other.field {
            return Err(Error::InvalidArgument("operators live on different bases".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.blocks.iter_mut().zip(&other.blocks) {
            a.matrix.scaled_add(c, &b.matrix);
        }
        out.symmetric = self.symmetric && other.symmetric && c.im == 0.0;
        out.kind = OperatorKind::Custom { label: "combination".into() };
        Ok(out)
    }

    /// Adds `c` times the identity.
    pub fn shifted(&self, c: f64) -> OperatorMatrix {
        let mut out = self.clone();
        for b in &mut out.blocks {
            for i in 0..b.matrix.nrows() {
                b.matrix[[i, i]] += c;
            }
        }
        out
    }

    pub fn apply(&self, grid: &SpectralGrid, f: &ModeField) -> Result<ModeField> {
        grid.check_field(f)?;
        if f.kind != self.field {
            return Err(Error::InvalidArgument(format!(
                "operator acts on {:?} fields, got {:?}",
                self.field, f.kind
            )));
        }
        let mut out = ModeField::zeros(self.grid, self.field);
        for b in &self.blocks {
            let v = grid.gather(f, b.m);
            let w = b.matrix.dot(&v);
            grid.scatter_add(&mut out, b.m, &w);
        }
        Ok(out)
    }

    /// Block-diagonal dense matrix in block order.
    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        let mut out = CMat::zeros((n, n));
        let mut off = 0;
        for b in &self.blocks {
            let d = b.matrix.nrows();
            out.slice_mut(s![off..off + d, off..off + d]).assign(&b.matrix);
            off += d;
        }
        out
    }

    /// Largest entry of `A - A^T` relative to the largest entry of `A`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for b in &self.blocks {
            let a = &b.matrix;
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    num = num.max((a[[i, j]] - a[[j, i]]).norm());
                    den = den.max(a[[i, j]].norm());
                }
            }
        }
        num / den.max(f64::MIN_POSITIVE)
    }

    pub fn to_doc(&self) -> OperatorDoc {
        OperatorDoc {
            format: OPERATOR_FORMAT.to_string(),
            kind: self.kind.clone(),
            grid: self.grid,
            field: self.field,
            alpha: self.alpha,
            k: self.k,
            symmetric: self.symmetric,
            dim: self.dim(),
            basis: "helical blocks; block m holds w+ at mode m+1, w- at mode m-1, w3 at mode m; \
                    coefficients flattened by sqrt(c W_i), c = pi for w+/w-, 2 pi for w3"
                .to_string(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    m: b.m,
                    segments: b.segments.clone(),
                    rows: b.matrix.nrows(),
                    cols: b.matrix.ncols(),
                    data: b.matrix.iter().map(|v| [v.re, v.im]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<OperatorMatrix> {
        let doc: OperatorDoc = serde_json::from_str(s)?;
        if doc.format != OPERATOR_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown format {:?}", doc.format)));
        }
        let blocks = doc
            .blocks
            .into_iter()
            .map(|b| {
                if b.data.len() != b.rows * b.cols {
                    return Err(Error::InvalidArgument(format!("block {} has wrong size", b.m)));
                }
                let data: Vec<C64> = b.data.iter().map(|v| C64::new(v[0], v[1])).collect();
                let matrix = CMat::from_shape_vec((b.rows, b.cols), data)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(OperatorBlock { m: b.m, segments: b.segments, matrix })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OperatorMatrix {
            kind: doc.kind,
            grid: doc.grid,
            field: doc.field,
            alpha: doc.alpha,
            k: doc.k,
            symmetric: doc.symmetric,
            blocks,
        })
    }
}

pub const OPERATOR_FORMAT: &str = "burgers-spectra/operator/v1";

/// On-disk layout of an [`OperatorMatrix`]; block data are row-major `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorDoc {
    pub format: String,
    pub kind: OperatorKind,
    pub grid: GridSpec,
    pub field: FieldKind,
    pub alpha: f64,
    pub k: f64,
    pub symmetric: bool,
    pub dim: usize,
    pub basis: String,
    pub blocks: Vec<BlockDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDoc {
    pub m: i32,
    pub segments: Vec<Segment>,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

// ---------------------------------------------------------------------------
// Radial building blocks (h-space unless noted)

fn r2(grid: &SpectralGrid) -> Vec<f64> {
    grid.r_nodes().iter().map(|r| r * r).collect()
}

/// Symmetric flattened Fokker-Planck block for `|n|`:
/// `-W^{-1/2} K W^{-1/2} + diag(-r^2/16 - n^2/r^2 + 1/2)`.
pub(crate) fn lh_block(grid: &SpectralGrid, n: i32) -> &Array2<f64> {
    let na = n.unsigned_abs() as usize;
    grid.cache.lh_blocks[na].get_or_init(|| {
        let n_r = grid.n_r();
        let w = grid.quad_weights();
        let r = grid.r_nodes();
        let k = grid.stiffness();
        let nf = na as f64;
        let mut a = Array2::zeros((n_r, n_r));
        for i in 0..n_r {
            for j in 0..n_r {
                a[[i, j]] = -k[[i, j]] / (w[i] * w[j]).sqrt();
            }
            a[[i, i]] += -r[i] * r[i] / 16.0 - nf * nf / (r[i] * r[i]) + 0.5;
        }
        // symmetrize the last rounding bits
        let at = a.t().to_owned();
        (a + at) * 0.5
    })
}

/// Eigendecomposition of [`lh_block`], ascending eigenvalues.
pub(crate) fn lh_eigh(grid: &SpectralGrid, n: i32) -> &(Vec<f64>, Array2<f64>) {
    use ndarray_linalg::{Eigh, UPLO};
    let na = n.unsigned_abs() as usize;
    grid.cache.lh_eigh[na].get_or_init(|| {
        let (vals, vecs) = lh_block(grid, n).eigh(UPLO::Lower).expect("symmetric eigensolve");
        (vals.to_vec(), vecs)
    })
}

/// Collocation form `h'' + h'/r - n^2 h/r^2 - r^2 h/16 + h/2` in h-space.
pub fn lh_collocation(grid: &SpectralGrid, n: i32) -> Array2<f64> {
    let d = grid.diff();
    let d2 = d.dot(d);
    let r = grid.r_nodes();
    let nf = n as f64;
    let mut a = d2;
    for i in 0..grid.n_r() {
        for j in 0..grid.n_r() {
            a[[i, j]] += d[[i, j]] / r[i];
        }
        a[[i, i]] += -nf * nf / (r[i] * r[i]) - r[i] * r[i] / 16.0 + 0.5;
    }
    a
}

/// Weak-form matrix `-W^{-1} K + diag(...)` in h-space.
pub fn lh_weak(grid: &SpectralGrid, n: i32) -> Array2<f64> {
    let w = grid.quad_weights();
    let b = lh_block(grid, n);
    Array2::from_shape_fn(b.raw_dim(), |(i, j)| b[[i, j]] * (w[j] / w[i]).sqrt())
}

/// Largest relative discrepancy between the collocation and weak-form
/// Fokker-Planck assemblies on the Hermite eigenfunctions of order `<= 6`.
pub fn lh_path_discrepancy(grid: &SpectralGrid) -> f64 {
    *grid.cache.lh_check.get_or_init(|| {
        let order = grid.hermite_order_limit().min(6);
        let nm = grid.n_max() as i32;
        let mats: Vec<(Array2<f64>, Array2<f64>)> =
            (0..=nm).map(|n| (lh_collocation(grid, n), lh_weak(grid, n))).collect();
        let mut worst: f64 = 0.0;
        for total in 0..=order {
            for j in 0..=total {
                let f = hermite_eigenfunction(grid, j, total - j).expect("order within limit");
                let scale = f.max_abs() * (1.0 + total as f64);
                for n in -nm..=nm {
                    let h = CVec::from(f.mode(0, n).to_vec());
                    let (a, b) = &mats[n.unsigned_abs() as usize];
                    let da = linalg::to_complex(a).dot(&h) - linalg::to_complex(b).dot(&h);
                    let e = da.iter().map(|v| v.norm()).fold(0.0, f64::max);
                    worst = worst.max(e / scale);
                }
            }
        }
        worst
    })
}

fn flatten_into(
    grid: &SpectralGrid,
    out: &mut CMat,
    row_seg: (usize, Segment),
    col_seg: (usize, Segment),
    t: &CMat,
) {
    let n_r = grid.n_r();
    let so = grid.segment_scale(row_seg.1);
    let si = grid.segment_scale(col_seg.1);
    let (ro, co) = (row_seg.0 * n_r, col_seg.0 * n_r);
    for i in 0..n_r {
        for j in 0..n_r {
            out[[ro + i, co + j]] += t[[i, j]] * (so[i] / si[j]);
        }
    }
}

fn diag_c(v: impl Iterator<Item = C64>) -> CMat {
    let v: Vec<C64> = v.collect();
    Array2::from_diag(&ndarray::Array1::from(v))
}

// ---------------------------------------------------------------------------
// Public assembly routines

/// Fokker-Planck operator `Delta_h + (x_h/2).grad_h + 1` on scalar fields, in the
/// symmetric weak form. [`lh_path_discrepancy`] measures its agreement with collocation.
pub fn assemble_lh(grid: &SpectralGrid) -> Result<OperatorMatrix> {
    assemble_lh_on(grid, FieldKind::Scalar)
}

/// Fokker-Planck operator acting componentwise on fields of the given kind.
pub fn assemble_lh_on(grid: &SpectralGrid, field: FieldKind) -> Result<OperatorMatrix> {
    let mut op = OperatorMatrix::zeros(grid, field, OperatorKind::FokkerPlanck { field });
    let n_r = grid.n_r();
    for b in &mut op.blocks {
        for (s, seg) in b.segments.iter().enumerate() {
            let l = lh_block(grid, seg.n);
            for i in 0..n_r {
                for j in 0..n_r {
                    b.matrix[[s * n_r + i, s * n_r + j]] = C64::new(l[[i, j]], 0.0);
                }
            }
        }
    }
    op.symmetric = true;
    Ok(op)
}

/// Advection by the vortex, `Lambda_1 = (U^G . grad)`: multiplication by `i n u^g(r^2)` per mode.
pub fn assemble_advection(grid: &SpectralGrid) -> Result<OperatorMatrix> {
    assemble_advection_on(grid, FieldKind::Scalar)
}

pub fn assemble_advection_on(grid: &SpectralGrid, field: FieldKind) -> Result<OperatorMatrix> {
    let mut op = OperatorMatrix::zeros(grid, field, OperatorKind::Advection { field });
    let n_r = grid.n_r();
    let r2 = r2(grid);
    for b in &mut op.blocks {
        for (s, seg) in b.segments.iter().enumerate() {
            for i in 0..n_r {
                b.matrix[[s * n_r + i, s * n_r + i]] = I * (seg.n as f64 * ug_unchecked(r2[i]));
            }
        }
    }
    Ok(op)
}

/// Stretching by the vortex on horizontal vorticity, `(w_h . grad_h) U^G_h`.
///
/// In helical form: `(.)+ = i(g/2) w+ + i(g/2 - u) e^{2i theta} w-` and
/// `(.)- = -i(g/2) w- - i(g/2 - u) e^{-2i theta} w+`, with `g/2 - u = r^2 u'` (`u = u^g`).
pub fn assemble_stretch_h(grid: &SpectralGrid) -> Result<OperatorMatrix> {
    let mut op = OperatorMatrix::zeros(grid, FieldKind::Horizontal, OperatorKind::StretchH);
    let r2 = r2(grid);
    let half_g: Vec<f64> = r2.iter().map(|s| 0.5 * gaussian_profile_r2(*s)).collect();
    let shear: Vec<f64> = r2.iter().zip(&half_g).map(|(s, hg)| hg - ug_unchecked(*s)).collect();
    for b in &mut op.blocks {
        let segs = b.segments.clone();
        for (so, seg_o) in segs.iter().enumerate() {
            for (si, seg_i) in segs.iter().enumerate() {
                let t = match (seg_o.comp, seg_i.comp) {
                    (Comp::Plus, Comp::Plus) => diag_c(half_g.iter().map(|v| I * *v)),
                    (Comp::Plus, Comp::Minus) => diag_c(shear.iter().map(|v| I * *v)),
                    (Comp::Minus, Comp::Minus) => diag_c(half_g.iter().map(|v| -I * *v)),
                    (Comp::Minus, Comp::Plus) => diag_c(shear.iter().map(|v| -I * *v)),
                    _ => continue,
                };
                flatten_into(grid, &mut b.matrix, (so, *seg_o), (si, *seg_i), &t);
            }
        }
    }
    Ok(op)
}

/// h-space matrix of `w3 -> (K_2D * w3 . grad_h) g = (i n / 2) g psi_n` on mode `n`.
fn feedback3_mode(grid: &SpectralGrid, n: i32) -> Result<CMat> {
    let n_r = grid.n_r();
    if n == 0 {
        return Ok(CMat::zeros((n_r, n_r)));
    }
    let env = grid.envelope();
    let input = diag_c(env.iter().map(|e| C64::new(*e, 0.0)));
    let (psi, _) = biot_savart::streamfunction_mode(grid, n, &input)?;
    let mut t = psi;
    for i in 0..n_r {
        let c = I * (n as f64 / (8.0 * PI)) * env[i];
        t.row_mut(i).mapv_inplace(|v| v * c);
    }
    Ok(t)
}

/// `Lambda~_3 w3 = (K_2D * w3, grad_h) g` on scalar fields.
pub fn assemble_feedback3(grid: &SpectralGrid) -> Result<OperatorMatrix> {
    let mut op = OperatorMatrix::zeros(grid, FieldKind::Scalar, OperatorKind::Feedback3);
    for b in &mut op.blocks {
        let seg = b.segments[0];
        let t = feedback3_mode(grid, seg.n)?;
        flatten_into(grid, &mut b.matrix, (0, seg), (0, seg), &t);
    }
    Ok(op)
}

/// `L_{alpha,h} = (L_h - 3/2) - alpha (Lambda_1 - Lambda~_2)` on horizontal fields.
pub fn assemble_l_alpha_h(grid: &SpectralGrid, alpha: f64) -> Result<OperatorMatrix> {
    let lh = assemble_lh_on(grid, FieldKind::Horizontal)?;
    let adv = assemble_advection_on(grid, FieldKind::Horizontal)?;
    let st = assemble_stretch_h(grid)?;
    let mut op = lh
        .shifted(-1.5)
        .plus_scaled(C64::new(-alpha, 0.0), &adv)?
        .plus_scaled(C64::new(alpha, 0.0), &st)?;
    op.kind = OperatorKind::LAlphaH { alpha };
    op.alpha = alpha;
    op.symmetric = alpha == 0.0;
    Ok(op)
}

/// `L_{alpha,3} = L_h - alpha (Lambda_1 + Lambda~_3)` on scalar fields.
pub fn assemble_l_alpha_3(grid: &SpectralGrid, alpha: f64) -> Result<OperatorMatrix> {
    let lh = assemble_lh(grid)?;
    let adv = assemble_advection(grid)?;
    let fb = assemble_feedback3(grid)?;
    let mut op = lh
        .plus_scaled(C64::new(-alpha, 0.0), &adv)?
        .plus_scaled(C64::new(-alpha, 0.0), &fb)?;
    op.kind = OperatorKind::LAlpha3 { alpha };
    op.alpha = alpha;
    op.symmetric = alpha == 0.0;
    Ok(op)
}

/// Coupling block `m` of `H(k)` in flattened coordinates.
pub(crate) fn coupling_block(
    grid: &SpectralGrid,
    solver: &ScreenedSolver,
    m: i32,
    segments: &[Segment],
) -> Result<CMat> {
    let dim = segments.len() * grid.n_r();
    coupling_apply(grid, solver, m, segments, &linalg::identity(dim))
}

/// `H(k) x` on block `m` for flattened input columns `x`.
pub(crate) fn coupling_apply(
    grid: &SpectralGrid,
    solver: &ScreenedSolver,
    m: i32,
    segments: &[Segment],
    x: &CMat,
) -> Result<CMat> {
    let n_r = grid.n_r();
    let k = solver.k;
    let ncols = x.ncols();
    let mut out = CMat::zeros((segments.len() * n_r, ncols));
    if k == 0.0 {
        return Ok(out);
    }
    let r = grid.r_nodes();
    let env = grid.envelope();
    let (mut wp, mut wm, mut w3) = (None, None, None);
    for (ci, seg) in segments.iter().enumerate() {
        // physical samples of the input on this segment
        let sc = grid.segment_scale(*seg);
        let mut phys = x.slice(s![ci * n_r..(ci + 1) * n_r, ..]).to_owned();
        for (i, mut row) in phys.axis_iter_mut(ndarray::Axis(0)).enumerate() {
            row.mapv_inplace(|v| v * (env[i] / sc[i]));
        }
        match seg.comp {
            Comp::Plus => wp = Some(phys),
            Comp::Minus => wm = Some(phys),
            Comp::Vertical => w3 = Some(phys),
        }
    }
    let (up, um, u3) = biot_savart::curl_block(grid, solver, m, wp.as_ref(), wm.as_ref(), w3.as_ref(), ncols)?;
    let ur2d = match &w3 {
        Some(w3) if m != 0 => {
            let (p, q) = biot_savart::velocity2d_mode(grid, m, w3)?;
            Some((p + q) * C64::new(0.5, 0.0))
        }
        _ => None,
    };
    for (ro, seg_out) in segments.iter().enumerate() {
        let so = grid.segment_scale(*seg_out);
        for i in 0..n_r {
            let e = env[i] / (4.0 * PI) * so[i];
            for j in 0..ncols {
                let v = match seg_out.comp {
                    Comp::Plus => -I * k * up[[i, j]],
                    Comp::Minus => -I * k * um[[i, j]],
                    Comp::Vertical => {
                        let mut ur = 0.5 * (up[[i, j]] + um[[i, j]]);
                        if let Some(u2) = &ur2d {
                            ur -= u2[[i, j]];
                        }
                        -0.5 * r[i] * ur - I * k * u3[[i, j]]
                    }
                };
                out[[ro * n_r + i, j]] = v * e;
            }
        }
    }
    Ok(out)
}

/// Coupling operator `H(k)` on three-component fields `w e^{i k x3}`:
/// `H_h w = -g (i k u)_h`, `H_3 w = (u_h - K_2D * w3, grad_h) g - g i k u_3`
/// with `u` the velocity of `w` at wavenumber `k`.
pub fn assemble_coupling(grid: &SpectralGrid, k: f64) -> Result<OperatorMatrix> {
    let solver = ScreenedSolver::new(grid, k, grid.n_max() + 1)?;
    let mut op = OperatorMatrix::zeros(grid, FieldKind::Full, OperatorKind::Coupling { k });
    op.k = k;
    for b in &mut op.blocks {
        b.matrix = coupling_block(grid, &solver, b.m, &b.segments)?;
    }
    Ok(op)
}

/// Embeds a horizontal- or scalar-field operator into three-component blocks.
fn embed_full(grid: &SpectralGrid, src: &OperatorMatrix) -> OperatorMatrix {
    let mut out = OperatorMatrix::zeros(grid, FieldKind::Full, src.kind.clone());
    let n_r = grid.n_r();
    for b in &mut out.blocks {
        let Some(sb) = src.block(b.m) else { continue };
        for (so, seg_o) in sb.segments.iter().enumerate() {
            for (si, seg_i) in sb.segments.iter().enumerate() {
                let fo = b.segments.iter().position(|s| s == seg_o).expect("segment present");
                let fi = b.segments.iter().position(|s| s == seg_i).expect("segment present");
                b.matrix
                    .slice_mut(s![fo * n_r..(fo + 1) * n_r, fi * n_r..(fi + 1) * n_r])
                    .assign(&sb.matrix.slice(s![so * n_r..(so + 1) * n_r, si * n_r..(si + 1) * n_r]));
            }
        }
    }
    out
}

/// Generator of the stretched-mode dynamics,
/// `G(alpha, k) = [L_{alpha,h} (+) L_{alpha,3}] - k^2 - alpha H(k)`.
pub fn assemble_stretched_generator(grid: &SpectralGrid, alpha: f64, k: f64) -> Result<OperatorMatrix> {
    if !(k >= 0.0) {
        return Err(Error::InvalidArgument(format!("wavenumber must be >= 0, got {k}")));
    }
    let lah = embed_full(grid, &assemble_l_alpha_h(grid, alpha)?);
    let la3 = embed_full(grid, &assemble_l_alpha_3(grid, alpha)?);
    let h = assemble_coupling(grid, k)?;
    let mut op = lah
        .plus_scaled(C64::new(1.0, 0.0), &la3)?
        .shifted(-k * k)
        .plus_scaled(C64::new(-alpha, 0.0), &h)?;
    op.kind = OperatorKind::Generator { alpha, k };
    op.alpha = alpha;
    op.k = k;
    op.symmetric = alpha == 0.0;
    Ok(op)
}

// ---------------------------------------------------------------------------
// Constraint and derivative operators in flattened coordinates

/// Row block of the divergence `d1 w1 + d2 w2 + i k w3` on block `m`
/// (output: scalar mode `m`, flattened), columns follow `segments`.
pub fn divergence_block(grid: &SpectralGrid, m: i32, segments: &[Segment], k: f64) -> CMat {
    let n_r = grid.n_r();
    let r = grid.r_nodes();
    let d = grid.diff();
    let out_seg = Segment { comp: Comp::Vertical, n: m };
    let so = grid.segment_scale(out_seg);
    let mut out = CMat::zeros((n_r, segments.len() * n_r));
    for (c, seg) in segments.iter().enumerate() {
        let si = grid.segment_scale(*seg);
        for i in 0..n_r {
            for j in 0..n_r {
                let delta = if i == j { 1.0 } else { 0.0 };
                let v = match seg.comp {
                    // d-(e^{-r^2/8} h) on mode n = e^{-r^2/8}(h' - r h/4 + n h/r)
                    Comp::Plus => C64::new(
                        0.5 * (d[[i, j]] + delta * (-r[i] / 4.0 + seg.n as f64 / r[i])),
                        0.0,
                    ),
                    // d+(e^{-r^2/8} h) on mode n = e^{-r^2/8}(h' - r h/4 - n h/r)
                    Comp::Minus => C64::new(
                        0.5 * (d[[i, j]] + delta * (-r[i] / 4.0 - seg.n as f64 / r[i])),
                        0.0,
                    ),
                    Comp::Vertical => I * (k * delta),
                };
                out[[i, c * n_r + j]] = v * (so[i] / si[j]);
            }
        }
    }
    out
}

/// Gradient of a scalar mode `n` as helical components `(d+ f at n+1, d- f at n-1)`,
/// flattened so that the Euclidean norm of the output is `||grad f||` in `L^2(inf)`.
pub fn gradient_mode(grid: &SpectralGrid, n: i32) -> Array2<f64> {
    let n_r = grid.n_r();
    let r = grid.r_nodes();
    let d = grid.diff();
    let si = grid.segment_scale(Segment { comp: Comp::Vertical, n });
    let so = grid.segment_scale(Segment { comp: Comp::Plus, n: n + 1 });
    let mut out = Array2::zeros((2 * n_r, n_r));
    for i in 0..n_r {
        for j in 0..n_r {
            let delta = if i == j { 1.0 } else { 0.0 };
            let base = d[[i, j]] - delta * r[i] / 4.0;
            let nf = n as f64 * delta / r[i];
            out[[i, j]] = (base - nf) * so[i] / si[j];
            out[[n_r + i, j]] = (base + nf) * so[i] / si[j];
        }
    }
    out
}

/// Circulation functional `int w3 dx_h` on the vertical segment of block 0, flattened.
pub fn circulation_row(grid: &SpectralGrid) -> Vec<f64> {
    let sc = grid.segment_scale(Segment { comp: Comp::Vertical, n: 0 });
    grid.envelope().iter().zip(&sc).map(|(e, s)| e * s).collect()
}
