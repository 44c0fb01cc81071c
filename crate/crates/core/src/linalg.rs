//! Small dense numerical kernels shared by the modules: Gauss-Legendre rules,
//! barycentric interpolation and differentiation, and the matrix exponential.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use ndarray_linalg::{Factorize, Norm, Solve};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Barycentric weights of the Gauss-Legendre nodes, `(-1)^j sqrt((1 - x_j^2) w_j)`.
pub fn legendre_barycentric_weights(x: &[f64], w: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(w)
        .enumerate()
        .map(|(j, (xj, wj))| {
            let s = ((1.0 - xj * xj) * wj).sqrt();
            if j % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect()
}

/// Row vector of Lagrange basis values at `t` for the nodes `x` with barycentric weights `lam`.
pub fn interp_row(x: &[f64], lam: &[f64], t: f64) -> Vec<f64> {
    let n = x.len();
    let mut row = vec![0.0; n];
    for j in 0..n {
        if t == x[j] {
            row[j] = 1.0;
            return row;
        }
    }
    let mut denom = 0.0;
    for j in 0..n {
        let c = lam[j] / (t - x[j]);
        row[j] = c;
        denom += c;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
    row
}

pub fn interp_matrix(x: &[f64], lam: &[f64], points: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((points.len(), x.len()));
    for (i, &t) in points.iter().enumerate() {
        let row = interp_row(x, lam, t);
        for (j, v) in row.into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// First-derivative collocation matrix on the nodes `x`.
pub fn diff_matrix(x: &[f64], lam: &[f64]) -> Array2<f64> {
    let n = x.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lam[j] / lam[i]) / (x[i] - x[j]);
                d[[i, j]] = v;
                diag -= v;
            }
        }
        d[[i, i]] = diag;
    }
    d
}

/// Composite Gauss-Legendre rule on [a, b] with `panels` equal panels of `order` points.
pub fn composite_gauss(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut pts = Vec::with_capacity(panels * order);
    let mut wts = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            pts.push(lo + 0.5 * h * (xi + 1.0));
            wts.push(0.5 * h * wi);
        }
    }
    (pts, wts)
}

pub fn to_complex(a: &Array2<f64>) -> CMat {
    a.mapv(|v| C64::new(v, 0.0))
}

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

fn one_norm(a: &CMat) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Pade approximant.
pub fn expm(a: &CMat) -> Result<CMat> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.mapv(|v| v / 2f64.powi(s));
    let id = identity(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let c = |k: usize| C64::new(B[k], 0.0);
    let inner_u = &a6 * c(13) + &a4 * c(11) + &a2 * c(9);
    let u = a.dot(&(a6.dot(&inner_u) + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &id * c(1)));
    let inner_v = &a6 * c(12) + &a4 * c(10) + &a2 * c(8);
    let v = a6.dot(&inner_v) + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + &id * c(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = solve_matrix(&q, &p)?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Solves `a x = b` for a matrix right-hand side.
pub fn solve_matrix(a: &CMat, b: &CMat) -> Result<CMat> {
    let f = a.factorize()?;
    let mut x = CMat::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let sol = f.solve(&col.to_owned())?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

pub fn solve_matrix_real(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let f = a.factorize()?;
    let mut x = Array2::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let sol = f.solve(&col.to_owned())?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

pub fn vec_norm(v: ArrayView1<C64>) -> f64 {
    v.norm_l2()
}

/// Frobenius-norm relative difference, `|a - b| / max(|b|, tiny)`.
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    let d = (a - b).norm_l2();
    d / b.norm_l2().max(f64::MIN_POSITIVE)
}

pub fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
