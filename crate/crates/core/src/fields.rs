//! Closed-form reference fields: the Gaussian vortex profile, its velocity,
//! the axisymmetric strain, the weight functions of the weighted spaces and
//! the time factor `a(t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which `u^g` is evaluated from its Taylor series.
pub const UG_SERIES_SWITCH: f64 = 1e-3;

/// Exponent `m` of the weight `rho_m`. `Gaussian` is the limiting case `m = inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpec {
    Finite(f64),
    Gaussian,
}

impl WeightSpec {
    pub fn finite(m: f64) -> Result<Self> {
        if m.is_finite() && m > 1.0 {
            Ok(WeightSpec::Finite(m))
        } else {
            Err(Error::Domain(format!("weight exponent must lie in (1, inf), got {m}")))
        }
    }

    /// Parses `"inf"`, `"infinity"` or a number greater than one.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "gaussian" => Ok(WeightSpec::Gaussian),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad weight exponent {s:?}")))
                .and_then(|m| {
                    if m.is_infinite() {
                        Ok(WeightSpec::Gaussian)
                    } else {
                        WeightSpec::finite(m)
                    }
                }),
        }
    }

    /// `rho_m(s)` for `s = |x_h|^2`.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            WeightSpec::Gaussian => (s / 4.0).exp(),
            WeightSpec::Finite(m) => (1.0 + s / (4.0 * m)).powf(m),
        }
    }

    /// `rho_m(s) e^{-s/4}`, the weight seen by envelope-flattened coefficients.
    pub fn flattened_rho(&self, s: f64) -> f64 {
        match *self {
            WeightSpec::Gaussian => 1.0,
            WeightSpec::Finite(m) => (m * (s / (4.0 * m)).ln_1p() - s / 4.0).exp(),
        }
    }

    /// Real part above which eigenvalues of the linearized operator lie outside
    /// the essential spectrum in `L^2(m)`: `-(m/2 + 1)`.
    pub fn essential_threshold(&self) -> f64 {
        match *self {
            WeightSpec::Gaussian => f64::NEG_INFINITY,
            WeightSpec::Finite(m) => -(m / 2.0 + 1.0),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            WeightSpec::Gaussian => "inf".to_string(),
            WeightSpec::Finite(m) => format!("{m}"),
        }
    }
}

/// Circulation number of the vortex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirculationParam {
    pub alpha: f64,
}

impl CirculationParam {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() {
            Ok(Self { alpha })
        } else {
            Err(Error::Domain(format!("circulation must be finite, got {alpha}")))
        }
    }
}

/// `g(x_h) = e^{-|x_h|^2/4} / (4 pi)`.
pub fn gaussian_profile(x: [f64; 2]) -> f64 {
    gaussian_profile_r2(x[0] * x[0] + x[1] * x[1])
}

pub fn gaussian_profile_r2(r2: f64) -> f64 {
    (-r2 / 4.0).exp() / (4.0 * PI)
}

/// `u^g(s) = (1 - e^{-s/4}) / (2 pi s)`, with the series `(1/(8 pi)) sum_k (-s/4)^k / (k+1)!`
/// below [`UG_SERIES_SWITCH`].
pub fn ug_scalar(r2: f64) -> Result<f64> {
    if !(r2 >= 0.0) {
        return Err(Error::Domain(format!("u^g needs |x_h|^2 >= 0, got {r2}")));
    }
    Ok(ug_unchecked(r2))
}

pub(crate) fn ug_unchecked(r2: f64) -> f64 {
    if r2 < UG_SERIES_SWITCH {
        ug_series(r2)
    } else {
        -(-r2 / 4.0).exp_m1() / (2.0 * PI * r2)
    }
}

fn ug_series(r2: f64) -> f64 {
    let x = -r2 / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..6 {
        term *= x / (k as f64 + 1.0);
        sum += term;
    }
    sum / (8.0 * PI)
}

/// `U^G(x_h) = u^g(|x_h|^2) (-x_2, x_1)`.
pub fn burgers_velocity(x: [f64; 2]) -> [f64; 2] {
    let u = ug_unchecked(x[0] * x[0] + x[1] * x[1]);
    [-u * x[1], u * x[0]]
}

/// Axisymmetric strain `(-x_1/2, -x_2/2, x_3)`.
pub fn strain_velocity(x: [f64; 3]) -> [f64; 3] {
    [-0.5 * x[0], -0.5 * x[1], x[2]]
}

/// `a(t) = 1 - e^{-t}`.
pub fn a_of_t(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("a(t) needs t >= 0, got {t}")));
    }
    Ok(-(-t).exp_m1())
}

pub(crate) fn a_unchecked(t: f64) -> f64 {
    -(-t).exp_m1()
}
