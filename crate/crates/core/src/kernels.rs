//! Langevin magnetization model and the MPI convolution kernels.
//!
//! The matrix kernel is the Jacobian of `y -> Λ(|y|/h) y/|y|`,
//!
//! ```text
//! K_h(y) = (1/h) f1(|y|/h) I + (1/h) f2(|y|/h) (y/|y|)(y/|y|)^T
//! ```
//!
//! and the trace kernel is `κ_h(y) = (1/h) (n f1 + f2)(|y|/h)`.
//!
//! `f1` and `f2` are analytic, but their closed forms cancel catastrophically
//! near the origin. Below `series_threshold` the odd Taylor series of Λ
//! (coefficients `2^{2k} B_{2k} / (2k)!`) is used instead; with 15 terms the
//! truncation error at `z = 0.5` is below one ulp.

use crate::error::{Error, Result};

/// Taylor coefficients `a_k` of `Λ(z) = Σ_{k≥1} a_k z^{2k-1}`.
const LANGEVIN_SERIES: [f64; 15] = [
    3.3333333333333333e-1,
    -2.2222222222222222e-2,
    2.1164021164021164e-3,
    -2.1164021164021164e-4,
    2.1377799155576933e-5,
    -2.1644042808063972e-6,
    2.1925947851873778e-7,
    -2.2214608789979679e-8,
    2.2507846516808993e-9,
    -2.2805151204592183e-10,
    2.3106432599002624e-11,
    -2.3411706819824884e-12,
    2.3721017400233654e-13,
    -2.4034415333307706e-14,
    2.4351954029183369e-15,
];

pub const DEFAULT_SERIES_THRESHOLD: f64 = 0.5;

/// Series are accurate to machine precision only inside this radius.
const MAX_SERIES_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub h: f64,
    /// Spatial dimension, 2 or 3.
    pub dim: u8,
    /// `|y|/h` below which the series replace the closed forms.
    pub series_threshold: f64,
}

impl KernelParams {
    pub fn new(h: f64) -> Result<Self> {
        Self::with_options(h, 2, DEFAULT_SERIES_THRESHOLD)
    }

    pub fn with_options(h: f64, dim: u8, series_threshold: f64) -> Result<Self> {
        let params = Self {
            h,
            dim,
            series_threshold,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::param(
                "h",
                format!("must be positive, got {}", self.h),
            ));
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::param(
                "dim",
                format!("must be 2 or 3, got {}", self.dim),
            ));
        }
        if !(self.series_threshold > 0.0 && self.series_threshold <= MAX_SERIES_THRESHOLD) {
            return Err(Error::param(
                "series_threshold",
                format!(
                    "must lie in (0, {MAX_SERIES_THRESHOLD}], got {}",
                    self.series_threshold
                ),
            ));
        }
        Ok(())
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            h: 0.01,
            dim: 2,
            series_threshold: DEFAULT_SERIES_THRESHOLD,
        }
    }
}

/// Symmetric 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMat2 {
    pub fn identity(scale: f64) -> Self {
        Self {
            a11: scale,
            a12: 0.0,
            a22: scale,
        }
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }
}

/// Horner evaluation of `Σ_k coeff(k) a_k w^k` for `k >= start`.
fn series_sum(w: f64, start: usize, coeff: impl Fn(usize) -> f64) -> f64 {
    LANGEVIN_SERIES
        .iter()
        .enumerate()
        .skip(start)
        .rev()
        .fold(0.0, |acc, (k, a)| acc * w + coeff(k) * a)
}

fn langevin_with(z: f64, threshold: f64) -> f64 {
    if z.abs() < threshold {
        z * series_sum(z * z, 0, |_| 1.0)
    } else {
        1.0 / z.tanh() - 1.0 / z
    }
}

fn f1_with(z: f64, threshold: f64) -> f64 {
    let z = z.abs();
    if z < threshold {
        series_sum(z * z, 0, |_| 1.0)
    } else {
        langevin_with(z, threshold) / z
    }
}

/// `f2(z) / z^2`, finite at the origin.
fn f2_over_z2_with(z: f64, threshold: f64) -> f64 {
    let z = z.abs();
    if z < threshold {
        // Index k in LANGEVIN_SERIES is the paper's k+1: term (2k) a z^{2k-2}.
        series_sum(z * z, 1, |k| 2.0 * k as f64)
    } else {
        f2_with(z, threshold) / (z * z)
    }
}

fn f2_with(z: f64, threshold: f64) -> f64 {
    let z = z.abs();
    if z < threshold {
        z * z * f2_over_z2_with(z, threshold)
    } else {
        langevin_derivative_with(z, threshold) - f1_with(z, threshold)
    }
}

fn langevin_derivative_with(z: f64, threshold: f64) -> f64 {
    let z = z.abs();
    if z < threshold {
        series_sum(z * z, 0, |k| (2 * k + 1) as f64)
    } else {
        let s = z.sinh();
        1.0 / (z * z) - 1.0 / (s * s)
    }
}

/// Langevin function `Λ(z) = coth(z) - 1/z`.
pub fn langevin(z: f64) -> f64 {
    langevin_with(z, DEFAULT_SERIES_THRESHOLD)
}

/// `Λ'(z) = 1/z² - 1/sinh²(z)`.
pub fn langevin_derivative(z: f64) -> f64 {
    langevin_derivative_with(z, DEFAULT_SERIES_THRESHOLD)
}

/// `f1(z) = Λ(z)/z`, with `f1(0) = 1/3`.
pub fn f1(z: f64) -> f64 {
    f1_with(z, DEFAULT_SERIES_THRESHOLD)
}

/// `f2(z) = Λ'(z) - f1(z)`, with `f2(0) = 0`.
pub fn f2(z: f64) -> f64 {
    f2_with(z, DEFAULT_SERIES_THRESHOLD)
}

/// Radial profile of the trace kernel, `f = n f1 + f2`.
pub fn trace_profile(z: f64, params: &KernelParams) -> f64 {
    let t = params.series_threshold;
    f64::from(params.dim) * f1_with(z, t) + f2_with(z, t)
}

/// Matrix kernel `K_h(y)` for the 2D setting.
pub fn kernel_matrix(y: [f64; 2], params: &KernelParams) -> SymMat2 {
    let inv_h = 1.0 / params.h;
    let (px, py) = (y[0] * inv_h, y[1] * inv_h);
    let z = px.hypot(py);
    let t = params.series_threshold;
    let diag = inv_h * f1_with(z, t);
    // (f2/z²)(y/h)(y/h)^T avoids dividing by |y| at the origin.
    let rank_one = inv_h * f2_over_z2_with(z, t);
    SymMat2 {
        a11: diag + rank_one * px * px,
        a12: rank_one * px * py,
        a22: diag + rank_one * py * py,
    }
}

/// Trace kernel `κ_h(y) = (1/h) f(|y|/h)`.
pub fn kernel_trace(y: [f64; 2], params: &KernelParams) -> f64 {
    let z = y[0].hypot(y[1]) / params.h;
    trace_profile(z, params) / params.h
}
