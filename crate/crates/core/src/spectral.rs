//! Tensor-product cosine and sine bases on Ω = [-1,1]².
//!
//! `u_m(x,y) = c_m cos(π m1 (x+1)/2) cos(π m2 (y+1)/2)` are the Neumann
//! eigenfunctions of `-Δ` with eigenvalues `μ_m = π²/4 (m1² + m2²)`, and of
//! the Bi-Laplacian with eigenvalues `μ_m²`. On a cell-centered grid of the
//! same size the sampled family is orthonormal (a DCT-II), so
//! [`synthesize`] and [`analyze`] are inverse to each other.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::field::{cell_center, MatrixField, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeIndex {
    pub m1: usize,
    pub m2: usize,
}

impl ModeIndex {
    pub const fn new(m1: usize, m2: usize) -> Self {
        Self { m1, m2 }
    }
}

/// One-dimensional normalizer: `1/√2` for the constant mode, 1 otherwise.
pub fn cos_norm_1d(k: usize) -> f64 {
    if k == 0 {
        FRAC_1_SQRT_2
    } else {
        1.0
    }
}

/// `c_m` with `‖u_m‖_{L²(Ω)} = 1`.
pub fn cos_norm(m: ModeIndex) -> f64 {
    match (m.m1, m.m2) {
        (0, 0) => 0.5,
        (a, b) => cos_norm_1d(a) * cos_norm_1d(b),
    }
}

/// Half-angle frequency `π k / 2`.
pub(crate) fn wavenumber(k: usize) -> f64 {
    0.5 * PI * k as f64
}

pub fn cos_eval(m: ModeIndex, x: f64, y: f64) -> f64 {
    cos_norm(m) * (wavenumber(m.m1) * (x + 1.0)).cos() * (wavenumber(m.m2) * (y + 1.0)).cos()
}

/// Dirichlet sine mode; indices must be positive. Its normalizer is 1.
pub fn sin_eval(m: ModeIndex, x: f64, y: f64) -> Result<f64> {
    if m.m1 == 0 || m.m2 == 0 {
        return Err(Error::param("mode", "sine modes need m1, m2 >= 1"));
    }
    Ok((wavenumber(m.m1) * (x + 1.0)).sin() * (wavenumber(m.m2) * (y + 1.0)).sin())
}

/// `μ_m = π²/4 (m1² + m2²)`.
pub fn laplace_eigenvalue(m: ModeIndex) -> f64 {
    0.25 * PI * PI * ((m.m1 * m.m1 + m.m2 * m.m2) as f64)
}

/// `μ_m²`, the Bi-Laplacian eigenvalue.
pub fn bilaplace_eigenvalue(m: ModeIndex) -> f64 {
    laplace_eigenvalue(m).powi(2)
}

/// `u_m` at every point.
pub fn eval_basis_row(points: &[[f64; 2]], m: ModeIndex) -> Vec<f64> {
    points.iter().map(|p| cos_eval(m, p[0], p[1])).collect()
}

/// `count × coords.len()` table of `c(k) cos(π k (x+1)/2)`.
pub fn cosine_table(count: usize, coords: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((count, coords.len()), |(k, i)| {
        cos_norm_1d(k) * (wavenumber(k) * (coords[i] + 1.0)).cos()
    })
}

fn cell_centers(n: usize) -> Vec<f64> {
    (0..n).map(|i| cell_center(i, n)).collect()
}

/// Truncated expansion coefficients `Â ∈ R^{N×M×2×2}`, stored flat in
/// `(k, l, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

pub const COEFF_MAGIC: &[u8; 4] = b"MPIC";
pub const COEFF_VERSION: u32 = 1;

impl CoeffTensor {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![0.0; 4 * n * m],
        }
    }

    pub fn from_flat(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 4 * n * m {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}x{m}x2x2 tensor",
                data.len()
            )));
        }
        Ok(Self { n, m, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// `Â_{k,l}` as `[a11, a12, a21, a22]`.
    pub fn get(&self, k: usize, l: usize) -> [f64; 4] {
        let o = 4 * (k * self.m + l);
        [
            self.data[o],
            self.data[o + 1],
            self.data[o + 2],
            self.data[o + 3],
        ]
    }

    pub fn set(&mut self, k: usize, l: usize, v: [f64; 4]) {
        let o = 4 * (k * self.m + l);
        self.data[o..o + 4].copy_from_slice(&v);
    }

    /// One channel (0 = a11, 1 = a12, 2 = a21, 3 = a22) as an `N × M` array.
    pub fn channel(&self, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.m), |(k, l)| {
            self.data[4 * (k * self.m + l) + c]
        })
    }

    fn set_channel(&mut self, c: usize, values: ArrayView2<f64>) {
        for ((k, l), v) in values.indexed_iter() {
            self.data[4 * (k * self.m + l) + c] = *v;
        }
    }

    /// Per-mode diagonal sum `Â[0,0] + Â[1,1]` as an `N × M` array.
    pub fn trace_coefficients(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.m), |(k, l)| {
            let o = 4 * (k * self.m + l);
            self.data[o] + self.data[o + 3]
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.data.len());
        out.extend_from_slice(COEFF_MAGIC);
        out.extend_from_slice(&COEFF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format("coefficient", "truncated header"));
        }
        if &bytes[..4] != COEFF_MAGIC {
            return Err(Error::format("coefficient", "missing MPIC magic"));
        }
        let word =
            |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let version = word(4);
        if version != COEFF_VERSION {
            return Err(Error::format(
                "coefficient",
                format!("unsupported version {version}"),
            ));
        }
        let (n, m) = (word(8) as usize, word(12) as usize);
        let count = n
            .checked_mul(m)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::format("coefficient", "dimensions overflow"))?;
        let body = &bytes[16..];
        if count.checked_mul(8) != Some(body.len()) {
            return Err(Error::format(
                "coefficient",
                format!("expected {count} doubles, found {} bytes", body.len()),
            ));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("coefficient", "non-finite coefficient"));
        }
        Ok(Self { n, m, data })
    }
}

/// Evaluates `Σ_{k,l} coeffs[k,l] u_{k,l}` at the cell centers of an
/// `nx × ny` grid.
pub fn synthesize_scalar(coeffs: ArrayView2<f64>, nx: usize, ny: usize) -> ScalarField {
    let (n, m) = coeffs.dim();
    let cx = cosine_table(n, &cell_centers(nx));
    let cy = cosine_table(m, &cell_centers(ny));
    // (ny × M)(M × N)(N × nx) gives rows indexed by y.
    let grid = cy.t().dot(&coeffs.t()).dot(&cx);
    let values = grid.as_standard_layout().iter().copied().collect();
    ScalarField::from_values(nx, ny, values).expect("finite synthesis")
}

/// Projects a grid function onto the first `n × m` cosine modes using the
/// discrete orthogonality of the cell-centered family (`n <= nx`, `m <= ny`).
pub fn analyze_scalar(field: &ScalarField, n: usize, m: usize) -> Result<Array2<f64>> {
    let (nx, ny) = (field.nx(), field.ny());
    if n > nx || m > ny {
        return Err(Error::DimensionMismatch(format!(
            "cannot resolve {n}x{m} modes on a {nx}x{ny} grid"
        )));
    }
    let cx = cosine_table(n, &cell_centers(nx));
    let cy = cosine_table(m, &cell_centers(ny));
    let grid = ArrayView2::from_shape((ny, nx), field.values()).expect("field layout");
    let w = field.cell_area();
    Ok(cx.dot(&grid.t()).dot(&cy.t()) * w)
}

/// Matrix-valued synthesis, channel by channel.
pub fn synthesize(coeffs: &CoeffTensor, nx: usize, ny: usize) -> MatrixField {
    let mut out = MatrixField::zeros(nx, ny);
    for (c, target) in out.channels_mut().into_iter().enumerate() {
        *target = synthesize_scalar(coeffs.channel(c).view(), nx, ny);
    }
    out
}

/// Inverse of [`synthesize`] on a grid with `nx = N`, `ny = M`.
pub fn analyze(field: &MatrixField) -> Result<CoeffTensor> {
    analyze_truncated(field, field.nx(), field.ny())
}

pub fn analyze_truncated(field: &MatrixField, n: usize, m: usize) -> Result<CoeffTensor> {
    let mut out = CoeffTensor::zeros(n, m);
    for (c, ch) in field.channels().into_iter().enumerate() {
        let a = analyze_scalar(ch, n, m)?;
        out.set_channel(c, a.view());
    }
    Ok(out)
}
