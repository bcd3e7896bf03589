//! Cell-centered grid functions on Ω = [-1,1]².
//!
//! Values are stored row by row: index `j * nx + i` holds the value at the
//! cell center `(x_i, y_j)` with `x_i = -1 + (2i+1)/nx`, `y_j = -1 + (2j+1)/ny`.

use crate::error::{Error, Result};
use crate::kernels::SymMat2;

/// Side length of Ω.
pub const DOMAIN_EXTENT: f64 = 2.0;
/// Area |Ω| of the square domain.
pub const DOMAIN_AREA: f64 = 4.0;

pub fn cell_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        assert!(nx >= 1 && ny >= 1, "grid must be non-empty");
        Self {
            nx,
            ny,
            values: vec![0.0; nx * ny],
        }
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        let mut f = Self::zeros(nx, ny);
        f.values.fill(value);
        f
    }

    pub fn from_values(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::DimensionMismatch(format!("empty grid {nx}x{ny}")));
        }
        if values.len() != nx * ny {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {nx}x{ny} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite field value".into()));
        }
        Ok(Self { nx, ny, values })
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(nx, ny);
        for j in 0..ny {
            let y = cell_center(j, ny);
            for i in 0..nx {
                out.values[j * nx + i] = f(cell_center(i, nx), y);
            }
        }
        out
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.nx + i] = v;
    }

    pub fn cell_area(&self) -> f64 {
        (DOMAIN_EXTENT / self.nx as f64) * (DOMAIN_EXTENT / self.ny as f64)
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation at `(x, y)`; points within half a cell of the
    /// boundary are clamped to the outermost cell centers.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        let st = Stencil::locate(x, y, self.nx, self.ny)?;
        Ok(st.apply(&self.values))
    }

    /// Resamples onto an `nx × ny` grid by bilinear interpolation at the new
    /// cell centers.
    pub fn resample(&self, nx: usize, ny: usize) -> ScalarField {
        if nx == self.nx && ny == self.ny {
            return self.clone();
        }
        let mut out = ScalarField::zeros(nx, ny);
        for j in 0..ny {
            let y = cell_center(j, ny);
            for i in 0..nx {
                let st = Stencil::locate(cell_center(i, nx), y, self.nx, self.ny)
                    .expect("cell centers lie inside the domain");
                out.values[j * nx + i] = st.apply(&self.values);
            }
        }
        out
    }

    /// Anisotropic discrete total variation `Σ |∂x| + |∂y|` over forward
    /// differences.
    pub fn total_variation(&self) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let mut tv = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let v = self.values[j * nx + i];
                if i + 1 < nx {
                    tv += (self.values[j * nx + i + 1] - v).abs();
                }
                if j + 1 < ny {
                    tv += (self.values[(j + 1) * nx + i] - v).abs();
                }
            }
        }
        tv
    }
}

/// Four-point bilinear stencil.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    idx: [usize; 4],
    w: [f64; 4],
}

impl Stencil {
    pub(crate) fn locate(x: f64, y: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x.abs() <= 1.0 && y.abs() <= 1.0) {
            return Err(Error::OutsideDomain { x, y });
        }
        let (i0, i1, tx) = axis_weights(x, nx);
        let (j0, j1, ty) = axis_weights(y, ny);
        Ok(Self {
            idx: [j0 * nx + i0, j0 * nx + i1, j1 * nx + i0, j1 * nx + i1],
            w: [
                (1.0 - tx) * (1.0 - ty),
                tx * (1.0 - ty),
                (1.0 - tx) * ty,
                tx * ty,
            ],
        })
    }

    pub(crate) fn apply(&self, values: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(self.w.iter())
            .map(|(&k, &w)| w * values[k])
            .sum()
    }
}

fn axis_weights(x: f64, n: usize) -> (usize, usize, f64) {
    // Continuous index in cell-center coordinates.
    let s = ((x + 1.0) * n as f64 / DOMAIN_EXTENT - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (s.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, s - i0 as f64)
}

/// A 2×2-matrix-valued grid function with four channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub a11: ScalarField,
    pub a12: ScalarField,
    pub a21: ScalarField,
    pub a22: ScalarField,
}

impl MatrixField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let z = ScalarField::zeros(nx, ny);
        Self {
            a11: z.clone(),
            a12: z.clone(),
            a21: z.clone(),
            a22: z,
        }
    }

    pub fn nx(&self) -> usize {
        self.a11.nx()
    }

    pub fn ny(&self) -> usize {
        self.a11.ny()
    }

    pub fn channels(&self) -> [&ScalarField; 4] {
        [&self.a11, &self.a12, &self.a21, &self.a22]
    }

    pub fn channels_mut(&mut self) -> [&mut ScalarField; 4] {
        [&mut self.a11, &mut self.a12, &mut self.a21, &mut self.a22]
    }

    pub fn trace(&self) -> ScalarField {
        let values = self
            .a11
            .values()
            .iter()
            .zip(self.a22.values())
            .map(|(a, b)| a + b)
            .collect();
        ScalarField {
            nx: self.nx(),
            ny: self.ny(),
            values,
        }
    }

    /// Value at cell `(i, j)` as `[a11, a12, a21, a22]`.
    pub fn at(&self, i: usize, j: usize) -> [f64; 4] {
        [
            self.a11.get(i, j),
            self.a12.get(i, j),
            self.a21.get(i, j),
            self.a22.get(i, j),
        ]
    }

    /// Bilinear interpolation of every channel. The result is symmetrized
    /// from `a12` and `a21`, which coincide for convolution outputs.
    pub fn evaluate(&self, x: f64, y: f64) -> Result<SymMat2> {
        let st = Stencil::locate(x, y, self.nx(), self.ny())?;
        let off = 0.5 * (st.apply(self.a12.values()) + st.apply(self.a21.values()));
        Ok(SymMat2 {
            a11: st.apply(self.a11.values()),
            a12: off,
            a22: st.apply(self.a22.values()),
        })
    }

    /// General (possibly non-symmetric) interpolated value
    /// `[a11, a12, a21, a22]`.
    pub fn evaluate_full(&self, x: f64, y: f64) -> Result<[f64; 4]> {
        let st = Stencil::locate(x, y, self.nx(), self.ny())?;
        Ok([
            st.apply(self.a11.values()),
            st.apply(self.a12.values()),
            st.apply(self.a21.values()),
            st.apply(self.a22.values()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_centers() {
        assert_eq!(cell_center(0, 2), -0.5);
        assert_eq!(cell_center(1, 2), 0.5);
        assert_eq!(cell_center(0, 1), 0.0);
    }

    #[test]
    fn interpolation_hits_cell_centers() {
        let f = ScalarField::from_fn(7, 5, |x, y| x * x - 3.0 * y);
        for j in 0..5 {
            for i in 0..7 {
                let v = f.interpolate(cell_center(i, 7), cell_center(j, 5)).unwrap();
                assert!((v - f.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolation_constant_and_linear() {
        let c = ScalarField::constant(9, 9, 2.5);
        assert!((c.interpolate(0.93, -0.41).unwrap() - 2.5).abs() < 1e-15);
        assert!((c.interpolate(1.0, -1.0).unwrap() - 2.5).abs() < 1e-15);

        let lin = ScalarField::from_fn(8, 8, |x, _| 3.0 * x + 1.0);
        let mid = 0.5 * (cell_center(2, 8) + cell_center(3, 8));
        let expect = 0.5 * (lin.get(2, 4) + lin.get(3, 4));
        assert!((lin.interpolate(mid, cell_center(4, 8)).unwrap() - expect).abs() < 1e-14);
        // Interior points of a linear field are reproduced exactly.
        assert!((lin.interpolate(0.3, 0.2).unwrap() - 1.9).abs() < 1e-14);
    }

    #[test]
    fn outside_domain_rejected() {
        let f = ScalarField::zeros(4, 4);
        assert!(matches!(
            f.interpolate(1.01, 0.0),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(f.interpolate(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn from_values_validation() {
        assert!(ScalarField::from_values(2, 2, vec![0.0; 3]).is_err());
        assert!(ScalarField::from_values(0, 2, vec![]).is_err());
        assert!(ScalarField::from_values(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn total_variation_of_step() {
        let f = ScalarField::from_fn(4, 3, |x, _| if x > 0.0 { 1.0 } else { 0.0 });
        assert_eq!(f.total_variation(), 3.0);
    }
}
