//! Linear (non-periodic) 2D convolution with a kernel sampled on grid
//! offsets, applied through zero-padded FFTs.
//!
//! For an `nx × ny` grid the kernel is needed on offsets
//! `[-(nx-1), nx-1] × [-(ny-1), ny-1]`. Embedding it in a periodic buffer of
//! size at least `2n-1` per axis makes the circular convolution agree with the
//! linear one on the original grid.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest length `>= n` whose only prime factors are 2, 3 and 5.
fn fft_friendly_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[derive(Clone)]
pub struct LinearConvolution {
    nx: usize,
    ny: usize,
    px: usize,
    py: usize,
    spectrum: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LinearConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearConvolution")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("padded", &(self.px, self.py))
            .finish()
    }
}

impl LinearConvolution {
    /// `kernel(di, dj)` is the weight for output cell `(i, j)` receiving input
    /// cell `(i - di, j - dj)`.
    pub fn new(nx: usize, ny: usize, kernel: impl Fn(isize, isize) -> f64) -> Self {
        assert!(nx >= 1 && ny >= 1);
        let px = fft_friendly_len(2 * nx - 1);
        let py = fft_friendly_len(2 * ny - 1);
        let mut planner = FftPlanner::<f64>::new();
        let mut conv = Self {
            nx,
            ny,
            px,
            py,
            spectrum: vec![Complex64::new(0.0, 0.0); px * py],
            row_fwd: planner.plan_fft_forward(px),
            row_inv: planner.plan_fft_inverse(px),
            col_fwd: planner.plan_fft_forward(py),
            col_inv: planner.plan_fft_inverse(py),
        };
        let (nxi, nyi) = (nx as isize, ny as isize);
        for dj in -(nyi - 1)..nyi {
            let jj = dj.rem_euclid(py as isize) as usize;
            for di in -(nxi - 1)..nxi {
                let ii = di.rem_euclid(px as isize) as usize;
                conv.spectrum[jj * px + ii] = Complex64::new(kernel(di, dj), 0.0);
            }
        }
        let mut spec = std::mem::take(&mut conv.spectrum);
        conv.transform(&mut spec, py, true);
        // Fold the inverse-FFT normalization into the stored spectrum.
        let norm = 1.0 / (px * py) as f64;
        spec.iter_mut().for_each(|c| *c *= norm);
        conv.spectrum = spec;
        conv
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// 2D FFT; only the first `active_rows` rows are non-zero on input for a
    /// forward transform, or needed on output for an inverse one.
    fn transform(&self, buf: &mut [Complex64], active_rows: usize, forward: bool) {
        let (px, py) = (self.px, self.py);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            row.get_inplace_scratch_len()
                .max(col.get_inplace_scratch_len())
        ];
        if forward {
            for r in buf.chunks_exact_mut(px).take(active_rows) {
                row.process_with_scratch(r, &mut scratch);
            }
        }
        let mut column = vec![Complex64::new(0.0, 0.0); py];
        for i in 0..px {
            for (j, c) in column.iter_mut().enumerate() {
                *c = buf[j * px + i];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for (j, c) in column.iter().enumerate() {
                buf[j * px + i] = *c;
            }
        }
        if !forward {
            for r in buf.chunks_exact_mut(px).take(active_rows) {
                row.process_with_scratch(r, &mut scratch);
            }
        }
    }

    fn run(&self, input: &[f64], out: &mut [f64], adjoint: bool) {
        let (nx, ny, px, py) = (self.nx, self.ny, self.px, self.py);
        assert_eq!(input.len(), nx * ny, "input size");
        assert_eq!(out.len(), nx * ny, "output size");
        let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
        for j in 0..ny {
            for i in 0..nx {
                buf[j * px + i].re = input[j * nx + i];
            }
        }
        self.transform(&mut buf, ny, true);
        if adjoint {
            buf.iter_mut()
                .zip(&self.spectrum)
                .for_each(|(b, s)| *b *= s.conj());
        } else {
            buf.iter_mut()
                .zip(&self.spectrum)
                .for_each(|(b, s)| *b *= s);
        }
        self.transform(&mut buf, ny, false);
        for j in 0..ny {
            for i in 0..nx {
                out[j * nx + i] = buf[j * px + i].re;
            }
        }
    }

    /// `out_i = Σ_j k(i - j) x_j`.
    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        self.run(input, out, false);
    }

    /// Adjoint (correlation): `out_j = Σ_i k(i - j) x_i`.
    pub fn apply_adjoint(&self, input: &[f64], out: &mut [f64]) {
        self.run(input, out, true);
    }
}
