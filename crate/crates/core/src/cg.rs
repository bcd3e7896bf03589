//! Matrix-free (preconditioned) conjugate gradients for SPD systems.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    /// Stop once `‖r‖ <= tol · ‖r_0‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for SPD `A` given as `apply(x, out)`.
///
/// `inv_diag`, when given, is a Jacobi preconditioner (the reciprocal of
/// the diagonal of `A`). `observe(iter, x, residual_norm)` runs after every
/// iteration.
pub fn solve(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<Vec<f64>>,
    inv_diag: Option<&[f64]>,
    settings: CgSettings,
    mut observe: impl FnMut(usize, &[f64], f64),
) -> CgOutcome {
    let n = b.len();
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    assert_eq!(x.len(), n, "initial guess size");
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let precondition = |r: &[f64], z: &mut [f64]| match inv_diag {
        Some(d) => z
            .iter_mut()
            .zip(r.iter().zip(d))
            .for_each(|(zi, (ri, di))| *zi = ri * di),
        None => z.copy_from_slice(r),
    };
    let r0 = dot(&r, &r).sqrt();
    let target = settings.tol * r0;
    if r0 == 0.0 {
        return CgOutcome {
            x,
            iterations: 0,
            initial_residual: 0.0,
            final_residual: 0.0,
            converged: true,
        };
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = r0;
    let mut iterations = 0;
    while iterations < settings.max_iter && res > target {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Not SPD along p (or breakdown); stop with the current iterate.
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut()
            .zip(&ap)
            .for_each(|(ri, api)| *ri -= alpha * api);
        iterations += 1;
        res = dot(&r, &r).sqrt();
        observe(iterations, &x, res);
        if res <= target {
            break;
        }
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut()
            .zip(&z)
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    CgOutcome {
        x,
        iterations,
        initial_residual: r0,
        final_residual: res,
        converged: res <= target,
    }
}
