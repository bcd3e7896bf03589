//! Stage 1: estimate the core response `A` from the scan signal.
//!
//! `A` is expanded in the first `N × M` cosine modes and the coefficients
//! minimize
//!
//! ```text
//! E[Â] = λ/(2|Ω|) Σ_m w_m ‖Â_m‖_F² + 1/(2L) Σ_l |s_l − Σ_m u_m(r_l) Â_m v_l|²
//! ```
//!
//! with `w_m = μ_m` (gradient regularizer) or `w_m = μ_m²` (Laplacian
//! regularizer). The gradient system is solved matrix-free with CG. Basis
//! values `u_m(r_l)` factor into two 1D cosine tables, so the sampling
//! operator and its adjoint are each one stacked matrix product.

use ndarray::{s, Array2, Axis};

use crate::cg::{self, CgSettings};
use crate::error::{Error, Result};
use crate::field::{ScalarField, DOMAIN_AREA};
use crate::forward::ScanSeries;
use crate::spectral::{
    cosine_table, laplace_eigenvalue, synthesize_scalar, CoeffTensor, ModeIndex,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerOrder {
    /// `‖∇A‖²`, weights `μ_m`.
    First,
    /// `‖ΔA‖²`, weights `μ_m²`.
    Second,
}

impl RegularizerOrder {
    pub fn weight(self, m: ModeIndex) -> f64 {
        let mu = laplace_eigenvalue(m);
        match self {
            RegularizerOrder::First => mu,
            RegularizerOrder::Second => mu * mu,
        }
    }

    pub fn from_int(order: u32) -> Result<Self> {
        match order {
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            o => Err(Error::param(
                "core.order",
                format!("must be 1 or 2, got {o}"),
            )),
        }
    }

    pub fn as_int(self) -> u32 {
        match self {
            Self::First => 1,
            Self::Second => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoreProblem {
    pub scan: ScanSeries,
    pub n: usize,
    pub m: usize,
    pub order: RegularizerOrder,
    pub lambda: f64,
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl CoreProblem {
    pub fn new(scan: ScanSeries, n: usize, m: usize, order: RegularizerOrder, lambda: f64) -> Self {
        Self {
            scan,
            n,
            m,
            order,
            lambda,
            ridge: 1e-12,
            tol: 1e-8,
            max_iter: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "core.lambda",
                format!("must be positive, got {}", self.lambda),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::param("core.ridge", "must be non-negative"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::param("core.tol", "must lie in (0, 1)"));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::param("grids.coeff_n", "truncation must be positive"));
        }
        if self.scan.is_empty() {
            return Err(Error::param("scan", "no samples"));
        }
        Ok(())
    }
}

/// One CG iteration record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub residual: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct CoreSolution {
    pub coeffs: CoeffTensor,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    pub energy: f64,
}

/// Sampling operator `B: Â -> (u_m(r_l) Â_m v_l)_l` with cached basis tables.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    n: usize,
    m: usize,
    /// `N × L`, `c(k) cos(π k (x_l + 1)/2)`.
    cx: Array2<f64>,
    /// `M × L`.
    cy: Array2<f64>,
    /// `2 × L` velocity components.
    vel: Array2<f64>,
}

/// Channel `c` of a 2×2 block is entry `(c / 2, c % 2)`.
const ROW: [usize; 4] = [0, 0, 1, 1];
const COL: [usize; 4] = [0, 1, 0, 1];

impl SamplingOperator {
    pub fn new(scan: &ScanSeries, n: usize, m: usize) -> Self {
        let g = &scan.geometry;
        let xs: Vec<f64> = g.positions().iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = g.positions().iter().map(|p| p[1]).collect();
        let vel = Array2::from_shape_fn((2, g.len()), |(c, l)| g.velocities()[l][c]);
        Self {
            n,
            m,
            cx: cosine_table(n, &xs),
            cy: cosine_table(m, &ys),
            vel,
        }
    }

    pub fn samples(&self) -> usize {
        self.vel.ncols()
    }

    /// Flat `(k, l, c)` coefficients to a `4N × M` channel stack.
    fn stack(&self, flat: &[f64]) -> Array2<f64> {
        let (n, m) = (self.n, self.m);
        Array2::from_shape_fn((4 * n, m), |(r, l)| {
            let (c, k) = (r / n, r % n);
            flat[4 * (k * m + l) + c]
        })
    }

    fn unstack(&self, stacked: &Array2<f64>, out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for ((r, l), v) in stacked.indexed_iter() {
            let (c, k) = (r / n, r % n);
            out[4 * (k * m + l) + c] = *v;
        }
    }

    /// Per-sample matrix values `A(r_l)` for each channel, `4 × L`.
    fn sample_matrices(&self, flat: &[f64]) -> Array2<f64> {
        let n = self.n;
        let t = self.stack(flat).dot(&self.cy); // 4N × L
        let mut out = Array2::zeros((4, self.samples()));
        for c in 0..4 {
            let block = t.slice(s![c * n..(c + 1) * n, ..]);
            let vals = (&block * &self.cx).sum_axis(Axis(0));
            out.row_mut(c).assign(&vals);
        }
        out
    }

    /// `p_l = A(r_l) v_l` as a `2 × L` array.
    pub fn apply(&self, flat: &[f64]) -> Array2<f64> {
        let a = self.sample_matrices(flat);
        let mut p = Array2::zeros((2, self.samples()));
        for c in 0..4 {
            let term = &a.row(c) * &self.vel.row(COL[c]);
            let mut row = p.row_mut(ROW[c]);
            row += &term;
        }
        p
    }

    /// Adjoint: `G_m = Σ_l u_m(r_l) r_l v_lᵀ`, written into `out` (flat).
    pub fn apply_adjoint(&self, residual: &Array2<f64>, out: &mut [f64]) {
        let (n, l) = (self.n, self.samples());
        let mut weighted = Array2::zeros((4 * n, l));
        for c in 0..4 {
            let w = &residual.row(ROW[c]) * &self.vel.row(COL[c]);
            let mut block = weighted.slice_mut(s![c * n..(c + 1) * n, ..]);
            block.assign(&(&self.cx * &w.insert_axis(Axis(0))));
        }
        let g = weighted.dot(&self.cy.t()); // 4N × M
        self.unstack(&g, out);
    }

    /// Diagonal of `BᵀB` in flat layout.
    fn gram_diagonal(&self) -> Vec<f64> {
        let cx2 = self.cx.mapv(|v| v * v);
        let cy2 = self.cy.mapv(|v| v * v);
        let mut out = vec![0.0; 4 * self.n * self.m];
        for q in 0..2 {
            let v2 = self.vel.row(q).mapv(|v| v * v);
            let d = (&cx2 * &v2.insert_axis(Axis(0))).dot(&cy2.t()); // N × M
            for ((k, l), val) in d.indexed_iter() {
                for c in (0..4).filter(|&c| COL[c] == q) {
                    out[4 * (k * self.m + l) + c] = *val;
                }
            }
        }
        out
    }
}

/// The quadratic objective with all cached pieces.
#[derive(Debug, Clone)]
pub struct CoreObjective {
    op: SamplingOperator,
    /// `λ/|Ω| · w_m + ridge`, per flat entry.
    diag_reg: Vec<f64>,
    signals: Array2<f64>,
    lambda_over_area: f64,
    weights: Vec<f64>,
    ridge: f64,
    inv_l: f64,
}

impl CoreObjective {
    pub fn new(problem: &CoreProblem) -> Result<Self> {
        problem.validate()?;
        let (n, m) = (problem.n, problem.m);
        let op = SamplingOperator::new(&problem.scan, n, m);
        let mut weights = vec![0.0; 4 * n * m];
        for k in 0..n {
            for l in 0..m {
                let w = problem.order.weight(ModeIndex::new(k, l));
                weights[4 * (k * m + l)..4 * (k * m + l) + 4].fill(w);
            }
        }
        let lambda_over_area = problem.lambda / DOMAIN_AREA;
        let diag_reg = weights
            .iter()
            .map(|w| lambda_over_area * w + problem.ridge)
            .collect();
        let sig = &problem.scan.signals;
        let signals = Array2::from_shape_fn((2, sig.len()), |(c, l)| sig[l][c]);
        Ok(Self {
            inv_l: 1.0 / sig.len() as f64,
            op,
            diag_reg,
            signals,
            lambda_over_area,
            weights,
            ridge: problem.ridge,
        })
    }

    pub fn operator(&self) -> &SamplingOperator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `E = λ/(2|Ω|) Σ w ‖Â‖² + ridge/2 ‖Â‖² + 1/(2L) Σ |s − p|²`.
    pub fn energy(&self, flat: &[f64]) -> f64 {
        let reg: f64 = flat
            .iter()
            .zip(&self.diag_reg)
            .map(|(a, d)| 0.5 * d * a * a)
            .sum();
        let p = self.op.apply(flat);
        let fid: f64 = (&self.signals - &p).iter().map(|r| r * r).sum();
        reg + 0.5 * self.inv_l * fid
    }

    /// Regularizer part `λ/(2|Ω|) Σ w ‖Â‖²` alone.
    pub fn regularizer(&self, flat: &[f64]) -> f64 {
        0.5 * self.lambda_over_area
            * flat
                .iter()
                .zip(&self.weights)
                .map(|(a, w)| w * a * a)
                .sum::<f64>()
    }

    pub fn gradient(&self, flat: &[f64], out: &mut [f64]) {
        let resid = &self.signals - &self.op.apply(flat);
        self.op.apply_adjoint(&resid, out);
        for ((g, a), d) in out.iter_mut().zip(flat).zip(&self.diag_reg) {
            *g = d * a - self.inv_l * *g;
        }
    }

    /// Hessian-vector product `H x`.
    pub fn hessian_apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.op.apply(x);
        self.op.apply_adjoint(&p, out);
        for ((o, xi), d) in out.iter_mut().zip(x).zip(&self.diag_reg) {
            *o = d * xi + self.inv_l * *o;
        }
    }

    /// Right-hand side `b = (1/L) Bᵀ s`.
    pub fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.dim()];
        self.op.apply_adjoint(&self.signals, &mut b);
        b.iter_mut().for_each(|v| *v *= self.inv_l);
        b
    }

    pub fn hessian_diagonal(&self) -> Vec<f64> {
        self.op
            .gram_diagonal()
            .iter()
            .zip(&self.diag_reg)
            .map(|(g, d)| d + self.inv_l * g)
            .collect()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

/// Predicted signal `p_l = Σ_m u_m(r_l) Â_m v_l`.
pub fn predict(coeffs: &CoeffTensor, scan: &ScanSeries) -> Vec<[f64; 2]> {
    let op = SamplingOperator::new(scan, coeffs.n(), coeffs.m());
    let p = op.apply(coeffs.as_flat());
    (0..scan.len()).map(|l| [p[[0, l]], p[[1, l]]]).collect()
}

fn check_shape(coeffs: &CoeffTensor, problem: &CoreProblem) -> Result<()> {
    if coeffs.n() != problem.n || coeffs.m() != problem.m {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, problem expects {}x{}",
            coeffs.n(),
            coeffs.m(),
            problem.n,
            problem.m
        )));
    }
    Ok(())
}

pub fn energy(coeffs: &CoeffTensor, problem: &CoreProblem) -> Result<f64> {
    check_shape(coeffs, problem)?;
    Ok(CoreObjective::new(problem)?.energy(coeffs.as_flat()))
}

pub fn gradient(coeffs: &CoeffTensor, problem: &CoreProblem) -> Result<CoeffTensor> {
    check_shape(coeffs, problem)?;
    let obj = CoreObjective::new(problem)?;
    let mut g = vec![0.0; obj.dim()];
    obj.gradient(coeffs.as_flat(), &mut g);
    CoeffTensor::from_flat(problem.n, problem.m, g)
}

/// Minimizes the core energy; `log`, when given, receives one record per
/// CG iteration (costs an extra operator application each).
pub fn solve_core_logged(
    problem: &CoreProblem,
    mut log: Option<&mut Vec<IterationLog>>,
) -> Result<CoreSolution> {
    let obj = CoreObjective::new(problem)?;
    let b = obj.rhs();
    let inv_diag: Vec<f64> = obj
        .hessian_diagonal()
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let settings = CgSettings {
        tol: problem.tol,
        max_iter: problem.max_iter,
    };
    let outcome = cg::solve(
        |x, out| obj.hessian_apply(x, out),
        &b,
        None,
        Some(&inv_diag),
        settings,
        |iter, x, residual| {
            if let Some(log) = log.as_deref_mut() {
                log.push(IterationLog {
                    iter,
                    residual,
                    energy: obj.energy(x),
                });
            }
        },
    );
    if outcome.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "core-stage CG produced non-finite coefficients".into(),
        ));
    }
    let energy = obj.energy(&outcome.x);
    Ok(CoreSolution {
        coeffs: CoeffTensor::from_flat(problem.n, problem.m, outcome.x)?,
        iterations: outcome.iterations,
        initial_residual: outcome.initial_residual,
        final_residual: outcome.final_residual,
        converged: outcome.converged,
        energy,
    })
}

pub fn solve_core(problem: &CoreProblem) -> Result<CoreSolution> {
    solve_core_logged(problem, None)
}

/// `u = trace(A)` at the cell centers of an `nx × ny` grid.
pub fn trace_field(coeffs: &CoeffTensor, nx: usize, ny: usize) -> ScalarField {
    synthesize_scalar(coeffs.trace_coefficients().view(), nx, ny)
}

/// Exact solver for many `λ` on one scan geometry.
///
/// Splitting `Â` into the unpenalized constant mode `x₀` and the rest `x₁`,
/// the minimizer satisfies `x₁ = (4/λ) W₁⁻¹ B₁ᵀ y` with
/// `(L I + (4/λ) K) y = s − B₀ x₀`, `K = B₁ W₁⁻¹ B₁ᵀ` (`L × L`). One
/// eigendecomposition of `K` makes every `λ` cost a few matrix-vector
/// products, and `K` depends on the geometry only, so it is shared by all
/// signals on that geometry. The ridge is applied to `x₀` only; its effect
/// on `x₁` is below `4 ε_r / (λ μ_min)` relative.
#[derive(Debug, Clone)]
pub struct LambdaPath {
    op: SamplingOperator,
    order: RegularizerOrder,
    /// Eigenvectors of `K`, `L × L`.
    q: Array2<f64>,
    /// Eigenvalues of `K`, clamped to `≥ 0`.
    theta: Vec<f64>,
    /// `Qᵀ B₀`, `L × 2`.
    qt_b0: Array2<f64>,
    /// `1/w` per flat coefficient, 0 on the constant mode.
    inv_w: Vec<f64>,
}

/// Signals projected onto the eigenvectors, reusable across `λ`.
#[derive(Debug, Clone)]
pub struct ProjectedSignal {
    /// `Qᵀ s_p`, `L × 2`.
    qt_s: Array2<f64>,
}

impl LambdaPath {
    pub fn new(
        geometry: &crate::trajectory::ScanGeometry,
        n: usize,
        m: usize,
        order: RegularizerOrder,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::param("grids.coeff_n", "truncation must be positive"));
        }
        if geometry.is_empty() {
            return Err(Error::param("scan", "no samples"));
        }
        let zeros = vec![[0.0; 2]; geometry.len()];
        let scan = ScanSeries::new(geometry.clone(), zeros, 0.01, 0.0, 0)?;
        let op = SamplingOperator::new(&scan, n, m);
        let l = op.samples();
        // Penalized columns (k, j, q), scaled by w^{-1/2}.
        let cols: Vec<(usize, usize, usize, f64)> = (0..n)
            .flat_map(|k| (0..m).map(move |j| (k, j)))
            .filter(|&(k, j)| k + j > 0)
            .flat_map(|(k, j)| {
                let s = order.weight(ModeIndex::new(k, j)).sqrt().recip();
                (0..2).map(move |q| (k, j, q, s))
            })
            .collect();
        let b1 = faer::Mat::<f64>::from_fn(l, cols.len(), |r, c| {
            let (k, j, q, s) = cols[c];
            s * op.cx[[k, r]] * op.cy[[j, r]] * op.vel[[q, r]]
        });
        let gram = &b1 * b1.transpose();
        drop(b1);
        let eig = gram
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let u = eig.U();
        let q = Array2::from_shape_fn((l, l), |(i, j)| u[(i, j)]);
        let s = eig.S().column_vector();
        let theta = (0..l).map(|i| s[i].max(0.0)).collect();
        let b0 = Array2::from_shape_fn((l, 2), |(r, qi)| {
            op.cx[[0, r]] * op.cy[[0, r]] * op.vel[[qi, r]]
        });
        let qt_b0 = q.t().dot(&b0);
        let mut inv_w = vec![0.0; 4 * n * m];
        for k in 0..n {
            for j in 0..m {
                if k + j > 0 {
                    let w = order.weight(ModeIndex::new(k, j)).recip();
                    inv_w[4 * (k * m + j)..4 * (k * m + j) + 4].fill(w);
                }
            }
        }
        Ok(Self {
            op,
            order,
            q,
            theta,
            qt_b0,
            inv_w,
        })
    }

    pub fn order(&self) -> RegularizerOrder {
        self.order
    }

    pub fn project(&self, signals: &[[f64; 2]]) -> Result<ProjectedSignal> {
        if signals.len() != self.op.samples() {
            return Err(Error::DimensionMismatch(format!(
                "{} signals for {} samples",
                signals.len(),
                self.op.samples()
            )));
        }
        let s = Array2::from_shape_fn((signals.len(), 2), |(l, p)| signals[l][p]);
        Ok(ProjectedSignal {
            qt_s: self.q.t().dot(&s),
        })
    }

    pub fn solve(&self, signal: &ProjectedSignal, lambda: f64, ridge: f64) -> Result<CoeffTensor> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param(
                "core.lambda",
                format!("must be positive, got {lambda}"),
            ));
        }
        let l = self.op.samples() as f64;
        let scale = DOMAIN_AREA / lambda;
        let d: Vec<f64> = self.theta.iter().map(|t| 1.0 / (l + scale * t)).collect();
        let p = &self.qt_b0;
        // x₀ from the 2×2 system (Pᵀ D P + ε_r I) x₀ = Pᵀ D t_p.
        let mut g = [[0.0; 2]; 2];
        for (r, dr) in d.iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    g[a][b] += p[[r, a]] * dr * p[[r, b]];
                }
            }
        }
        g[0][0] += ridge;
        g[1][1] += ridge;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if !(det.abs() > 0.0 && det.is_finite()) {
            return Err(Error::Numerical(
                "constant mode is unobservable; raise core.ridge".into(),
            ));
        }
        let mut z = Array2::zeros((d.len(), 2));
        let mut x0 = [[0.0; 2]; 2];
        for row in 0..2 {
            let t = signal.qt_s.column(row);
            let mut rhs = [0.0; 2];
            for (r, dr) in d.iter().enumerate() {
                rhs[0] += p[[r, 0]] * dr * t[r];
                rhs[1] += p[[r, 1]] * dr * t[r];
            }
            let a = (g[1][1] * rhs[0] - g[0][1] * rhs[1]) / det;
            let b = (g[0][0] * rhs[1] - g[1][0] * rhs[0]) / det;
            x0[row] = [a, b];
            for (r, dr) in d.iter().enumerate() {
                z[[r, row]] = dr * (t[r] - p[[r, 0]] * a - p[[r, 1]] * b);
            }
        }
        let y = self.q.dot(&z).reversed_axes(); // 2 × L
        let mut flat = vec![0.0; self.inv_w.len()];
        self.op
            .apply_adjoint(&y.as_standard_layout().to_owned(), &mut flat);
        for (x, iw) in flat.iter_mut().zip(&self.inv_w) {
            *x *= scale * iw;
        }
        for row in 0..2 {
            flat[2 * row] = x0[row][0];
            flat[2 * row + 1] = x0[row][1];
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "lambda-path solve produced non-finite coefficients".into(),
            ));
        }
        CoeffTensor::from_flat(self.op.n, self.op.m, flat)
    }
}
