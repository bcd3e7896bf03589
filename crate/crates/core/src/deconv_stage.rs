//! Stage 2: recover `ρ` from the trace `u = κ_h * ρ`.
//!
//! The main method is half-quadratic splitting with a plug-in denoiser:
//!
//! ```text
//! ρ₁ ← argmin ‖u − Cρ‖² + ν_k ‖ρ − ρ₂‖²
//! σ  ← std(ρ₁)
//! ρ₂ ← Denoiser(ρ₁, σ),   ν_{k+1} = μ / σ²
//! ```
//!
//! Norms are plain sums over grid cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::cg::{self, CgSettings};
use crate::conv::LinearConvolution;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::forward::trace_convolution;
use crate::kernels::KernelParams;
use crate::pgm;

/// A linear map on `nx × ny` images together with its adjoint.
pub trait ImageOperator {
    fn shape(&self) -> (usize, usize);
    fn apply(&self, input: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, input: &[f64], out: &mut [f64]);
}

impl ImageOperator for LinearConvolution {
    fn shape(&self) -> (usize, usize) {
        (self.nx(), self.ny())
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        LinearConvolution::apply(self, input, out);
    }

    fn apply_adjoint(&self, input: &[f64], out: &mut [f64]) {
        LinearConvolution::apply_adjoint(self, input, out);
    }
}

/// `C_h`: linear convolution with `κ_h` on an `nx × ny` grid.
pub fn build_convolution_operator(
    params: &KernelParams,
    nx: usize,
    ny: usize,
) -> Result<LinearConvolution> {
    params.validate()?;
    if nx < 8 || ny < 8 {
        return Err(Error::param(
            "grid",
            format!("deconvolution grid {nx}x{ny} is below 8x8"),
        ));
    }
    Ok(trace_convolution(params, nx, ny))
}

fn check_shape(op: &impl ImageOperator, f: &ScalarField, what: &str) -> Result<()> {
    if op.shape() != (f.nx(), f.ny()) {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, operator expects {:?}",
            f.nx(),
            f.ny(),
            op.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TikhonovOutcome {
    pub field: ScalarField,
    pub iterations: usize,
    pub converged: bool,
}

/// `argmin ‖u − Cρ‖² + ν‖ρ − ρ₂‖²` by CG on the normal equations, started
/// from `ρ₂`.
pub fn tikhonov_step(
    u: &ScalarField,
    rho2: &ScalarField,
    nu: f64,
    op: &impl ImageOperator,
    settings: CgSettings,
) -> Result<TikhonovOutcome> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::param("nu", format!("must be positive, got {nu}")));
    }
    check_shape(op, u, "data")?;
    check_shape(op, rho2, "prior iterate")?;
    let n = u.len();
    let mut b = vec![0.0; n];
    op.apply_adjoint(u.values(), &mut b);
    b.iter_mut()
        .zip(rho2.values())
        .for_each(|(bi, r)| *bi += nu * r);
    let mut tmp = vec![0.0; n];
    let mut normal = |x: &[f64], y: &mut [f64]| {
        op.apply(x, &mut tmp);
        op.apply_adjoint(&tmp, y);
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += nu * xi);
    };
    // The tolerance is relative to ‖b‖; CG measures against the residual of
    // the warm start, so rescale.
    let mut r0 = vec![0.0; n];
    normal(rho2.values(), &mut r0);
    let r0_norm = r0
        .iter()
        .zip(&b)
        .map(|(a, bi)| (bi - a).powi(2))
        .sum::<f64>()
        .sqrt();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut local = settings;
    if r0_norm > 0.0 {
        local.tol = (settings.tol * b_norm / r0_norm).min(settings.tol.max(0.5));
    }
    let out = cg::solve(
        normal,
        &b,
        Some(rho2.values().to_vec()),
        None,
        local,
        |_, _, _| {},
    );
    if out.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("Tikhonov step diverged".into()));
    }
    Ok(TikhonovOutcome {
        field: ScalarField::from_values(u.nx(), u.ny(), out.x)?,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Square root of the population variance over all cells.
pub fn estimate_sigma(rho: &ScalarField) -> f64 {
    let v = rho.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    // Two-pass with the compensation term for rounding in `mean`.
    let (sq, lin) = v.iter().fold((0.0, 0.0), |(sq, lin), x| {
        let d = x - mean;
        (sq + d * d, lin + d)
    });
    ((sq - lin * lin / n) / n).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    /// Normalized Gaussian with standard deviation `factor · σ` in domain
    /// units, reflective boundaries.
    GaussianBlur { factor: f64 },
    /// Returns the input unchanged.
    Identity,
    /// Runs `command <exchange_dir>`; see [`denoise`] for the file layout.
    External {
        command: PathBuf,
        exchange_dir: PathBuf,
        timeout: Duration,
    },
}

/// Blur width relative to `σ`, chosen by mean deconvolution PSNR over the
/// built-in phantoms on both scans.
pub const DEFAULT_BLUR_FACTOR: f64 = 0.07;

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::GaussianBlur {
            factor: DEFAULT_BLUR_FACTOR,
        }
    }
}

/// Mirror index into `[0, n)` with edge-repeating reflection.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn gaussian_taps(std_cells: f64) -> Vec<f64> {
    let radius = (4.0 * std_cells).ceil().max(1.0) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / std_cells).powi(2)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

fn blur_axis(values: &[f64], nx: usize, ny: usize, taps: &[f64], along_x: bool) -> Vec<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut out = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                let off = t as isize - radius;
                let idx = if along_x {
                    j * nx + reflect(i as isize + off, nx)
                } else {
                    reflect(j as isize + off, ny) * nx + i
                };
                acc += w * values[idx];
            }
            out[j * nx + i] = acc;
        }
    }
    out
}

/// Separable Gaussian blur; `std` is in domain units.
pub fn gaussian_blur(rho: &ScalarField, std: f64) -> Result<ScalarField> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::param(
            "sigma",
            "blur width must be finite and non-negative",
        ));
    }
    let (nx, ny) = (rho.nx(), rho.ny());
    if std == 0.0 {
        return Ok(rho.clone());
    }
    let sx = std * nx as f64 / 2.0;
    let sy = std * ny as f64 / 2.0;
    let pass = blur_axis(rho.values(), nx, ny, &gaussian_taps(sx), true);
    let pass = blur_axis(&pass, nx, ny, &gaussian_taps(sy), false);
    ScalarField::from_values(nx, ny, pass)
}

/// Exchange-directory protocol: writes `in.pgm`, `in.range` and `sigma`,
/// runs the command with the directory as its only argument, then reads
/// `out.pgm` and `out.range`.
fn external_denoise(
    rho: &ScalarField,
    sigma: f64,
    command: &Path,
    dir: &Path,
    timeout: Duration,
) -> Result<ScalarField> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pgm::save_field(rho, &dir.join("in.pgm"))?;
    let sigma_path = dir.join("sigma");
    fs::write(&sigma_path, format!("{sigma}\n")).map_err(|e| Error::io(&sigma_path, e))?;
    let out_path = dir.join("out.pgm");
    if out_path.exists() {
        fs::remove_file(&out_path).map_err(|e| Error::io(&out_path, e))?;
    }
    let mut child = Command::new(command)
        .arg(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Denoiser(format!("cannot start {}: {e}", command.display())))?;
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Denoiser(format!(
                    "{} timed out after {:?}",
                    command.display(),
                    timeout
                )));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                return Err(Error::Denoiser(format!(
                    "waiting for {}: {e}",
                    command.display()
                )))
            }
        }
    };
    if !status.success() {
        let mut stderr = String::new();
        if let Some(mut pipe) = child.stderr.take() {
            use std::io::Read;
            let _ = pipe.read_to_string(&mut stderr);
        }
        return Err(Error::Denoiser(format!(
            "{} exited with {status}: {}",
            command.display(),
            stderr.trim()
        )));
    }
    let out = pgm::load_field(&out_path)
        .map_err(|e| Error::Denoiser(format!("reading denoiser output: {e}")))?;
    if !out.same_shape(rho) {
        return Err(Error::Denoiser(format!(
            "output is {}x{}, expected {}x{}",
            out.nx(),
            out.ny(),
            rho.nx(),
            rho.ny()
        )));
    }
    Ok(out)
}

/// Applies the denoiser at noise level `sigma`; `sigma = 0` is the identity.
pub fn denoise(rho: &ScalarField, sigma: f64, spec: &DenoiserSpec) -> Result<ScalarField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(
            "sigma",
            format!("must be finite and non-negative, got {sigma}"),
        ));
    }
    if sigma == 0.0 {
        return Ok(rho.clone());
    }
    match spec {
        DenoiserSpec::Identity => Ok(rho.clone()),
        DenoiserSpec::GaussianBlur { factor } => {
            if !(*factor >= 0.0 && factor.is_finite()) {
                return Err(Error::param(
                    "deconv.blur_factor",
                    "must be finite and non-negative",
                ));
            }
            gaussian_blur(rho, factor * sigma)
        }
        DenoiserSpec::External {
            command,
            exchange_dir,
            timeout,
        } => external_denoise(rho, sigma, command, exchange_dir, *timeout),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeconvMode {
    Hqs,
    Quadratic,
}

#[derive(Debug, Clone)]
pub struct DeconvProblem {
    pub u: ScalarField,
    pub params: KernelParams,
    pub mu: f64,
    pub nu0: f64,
    pub iters: usize,
    pub denoiser: DenoiserSpec,
    pub mode: DeconvMode,
    pub clamp_nonneg: bool,
    pub cg: CgSettings,
}

impl DeconvProblem {
    pub fn new(u: ScalarField, params: KernelParams, mu: f64) -> Self {
        Self {
            u,
            params,
            mu,
            nu0: 1.0,
            iters: 8,
            denoiser: DenoiserSpec::default(),
            mode: DeconvMode::Hqs,
            clamp_nonneg: false,
            cg: CgSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param(
                "deconv.mu",
                format!("must be positive, got {}", self.mu),
            ));
        }
        if !(self.nu0 > 0.0 && self.nu0.is_finite()) {
            return Err(Error::param(
                "deconv.nu0",
                format!("must be positive, got {}", self.nu0),
            ));
        }
        if self.iters == 0 {
            return Err(Error::param("deconv.iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-iteration record of an HQS run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HqsStep {
    pub nu: f64,
    pub sigma: f64,
    pub cg_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DeconvResult {
    pub field: ScalarField,
    pub steps: Vec<HqsStep>,
}

fn clamp(mut f: ScalarField, on: bool) -> ScalarField {
    if on {
        f.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    f
}

/// HQS with a caller-supplied operator (useful to reuse one `C_h`).
pub fn hqs_with_operator(problem: &DeconvProblem, op: &impl ImageOperator) -> Result<DeconvResult> {
    problem.validate()?;
    let u = &problem.u;
    let mut rho2 = ScalarField::zeros(u.nx(), u.ny());
    let mut nu = problem.nu0;
    let mut steps = Vec::with_capacity(problem.iters);
    for _ in 0..problem.iters {
        let tik = tikhonov_step(u, &rho2, nu, op, problem.cg)?;
        let sigma = estimate_sigma(&tik.field);
        steps.push(HqsStep {
            nu,
            sigma,
            cg_iterations: tik.iterations,
            converged: tik.converged,
        });
        rho2 = denoise(&tik.field, sigma, &problem.denoiser)?;
        if sigma > 0.0 {
            nu = problem.mu / (sigma * sigma);
        }
    }
    Ok(DeconvResult {
        field: clamp(rho2, problem.clamp_nonneg),
        steps,
    })
}

pub fn hqs_deconvolve(problem: &DeconvProblem) -> Result<DeconvResult> {
    let op = build_convolution_operator(&problem.params, problem.u.nx(), problem.u.ny())?;
    hqs_with_operator(problem, &op)
}

/// `GᵀG x` for forward differences with no flux across the boundary.
fn neumann_laplacian(x: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    out.fill(0.0);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if i + 1 < nx {
                let d = x[k + 1] - x[k];
                out[k] -= d;
                out[k + 1] += d;
            }
            if j + 1 < ny {
                let d = x[k + nx] - x[k];
                out[k] -= d;
                out[k + nx] += d;
            }
        }
    }
}

/// `argmin μ‖∇ρ‖² + ‖Cρ − u‖²` with `∇` the forward-difference gradient
/// (unscaled cell differences).
pub fn quadratic_with_operator(
    u: &ScalarField,
    mu: f64,
    op: &impl ImageOperator,
    settings: CgSettings,
) -> Result<TikhonovOutcome> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::param(
            "deconv.mu",
            format!("must be positive, got {mu}"),
        ));
    }
    check_shape(op, u, "data")?;
    let (nx, ny) = (u.nx(), u.ny());
    let mut b = vec![0.0; u.len()];
    op.apply_adjoint(u.values(), &mut b);
    let mut tmp = vec![0.0; u.len()];
    let mut lap = vec![0.0; u.len()];
    let out = cg::solve(
        |x, y| {
            op.apply(x, &mut tmp);
            op.apply_adjoint(&tmp, y);
            neumann_laplacian(x, nx, ny, &mut lap);
            y.iter_mut().zip(&lap).for_each(|(yi, li)| *yi += mu * li);
        },
        &b,
        None,
        None,
        settings,
        |_, _, _| {},
    );
    if out.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("quadratic deconvolution diverged".into()));
    }
    Ok(TikhonovOutcome {
        field: ScalarField::from_values(nx, ny, out.x)?,
        iterations: out.iterations,
        converged: out.converged,
    })
}

pub fn quadratic_deconvolve(
    u: &ScalarField,
    params: &KernelParams,
    mu: f64,
) -> Result<ScalarField> {
    let op = build_convolution_operator(params, u.nx(), u.ny())?;
    Ok(quadratic_with_operator(u, mu, &op, CgSettings::default())?.field)
}

/// Dispatches on `problem.mode`.
pub fn deconvolve(problem: &DeconvProblem) -> Result<DeconvResult> {
    let op = build_convolution_operator(&problem.params, problem.u.nx(), problem.u.ny())?;
    deconvolve_with_operator(problem, &op)
}

pub fn deconvolve_with_operator(
    problem: &DeconvProblem,
    op: &impl ImageOperator,
) -> Result<DeconvResult> {
    match problem.mode {
        DeconvMode::Hqs => hqs_with_operator(problem, op),
        DeconvMode::Quadratic => {
            problem.validate()?;
            let out = quadratic_with_operator(&problem.u, problem.mu, op, problem.cg)?;
            Ok(DeconvResult {
                field: clamp(out.field, problem.clamp_nonneg),
                steps: vec![HqsStep {
                    nu: 0.0,
                    sigma: 0.0,
                    cg_iterations: out.iterations,
                    converged: out.converged,
                }],
            })
        }
    }
}
