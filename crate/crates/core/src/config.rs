//! Pipeline configuration: a flat `section.key=value` text format, named
//! presets and command-line overrides.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::core_stage::RegularizerOrder;
use crate::deconv_stage::{DeconvMode, DenoiserSpec, DEFAULT_BLUR_FACTOR};
use crate::error::{Error, Result};
use crate::kernels::{KernelParams, DEFAULT_SERIES_THRESHOLD};
use crate::phantom::{self, PhantomSpec, Shape};
use crate::trajectory::LissajousSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    GaussianBlur,
    Identity,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub h: f64,
    pub series_threshold: f64,

    pub freq_x: f64,
    pub freq_y: f64,
    pub phase_x: f64,
    pub phase_y: f64,
    pub samples: usize,
    pub merge_rotated: bool,

    pub fine_n: usize,
    pub recon_n: usize,
    pub coeff_n: usize,

    pub order: RegularizerOrder,
    pub lambda: f64,
    pub core_tol: f64,
    pub core_max_iter: usize,
    pub ridge: f64,

    pub deconv_mode: DeconvMode,
    pub mu: f64,
    pub nu0: f64,
    pub deconv_iters: usize,
    pub denoiser: DenoiserKind,
    pub blur_factor: f64,
    pub external_command: Option<PathBuf>,
    pub exchange_dir: Option<PathBuf>,
    pub external_timeout_s: f64,
    pub clamp_nonneg: bool,

    pub noise_fraction: f64,
    pub seed: u64,

    /// Built-in phantom name, or `file:<path>` for a PGM phantom.
    pub phantom: String,

    pub eigen_perturbation: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            series_threshold: DEFAULT_SERIES_THRESHOLD,
            freq_x: 16.0,
            freq_y: 17.0,
            phase_x: FRAC_PI_2,
            phase_y: FRAC_PI_2,
            samples: 1632,
            merge_rotated: false,
            fine_n: 512,
            recon_n: 100,
            coeff_n: 64,
            order: RegularizerOrder::Second,
            lambda: 0.01,
            core_tol: 1e-8,
            core_max_iter: 2000,
            ridge: 1e-12,
            deconv_mode: DeconvMode::Hqs,
            mu: 0.01,
            nu0: 1.0,
            deconv_iters: 8,
            denoiser: DenoiserKind::GaussianBlur,
            blur_factor: DEFAULT_BLUR_FACTOR,
            external_command: None,
            exchange_dir: None,
            external_timeout_s: 60.0,
            clamp_nonneg: false,
            noise_fraction: 0.02,
            seed: 0,
            phantom: "disk".into(),
            eigen_perturbation: 0.0,
        }
    }
}

pub const PRESETS: [&str; 4] = ["exp1_order1", "exp1_order2", "exp2_order1", "exp2_order2"];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        reason: format!("`{key}`: cannot parse `{v}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            reason: format!("`{key}`: expected true or false, got `{v}`"),
        }),
    }
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        let (order, lambda, mu, merged) = match name {
            "exp1_order1" => (RegularizerOrder::First, 0.08, 0.05, false),
            "exp1_order2" => (RegularizerOrder::Second, 0.01, 0.01, false),
            "exp2_order1" => (RegularizerOrder::First, 1.0, 0.05, true),
            "exp2_order2" => (RegularizerOrder::Second, 0.004, 0.01, true),
            _ => {
                return Err(Error::param(
                    "preset",
                    format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")),
                ))
            }
        };
        c.order = order;
        c.lambda = lambda;
        c.mu = mu;
        c.merge_rotated = merged;
        Ok(c)
    }

    /// Sets one key; `line` is used in error messages (0 for overrides).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "kernel.h" => self.h = parse_num(line, key, v)?,
            "kernel.series_threshold" => self.series_threshold = parse_num(line, key, v)?,
            "trajectory.freq_x" => self.freq_x = parse_num(line, key, v)?,
            "trajectory.freq_y" => self.freq_y = parse_num(line, key, v)?,
            "trajectory.phase_x" => self.phase_x = parse_num(line, key, v)?,
            "trajectory.phase_y" => self.phase_y = parse_num(line, key, v)?,
            "trajectory.samples" | "trajectory.L" => self.samples = parse_num(line, key, v)?,
            "trajectory.merge_rotated" => self.merge_rotated = parse_bool(line, key, v)?,
            "grids.fine_nx" => self.fine_n = parse_num(line, key, v)?,
            "grids.recon_nx" => self.recon_n = parse_num(line, key, v)?,
            "grids.coeff_n" => self.coeff_n = parse_num(line, key, v)?,
            "core.order" => {
                self.order = RegularizerOrder::from_int(parse_num(line, key, v)?).map_err(|e| {
                    Error::Config {
                        line,
                        reason: e.to_string(),
                    }
                })?
            }
            "core.lambda" => self.lambda = parse_num(line, key, v)?,
            "core.tol" => self.core_tol = parse_num(line, key, v)?,
            "core.max_iter" => self.core_max_iter = parse_num(line, key, v)?,
            "core.ridge" => self.ridge = parse_num(line, key, v)?,
            "deconv.mode" => {
                self.deconv_mode = match v {
                    "hqs" => DeconvMode::Hqs,
                    "quadratic" => DeconvMode::Quadratic,
                    _ => {
                        return Err(Error::Config {
                            line,
                            reason: format!("`{key}`: expected hqs or quadratic, got `{v}`"),
                        })
                    }
                }
            }
            "deconv.mu" => self.mu = parse_num(line, key, v)?,
            "deconv.nu0" => self.nu0 = parse_num(line, key, v)?,
            "deconv.iters" => self.deconv_iters = parse_num(line, key, v)?,
            "deconv.denoiser" => {
                self.denoiser =
                    match v {
                        "gaussian_blur" => DenoiserKind::GaussianBlur,
                        "identity" => DenoiserKind::Identity,
                        "external" => DenoiserKind::External,
                        _ => return Err(Error::Config {
                            line,
                            reason: format!(
                                "`{key}`: expected gaussian_blur, identity or external, got `{v}`"
                            ),
                        }),
                    }
            }
            "deconv.blur_factor" => self.blur_factor = parse_num(line, key, v)?,
            "deconv.external_command" => self.external_command = Some(PathBuf::from(v)),
            "deconv.exchange_dir" => self.exchange_dir = Some(PathBuf::from(v)),
            "deconv.timeout_s" => self.external_timeout_s = parse_num(line, key, v)?,
            "deconv.clamp_nonneg" => self.clamp_nonneg = parse_bool(line, key, v)?,
            "noise.fraction" => self.noise_fraction = parse_num(line, key, v)?,
            "noise.seed" => self.seed = parse_num(line, key, v)?,
            "phantom" | "phantom.name" => self.phantom = v.to_string(),
            "verify.eigen_perturbation" => self.eigen_perturbation = parse_num(line, key, v)?,
            other => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: idx + 1,
                reason: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k, v, idx + 1)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `key=value` overrides such as `core.lambda=0.02` (leading dashes
    /// are stripped).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref().trim_start_matches('-');
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
                line: 0,
                reason: format!("override `{o}` is not key=value"),
            })?;
            self.set(k, v, 0)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let order = self.order.as_int();
        let mode = match self.deconv_mode {
            DeconvMode::Hqs => "hqs",
            DeconvMode::Quadratic => "quadratic",
        };
        let den = match self.denoiser {
            DenoiserKind::GaussianBlur => "gaussian_blur",
            DenoiserKind::Identity => "identity",
            DenoiserKind::External => "external",
        };
        let mut s = format!(
            "kernel.h={}\nkernel.series_threshold={}\n\
             trajectory.freq_x={}\ntrajectory.freq_y={}\ntrajectory.phase_x={}\ntrajectory.phase_y={}\n\
             trajectory.samples={}\ntrajectory.merge_rotated={}\n\
             grids.fine_nx={}\ngrids.recon_nx={}\ngrids.coeff_n={}\n\
             core.order={order}\ncore.lambda={}\ncore.tol={}\ncore.max_iter={}\ncore.ridge={}\n\
             deconv.mode={mode}\ndeconv.mu={}\ndeconv.nu0={}\ndeconv.iters={}\ndeconv.denoiser={den}\n\
             deconv.blur_factor={}\ndeconv.timeout_s={}\ndeconv.clamp_nonneg={}\n\
             noise.fraction={}\nnoise.seed={}\nphantom={}\n",
            self.h,
            self.series_threshold,
            self.freq_x,
            self.freq_y,
            self.phase_x,
            self.phase_y,
            self.samples,
            self.merge_rotated,
            self.fine_n,
            self.recon_n,
            self.coeff_n,
            self.lambda,
            self.core_tol,
            self.core_max_iter,
            self.ridge,
            self.mu,
            self.nu0,
            self.deconv_iters,
            self.blur_factor,
            self.external_timeout_s,
            self.clamp_nonneg,
            self.noise_fraction,
            self.seed,
            self.phantom,
        );
        if let Some(c) = &self.external_command {
            s.push_str(&format!("deconv.external_command={}\n", c.display()));
        }
        if let Some(d) = &self.exchange_dir {
            s.push_str(&format!("deconv.exchange_dir={}\n", d.display()));
        }
        s
    }

    pub fn kernel(&self) -> Result<KernelParams> {
        KernelParams::with_options(self.h, 2, self.series_threshold)
    }

    pub fn lissajous(&self) -> LissajousSpec {
        LissajousSpec {
            freq_x: self.freq_x,
            freq_y: self.freq_y,
            phase_x: self.phase_x,
            phase_y: self.phase_y,
        }
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        if let Some(path) = self.phantom.strip_prefix("file:") {
            return Ok(PhantomSpec::new(path, Shape::FromFile(PathBuf::from(path))));
        }
        phantom::builtin(&self.phantom).ok_or_else(|| {
            Error::param(
                "phantom",
                format!("unknown built-in phantom `{}`", self.phantom),
            )
        })
    }

    pub fn denoiser_spec(&self) -> Result<DenoiserSpec> {
        Ok(match self.denoiser {
            DenoiserKind::GaussianBlur => DenoiserSpec::GaussianBlur {
                factor: self.blur_factor,
            },
            DenoiserKind::Identity => DenoiserSpec::Identity,
            DenoiserKind::External => {
                let command = self.external_command.clone().ok_or_else(|| {
                    Error::param(
                        "deconv.external_command",
                        "required for the external denoiser",
                    )
                })?;
                let exchange_dir = self.exchange_dir.clone().unwrap_or_else(|| {
                    std::env::temp_dir().join(format!("mpi-recon-denoise-{}", std::process::id()))
                });
                if !(self.external_timeout_s > 0.0 && self.external_timeout_s.is_finite()) {
                    return Err(Error::param("deconv.timeout_s", "must be positive"));
                }
                DenoiserSpec::External {
                    command,
                    exchange_dir,
                    timeout: Duration::from_secs_f64(self.external_timeout_s),
                }
            }
        })
    }

    /// Cross-field checks not covered by the module constructors.
    pub fn validate(&self) -> Result<()> {
        self.kernel()?;
        self.lissajous().validate()?;
        if self.samples == 0 {
            return Err(Error::param("trajectory.samples", "must be positive"));
        }
        if self.fine_n < 8 || self.recon_n < 8 {
            return Err(Error::param("grids", "grids must be at least 8x8"));
        }
        if self.coeff_n == 0 {
            return Err(Error::param("grids.coeff_n", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("core.lambda", "must be positive"));
        }
        if !(self.core_tol > 0.0 && self.core_tol < 1.0) {
            return Err(Error::param("core.tol", "must lie in (0, 1)"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite() && self.nu0 > 0.0 && self.nu0.is_finite()) {
            return Err(Error::param("deconv", "mu and nu0 must be positive"));
        }
        if self.deconv_iters == 0 {
            return Err(Error::param("deconv.iters", "must be at least 1"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::param(
                "core.ridge",
                "must be finite and non-negative",
            ));
        }
        if !(self.blur_factor >= 0.0 && self.blur_factor.is_finite()) {
            return Err(Error::param(
                "deconv.blur_factor",
                "must be finite and non-negative",
            ));
        }
        if !(self.external_timeout_s > 0.0 && self.external_timeout_s.is_finite()) {
            return Err(Error::param("deconv.timeout_s", "must be positive"));
        }
        if !self.eigen_perturbation.is_finite() {
            return Err(Error::param("verify.eigen_perturbation", "must be finite"));
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(Error::param(
                "noise.fraction",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}
