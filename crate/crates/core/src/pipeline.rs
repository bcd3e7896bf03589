//! End-to-end driver: simulate scans of phantoms, run both stages, and
//! select `λ` and `μ` by average PSNR over a phantom set.

use crate::config::PipelineConfig;
use crate::conv::LinearConvolution;
use crate::core_stage::{
    solve_core_logged, trace_field, CoreProblem, CoreSolution, IterationLog, LambdaPath,
    RegularizerOrder,
};
use crate::deconv_stage::{
    build_convolution_operator, deconvolve_with_operator, DeconvProblem, DeconvResult,
};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::forward::{add_noise, core_response_field, simulate_signal, ScanSeries};
use crate::metrics::{ideal_trace, score, ScorePair};
use crate::phantom::PhantomSpec;
use crate::spectral::CoeffTensor;
use crate::trajectory::ScanGeometry;

/// The scan of `config`: one Lissajous pass, or the pass merged with its
/// quarter-turn rotation.
pub fn geometry(config: &PipelineConfig) -> Result<ScanGeometry> {
    let base = ScanGeometry::lissajous(&config.lissajous(), config.samples)?;
    if config.merge_rotated {
        ScanGeometry::merge(&base, &base.rotate(1)?)
    } else {
        Ok(base)
    }
}

/// A simulated acquisition with its references on the reconstruction grid.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub name: String,
    /// Noisy scan.
    pub scan: ScanSeries,
    /// `ρ_GT` rasterized on the reconstruction grid.
    pub rho_truth: ScalarField,
    /// `κ_h * ρ_GT`, computed on the fine grid and resampled.
    pub trace_truth: ScalarField,
}

pub fn simulate_on(
    config: &PipelineConfig,
    phantom: &PhantomSpec,
    geom: &ScanGeometry,
    seed: u64,
) -> Result<Simulation> {
    let params = config.kernel()?;
    let rho_fine = phantom.rasterize(config.fine_n, config.fine_n)?;
    let a = core_response_field(&rho_fine, &params)?;
    let clean = simulate_signal(&a, geom)?;
    let noisy = add_noise(&clean, config.noise_fraction, seed)?;
    let scan = ScanSeries::new(geom.clone(), noisy, config.h, config.noise_fraction, seed)?;
    Ok(Simulation {
        name: phantom.name.clone(),
        scan,
        rho_truth: phantom.rasterize(config.recon_n, config.recon_n)?,
        trace_truth: ideal_trace(&rho_fine, &params, config.recon_n, config.recon_n)?,
    })
}

pub fn simulate(config: &PipelineConfig) -> Result<Simulation> {
    config.validate()?;
    simulate_on(
        config,
        &config.phantom_spec()?,
        &geometry(config)?,
        config.seed,
    )
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub core: CoreSolution,
    pub core_log: Vec<IterationLog>,
    pub trace: ScalarField,
    pub deconv: DeconvResult,
}

fn deconv_problem(config: &PipelineConfig, u: ScalarField, mu: f64) -> Result<DeconvProblem> {
    let mut p = DeconvProblem::new(u, config.kernel()?, mu);
    p.nu0 = config.nu0;
    p.iters = config.deconv_iters;
    p.denoiser = config.denoiser_spec()?;
    p.mode = config.deconv_mode;
    p.clamp_nonneg = config.clamp_nonneg;
    Ok(p)
}

/// Both stages with the parameters of `config`.
pub fn reconstruct(config: &PipelineConfig, scan: &ScanSeries) -> Result<Reconstruction> {
    config.validate()?;
    let mut problem = CoreProblem::new(
        scan.clone(),
        config.coeff_n,
        config.coeff_n,
        config.order,
        config.lambda,
    );
    problem.ridge = config.ridge;
    problem.tol = config.core_tol;
    problem.max_iter = config.core_max_iter;
    let mut log = Vec::new();
    let core = solve_core_logged(&problem, Some(&mut log))?;
    let trace = trace_field(&core.coeffs, config.recon_n, config.recon_n);
    let op = build_convolution_operator(&config.kernel()?, config.recon_n, config.recon_n)?;
    let deconv = deconvolve_with_operator(&deconv_problem(config, trace.clone(), config.mu)?, &op)?;
    Ok(Reconstruction {
        core,
        core_log: log,
        trace,
        deconv,
    })
}

/// `{j · 10^i}` for the given `j` and `i`, in increasing order.
pub fn decade_grid(js: &[u32], is: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    let mut out: Vec<f64> = is
        .flat_map(|i| js.iter().map(move |&j| j as f64 * 10f64.powi(i)))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Grid for a search: the two-step decade scheme, or explicit values.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Decades,
    Values(Vec<f64>),
}

impl GridSpec {
    /// `decades`, or a comma-separated list of positive values.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.is_empty() || t == "decades" {
            return Ok(GridSpec::Decades);
        }
        let values = t
            .split(',')
            .map(|v| {
                let x: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::param("grid", format!("cannot parse `{v}`")))?;
                if x > 0.0 && x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::param(
                        "grid",
                        format!("values must be positive, got {x}"),
                    ))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridSpec::Values(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub rows: Vec<SweepRow>,
    pub best: SweepRow,
}

fn best_row(rows: &[SweepRow]) -> Result<SweepRow> {
    rows.iter()
        .copied()
        .filter(|r| !r.mean_psnr.is_nan())
        .reduce(|a, b| if b.mean_psnr > a.mean_psnr { b } else { a })
        .ok_or_else(|| Error::Numerical("every grid point produced NaN scores".into()))
}

fn decade_of(x: f64) -> i32 {
    // j·10^i with j < 10: the exponent is floor(log10) up to rounding.
    (x.log10() + 1e-9).floor() as i32
}

fn run_search(
    spec: &GridSpec,
    coarse: Vec<f64>,
    refine: bool,
    mut eval: impl FnMut(f64) -> Result<SweepRow>,
) -> Result<GridSearch> {
    let first = match spec {
        GridSpec::Decades => coarse,
        GridSpec::Values(v) => v.clone(),
    };
    let mut rows = first
        .into_iter()
        .map(&mut eval)
        .collect::<Result<Vec<_>>>()?;
    if refine && *spec == GridSpec::Decades {
        let i = decade_of(best_row(&rows)?.value);
        let fine = decade_grid(&[1, 2, 3, 4, 5, 6, 7, 8, 9], i - 1..=i + 1);
        for v in fine {
            rows.push(eval(v)?);
        }
    }
    let best = best_row(&rows)?;
    Ok(GridSearch { rows, best })
}

pub fn lambda_coarse_grid() -> Vec<f64> {
    decade_grid(&[1, 5], -3..=3)
}

pub fn mu_grid() -> Vec<f64> {
    decade_grid(&[1, 5], -4..=2)
}

fn mean_scores(scores: &[ScorePair]) -> (f64, f64) {
    let n = scores.len() as f64;
    (
        scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        scores.iter().map(|s| s.ssim).sum::<f64>() / n,
    )
}

/// Phantoms simulated once on a shared geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: PipelineConfig,
    pub geometry: ScanGeometry,
    pub items: Vec<Simulation>,
}

impl Dataset {
    /// Phantom `k` uses noise seed `config.seed + k`.
    pub fn build(config: &PipelineConfig, phantoms: &[PhantomSpec]) -> Result<Self> {
        config.validate()?;
        if phantoms.is_empty() {
            return Err(Error::param("phantom", "dataset is empty"));
        }
        let geom = geometry(config)?;
        let items = phantoms
            .iter()
            .enumerate()
            .map(|(k, p)| simulate_on(config, p, &geom, config.seed.wrapping_add(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            geometry: geom,
            items,
        })
    }
}

/// Core stage for every phantom at many `λ`, sharing one `LambdaPath`.
pub struct CoreSweep<'a> {
    dataset: &'a Dataset,
    path: LambdaPath,
    projected: Vec<crate::core_stage::ProjectedSignal>,
}

impl<'a> CoreSweep<'a> {
    pub fn new(dataset: &'a Dataset, order: RegularizerOrder) -> Result<Self> {
        let c = &dataset.config;
        let path = LambdaPath::new(&dataset.geometry, c.coeff_n, c.coeff_n, order)?;
        let projected = dataset
            .items
            .iter()
            .map(|s| path.project(&s.scan.signals))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            path,
            projected,
        })
    }

    pub fn coefficients(&self, lambda: f64) -> Result<Vec<CoeffTensor>> {
        self.projected
            .iter()
            .map(|p| self.path.solve(p, lambda, self.dataset.config.ridge))
            .collect()
    }

    pub fn traces(&self, lambda: f64) -> Result<Vec<ScalarField>> {
        let n = self.dataset.config.recon_n;
        Ok(self
            .coefficients(lambda)?
            .iter()
            .map(|c| trace_field(c, n, n))
            .collect())
    }

    pub fn scores(&self, lambda: f64) -> Result<Vec<ScorePair>> {
        self.traces(lambda)?
            .iter()
            .zip(&self.dataset.items)
            .map(|(u, s)| score(u, &s.trace_truth))
            .collect()
    }

    pub fn evaluate(&self, lambda: f64) -> Result<SweepRow> {
        let (mean_psnr, mean_ssim) = mean_scores(&self.scores(lambda)?);
        Ok(SweepRow {
            value: lambda,
            mean_psnr,
            mean_ssim,
        })
    }

    pub fn grid_search(&self, spec: &GridSpec) -> Result<GridSearch> {
        run_search(spec, lambda_coarse_grid(), true, |l| self.evaluate(l))
    }
}

/// Deconvolution of fixed traces at many `μ`.
pub struct DeconvSweep<'a> {
    dataset: &'a Dataset,
    traces: Vec<ScalarField>,
    op: LinearConvolution,
}

impl<'a> DeconvSweep<'a> {
    pub fn new(dataset: &'a Dataset, traces: Vec<ScalarField>) -> Result<Self> {
        if traces.len() != dataset.items.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} traces for {} phantoms",
                traces.len(),
                dataset.items.len()
            )));
        }
        let c = &dataset.config;
        let op = build_convolution_operator(&c.kernel()?, c.recon_n, c.recon_n)?;
        Ok(Self {
            dataset,
            traces,
            op,
        })
    }

    pub fn reconstructions(&self, mu: f64) -> Result<Vec<ScalarField>> {
        self.traces
            .iter()
            .map(|u| {
                let p = deconv_problem(&self.dataset.config, u.clone(), mu)?;
                Ok(deconvolve_with_operator(&p, &self.op)?.field)
            })
            .collect()
    }

    pub fn scores(&self, mu: f64) -> Result<Vec<ScorePair>> {
        self.reconstructions(mu)?
            .iter()
            .zip(&self.dataset.items)
            .map(|(r, s)| score(r, &s.rho_truth))
            .collect()
    }

    pub fn evaluate(&self, mu: f64) -> Result<SweepRow> {
        let (mean_psnr, mean_ssim) = mean_scores(&self.scores(mu)?);
        Ok(SweepRow {
            value: mu,
            mean_psnr,
            mean_ssim,
        })
    }

    pub fn grid_search(&self, spec: &GridSpec) -> Result<GridSearch> {
        run_search(spec, mu_grid(), false, |m| self.evaluate(m))
    }
}

/// Scores of one order after both searches.
#[derive(Debug, Clone)]
pub struct OrderOutcome {
    pub order: RegularizerOrder,
    pub lambda_search: GridSearch,
    pub mu_search: GridSearch,
    pub core_scores: Vec<ScorePair>,
    pub deconv_scores: Vec<ScorePair>,
    /// Total variation of each trace reconstruction at `λ*`.
    pub trace_tv: Vec<f64>,
    pub traces: Vec<ScalarField>,
    pub reconstructions: Vec<ScalarField>,
}

impl OrderOutcome {
    pub fn mean_core(&self) -> (f64, f64) {
        mean_scores(&self.core_scores)
    }

    pub fn mean_deconv(&self) -> (f64, f64) {
        mean_scores(&self.deconv_scores)
    }
}

/// Selects `λ*` then `μ*` for one order, as in the parameter study.
pub fn run_order(dataset: &Dataset, order: RegularizerOrder) -> Result<OrderOutcome> {
    let core = CoreSweep::new(dataset, order)?;
    let lambda_search = core.grid_search(&GridSpec::Decades)?;
    let lambda = lambda_search.best.value;
    let traces = core.traces(lambda)?;
    let core_scores = traces
        .iter()
        .zip(&dataset.items)
        .map(|(u, s)| score(u, &s.trace_truth))
        .collect::<Result<Vec<_>>>()?;
    let trace_tv = traces.iter().map(ScalarField::total_variation).collect();
    let deconv = DeconvSweep::new(dataset, traces.clone())?;
    let mu_search = deconv.grid_search(&GridSpec::Decades)?;
    let reconstructions = deconv.reconstructions(mu_search.best.value)?;
    let deconv_scores = reconstructions
        .iter()
        .zip(&dataset.items)
        .map(|(r, s)| score(r, &s.rho_truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(OrderOutcome {
        order,
        lambda_search,
        mu_search,
        core_scores,
        deconv_scores,
        trace_tv,
        traces,
        reconstructions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom;

    #[test]
    fn decade_grids_have_the_expected_sizes() {
        let c = lambda_coarse_grid();
        assert_eq!(c.len(), 14);
        assert_eq!((c[0], c[13]), (1e-3, 5e3));
        assert_eq!(mu_grid().len(), 14);
        let fine = decade_grid(&[1, 2, 3, 4, 5, 6, 7, 8, 9], -3..=-1);
        assert_eq!(fine.len(), 27);
        assert_eq!(decade_of(1e-3), -3);
        assert_eq!(decade_of(5e-2), -2);
        assert_eq!(decade_of(9e2), 2);
        assert_eq!(decade_of(1.0), 0);
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!(GridSpec::parse("decades").unwrap(), GridSpec::Decades);
        assert_eq!(
            GridSpec::parse("0.1, 2").unwrap(),
            GridSpec::Values(vec![0.1, 2.0])
        );
        assert!(GridSpec::parse("0.1,-2").is_err());
        assert!(GridSpec::parse("x").is_err());
    }

    #[test]
    fn search_refines_around_the_best_decade() {
        // Peak at 0.03: the coarse winner is 0.05 (decade -2), so the
        // refinement spans 1e-3..9e-1 and contains the peak.
        let f = |v: f64| {
            Ok(SweepRow {
                value: v,
                mean_psnr: -(v.ln() - 0.03f64.ln()).powi(2),
                mean_ssim: 0.0,
            })
        };
        let s = run_search(&GridSpec::Decades, lambda_coarse_grid(), true, f).unwrap();
        assert_eq!(s.rows.len(), 14 + 27);
        assert!((s.best.value - 0.03).abs() < 1e-15);
        let single =
            run_search(&GridSpec::Values(vec![0.7]), lambda_coarse_grid(), true, f).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.best.value, 0.7);
    }

    fn small_config() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.fine_n = 64;
        c.recon_n = 24;
        c.coeff_n = 8;
        c.samples = 200;
        c.deconv_iters = 2;
        c
    }

    #[test]
    fn simulate_row_count_and_reproducibility() {
        let mut c = small_config();
        let a = simulate(&c).unwrap();
        assert_eq!(a.scan.len(), 200);
        assert_eq!(a.scan.signals, simulate(&c).unwrap().scan.signals);
        c.merge_rotated = true;
        assert_eq!(simulate(&c).unwrap().scan.len(), 400);
    }

    #[test]
    fn zero_signal_reconstructs_to_zero() {
        let c = small_config();
        let mut sim = simulate(&c).unwrap();
        sim.scan.signals.iter_mut().for_each(|s| *s = [0.0; 2]);
        let r = reconstruct(&c, &sim.scan).unwrap();
        assert!(r.trace.values().iter().all(|&v| v == 0.0));
        assert!(r.deconv.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_matches_direct_reconstruction() {
        let mut c = small_config();
        c.core_tol = 1e-12;
        c.core_max_iter = 5000;
        let data = Dataset::build(&c, &[phantom::builtin("disk").unwrap()]).unwrap();
        let sweep = CoreSweep::new(&data, c.order).unwrap();
        let fast = sweep.traces(c.lambda).unwrap();
        let slow = reconstruct(&c, &data.items[0].scan).unwrap().trace;
        let gap = fast[0]
            .values()
            .iter()
            .zip(slow.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = slow.min_max().1.abs().max(1e-12);
        assert!(gap / scale < 1e-6, "gap {gap}");
    }
}
