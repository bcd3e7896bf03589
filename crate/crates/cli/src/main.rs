use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpi_recon::config::PipelineConfig;
use mpi_recon::core_stage::RegularizerOrder;
use mpi_recon::forward::ScanSeries;
use mpi_recon::metrics::{format_score, score};
use mpi_recon::pgm::{load_field, save_field};
use mpi_recon::phantom::{self, PhantomSpec};
use mpi_recon::pipeline::{self, CoreSweep, Dataset, DeconvSweep, GridSearch, GridSpec};
use mpi_recon::theory_checks::{run_suite, write_report_csv, SuiteOptions, SUITE_NOTES};
use mpi_recon::{Error, Result};

/// Simulation and two-stage reconstruction for field-free-line scanners.
///
/// Any `--section.key=value` argument overrides the matching config key.
#[derive(Parser, Debug)]
#[command(name = "mpi-recon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset (exp1_order1, exp1_order2, exp2_order1, exp2_order2).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Param {
    Lambda,
    Mu,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize the phantom, simulate the noisy scan and write references.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the core stage and the deconvolution on a scan CSV.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Scan CSV written by `simulate`.
        #[arg(long)]
        scan: PathBuf,
    },
    /// Average-PSNR parameter search over a phantom set.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Param,
        /// `decades`, or comma-separated values.
        #[arg(long, default_value = "decades")]
        grid: String,
        /// Comma-separated built-in phantom names, or `all`.
        #[arg(long, default_value = "all")]
        phantoms: String,
    },
    /// Run the eigenfunction and regularizer identity checks.
    Verify {
        /// CSV report path.
        #[arg(long, default_value = "verify.csv")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// PSNR and SSIM of an image against a reference (both PGM with range sidecars).
    Metrics { recon: PathBuf, truth: PathBuf },
}

/// Splits `--a.b=v` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, _)) if k.contains('.') => overrides.push(a),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load_config(
    config: Option<&Path>,
    preset: Option<&str>,
    overrides: &[String],
) -> Result<PipelineConfig> {
    let mut c = match preset {
        Some(p) => PipelineConfig::preset(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        c.apply_text(&text)?;
    }
    c.apply_overrides(overrides)?;
    c.validate()?;
    Ok(c)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))
}

fn cmd_simulate(config: &PipelineConfig, out: &Path) -> Result<()> {
    let sim = pipeline::simulate(config)?;
    let scan_path = out.join("scan.csv");
    let mut f = create(&scan_path)?;
    sim.scan.write_csv(&mut f)?;
    f.flush().map_err(|e| io_err(&scan_path, e))?;
    save_field(&sim.rho_truth, &out.join("rho_truth.pgm"))?;
    save_field(&sim.trace_truth, &out.join("trace_truth.pgm"))?;
    write_text(&out.join("config.txt"), &config.to_text())?;
    println!(
        "wrote {} samples to {}",
        sim.scan.len(),
        scan_path.display()
    );
    Ok(())
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

fn cmd_reconstruct(config: &PipelineConfig, scan_path: &Path, out: &Path) -> Result<()> {
    let scan = ScanSeries::read_csv(File::open(scan_path).map_err(|e| io_err(scan_path, e))?)?;
    let r = pipeline::reconstruct(config, &scan)?;
    let coeff_path = out.join("coeffs.mpic");
    let mut f = create(&coeff_path)?;
    f.write_all(&r.core.coeffs.encode())
        .map_err(|e| io_err(&coeff_path, e))?;
    f.flush().map_err(|e| io_err(&coeff_path, e))?;
    save_field(&r.trace, &out.join("trace.pgm"))?;
    save_field(&r.deconv.field, &out.join("recon.pgm"))?;

    let diag = out.join("diagnostics.csv");
    let mut w = create(&diag)?;
    let mut line = |s: String| writeln!(w, "{s}").map_err(|e| io_err(&diag, e));
    line(format!(
        "# seed={} order={} lambda={} mu={}",
        scan.seed,
        config.order.as_int(),
        config.lambda,
        config.mu
    ))?;
    line("stage,iteration,residual,energy,nu,sigma,cg_iterations,converged".into())?;
    for it in &r.core_log {
        line(format!(
            "core,{},{},{},,,,",
            it.iter,
            sci(it.residual),
            sci(it.energy)
        ))?;
    }
    line(format!(
        "core_final,{},{},{},,,,{}",
        r.core.iterations,
        sci(r.core.final_residual),
        sci(r.core.energy),
        r.core.converged
    ))?;
    for (k, s) in r.deconv.steps.iter().enumerate() {
        line(format!(
            "hqs,{k},,,{},{},{},{}",
            sci(s.nu),
            sci(s.sigma),
            s.cg_iterations,
            s.converged
        ))?;
    }
    w.flush().map_err(|e| io_err(&diag, e))?;
    if !r.core.converged {
        eprintln!(
            "warning: core stage stopped at max_iter with residual {:e}",
            r.core.final_residual
        );
    }
    println!(
        "core: {} iterations, residual {:e}",
        r.core.iterations, r.core.final_residual
    );
    Ok(())
}

fn phantom_set(list: &str) -> Result<Vec<PhantomSpec>> {
    if list == "all" {
        return Ok(phantom::builtin_suite());
    }
    list.split(',')
        .map(|n| {
            phantom::builtin(n.trim()).ok_or_else(|| Error::InvalidParameter {
                name: "phantoms",
                reason: format!("unknown built-in phantom `{n}`"),
            })
        })
        .collect()
}

fn write_search(path: &Path, name: &str, order: RegularizerOrder, s: &GridSearch) -> Result<()> {
    let mut w = create(path)?;
    let e = |e| io_err(path, e);
    writeln!(w, "# order={}", order.as_int()).map_err(e)?;
    writeln!(w, "{name},mean_psnr,mean_ssim").map_err(e)?;
    for r in &s.rows {
        writeln!(
            w,
            "{:e},{},{}",
            r.value,
            format_score(r.mean_psnr),
            format_score(r.mean_ssim)
        )
        .map_err(e)?;
    }
    w.flush().map_err(e)
}

fn cmd_gridsearch(
    config: &PipelineConfig,
    param: Param,
    grid: &str,
    phantoms: &str,
    out: &Path,
) -> Result<()> {
    let spec = GridSpec::parse(grid)?;
    let data = Dataset::build(config, &phantom_set(phantoms)?)?;
    let core = CoreSweep::new(&data, config.order)?;
    let (name, search) = match param {
        Param::Lambda => ("lambda", core.grid_search(&spec)?),
        Param::Mu => {
            let deconv = DeconvSweep::new(&data, core.traces(config.lambda)?)?;
            ("mu", deconv.grid_search(&spec)?)
        }
    };
    let path = out.join(format!("gridsearch_{name}.csv"));
    write_search(&path, name, config.order, &search)?;
    println!(
        "best {name}={} mean PSNR {} mean SSIM {} ({} points)",
        search.best.value,
        format_score(search.best.mean_psnr),
        format_score(search.best.mean_ssim),
        search.rows.len()
    );
    Ok(())
}

/// Returns whether every check passed.
fn cmd_verify(config: &PipelineConfig, out: &Path) -> Result<bool> {
    let opts = SuiteOptions {
        eigen_perturbation: config.eigen_perturbation,
        ..SuiteOptions::default()
    };
    let reports = run_suite(&opts)?;
    let mut w = create(out)?;
    write_report_csv(&reports, &mut w)?;
    w.flush().map_err(|e| io_err(out, e))?;
    println!("{:<40} {:>12} ok", "check", "max_resid");
    for r in &reports {
        println!(
            "{:<40} {:>12.3e} {}",
            r.name,
            r.max_residual(),
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", reports.len());
    for note in SUITE_NOTES {
        println!("note: {note}");
    }
    Ok(failed == 0)
}

fn cmd_metrics(recon: &Path, truth: &Path) -> Result<()> {
    let s = score(&load_field(recon)?, &load_field(truth)?)?;
    println!(
        "psnr={} ssim={}",
        format_score(s.psnr),
        format_score(s.ssim)
    );
    Ok(())
}

fn run(cli: Cli, overrides: &[String]) -> Result<ExitCode> {
    let cfg = |c: &Common| load_config(c.config.as_deref(), c.preset.as_deref(), overrides);
    match cli.command {
        Command::Simulate { common } => cmd_simulate(&cfg(&common)?, &common.out)?,
        Command::Reconstruct { common, scan } => {
            cmd_reconstruct(&cfg(&common)?, &scan, &common.out)?
        }
        Command::Gridsearch {
            common,
            param,
            grid,
            phantoms,
        } => cmd_gridsearch(&cfg(&common)?, param, &grid, &phantoms, &common.out)?,
        Command::Verify { out, config } => {
            let c = load_config(config.as_deref(), None, overrides)?;
            if !cmd_verify(&c, &out)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Metrics { recon, truth } => cmd_metrics(&recon, &truth)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter { .. } | Error::Config { .. } => 1,
        Error::Format { .. } => 3,
        e if e.is_io() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
