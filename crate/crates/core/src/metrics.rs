//! Image-quality scores and the ideal-trace ground truth.

use std::io::Write;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::forward::trace_convolution;
use crate::kernels::KernelParams;

/// SSIM window size and Gaussian width (in cells).
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorePair {
    pub psnr: f64,
    pub ssim: f64,
}

/// `u_GT = κ_h * ρ_GT` on the grid of `rho_gt`, resampled to `nx × ny`.
pub fn ideal_trace(
    rho_gt: &ScalarField,
    params: &KernelParams,
    nx: usize,
    ny: usize,
) -> Result<ScalarField> {
    params.validate()?;
    let conv = trace_convolution(params, rho_gt.nx(), rho_gt.ny());
    let mut out = vec![0.0; rho_gt.len()];
    conv.apply(rho_gt.values(), &mut out);
    let fine = ScalarField::from_values(rho_gt.nx(), rho_gt.ny(), out)?;
    Ok(fine.resample(nx, ny))
}

fn check_pair(x: &ScalarField, y: &ScalarField, peak: f64) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            x.nx(),
            x.ny(),
            y.nx(),
            y.ny()
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::param(
            "peak",
            format!("must be positive, got {peak}"),
        ));
    }
    Ok(())
}

/// `10 log10(peak² / MSE)`; identical images give `+∞`.
pub fn psnr(x: &ScalarField, y: &ScalarField, peak: f64) -> Result<f64> {
    check_pair(x, y, peak)?;
    let mse = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|k| (-0.5 * ((k as f64 - r) / SSIM_SIGMA).powi(2)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable weighted sums over every fully contained window.
fn windowed(values: &[f64], nx: usize, ny: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let (ox, oy) = (nx - k + 1, ny - k + 1);
    let mut rows = vec![0.0; ox * ny];
    for j in 0..ny {
        for i in 0..ox {
            rows[j * ox + i] = (0..k).map(|t| w[t] * values[j * nx + i + t]).sum();
        }
    }
    let mut out = vec![0.0; ox * oy];
    for j in 0..oy {
        for i in 0..ox {
            out[j * ox + i] = (0..k).map(|t| w[t] * rows[(j + t) * ox + i]).sum();
        }
    }
    out
}

/// Mean local SSIM over valid 11×11 Gaussian windows (σ = 1.5), with
/// `C1 = (0.01 peak)²`, `C2 = (0.03 peak)²`.
pub fn ssim(x: &ScalarField, y: &ScalarField, peak: f64) -> Result<f64> {
    check_pair(x, y, peak)?;
    let (nx, ny) = (x.nx(), x.ny());
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::param(
            "image",
            format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
        ));
    }
    let w = gaussian_window();
    let (xv, yv) = (x.values(), y.values());
    let prod = |f: &dyn Fn(f64, f64) -> f64| {
        xv.iter()
            .zip(yv)
            .map(|(a, b)| f(*a, *b))
            .collect::<Vec<_>>()
    };
    let mx = windowed(xv, nx, ny, &w);
    let my = windowed(yv, nx, ny, &w);
    let sxx = windowed(&prod(&|a, _| a * a), nx, ny, &w);
    let syy = windowed(&prod(&|_, b| b * b), nx, ny, &w);
    let sxy = windowed(&prod(&|a, b| a * b), nx, ny, &w);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut total = 0.0;
    for k in 0..mx.len() {
        let (a, b) = (mx[k], my[k]);
        let vx = sxx[k] - a * a;
        let vy = syy[k] - b * b;
        let cxy = sxy[k] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cxy + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Scores `recon` against `truth` with `peak = max − min` of the truth
/// (1 for a constant truth).
pub fn score(recon: &ScalarField, truth: &ScalarField) -> Result<ScorePair> {
    let (lo, hi) = truth.min_max();
    let peak = if hi > lo { hi - lo } else { 1.0 };
    Ok(ScorePair {
        psnr: psnr(recon, truth, peak)?,
        ssim: ssim(recon, truth, peak)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub phantom: String,
    pub stage: String,
    pub order: u32,
    pub scores: ScorePair,
}

/// Writes `phantom,stage,order,psnr,ssim`.
pub fn write_scores_csv<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phantom", "stage", "order", "psnr", "ssim"])?;
    for r in rows {
        w.write_record([
            r.phantom.clone(),
            r.stage.clone(),
            r.order.to_string(),
            format_score(r.scores.psnr),
            format_score(r.scores.ssim),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scores writer>", e))?;
    Ok(())
}

pub fn format_score(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::core_response_field;
    use crate::phantom::builtin;
    use crate::rng::SeededGenerator;

    fn noise(nx: usize, ny: usize, seed: u64, amp: f64) -> ScalarField {
        let mut g = SeededGenerator::new(seed);
        ScalarField::from_values(nx, ny, (0..nx * ny).map(|_| amp * g.normal()).collect()).unwrap()
    }

    fn add(a: &ScalarField, b: &ScalarField) -> ScalarField {
        let v = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x + y)
            .collect();
        ScalarField::from_values(a.nx(), a.ny(), v).unwrap()
    }

    #[test]
    fn psnr_basics() {
        let x = builtin("disk").unwrap().rasterize(32, 32).unwrap();
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-10);
        let (x2, y2) = (x.map(|v| 2.0 * v), y.map(|v| 2.0 * v));
        assert!((psnr(&x2, &y2, 2.0).unwrap() - 20.0).abs() < 1e-10);
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        assert!(psnr(&x, &y, 0.0).is_err());
        assert!(psnr(&x, &ScalarField::zeros(16, 32), 1.0).is_err());
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let x = builtin("bar").unwrap().rasterize(40, 40).unwrap();
        let base = noise(40, 40, 3, 1.0);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.3] {
            let y = add(&x, &base.map(|v| v * amp));
            let p = psnr(&x, &y, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    /// Direct windowed sums with explicit 2D weights.
    fn ssim_oracle(x: &ScalarField, y: &ScalarField, peak: f64) -> f64 {
        let (nx, ny) = (x.nx(), x.ny());
        let k = SSIM_WINDOW as isize;
        let r = k / 2;
        let c1 = (0.01 * peak).powi(2);
        let c2 = (0.03 * peak).powi(2);
        let mut wts = vec![0.0; (k * k) as usize];
        for dj in 0..k {
            for di in 0..k {
                let d2 = ((di - r).pow(2) + (dj - r).pow(2)) as f64;
                wts[(dj * k + di) as usize] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let s: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|w| *w /= s);
        let mut total = 0.0;
        let mut count = 0;
        for j0 in 0..=(ny - SSIM_WINDOW) {
            for i0 in 0..=(nx - SSIM_WINDOW) {
                let (mut mx, mut my) = (0.0, 0.0);
                for dj in 0..SSIM_WINDOW {
                    for di in 0..SSIM_WINDOW {
                        let w = wts[dj * SSIM_WINDOW + di];
                        mx += w * x.get(i0 + di, j0 + dj);
                        my += w * y.get(i0 + di, j0 + dj);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for dj in 0..SSIM_WINDOW {
                    for di in 0..SSIM_WINDOW {
                        let w = wts[dj * SSIM_WINDOW + di];
                        let (a, b) = (x.get(i0 + di, j0 + dj) - mx, y.get(i0 + di, j0 + dj) - my);
                        vx += w * a * a;
                        vy += w * b * b;
                        cxy += w * a * b;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_properties() {
        let x = builtin("annulus").unwrap().rasterize(30, 26).unwrap();
        assert!((ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let y = add(&x, &noise(30, 26, 5, 0.1));
        let s = ssim(&x, &y, 1.0).unwrap();
        assert!((s - ssim_oracle(&x, &y, 1.0)).abs() < 1e-10);
        assert!((s - ssim(&y, &x, 1.0).unwrap()).abs() < 1e-14);
        assert!(s < 1.0);
        // Checkerboard: every window has (nearly) zero local mean.
        let mut z = ScalarField::zeros(24, 24);
        for j in 0..24 {
            for i in 0..24 {
                z.set(i, j, if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
            }
        }
        assert!(ssim(&z, &z.map(|v| -v), 1.0).unwrap() < -0.9);
        assert!(ssim(
            &ScalarField::zeros(10, 20),
            &ScalarField::zeros(10, 20),
            1.0
        )
        .is_err());
    }

    #[test]
    fn ideal_trace_matches_forward() {
        let p = KernelParams::new(0.01).unwrap();
        let rho = builtin("k_wide").unwrap().rasterize(64, 64).unwrap();
        let t = ideal_trace(&rho, &p, 20, 20).unwrap();
        let a = core_response_field(&rho, &p)
            .unwrap()
            .trace()
            .resample(20, 20);
        for (u, v) in t.values().iter().zip(a.values()) {
            assert!((u - v).abs() < 1e-10 * v.abs().max(1.0));
        }
        let zero = ideal_trace(&ScalarField::zeros(32, 32), &p, 16, 16).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let doubled = ideal_trace(&rho.map(|v| 2.0 * v), &p, 20, 20).unwrap();
        for (u, v) in doubled.values().iter().zip(t.values()) {
            assert!((u - 2.0 * v).abs() < 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn scores_csv() {
        let rows = vec![ScoreRow {
            phantom: "disk".into(),
            stage: "core".into(),
            order: 2,
            scores: ScorePair {
                psnr: f64::INFINITY,
                ssim: 1.0,
            },
        }];
        let mut buf = Vec::new();
        write_scores_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "phantom,stage,order,psnr,ssim\ndisk,core,2,inf,1.000000\n"
        );
    }
}
