//! Forward simulation: core response `A = K_h * ρ` on a fine grid and the
//! signal `s_l = A(r_l) v_l` along a scan.

use std::io::{BufReader, Read, Write};

use crate::conv::LinearConvolution;
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField};
use crate::kernels::{kernel_matrix, kernel_trace, KernelParams, SymMat2};
use crate::rng::SeededGenerator;
use crate::trajectory::{read_numeric_table, ScanGeometry};

/// Kernel values on all grid offsets of an `nx × ny` grid, stored with
/// offset `(di, dj)` at `(dj + ny - 1) * (2nx - 1) + di + nx - 1`.
struct OffsetTable<T> {
    nx: usize,
    ny: usize,
    values: Vec<T>,
}

impl<T: Copy> OffsetTable<T> {
    fn build(nx: usize, ny: usize, f: impl Fn([f64; 2]) -> T) -> Self {
        let (dx, dy) = (2.0 / nx as f64, 2.0 / ny as f64);
        let w = 2 * nx - 1;
        let mut values = Vec::with_capacity(w * (2 * ny - 1));
        for dj in -(ny as isize - 1)..ny as isize {
            for di in -(nx as isize - 1)..nx as isize {
                values.push(f([di as f64 * dx, dj as f64 * dy]));
            }
        }
        Self { nx, ny, values }
    }

    fn get(&self, di: isize, dj: isize) -> T {
        let w = 2 * self.nx - 1;
        let r = (dj + self.ny as isize - 1) as usize;
        let c = (di + self.nx as isize - 1) as usize;
        self.values[r * w + c]
    }
}

/// Convolution with the trace kernel `κ_h`, sampled on grid offsets and
/// weighted by the cell area.
pub fn trace_convolution(params: &KernelParams, nx: usize, ny: usize) -> LinearConvolution {
    let area = 4.0 / (nx * ny) as f64;
    let table = OffsetTable::build(nx, ny, |y| area * kernel_trace(y, params));
    LinearConvolution::new(nx, ny, |di, dj| table.get(di, dj))
}

/// `A = K_h * ρ` by zero-padded linear convolution; `a21` is a copy of `a12`.
pub fn core_response_field(rho: &ScalarField, params: &KernelParams) -> Result<MatrixField> {
    params.validate()?;
    let (nx, ny) = (rho.nx(), rho.ny());
    let area = rho.cell_area();
    let table: OffsetTable<SymMat2> = OffsetTable::build(nx, ny, |y| kernel_matrix(y, params));
    let mut out = MatrixField::zeros(nx, ny);
    let pick: [fn(&SymMat2) -> f64; 3] = [|k| k.a11, |k| k.a12, |k| k.a22];
    for (c, sel) in pick.iter().enumerate() {
        let conv = LinearConvolution::new(nx, ny, |di, dj| area * sel(&table.get(di, dj)));
        let target = match c {
            0 => &mut out.a11,
            1 => &mut out.a12,
            _ => &mut out.a22,
        };
        conv.apply(rho.values(), target.values_mut());
    }
    out.a21 = out.a12.clone();
    Ok(out)
}

/// Bilinear evaluation of `A` at `p`.
pub fn evaluate_field(a: &MatrixField, p: [f64; 2]) -> Result<SymMat2> {
    a.evaluate(p[0], p[1])
}

/// Noise-free signal `s_l = A(r_l) v_l`.
pub fn simulate_signal(a: &MatrixField, geom: &ScanGeometry) -> Result<Vec<[f64; 2]>> {
    geom.positions()
        .iter()
        .zip(geom.velocities())
        .map(|(&r, &v)| Ok(evaluate_field(a, r)?.mul_vec(v)))
        .collect()
}

/// `ŝ_l = s_l + ε N_l` with `ε = fraction · max_l |s_l|`.
pub fn add_noise(signals: &[[f64; 2]], fraction: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::param(
            "noise.fraction",
            "must be finite and non-negative",
        ));
    }
    if fraction == 0.0 {
        return Ok(signals.to_vec());
    }
    let peak = signals.iter().map(|s| s[0].hypot(s[1])).fold(0.0, f64::max);
    let eps = fraction * peak;
    let mut rng = SeededGenerator::new(seed);
    Ok(signals
        .iter()
        .map(|s| {
            let (a, b) = rng.normal_pair();
            [s[0] + eps * a, s[1] + eps * b]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSeries {
    pub geometry: ScanGeometry,
    pub signals: Vec<[f64; 2]>,
    pub h: f64,
    pub noise_fraction: f64,
    pub seed: u64,
}

impl ScanSeries {
    pub fn new(
        geometry: ScanGeometry,
        signals: Vec<[f64; 2]>,
        h: f64,
        noise_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if signals.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} signals for {} scan samples",
                signals.len(),
                geometry.len()
            )));
        }
        Ok(Self {
            geometry,
            signals,
            h,
            noise_fraction,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# h={} fraction={} seed={}",
            self.h, self.noise_fraction, self.seed
        )
        .map_err(|e| Error::io("<csv writer>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "rx", "ry", "vx", "vy", "sx", "sy"])?;
        let g = &self.geometry;
        for l in 0..self.len() {
            let (p, v, s) = (g.positions()[l], g.velocities()[l], self.signals[l]);
            w.write_record(&[
                g.times()[l].to_string(),
                p[0].to_string(),
                p[1].to_string(),
                v[0].to_string(),
                v[1].to_string(),
                s[0].to_string(),
                s[1].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Parses the CSV layout written by [`ScanSeries::write_csv`]. Missing
    /// metadata keys default to `h=0.01`, `fraction=0`, `seed=0`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::format("csv", e.to_string()))?;
        let (mut h, mut fraction, mut seed) = (0.01, 0.0, 0u64);
        for line in text.lines() {
            let Some(meta) = line.trim_start().strip_prefix('#') else {
                continue;
            };
            for tok in meta.split_whitespace() {
                let Some((k, v)) = tok.split_once('=') else {
                    continue;
                };
                let bad = || Error::format("csv", format!("bad metadata `{tok}`"));
                match k {
                    "h" => h = v.parse().map_err(|_| bad())?,
                    "fraction" => fraction = v.parse().map_err(|_| bad())?,
                    "seed" => seed = v.parse().map_err(|_| bad())?,
                    _ => {}
                }
            }
        }
        let rows = read_numeric_table(text.as_bytes(), &["t", "rx", "ry", "vx", "vy", "sx", "sy"])?;
        let mut times = Vec::with_capacity(rows.len());
        let mut pos = Vec::with_capacity(rows.len());
        let mut vel = Vec::with_capacity(rows.len());
        let mut sig = Vec::with_capacity(rows.len());
        for r in rows {
            times.push(r[0]);
            pos.push([r[1], r[2]]);
            vel.push([r[3], r[4]]);
            sig.push([r[5], r[6]]);
        }
        if sig.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite signal value".into()));
        }
        let geometry = ScanGeometry::new(times, pos, vel)?;
        Self::new(geometry, sig, h, fraction, seed)
    }
}
