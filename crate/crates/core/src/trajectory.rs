//! Lissajous field-free-point trajectories and their time sampling.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LissajousSpec {
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase_x: f64,
    pub phase_y: f64,
}

impl Default for LissajousSpec {
    /// The 16:17 sequence with both phases at π/2.
    fn default() -> Self {
        Self {
            freq_x: 16.0,
            freq_y: 17.0,
            phase_x: FRAC_PI_2,
            phase_y: FRAC_PI_2,
        }
    }
}

impl LissajousSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq_x > 0.0 && self.freq_y > 0.0) {
            return Err(Error::param("freq", "frequencies must be positive"));
        }
        if self.freq_x == self.freq_y {
            return Err(Error::param(
                "freq",
                "equal frequencies trace a line, not a space-filling curve",
            ));
        }
        if !(self.phase_x.is_finite() && self.phase_y.is_finite()) {
            return Err(Error::param("phase", "phases must be finite"));
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        [
            (TAU * self.freq_x * t + self.phase_x).sin(),
            (TAU * self.freq_y * t + self.phase_y).sin(),
        ]
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        [
            TAU * self.freq_x * (TAU * self.freq_x * t + self.phase_x).cos(),
            TAU * self.freq_y * (TAU * self.freq_y * t + self.phase_y).cos(),
        ]
    }
}

/// Equidistant half-open schedule `t_l = l / L`, `l = 0..L`.
pub fn sample_schedule(samples: usize) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::param("L", "at least one sample is required"));
    }
    Ok((0..samples).map(|l| l as f64 / samples as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    times: Vec<f64>,
    positions: Vec<[f64; 2]>,
    velocities: Vec<[f64; 2]>,
}

impl ScanGeometry {
    pub fn new(
        times: Vec<f64>,
        positions: Vec<[f64; 2]>,
        velocities: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if times.len() != positions.len() || times.len() != velocities.len() {
            return Err(Error::DimensionMismatch(format!(
                "scan arrays differ in length: {} times, {} positions, {} velocities",
                times.len(),
                positions.len(),
                velocities.len()
            )));
        }
        if let Some(p) = positions
            .iter()
            .find(|p| !(p[0].abs() <= 1.0 && p[1].abs() <= 1.0))
        {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
        if times
            .iter()
            .chain(velocities.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical("non-finite scan value".into()));
        }
        Ok(Self {
            times,
            positions,
            velocities,
        })
    }

    /// Samples `spec` at `samples` equidistant times.
    pub fn lissajous(spec: &LissajousSpec, samples: usize) -> Result<Self> {
        spec.validate()?;
        let times = sample_schedule(samples)?;
        let positions = times
            .iter()
            .map(|&t| {
                let p = spec.position(t);
                // sin can exceed 1 by an ulp after argument reduction.
                [p[0].clamp(-1.0, 1.0), p[1].clamp(-1.0, 1.0)]
            })
            .collect();
        let velocities = times.iter().map(|&t| spec.velocity(t)).collect();
        Self::new(times, positions, velocities)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.velocities
    }

    /// Rotates positions and velocities by `quarter_turns · 90°` about the
    /// origin. Quarter turns are exact coordinate swaps.
    pub fn rotate(&self, quarter_turns: u32) -> Result<Self> {
        if quarter_turns > 3 {
            return Err(Error::param("quarter_turns", "must be 0, 1, 2 or 3"));
        }
        let rot = |v: [f64; 2]| match quarter_turns {
            0 => v,
            1 => [-v[1], v[0]],
            2 => [-v[0], -v[1]],
            _ => [v[1], -v[0]],
        };
        Ok(Self {
            times: self.times.clone(),
            positions: self.positions.iter().map(|&p| rot(p)).collect(),
            velocities: self.velocities.iter().map(|&v| rot(v)).collect(),
        })
    }

    /// Concatenation `a` then `b`.
    pub fn merge(a: &ScanGeometry, b: &ScanGeometry) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::param("scan", "cannot merge an empty scan"));
        }
        let cat = |x: &[[f64; 2]], y: &[[f64; 2]]| x.iter().chain(y).copied().collect();
        Ok(Self {
            times: a.times.iter().chain(&b.times).copied().collect(),
            positions: cat(&a.positions, &b.positions),
            velocities: cat(&a.velocities, &b.velocities),
        })
    }

    /// Number of distinct `n × n` grid cells visited by the sample positions.
    pub fn occupied_cells(&self, n: usize) -> usize {
        let mut seen = vec![false; n * n];
        let idx = |c: f64| (((c + 1.0) * 0.5 * n as f64).floor() as usize).min(n - 1);
        for p in &self.positions {
            seen[idx(p[1]) * n + idx(p[0])] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "rx", "ry", "vx", "vy"])?;
        for l in 0..self.len() {
            let (p, v) = (self.positions[l], self.velocities[l]);
            w.write_record(&[
                self.times[l].to_string(),
                p[0].to_string(),
                p[1].to_string(),
                v[0].to_string(),
                v[1].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_numeric_table(input, &["t", "rx", "ry", "vx", "vy"])?;
        let mut times = Vec::with_capacity(rows.len());
        let mut positions = Vec::with_capacity(rows.len());
        let mut velocities = Vec::with_capacity(rows.len());
        for r in rows {
            times.push(r[0]);
            positions.push([r[1], r[2]]);
            velocities.push([r[3], r[4]]);
        }
        Self::new(times, positions, velocities)
    }
}

/// Reads a headed CSV table of floats; lines starting with `#` are skipped.
pub(crate) fn read_numeric_table<R: Read>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input);
    let found = rdr.headers()?.clone();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a.trim() != *b) {
        return Err(Error::format(
            "csv",
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::format(
                "csv",
                format!("row {} has {} fields", line + 1, rec.len()),
            ));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format("csv", format!("row {}: `{s}`: {e}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_curve_endpoints() {
        let s = LissajousSpec::default();
        let p = s.position(0.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
        let v = s.velocity(0.0);
        assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        let q = s.position(0.25);
        assert!((q[0] - 1.0).abs() < 1e-12 && q[1].abs() < 1e-12);
    }

    #[test]
    fn schedule() {
        assert_eq!(sample_schedule(4).unwrap(), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(sample_schedule(1).unwrap(), vec![0.0]);
        let t = sample_schedule(1632).unwrap();
        assert_eq!(t.len(), 1632);
        assert!((t[1] - 1.0 / 1632.0).abs() < 1e-18);
        assert!(sample_schedule(0).is_err());
    }

    #[test]
    fn velocity_is_derivative() {
        let s = LissajousSpec::default();
        let step = 1e-6;
        for k in 0..50 {
            let t = k as f64 / 53.0;
            let (a, b) = (s.position(t + step), s.position(t - step));
            let v = s.velocity(t);
            for c in 0..2 {
                let fd = (a[c] - b[c]) / (2.0 * step);
                assert!((fd - v[c]).abs() < 1e-4 * v[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn rotation() {
        let g = ScanGeometry::new(vec![0.0], vec![[1.0, 0.0]], vec![[0.5, 2.0]]).unwrap();
        assert_eq!(g.rotate(0).unwrap(), g);
        let r = g.rotate(1).unwrap();
        assert_eq!(r.positions()[0], [0.0, 1.0]);
        assert_eq!(r.velocities()[0], [-2.0, 0.5]);
        assert!(g.rotate(4).is_err());
        let full = g.rotate(2).unwrap().rotate(2).unwrap();
        assert_eq!(full, g);
    }

    #[test]
    fn confined_and_speed_preserving() {
        let g = ScanGeometry::lissajous(&LissajousSpec::default(), 1632).unwrap();
        let r = g.rotate(1).unwrap();
        for l in 0..g.len() {
            let p = g.positions()[l];
            assert!(p[0].abs() <= 1.0 && p[1].abs() <= 1.0);
            let (v, w) = (g.velocities()[l], r.velocities()[l]);
            assert_eq!(v[0].hypot(v[1]), w[0].hypot(w[1]));
        }
    }

    #[test]
    fn merging_densifies() {
        let g = ScanGeometry::lissajous(&LissajousSpec::default(), 1632).unwrap();
        let m = ScanGeometry::merge(&g, &g.rotate(1).unwrap()).unwrap();
        assert_eq!(m.len(), 3264);
        assert_eq!(m.positions()[0], g.positions()[0]);
        // Cell-occupancy at 19×19, computed independently by a set.
        let count = |s: &ScanGeometry| {
            let mut set = std::collections::BTreeSet::new();
            for p in s.positions() {
                let i = (((p[0] + 1.0) / 2.0 * 19.0) as usize).min(18);
                let j = (((p[1] + 1.0) / 2.0 * 19.0) as usize).min(18);
                set.insert((i, j));
            }
            set.len()
        };
        assert_eq!(count(&m), m.occupied_cells(19));
        assert!(count(&m) > count(&g));
        assert!(count(&m) > count(&g.rotate(1).unwrap()));
        let empty = ScanGeometry::new(vec![], vec![], vec![]).unwrap();
        assert!(ScanGeometry::merge(&g, &empty).is_err());
    }

    #[test]
    fn rejects_invalid_geometry() {
        assert!(ScanGeometry::new(vec![0.0], vec![[1.5, 0.0]], vec![[0.0, 0.0]]).is_err());
        assert!(ScanGeometry::new(vec![0.0, 1.0], vec![[0.0, 0.0]], vec![[0.0, 0.0]]).is_err());
        let mut s = LissajousSpec::default();
        s.freq_y = 16.0;
        assert!(ScanGeometry::lissajous(&s, 10).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = ScanGeometry::lissajous(&LissajousSpec::default(), 64).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,rx,ry,vx,vy\n"));
        assert_eq!(ScanGeometry::read_csv(buf.as_slice()).unwrap(), g);
        assert!(ScanGeometry::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(ScanGeometry::read_csv("t,rx,ry,vx,vy\n0,x,0,0,0\n".as_bytes()).is_err());
    }
}
