//! 16-bit binary PGM images with a `.range` sidecar holding the physical
//! value range.
//!
//! Samples are big-endian `u16` linearly mapped from `[min, max]` to
//! `[0, 65535]`. The first image row is the top of the domain (`y = 1`), so
//! fields display upright in ordinary image viewers.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::ScalarField;

pub const MAXVAL: u16 = 65535;

#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, top row first.
    pub samples: Vec<u16>,
}

fn skip_ws_and_comments(data: &[u8], mut pos: usize) -> usize {
    while pos < data.len() {
        match data[pos] {
            b'#' => {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_ws_and_comments(data, *pos);
    let start = *pos;
    while *pos < data.len() && data[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("pgm", format!("missing {what}")));
    }
    let text = std::str::from_utf8(&data[start..*pos]).expect("ascii digits");
    text.parse::<usize>()
        .map_err(|_| Error::format("pgm", format!("{what} out of range")))
}

impl PgmImage {
    pub fn decode(data: &[u8]) -> Result<Self> {
        if data.len() < 2 || &data[..2] != b"P5" {
            return Err(Error::format("pgm", "missing P5 magic"));
        }
        let mut pos = 2;
        if pos >= data.len() || !(data[pos].is_ascii_whitespace() || data[pos] == b'#') {
            return Err(Error::format("pgm", "magic must be followed by whitespace"));
        }
        let width = header_number(data, &mut pos, "width")?;
        let height = header_number(data, &mut pos, "height")?;
        let maxval = header_number(data, &mut pos, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::format("pgm", "zero image dimension"));
        }
        if maxval == 0 || maxval > usize::from(MAXVAL) {
            return Err(Error::format(
                "pgm",
                format!("maxval {maxval} outside 1..=65535"),
            ));
        }
        if pos >= data.len() || !data[pos].is_ascii_whitespace() {
            return Err(Error::format(
                "pgm",
                "header must end with one whitespace byte",
            ));
        }
        pos += 1;
        let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(bytes_per_sample))
            .ok_or_else(|| Error::format("pgm", "image dimensions overflow"))?;
        let body = &data[pos..];
        if body.len() < expected {
            return Err(Error::format(
                "pgm",
                format!("truncated pixel data: {} of {expected} bytes", body.len()),
            ));
        }
        let samples: Vec<u16> = if bytes_per_sample == 2 {
            body[..expected]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            body[..expected].iter().map(|&b| u16::from(b)).collect()
        };
        let maxval = maxval as u16;
        if samples.iter().any(|&s| s > maxval) {
            return Err(Error::format("pgm", "sample exceeds maxval"));
        }
        Ok(Self {
            width,
            height,
            maxval,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            out.reserve(2 * self.samples.len());
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }
}

/// Physical value range stored next to an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn parse(text: &str) -> Result<Self> {
        let mut it = text.split_ascii_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            let tok = it
                .next()
                .ok_or_else(|| Error::format("range", format!("missing {what}")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format("range", format!("bad {what} `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::format("range", format!("{what} is not finite")));
            }
            Ok(v)
        };
        let min = next("min")?;
        let max = next("max")?;
        if it.next().is_some() {
            return Err(Error::format("range", "trailing tokens"));
        }
        if min > max {
            return Err(Error::format("range", "min exceeds max"));
        }
        Ok(Self { min, max })
    }

    pub fn to_text(&self) -> String {
        format!("{} {}\n", self.min, self.max)
    }
}

/// Quantizes a field to 16 bits over its own value range.
pub fn field_to_pgm(field: &ScalarField) -> (PgmImage, ValueRange) {
    let (min, max) = field.min_max();
    let span = max - min;
    let (nx, ny) = (field.nx(), field.ny());
    let mut samples = Vec::with_capacity(nx * ny);
    for j in (0..ny).rev() {
        for i in 0..nx {
            let q = if span > 0.0 {
                ((field.get(i, j) - min) / span * f64::from(MAXVAL)).round()
            } else {
                0.0
            };
            samples.push(q.clamp(0.0, f64::from(MAXVAL)) as u16);
        }
    }
    (
        PgmImage {
            width: nx,
            height: ny,
            maxval: MAXVAL,
            samples,
        },
        ValueRange { min, max },
    )
}

pub fn pgm_to_field(img: &PgmImage, range: ValueRange) -> Result<ScalarField> {
    let (nx, ny) = (img.width, img.height);
    if img.samples.len() != nx * ny {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for a {nx}x{ny} image",
            img.samples.len()
        )));
    }
    let span = range.max - range.min;
    let scale = f64::from(img.maxval);
    let mut values = vec![0.0; nx * ny];
    for (row, chunk) in img.samples.chunks_exact(nx).enumerate() {
        let j = ny - 1 - row;
        for (i, &q) in chunk.iter().enumerate() {
            values[j * nx + i] = range.min + f64::from(q) / scale * span;
        }
    }
    ScalarField::from_values(nx, ny, values)
}

pub fn range_path(image: &Path) -> PathBuf {
    image.with_extension("range")
}

pub fn save_field(field: &ScalarField, path: &Path) -> Result<()> {
    let (img, range) = field_to_pgm(field);
    fs::write(path, img.encode()).map_err(|e| Error::io(path, e))?;
    let rp = range_path(path);
    fs::write(&rp, range.to_text()).map_err(|e| Error::io(rp, e))?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = PgmImage::decode(&data)?;
    let rp = range_path(path);
    let text = fs::read_to_string(&rp).map_err(|e| Error::io(rp, e))?;
    pgm_to_field(&img, ValueRange::parse(&text)?)
}
