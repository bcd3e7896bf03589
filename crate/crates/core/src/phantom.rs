//! Binary ground-truth particle distributions.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::pgm;

/// Shapes must stay inside `[-GUARD, GUARD]²` so the support has a margin
/// to the boundary of Ω.
pub const GUARD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    /// Rectangle rotated by `angle` radians about its center.
    Bar {
        center: [f64; 2],
        half_length: f64,
        half_width: f64,
        angle: f64,
    },
    Annulus {
        center: [f64; 2],
        inner: f64,
        outer: f64,
    },
    /// Union of thick line segments.
    Strokes {
        segments: Vec<[[f64; 2]; 2]>,
        width: f64,
    },
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub name: String,
    pub shape: Shape,
    pub intensity: f64,
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

impl Shape {
    /// The letter "k" drawn as a stem and two diagonal arms meeting at
    /// `(joint_x, joint_y)`.
    pub fn letter_k(joint_x: f64, joint_y: f64, width: f64) -> Self {
        Shape::Strokes {
            segments: vec![
                [[-0.35, -0.6], [-0.35, 0.6]],
                [[joint_x, joint_y], [0.35, 0.45]],
                [[joint_x, joint_y], [0.35, -0.6]],
            ],
            width,
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Disk { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius,
            Shape::Bar {
                center,
                half_length,
                half_width,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= *half_length && v.abs() <= *half_width
            }
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = (p[0] - center[0]).hypot(p[1] - center[1]);
                r >= *inner && r <= *outer
            }
            Shape::Strokes { segments, width } => segments
                .iter()
                .any(|s| dist_to_segment(p, s[0], s[1]) <= 0.5 * width),
            Shape::FromFile(_) => false,
        }
    }

    /// Axis-aligned bounding box `[xmin, xmax, ymin, ymax]`.
    fn bounds(&self) -> Option<[f64; 4]> {
        let b = match self {
            Shape::Disk { center, radius } => [
                center[0] - radius,
                center[0] + radius,
                center[1] - radius,
                center[1] + radius,
            ],
            Shape::Annulus { center, outer, .. } => [
                center[0] - outer,
                center[0] + outer,
                center[1] - outer,
                center[1] + outer,
            ],
            Shape::Bar {
                center,
                half_length,
                half_width,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let ex = half_length * c.abs() + half_width * s.abs();
                let ey = half_length * s.abs() + half_width * c.abs();
                [
                    center[0] - ex,
                    center[0] + ex,
                    center[1] - ey,
                    center[1] + ey,
                ]
            }
            Shape::Strokes { segments, width } => {
                let r = 0.5 * width;
                segments.iter().flatten().fold(
                    [
                        f64::INFINITY,
                        f64::NEG_INFINITY,
                        f64::INFINITY,
                        f64::NEG_INFINITY,
                    ],
                    |b, p| {
                        [
                            b[0].min(p[0] - r),
                            b[1].max(p[0] + r),
                            b[2].min(p[1] - r),
                            b[3].max(p[1] + r),
                        ]
                    },
                )
            }
            Shape::FromFile(_) => return None,
        };
        Some(b)
    }

    fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("must be a finite non-negative number, got {v}"),
                ))
            }
        };
        match self {
            Shape::Disk { radius, .. } => nonneg("radius", *radius)?,
            Shape::Bar {
                half_length,
                half_width,
                angle,
                ..
            } => {
                nonneg("half_length", *half_length)?;
                nonneg("half_width", *half_width)?;
                if !angle.is_finite() {
                    return Err(Error::param("angle", "must be finite"));
                }
            }
            Shape::Annulus { inner, outer, .. } => {
                nonneg("inner", *inner)?;
                nonneg("outer", *outer)?;
                if inner > outer {
                    return Err(Error::param("inner", "inner radius exceeds outer radius"));
                }
            }
            Shape::Strokes { segments, width } => {
                nonneg("width", *width)?;
                if segments.is_empty() {
                    return Err(Error::param("segments", "at least one stroke is required"));
                }
            }
            Shape::FromFile(_) => {}
        }
        if let Some(b) = self.bounds() {
            if b.iter().any(|v| !v.is_finite() || v.abs() > GUARD) {
                return Err(Error::param(
                    "geometry",
                    format!("shape extends beyond [-{GUARD}, {GUARD}]^2"),
                ));
            }
        }
        Ok(())
    }
}

impl PhantomSpec {
    pub fn new(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            shape,
            intensity: 1.0,
        }
    }

    /// Rasterizes onto an `nx × ny` grid: a cell takes the intensity when its
    /// center lies inside the shape, zero otherwise. File phantoms are
    /// loaded and resampled.
    pub fn rasterize(&self, nx: usize, ny: usize) -> Result<ScalarField> {
        if nx < 8 || ny < 8 {
            return Err(Error::param(
                "grid",
                format!("phantom grid {nx}x{ny} is below 8x8"),
            ));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(Error::param("intensity", "must lie in (0, 1]"));
        }
        self.shape.validate()?;
        if let Shape::FromFile(path) = &self.shape {
            let loaded = pgm::load_field(path)?;
            return Ok(loaded.resample(nx, ny));
        }
        let v = self.intensity;
        Ok(ScalarField::from_fn(nx, ny, |x, y| {
            if self.shape.contains([x, y]) {
                v
            } else {
                0.0
            }
        }))
    }
}

/// Built-in evaluation suite: disk, bar, annulus and two "k" variants.
pub fn builtin_suite() -> Vec<PhantomSpec> {
    vec![
        PhantomSpec::new(
            "disk",
            Shape::Disk {
                center: [0.1, -0.05],
                radius: 0.45,
            },
        ),
        PhantomSpec::new(
            "bar",
            Shape::Bar {
                center: [0.0, 0.05],
                half_length: 0.6,
                half_width: 0.12,
                angle: 0.5,
            },
        ),
        PhantomSpec::new(
            "annulus",
            Shape::Annulus {
                center: [-0.05, 0.0],
                inner: 0.3,
                outer: 0.55,
            },
        ),
        PhantomSpec::new("k_wide", Shape::letter_k(-0.35, -0.05, 0.2)),
        PhantomSpec::new("k_narrow", Shape::letter_k(-0.2, 0.0, 0.14)),
    ]
}

pub fn builtin(name: &str) -> Option<PhantomSpec> {
    builtin_suite().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_radius_disk_is_empty() {
        let p = PhantomSpec::new(
            "d",
            Shape::Disk {
                center: [0.0, 0.0],
                radius: 0.0,
            },
        );
        let f = p.rasterize(32, 32).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_geometry_rejected() {
        let p = PhantomSpec::new(
            "d",
            Shape::Disk {
                center: [0.0, 0.0],
                radius: 1e9,
            },
        );
        assert!(p.rasterize(32, 32).is_err());
        let p = PhantomSpec::new(
            "d",
            Shape::Disk {
                center: [0.7, 0.0],
                radius: 0.3,
            },
        );
        assert!(p.rasterize(32, 32).is_err());
    }

    #[test]
    fn disk_area_matches_counting_oracle() {
        let p = PhantomSpec::new(
            "d",
            Shape::Disk {
                center: [0.0, 0.0],
                radius: 0.5,
            },
        );
        let f = p.rasterize(512, 512).unwrap();
        let frac = f.sum() / f.len() as f64;
        let expect = std::f64::consts::PI * 0.25 / 4.0;
        assert!((frac - expect).abs() / expect < 0.01, "{frac} vs {expect}");
    }

    #[test]
    fn small_grid_rejected() {
        let p = builtin("disk").unwrap();
        assert!(p.rasterize(7, 64).is_err());
    }

    #[test]
    fn suite_is_binary_with_margin() {
        let suite = builtin_suite();
        assert!(suite.len() >= 5);
        for p in &suite {
            for n in [64, 100, 512] {
                let f = p.rasterize(n, n).unwrap();
                assert!(f.values().iter().all(|&v| v == 0.0 || v == p.intensity));
                assert!(f.sum() > 0.0, "{} is empty", p.name);
                for k in 0..n {
                    for (i, j) in [(k, 0), (k, n - 1), (0, k), (n - 1, k)] {
                        assert_eq!(f.get(i, j), 0.0, "{} touches the boundary", p.name);
                    }
                }
            }
        }
    }

    #[test]
    fn intensity_and_annulus_validation() {
        let mut p = builtin("annulus").unwrap();
        p.intensity = 0.0;
        assert!(p.rasterize(16, 16).is_err());
        let bad = PhantomSpec::new(
            "a",
            Shape::Annulus {
                center: [0.0, 0.0],
                inner: 0.5,
                outer: 0.2,
            },
        );
        assert!(bad.rasterize(16, 16).is_err());
    }

    #[test]
    fn from_file_phantom() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pgm");
        let src = builtin("bar").unwrap().rasterize(64, 64).unwrap();
        pgm::save_field(&src, &path).unwrap();
        let p = PhantomSpec::new("file", Shape::FromFile(path));
        assert_eq!(p.rasterize(64, 64).unwrap(), src);
        assert_eq!(p.rasterize(32, 32).unwrap().nx(), 32);
    }
}
