//! Procedural reference/target image pairs.
//!
//! The target is the reference scene seen through a smooth deformation, with
//! one intensity change and optionally a small structure that the reference
//! lacks.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::metrics::ssim;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    Ellipses,
    TrianglesToStars,
    BrainLike,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipses" => Ok(Self::Ellipses),
            "triangles-to-stars" => Ok(Self::TrianglesToStars),
            "brain-like" => Ok(Self::BrainLike),
            _ => Err(Error::Param(format!(
                "unknown phantom {s:?} (expected ellipses, triangles-to-stars or brain-like)"
            ))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ellipses => "ellipses",
            Self::TrianglesToStars => "triangles-to-stars",
            Self::BrainLike => "brain-like",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomOptions {
    pub deform: bool,
    pub detail: bool,
}

impl PhantomOptions {
    pub fn for_kind(kind: PhantomKind) -> Self {
        Self {
            deform: true,
            detail: kind == PhantomKind::BrainLike,
        }
    }
}

/// Pixel rectangle `rows x cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub reference: Image,
    pub target: Image,
    /// Bounding box of the added structure, when present.
    pub detail: Option<Region>,
}

pub const MIN_PHANTOM_SIZE: usize = 32;
const SUPERSAMPLE: usize = 3;

#[derive(Clone, Debug)]
enum Outline {
    Ellipse { a: f64, b: f64 },
    /// Regular polygon with the given circumradius.
    Polygon { sides: usize, r: f64 },
    Star { points: usize, outer: f64, inner: f64 },
}

#[derive(Clone, Debug)]
struct Shape {
    center: (f64, f64),
    rot: f64,
    outline: Outline,
    value: f64,
}

impl Shape {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        let (s, c) = self.rot.sin_cos();
        let (x, y) = (c * dx + s * dy, -s * dx + c * dy);
        match self.outline {
            Outline::Ellipse { a, b } => (x / a).powi(2) + (y / b).powi(2) <= 1.0,
            Outline::Polygon { sides, r } => {
                let sector = TAU / sides as f64;
                let phi = y.atan2(x).rem_euclid(sector) - sector / 2.0;
                x.hypot(y) <= r * (PI / sides as f64).cos() / phi.cos()
            }
            Outline::Star { points, outer, inner } => {
                let sector = TAU / points as f64;
                let t = (y.atan2(x).rem_euclid(sector) / sector * 2.0 - 1.0).abs();
                // t = 0 at a tip, 1 halfway between tips
                x.hypot(y) <= outer + (inner - outer) * t
            }
        }
    }
}

/// Value of the scene at normalized coordinates in `(-1/2, 1/2)^2`; later
/// shapes paint over earlier ones.
fn scene_value(scene: &[Shape], p: (f64, f64)) -> f64 {
    scene.iter().rev().find(|s| s.contains(p)).map_or(0.0, |s| s.value)
}

struct Deformation {
    amp: f64,
    freq: (f64, f64),
    phase: (f64, f64),
}

impl Deformation {
    /// Displacement in normalized units, vanishing at the image border.
    fn at(&self, p: (f64, f64)) -> (f64, f64) {
        let bump = ((p.0 + 0.5) * PI).sin() * ((p.1 + 0.5) * PI).sin();
        (
            self.amp * bump * (TAU * self.freq.0 * p.1 + self.phase.0).cos(),
            self.amp * bump * (TAU * self.freq.1 * p.0 + self.phase.1).sin(),
        )
    }
}

fn render(n: usize, scene: &[Shape], deformation: Option<&Deformation>) -> Image {
    let h = 1.0 / n as f64;
    Image::from_fn(n, n, |(i, j)| {
        let mut acc = 0.0;
        for a in 0..SUPERSAMPLE {
            for b in 0..SUPERSAMPLE {
                let p = (
                    (i as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64) * h - 0.5,
                    (j as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64) * h - 0.5,
                );
                let q = deformation.map_or(p, |d| {
                    let u = d.at(p);
                    (p.0 - u.0, p.1 - u.1)
                });
                acc += scene_value(scene, q);
            }
        }
        acc / (SUPERSAMPLE * SUPERSAMPLE) as f64
    })
}

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.random_range(-scale..scale)
}

fn ellipse(center: (f64, f64), a: f64, b: f64, rot: f64, value: f64) -> Shape {
    Shape {
        center,
        rot,
        outline: Outline::Ellipse { a, b },
        value,
    }
}

/// Reference scene and the index of the shape whose intensity changes.
fn base_scene(kind: PhantomKind, rng: &mut ChaCha8Rng) -> (Vec<Shape>, usize) {
    match kind {
        PhantomKind::Ellipses => {
            let mut s = vec![ellipse((0.0, 0.0), 0.42, 0.33, 0.0, 0.25)];
            for (c, a, b, v) in [
                ((-0.15, -0.12), 0.12, 0.07, 0.8),
                ((0.12, 0.1), 0.09, 0.14, 0.6),
                ((0.18, -0.16), 0.05, 0.05, 1.0),
                ((-0.12, 0.17), 0.07, 0.04, 0.45),
            ] {
                let c = (c.0 + jitter(rng, 0.02), c.1 + jitter(rng, 0.02));
                s.push(ellipse(c, a, b, jitter(rng, 0.5), v));
            }
            // fine structure near the resolution limit
            let row = 0.27 + jitter(rng, 0.01);
            for k in -1..=1 {
                s.push(ellipse((row, 0.06 * k as f64), 0.022, 0.022, 0.0, 0.9));
            }
            s.push(ellipse((0.0, -0.02), 0.16, 0.016, 0.3 + jitter(rng, 0.1), 0.65));
            (s, 2)
        }
        PhantomKind::TrianglesToStars => {
            let mut s = vec![ellipse((0.0, 0.0), 0.44, 0.44, 0.0, 0.15)];
            for (c, r, v) in [((-0.17, -0.17), 0.12, 0.9), ((0.17, -0.15), 0.1, 0.7), ((0.02, 0.18), 0.13, 0.55)] {
                s.push(Shape {
                    center: (c.0 + jitter(rng, 0.02), c.1 + jitter(rng, 0.02)),
                    rot: jitter(rng, PI),
                    outline: Outline::Polygon { sides: 3, r },
                    value: v,
                });
            }
            (s, 3)
        }
        PhantomKind::BrainLike => {
            let mut s = vec![
                ellipse((0.0, 0.0), 0.44, 0.36, 0.0, 0.95),
                ellipse((0.0, 0.0), 0.40, 0.32, 0.0, 0.45),
            ];
            for (c, a, b, v) in [
                ((-0.2, -0.14), 0.1, 0.06, 0.6),
                ((-0.2, 0.14), 0.1, 0.06, 0.6),
                ((0.18, 0.0), 0.09, 0.18, 0.6),
                ((-0.02, -0.06), 0.11, 0.03, 0.1),
                ((-0.02, 0.06), 0.11, 0.03, 0.1),
            ] {
                let c = (c.0 + jitter(rng, 0.015), c.1 + jitter(rng, 0.015));
                s.push(ellipse(c, a, b, jitter(rng, 0.3), v));
            }
            (s, 4)
        }
    }
}

/// Generates a deterministic reference/target pair of size `n x n`.
pub fn gen_phantom(kind: PhantomKind, n: usize, seed: u64, options: &PhantomOptions) -> Result<Phantom> {
    if n < MIN_PHANTOM_SIZE {
        return Err(Error::TooSmall(format!("phantoms need at least {MIN_PHANTOM_SIZE} pixels, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scene, changed) = base_scene(kind, &mut rng);
    let deformation = Deformation {
        amp: 0.045 + jitter(&mut rng, 0.005),
        freq: (rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)),
        phase: (jitter(&mut rng, PI), jitter(&mut rng, PI)),
    };

    let mut target_scene = scene.clone();
    if options.deform {
        target_scene[changed].value = (target_scene[changed].value + 0.25).min(1.0) - 0.1;
        if kind == PhantomKind::TrianglesToStars {
            for s in &mut target_scene {
                if let Outline::Polygon { r, .. } = s.outline {
                    s.outline = Outline::Star {
                        points: 5,
                        outer: 1.1 * r,
                        inner: 0.5 * r,
                    };
                }
            }
        }
    }

    let mut detail = None;
    if options.detail {
        // a small bright disc inside the scene, placed before deforming so it
        // follows the same transport
        let c = (0.08 + jitter(&mut rng, 0.02), -0.2 + jitter(&mut rng, 0.02));
        let r = 2.2 / n as f64 + 0.012;
        target_scene.push(ellipse(c, r, r, 0.0, 1.0));
        let shift = if options.deform { deformation.at(c) } else { (0.0, 0.0) };
        let to_px = |u: f64| (u + 0.5) * n as f64;
        let span = |u: f64| {
            let lo = (to_px(u - r) - 2.0).floor().max(0.0) as usize;
            let hi = ((to_px(u + r) + 2.0).ceil() as usize).min(n);
            lo..hi
        };
        detail = Some(Region {
            rows: span(c.0 + shift.0),
            cols: span(c.1 + shift.1),
        });
    }

    let reference = render(n, &scene, None);
    let target = render(n, &target_scene, options.deform.then_some(&deformation));
    if options.deform {
        let s = ssim(&reference, &target)?;
        if s >= 0.95 {
            return Err(Error::Param(format!("generated pair is too similar (SSIM {s:.4})")));
        }
    }
    Ok(Phantom {
        reference,
        target,
        detail,
    })
}
