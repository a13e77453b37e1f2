//! Deterministic synthetic HR images with structure at several scales.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::rng::{Rng as SeededRng, Seed};

/// Checkerboard cell edge in pixels.
pub const CHECKER_CELL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProceduralKind {
    Gradient,
    Checker,
    Stripes,
    Blobs,
    Glyphs,
    Mixed,
}

impl ProceduralKind {
    pub const ALL: [ProceduralKind; 6] = [
        ProceduralKind::Gradient,
        ProceduralKind::Checker,
        ProceduralKind::Stripes,
        ProceduralKind::Blobs,
        ProceduralKind::Glyphs,
        ProceduralKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProceduralKind::Gradient => "gradient",
            ProceduralKind::Checker => "checker",
            ProceduralKind::Stripes => "stripes",
            ProceduralKind::Blobs => "blobs",
            ProceduralKind::Glyphs => "glyphs",
            ProceduralKind::Mixed => "mixed",
        }
    }
}

impl FromStr for ProceduralKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown image kind {s:?}")))
    }
}

/// Generate a `size × size` RGB image. `size` must be a multiple of 16.
pub fn gen_procedural_hr(seed: Seed, size: usize, kind: ProceduralKind) -> Result<Image> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::contract(format!(
            "procedural size must be a positive multiple of 16, got {size}"
        )));
    }
    let mut rng = seed.rng();
    let mut canvas = Canvas::new(size);
    match kind {
        ProceduralKind::Gradient => gradient(&mut canvas),
        ProceduralKind::Checker => checker(&mut canvas, &mut rng, CHECKER_CELL),
        ProceduralKind::Stripes => stripes(&mut canvas, &mut rng, 1.0),
        ProceduralKind::Blobs => blobs(&mut canvas, &mut rng),
        ProceduralKind::Glyphs => {
            canvas.fill([0.92, 0.9, 0.86]);
            glyphs(&mut canvas, &mut rng, 0, size);
        }
        ProceduralKind::Mixed => mixed(&mut canvas, &mut rng),
    }
    canvas.into_image()
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas {
            size,
            px: vec![[0.0; 3]; size * size],
        }
    }

    fn fill(&mut self, c: [f64; 3]) {
        self.px.iter_mut().for_each(|p| *p = c);
    }

    fn at(&mut self, y: usize, x: usize) -> &mut [f64; 3] {
        &mut self.px[y * self.size + x]
    }

    fn into_image(self) -> Result<Image> {
        let size = self.size;
        let data = self.px.iter().flat_map(|p| p.map(|v| v as f32)).collect();
        Image::from_clamped(size, size, 3, data)
    }
}

fn random_color(rng: &mut SeededRng) -> [f64; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn gradient(c: &mut Canvas) {
    const ALONG_X: [f64; 3] = [0.6, 0.45, 0.3];
    const ALONG_Y: [f64; 3] = [0.3, 0.4, 0.5];
    let n = (c.size - 1).max(1) as f64;
    for y in 0..c.size {
        for x in 0..c.size {
            let (u, v) = (x as f64 / n, y as f64 / n);
            *c.at(y, x) = std::array::from_fn(|k| ALONG_X[k] * u + ALONG_Y[k] * v);
        }
    }
}

fn checker(c: &mut Canvas, rng: &mut SeededRng, cell: usize) {
    let flip = rng.gen_bool(0.5) as usize;
    for y in 0..c.size {
        for x in 0..c.size {
            let on = ((y / cell + x / cell + flip) % 2) as f64;
            *c.at(y, x) = [on; 3];
        }
    }
}

fn stripes(c: &mut Canvas, rng: &mut SeededRng, opacity: f64) {
    let theta = rng.gen_range(0.0..PI);
    let cycles = rng.gen_range(2.0..(c.size as f64 / 8.0).max(3.0));
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (a, b) = (random_color(rng), random_color(rng));
    let n = c.size as f64;
    for y in 0..c.size {
        for x in 0..c.size {
            let s = (2.0 * PI * cycles * (x as f64 * theta.cos() + y as f64 * theta.sin()) / n + phase).sin();
            let w = 0.5 + 0.5 * s;
            let p = c.at(y, x);
            for k in 0..3 {
                let v = a[k] * w + b[k] * (1.0 - w);
                p[k] = p[k] * (1.0 - opacity) + v * opacity;
            }
        }
    }
}

fn blobs(c: &mut Canvas, rng: &mut SeededRng) {
    c.fill(random_color(rng));
    let n = c.size as f64;
    let count = rng.gen_range(6..11);
    for _ in 0..count {
        let (cy, cx) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
        let r = rng.gen_range(n / 16.0..n / 4.0);
        let col = random_color(rng);
        for y in 0..c.size {
            for x in 0..c.size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let a = (-d2 / (2.0 * r * r)).exp();
                let p = c.at(y, x);
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - a) + col[k] * a;
                }
            }
        }
    }
}

/// Thin dark strokes on a 16-pixel character grid covering rows `y0..y1`.
fn glyphs(c: &mut Canvas, rng: &mut SeededRng, y0: usize, y1: usize) {
    const CELL: usize = 16;
    let ink = [rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.25)];
    for gy in (y0..y1).step_by(CELL) {
        for gx in (0..c.size).step_by(CELL) {
            if rng.gen_bool(0.15) {
                continue;
            }
            // strokes between points of a 3x3 lattice inside the cell
            let lattice = |i: usize| 3.0 + 5.0 * i as f64;
            for _ in 0..rng.gen_range(2..5) {
                let p0 = (lattice(rng.gen_range(0..3)), lattice(rng.gen_range(0..3)));
                let p1 = (lattice(rng.gen_range(0..3)), lattice(rng.gen_range(0..3)));
                let width = if rng.gen_bool(0.5) { 0.6 } else { 1.1 };
                stroke(c, (gy as f64 + p0.0, gx as f64 + p0.1), (gy as f64 + p1.0, gx as f64 + p1.1), width, ink);
            }
        }
    }
}

fn stroke(c: &mut Canvas, a: (f64, f64), b: (f64, f64), half_width: f64, ink: [f64; 3]) {
    let (ymin, ymax) = (a.0.min(b.0) - 2.0, a.0.max(b.0) + 2.0);
    let (xmin, xmax) = (a.1.min(b.1) - 2.0, a.1.max(b.1) + 2.0);
    let len2 = (b.0 - a.0).powi(2) + (b.1 - a.1).powi(2);
    for y in ymin.max(0.0) as usize..=(ymax as usize).min(c.size - 1) {
        for x in xmin.max(0.0) as usize..=(xmax as usize).min(c.size - 1) {
            let (py, px) = (y as f64, x as f64);
            let t = if len2 > 0.0 {
                (((py - a.0) * (b.0 - a.0) + (px - a.1) * (b.1 - a.1)) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = ((py - a.0 - t * (b.0 - a.0)).powi(2) + (px - a.1 - t * (b.1 - a.1)).powi(2)).sqrt();
            // one pixel of linear falloff past the stroke edge
            let cover = (half_width + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                let p = c.at(y, x);
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - cover) + ink[k] * cover;
                }
            }
        }
    }
}

fn mixed(c: &mut Canvas, rng: &mut SeededRng) {
    blobs(c, rng);
    stripes(c, rng, 0.35);
    let size = c.size;
    // a small fine checker patch in one quadrant
    let q = size / 2;
    let (oy, ox) = (rng.gen_range(0..2) * q, rng.gen_range(0..2) * q);
    let patch = q / 2;
    let (a, b) = (random_color(rng), random_color(rng));
    for y in oy + patch / 2..oy + patch / 2 + patch {
        for x in ox + patch / 2..ox + patch / 2 + patch {
            *c.at(y, x) = if (y / 4 + x / 4) % 2 == 0 { a } else { b };
        }
    }
    let start = if oy == 0 { q } else { 0 };
    glyphs(c, rng, start + q / 2, start + q);
}
