//! Full-reference fidelity on the luma channel: PSNR and single-scale SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imagecore::{luma_plane, Image};
use crate::par;

/// Returned by [`psnr_y`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn luma_pair(a: &Image, b: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    a.same_dims(b, "metric inputs")?;
    Ok((luma_plane(a), luma_plane(b)))
}

/// `10·log10(1 / MSE)` between the luma planes, peak 1.
pub fn psnr_y(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = luma_pair(a, b)?;
    let mse = ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64;
    Ok(if mse == 0.0 { PSNR_IDENTICAL } else { -10.0 * mse.log10() })
}

/// Normalized 1-D gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable gaussian filter over the valid region only.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 window positions of the luma planes.
pub fn ssim_y(a: &Image, b: &Image) -> Result<f64> {
    let (ya, yb) = luma_pair(a, b)?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}")));
    }
    let taps = ssim_taps();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { ya.iter().zip(&yb).map(|(&x, &y)| f(x, y)).collect() };
    let planes = [ya.clone(), yb.clone(), prod(|x, _| x * x), prod(|_, y| y * y), prod(|x, y| x * y)];
    let f = par::map_slice(&planes, |p| filter_valid(p, h, w, &taps));
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = f[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (f[0][i], f[1][i]);
        let va = f[2][i] - ma * ma;
        let vb = f[3][i] - mb * mb;
        let cov = f[4][i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr_y: f64,
    pub ssim_y: f64,
}

/// Per-image metrics and their means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Evaluate `(name, output, reference)` triples concurrently.
    pub fn evaluate(items: &[(String, Image, Image)]) -> Result<Self> {
        let rows = par::try_map_indices(items.len(), |i| {
            let (name, out, reference) = &items[i];
            Ok::<_, Error>(MetricRow {
                name: name.clone(),
                psnr_y: psnr_y(out, reference)?,
                ssim_y: ssim_y(out, reference)?,
            })
        })?;
        Ok(MetricReport { rows })
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_y))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_y))
    }

    /// Delimited table with a header, one row per image and a `mean` row.
    pub fn to_table(&self, delimiter: char) -> String {
        let mut s = String::new();
        let d = delimiter;
        let _ = writeln!(s, "filename{d}psnr_y{d}ssim_y");
        for r in &self.rows {
            let _ = writeln!(s, "{}{d}{:.6}{d}{:.6}", r.name, r.psnr_y, r.ssim_y);
        }
        let _ = writeln!(s, "mean{d}{:.6}{d}{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
