use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::numerics::Real;

/// Orthonormal Haar coefficients of every channel in Mallat layout: after
/// `levels` levels the coarsest LL band fills the top-left
/// `(height >> levels) × (width >> levels)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarCoeffs<T> {
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<T>>,
}

fn check_divisible(h: usize, w: usize, levels: usize) -> Result<()> {
    let f = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if levels == 0 || f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::contract(format!(
            "{h}×{w} is not divisible by 2^{levels} (levels must be at least 1)"
        )));
    }
    Ok(())
}

/// One analysis level on the top-left `h × w` block of a row-major plane
/// with row stride `stride`.
fn analyze<T: Real>(p: &mut [T], stride: usize, h: usize, w: usize, tmp: &mut Vec<T>) {
    let half = T::c(0.5);
    let (hh, hw) = (h / 2, w / 2);
    tmp.clear();
    tmp.resize(h * w, T::zero());
    for y in 0..hh {
        for x in 0..hw {
            let a = p[2 * y * stride + 2 * x];
            let b = p[2 * y * stride + 2 * x + 1];
            let c = p[(2 * y + 1) * stride + 2 * x];
            let d = p[(2 * y + 1) * stride + 2 * x + 1];
            tmp[y * w + x] = (a + b + c + d) * half;
            tmp[y * w + hw + x] = (a - b + c - d) * half;
            tmp[(hh + y) * w + x] = (a + b - c - d) * half;
            tmp[(hh + y) * w + hw + x] = (a - b - c + d) * half;
        }
    }
    for y in 0..h {
        p[y * stride..y * stride + w].copy_from_slice(&tmp[y * w..(y + 1) * w]);
    }
}

fn synthesize<T: Real>(p: &mut [T], stride: usize, h: usize, w: usize, tmp: &mut Vec<T>) {
    let half = T::c(0.5);
    let (hh, hw) = (h / 2, w / 2);
    tmp.clear();
    tmp.resize(h * w, T::zero());
    for y in 0..hh {
        for x in 0..hw {
            let ll = p[y * stride + x];
            let lh = p[y * stride + hw + x];
            let hl = p[(hh + y) * stride + x];
            let hhb = p[(hh + y) * stride + hw + x];
            tmp[2 * y * w + 2 * x] = (ll + lh + hl + hhb) * half;
            tmp[2 * y * w + 2 * x + 1] = (ll - lh + hl - hhb) * half;
            tmp[(2 * y + 1) * w + 2 * x] = (ll + lh - hl - hhb) * half;
            tmp[(2 * y + 1) * w + 2 * x + 1] = (ll - lh - hl + hhb) * half;
        }
    }
    for y in 0..h {
        p[y * stride..y * stride + w].copy_from_slice(&tmp[y * w..(y + 1) * w]);
    }
}

/// Forward transform of one `h × w` plane in place.
pub fn haar_forward<T: Real>(plane: &mut [T], h: usize, w: usize, levels: usize) -> Result<()> {
    check_divisible(h, w, levels)?;
    let mut tmp = Vec::new();
    for l in 0..levels {
        analyze(plane, w, h >> l, w >> l, &mut tmp);
    }
    Ok(())
}

/// Inverse of [`haar_forward`].
pub fn haar_inverse<T: Real>(plane: &mut [T], h: usize, w: usize, levels: usize) -> Result<()> {
    check_divisible(h, w, levels)?;
    let mut tmp = Vec::new();
    for l in (0..levels).rev() {
        synthesize(plane, w, h >> l, w >> l, &mut tmp);
    }
    Ok(())
}

pub fn haar_dwt2<T: Real>(img: &Image, levels: usize) -> Result<HaarCoeffs<T>> {
    let (h, w, c) = img.dims();
    check_divisible(h, w, levels)?;
    let mut planes = Vec::with_capacity(c);
    for ch in 0..c {
        let mut p: Vec<T> = img.plane(ch).into_iter().map(T::c).collect();
        haar_forward(&mut p, h, w, levels)?;
        planes.push(p);
    }
    Ok(HaarCoeffs {
        levels,
        height: h,
        width: w,
        planes,
    })
}

/// Reconstructed planes, not clamped.
pub fn haar_idwt2<T: Real>(coeffs: &HaarCoeffs<T>) -> Result<Vec<Vec<T>>> {
    coeffs
        .planes
        .iter()
        .map(|p| {
            let mut p = p.clone();
            haar_inverse(&mut p, coeffs.height, coeffs.width, coeffs.levels)?;
            Ok(p)
        })
        .collect()
}

impl<T: Real> HaarCoeffs<T> {
    /// Whether flat index `i` of a plane lies in the coarsest LL band.
    pub fn in_ll(&self, i: usize) -> bool {
        let (y, x) = (i / self.width, i % self.width);
        y < self.height >> self.levels && x < self.width >> self.levels
    }
}
