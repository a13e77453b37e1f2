//! Paired-benchmark construction: homography from marker corners, warping
//! the captured photo back to the source plane, and low-frequency color
//! alignment in the Haar domain.

mod homography;
mod wavelet;

pub use homography::{estimate_homography, Correspondence, CorrespondenceSet, Homography, HomographyFit};
pub use wavelet::{haar_dwt2, haar_forward, haar_idwt2, haar_inverse, HaarCoeffs};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::metrics::psnr_y;

pub const DEFAULT_LEVELS: usize = 3;

/// A warped image and which of its pixels sampled inside the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: Image,
    pub mask: Vec<bool>,
}

impl Warped {
    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&v| v).count() as f64 / self.mask.len() as f64
    }
}

/// Bilinear sample at `(x, y)` with pixel centers on integers; `None`
/// outside `[0, w−1] × [0, h−1]`.
fn sample(img: &Image, x: f64, y: f64, c: usize) -> Option<f64> {
    let (h, w, _) = img.dims();
    let eps = 1e-9;
    if !(x >= -eps && y >= -eps && x <= (w - 1) as f64 + eps && y <= (h - 1) as f64 + eps) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64));
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let px = |yy, xx| img.get(yy, xx, c) as f64;
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let top = lerp(px(y0, x0), px(y0, x1), fx);
    let bottom = lerp(px(y1, x0), px(y1, x1), fx);
    Some(lerp(top, bottom, fy))
}

/// Inverse-mapping warp: output pixel `p` takes `img` at `h(p)`, bilinearly.
/// Pixels mapping outside `img` are 0 and unset in the mask.
pub fn warp_image(img: &Image, h: &Homography, out_h: usize, out_w: usize) -> Result<Warped> {
    h.inverse()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("warp target must be non-empty"));
    }
    let c = img.channels();
    let mut data = vec![0.0f32; out_h * out_w * c];
    let mut mask = vec![false; out_h * out_w];
    let rows = crate::par::map_indices(out_h, |y| {
        let mut row = vec![0.0f32; out_w * c];
        let mut valid = vec![false; out_w];
        for x in 0..out_w {
            let [sx, sy] = h.apply([x as f64, y as f64]);
            if !(sx.is_finite() && sy.is_finite()) {
                continue;
            }
            for ch in 0..c {
                if let Some(v) = sample(img, sx, sy, ch) {
                    row[x * c + ch] = v as f32;
                    valid[x] = true;
                }
            }
        }
        (row, valid)
    });
    for (y, (row, valid)) in rows.into_iter().enumerate() {
        data[y * out_w * c..(y + 1) * out_w * c].copy_from_slice(&row);
        mask[y * out_w..(y + 1) * out_w].copy_from_slice(&valid);
    }
    Ok(Warped {
        image: Image::from_clamped(out_h, out_w, c, data)?,
        mask,
    })
}

/// Per-channel planes of `captured` with the coarsest Haar LL band taken
/// from `reference`, before clamping.
pub fn color_align_planes(captured: &Image, reference: &Image, levels: usize) -> Result<Vec<Vec<f64>>> {
    captured.same_dims(reference, "color alignment inputs")?;
    let mut cap = haar_dwt2::<f64>(captured, levels)?;
    let refc = haar_dwt2::<f64>(reference, levels)?;
    for (cp, rp) in cap.planes.iter_mut().zip(&refc.planes) {
        for i in 0..cp.len() {
            if refc.in_ll(i) {
                cp[i] = rp[i];
            }
        }
    }
    haar_idwt2(&cap)
}

/// [`color_align_planes`] clamped into an image.
pub fn color_align(captured: &Image, reference: &Image, levels: usize) -> Result<Image> {
    let (h, w, _) = captured.dims();
    Image::from_planes(h, w, &color_align_planes(captured, reference, levels)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignReport {
    pub mean_reprojection_error: f64,
    pub max_reprojection_error: f64,
    pub psnr_y: f64,
    /// Fraction of output pixels that sampled inside the photo.
    pub valid_fraction: f64,
    /// Fraction of values that color alignment pushed outside `[0, 1]`.
    pub clamped_fraction: f64,
}

/// Warp `photo` onto the source plane using `pts` (source → photo) and
/// color-align it against `source`.
pub fn align_pair(source: &Image, photo: &Image, pts: &CorrespondenceSet, levels: usize) -> Result<(Image, AlignReport)> {
    if source.channels() != photo.channels() {
        return Err(Error::contract("source and photo channel counts differ"));
    }
    let fit = estimate_homography(pts)?;
    let (h, w, _) = source.dims();
    let warped = warp_image(photo, &fit.homography, h, w)?;
    let planes = color_align_planes(&warped.image, source, levels)?;
    let total: usize = planes.iter().map(Vec::len).sum();
    let clamped = planes.iter().flatten().filter(|v| !(0.0..=1.0).contains(*v)).count();
    let aligned = Image::from_planes(h, w, &planes)?;
    let report = AlignReport {
        mean_reprojection_error: fit.mean_reprojection_error,
        max_reprojection_error: fit.max_reprojection_error,
        psnr_y: psnr_y(&aligned, source)?,
        valid_fraction: warped.valid_fraction(),
        clamped_fraction: clamped as f64 / total as f64,
    };
    Ok((aligned, report))
}
