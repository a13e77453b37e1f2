use crate::error::{Error, Result};
use crate::imagecore::{resize, Image, ResizeMode};
use crate::numerics::{Real, Tensor};

/// Per-channel normalization constants. Both are powers of two so the affine
/// map is exact for pixel values stored as f32.
pub const LATENT_MEAN: f64 = 0.5;
pub const LATENT_STD: f64 = 0.5;

/// Exact image ⇄ latent bijection: space-to-depth by `fold`, then a fixed
/// per-channel affine normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentCodec {
    pub fold: usize,
}

impl Default for LatentCodec {
    fn default() -> Self {
        LatentCodec { fold: 4 }
    }
}

impl LatentCodec {
    pub fn new(fold: usize) -> Result<Self> {
        if fold == 0 {
            return Err(Error::Config("latent fold must be positive".into()));
        }
        Ok(LatentCodec { fold })
    }

    /// Latent shape `[h/f, w/f, c·f²]` for an `h × w × c` image.
    pub fn latent_shape(&self, height: usize, width: usize, channels: usize) -> Result<[usize; 3]> {
        let f = self.fold;
        if height % f != 0 || width % f != 0 {
            return Err(Error::contract(format!(
                "image {height}x{width} is not divisible by latent fold {f}"
            )));
        }
        Ok([height / f, width / f, channels * f * f])
    }

    pub fn encode<T: Real>(&self, img: &Image) -> Result<Tensor<T>> {
        let (h, w, c) = img.dims();
        let shape = self.latent_shape(h, w, c)?;
        let f = self.fold;
        let lc = shape[2];
        let mut data = vec![T::zero(); shape.iter().product()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let slot = ((y % f) * f + x % f) * c + ch;
                    let v = (img.get(y, x, ch) as f64 - LATENT_MEAN) / LATENT_STD;
                    data[((y / f) * shape[1] + x / f) * lc + slot] = T::c(v);
                }
            }
        }
        Tensor::new(&shape, data)
    }

    /// Inverse of [`encode`](Self::encode); values are clamped to `[0, 1]`.
    pub fn decode<T: Real>(&self, z: &Tensor<T>) -> Result<Image> {
        let f = self.fold;
        let &[lh, lw, lc] = z.shape() else {
            return Err(Error::shape(format!("latent must be 3-D, got {:?}", z.shape())));
        };
        if lc % (f * f) != 0 || !matches!(lc / (f * f), 1 | 3) {
            return Err(Error::shape(format!("{lc} latent channels do not unfold by {f}")));
        }
        z.check_finite("latent")?;
        let c = lc / (f * f);
        let (h, w) = (lh * f, lw * f);
        let mut data = vec![0f32; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let slot = ((y % f) * f + x % f) * c + ch;
                    let v = z.data()[((y / f) * lw + x / f) * lc + slot].f64();
                    data[(y * w + x) * c + ch] = (v * LATENT_STD + LATENT_MEAN) as f32;
                }
            }
        }
        Image::from_clamped(h, w, c, data)
    }
}

/// `c_str`: the LR image nearest-upsampled to the HR grid, then encoded.
pub fn make_structural_condition<T: Real>(
    codec: &LatentCodec,
    lr: &Image,
    hr_height: usize,
    hr_width: usize,
) -> Result<Tensor<T>> {
    let (h, w, _) = lr.dims();
    if hr_height % h != 0 || hr_width % w != 0 || hr_height / h != hr_width / w {
        return Err(Error::contract(format!(
            "HR size {hr_height}x{hr_width} is not an integer multiple of LR size {h}x{w}"
        )));
    }
    let up = resize(lr, hr_height, hr_width, ResizeMode::Nearest)?;
    codec.encode(&up)
}
