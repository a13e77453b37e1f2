use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Split a `[h, w, c]` latent into `[(h/p)·(w/p), p·p·c]` tokens, each token
/// laid out as `(dy, dx, c)`.
pub fn patchify<T: Real>(latent: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let &[h, w, c] = latent.shape() else {
        return Err(Error::shape(format!("latent must be 3-D, got {:?}", latent.shape())));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!("patch {patch} does not divide grid {h}x{w}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let width = patch * patch * c;
    let src = latent.data();
    let mut out = Vec::with_capacity(src.len());
    for ty in 0..gh {
        for tx in 0..gw {
            for dy in 0..patch {
                let row = ((ty * patch + dy) * w + tx * patch) * c;
                out.extend_from_slice(&src[row..row + patch * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, width], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(tokens: &Tensor<T>, height: usize, width: usize, patch: usize) -> Result<Tensor<T>> {
    let (n, tw) = tokens.as_matrix("tokens")?;
    if patch == 0 || height % patch != 0 || width % patch != 0 || n != (height / patch) * (width / patch) {
        return Err(Error::shape(format!(
            "{n} tokens do not tile a {height}x{width} grid with patch {patch}"
        )));
    }
    if tw % (patch * patch) != 0 {
        return Err(Error::shape(format!("token width {tw} is not a multiple of {}", patch * patch)));
    }
    let c = tw / (patch * patch);
    let gw = width / patch;
    let src = tokens.data();
    let mut out = vec![T::zero(); height * width * c];
    for (i, tok) in src.chunks(tw).enumerate() {
        let (ty, tx) = (i / gw, i % gw);
        for dy in 0..patch {
            let row = ((ty * patch + dy) * width + tx * patch) * c;
            out[row..row + patch * c].copy_from_slice(&tok[dy * patch * c..(dy + 1) * patch * c]);
        }
    }
    Tensor::new(&[height, width, c], out)
}

/// Largest frequency of the sinusoidal ladder.
pub const MAX_FREQUENCY: f64 = 1000.0;

/// Interleaved `[sin(ω₀t), cos(ω₀t), sin(ω₁t), …]` with
/// `ω_k = 1000 · 10000^(−k/(dim/2))`.
pub fn timestep_features(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::contract(format!("time embedding width must be even, got {dim}")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let omega = MAX_FREQUENCY * 10000f64.powf(-(k as f64) / half as f64);
        out.push((omega * t).sin());
        out.push((omega * t).cos());
    }
    Ok(out)
}
