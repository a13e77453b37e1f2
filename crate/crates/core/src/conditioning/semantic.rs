use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::numerics::{layernorm, matmul, Real, Tensor};
use crate::rng::Seed;

/// Frozen random patch projection followed by layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoder {
    seed: Seed,
    patch: usize,
    dim: usize,
    channels: usize,
    projection: Tensor<f64>,
}

impl SemanticEncoder {
    pub const DEFAULT_PATCH: usize = 4;
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: Seed, patch: usize, dim: usize, channels: usize) -> Result<Self> {
        if patch == 0 || dim < 2 {
            return Err(Error::Config(format!("semantic encoder needs patch > 0 and dim >= 2, got {patch}, {dim}")));
        }
        let fan_in = patch * patch * channels;
        let mut rng = seed.rng();
        let scale = 1.0 / (fan_in as f64).sqrt();
        let projection = Tensor::from_fn(&[fan_in, dim], |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Ok(SemanticEncoder {
            seed,
            patch,
            dim,
            channels,
            projection,
        })
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &Tensor<f64> {
        &self.projection
    }

    pub fn token_count(&self, height: usize, width: usize) -> usize {
        (height / self.patch) * (width / self.patch)
    }

    /// Tokens `[(H/p)·(W/p), dim]` in raster order of patches.
    pub fn encode<T: Real>(&self, lr: &Image) -> Result<Tensor<T>> {
        let (h, w, c) = lr.dims();
        let p = self.patch;
        if h % p != 0 || w % p != 0 {
            return Err(Error::contract(format!("LR {h}x{w} is not divisible by semantic patch {p}")));
        }
        if c != self.channels {
            return Err(Error::shape(format!("semantic encoder expects {} channels, got {c}", self.channels)));
        }
        let (gh, gw) = (h / p, w / p);
        let fan_in = p * p * c;
        let mut patches = Vec::with_capacity(gh * gw * fan_in);
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    for dx in 0..p {
                        for ch in 0..c {
                            patches.push(lr.get(py * p + dy, px * p + dx, ch) as f64 - 0.5);
                        }
                    }
                }
            }
        }
        let patches = Tensor::new(&[gh * gw, fan_in], patches)?;
        let projected = matmul(&patches, &self.projection)?;
        let ones = vec![1.0; self.dim];
        let zeros = vec![0.0; self.dim];
        Ok(layernorm(&projected, &ones, &zeros, 1e-6)?.cast())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{gen_procedural_hr, ProceduralKind};

    fn encoder() -> SemanticEncoder {
        SemanticEncoder::new(Seed(17), 4, 64, 3).unwrap()
    }

    #[test]
    fn token_layout() {
        let lr = gen_procedural_hr(Seed(1), 16, ProceduralKind::Mixed).unwrap();
        let tokens = encoder().encode::<f32>(&lr).unwrap();
        assert_eq!(tokens.shape(), &[16, 64]);
        assert_eq!(encoder().token_count(16, 16), 16);
    }

    #[test]
    fn swapping_patches_swaps_tokens() {
        let lr = gen_procedural_hr(Seed(2), 16, ProceduralKind::Mixed).unwrap();
        // swap patch (0,0) with patch (2,3)
        let swapped = Image::from_fn(16, 16, 3, |y, x, c| {
            let (py, px) = (y / 4, x / 4);
            let (sy, sx) = match (py, px) {
                (0, 0) => (2, 3),
                (2, 3) => (0, 0),
                other => other,
            };
            lr.get(sy * 4 + y % 4, sx * 4 + x % 4, c)
        })
        .unwrap();
        let a = encoder().encode::<f64>(&lr).unwrap();
        let b = encoder().encode::<f64>(&swapped).unwrap();
        let row = |t: &Tensor<f64>, i: usize| t.data()[i * 64..(i + 1) * 64].to_vec();
        for i in 0..16 {
            let j = match i {
                0 => 11,
                11 => 0,
                k => k,
            };
            assert_eq!(row(&a, i), row(&b, j), "token {i}");
        }
    }

    #[test]
    fn deterministic_weights_and_tokens() {
        let lr = gen_procedural_hr(Seed(3), 16, ProceduralKind::Glyphs).unwrap();
        assert_eq!(encoder().weights(), SemanticEncoder::new(Seed(17), 4, 64, 3).unwrap().weights());
        assert_eq!(encoder().encode::<f32>(&lr).unwrap(), encoder().encode::<f32>(&lr).unwrap());
        assert_ne!(encoder().weights(), SemanticEncoder::new(Seed(18), 4, 64, 3).unwrap().weights());
    }

    #[test]
    fn tokens_are_normalized() {
        let lr = gen_procedural_hr(Seed(4), 32, ProceduralKind::Blobs).unwrap();
        let tokens = encoder().encode::<f64>(&lr).unwrap();
        for row in tokens.data().chunks(64) {
            let mean: f64 = row.iter().sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-9);
        }
        assert!(encoder().encode::<f64>(&lr.crop(0, 0, 30, 32).unwrap()).is_err());
    }
}
