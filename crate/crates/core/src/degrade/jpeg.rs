//! Block-DCT lossy compression in the style of baseline JPEG.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::imagecore::Image;

const N: usize = 8;

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quantizer steps for `quality`, in 8-bit units. Quality 100 yields all-zero
/// steps, which disables quantization.
pub fn quant_steps(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    base.map(|b| (((b as u32 * scale + 50) / 100).min(255)) as f64)
}

/// Orthonormal 8-point DCT-II basis, `basis[k][n]`.
fn basis() -> &'static [[f64; N]; N] {
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        std::array::from_fn(|k| {
            let a = if k == 0 { (1.0 / N as f64).sqrt() } else { (2.0 / N as f64).sqrt() };
            std::array::from_fn(|n| a * ((2 * n + 1) as f64 * k as f64 * PI / (2 * N) as f64).cos())
        })
    })
}

pub(crate) fn dct2(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut rows = [0.0; 64];
    for y in 0..N {
        for k in 0..N {
            rows[y * N + k] = (0..N).map(|x| b[k][x] * block[y * N + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..N {
        for x in 0..N {
            out[k * N + x] = (0..N).map(|y| b[k][y] * rows[y * N + x]).sum();
        }
    }
    out
}

pub(crate) fn idct2(coef: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut cols = [0.0; 64];
    for y in 0..N {
        for x in 0..N {
            cols[y * N + x] = (0..N).map(|k| b[k][y] * coef[k * N + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..N {
        for x in 0..N {
            out[y * N + x] = (0..N).map(|k| b[k][x] * cols[y * N + k]).sum();
        }
    }
    out
}

/// Quantize AC coefficients toward zero; DC passes through untouched.
fn quantize(coef: &mut [f64; 64], steps: &[f64; 64]) {
    for (c, &s) in coef.iter_mut().zip(steps).skip(1) {
        if s > 0.0 {
            *c = (*c / s).trunc() * s;
        }
    }
}

/// Compress one plane given in 8-bit units, level-shifted around 0.
fn compress_plane(plane: &mut [f64], h: usize, w: usize, steps: &[f64; 64]) {
    for by in (0..h).step_by(N) {
        for bx in (0..w).step_by(N) {
            let mut block = [0.0; 64];
            // partial edge blocks repeat their last row/column
            for y in 0..N {
                for x in 0..N {
                    let (sy, sx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    block[y * N + x] = plane[sy * w + sx];
                }
            }
            let mut coef = dct2(&block);
            quantize(&mut coef, steps);
            let rec = idct2(&coef);
            for y in 0..N.min(h - by) {
                for x in 0..N.min(w - bx) {
                    plane[(by + y) * w + bx + x] = rec[y * N + x];
                }
            }
        }
    }
}

/// Lossy 8×8 block-DCT compression at `quality ∈ [1, 100]`.
pub fn jpeg_like_compress(img: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::contract(format!("jpeg quality must lie in [1, 100], got {quality}")));
    }
    let (h, w, c) = img.dims();
    let luma = quant_steps(&LUMA_TABLE, quality);
    if c == 1 {
        let mut p: Vec<f64> = img.plane(0).iter().map(|v| v * 255.0 - 128.0).collect();
        compress_plane(&mut p, h, w, &luma);
        return Image::from_planes(h, w, &[p.iter().map(|v| (v + 128.0) / 255.0).collect()]);
    }
    let chroma = quant_steps(&CHROMA_TABLE, quality);
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut y = vec![0.0; h * w];
    let mut cb = vec![0.0; h * w];
    let mut cr = vec![0.0; h * w];
    for i in 0..h * w {
        let (r, g, b) = (r[i] * 255.0, g[i] * 255.0, b[i] * 255.0);
        y[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    compress_plane(&mut y, h, w, &luma);
    compress_plane(&mut cb, h, w, &chroma);
    compress_plane(&mut cr, h, w, &chroma);
    let mut planes = vec![vec![0.0; h * w]; 3];
    for i in 0..h * w {
        let yy = y[i] + 128.0;
        planes[0][i] = (yy + 1.402 * cr[i]) / 255.0;
        planes[1][i] = (yy - 0.344_136 * cb[i] - 0.714_136 * cr[i]) / 255.0;
        planes[2][i] = (yy + 1.772 * cb[i]) / 255.0;
    }
    Image::from_planes(h, w, &planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{gen_procedural_hr, luma_plane, ProceduralKind};
    use crate::rng::Seed;

    /// Direct O(N^4) DCT from the textbook definition.
    fn dct_naive(block: &[f64; 64]) -> [f64; 64] {
        let alpha = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
        std::array::from_fn(|i| {
            let (u, v) = (i / N, i % N);
            let mut s = 0.0;
            for y in 0..N {
                for x in 0..N {
                    s += block[y * N + x]
                        * ((2 * y + 1) as f64 * u as f64 * PI / 16.0).cos()
                        * ((2 * x + 1) as f64 * v as f64 * PI / 16.0).cos();
                }
            }
            alpha(u) * alpha(v) * s
        })
    }

    fn test_block() -> [f64; 64] {
        std::array::from_fn(|i| ((i * 37 % 64) as f64 - 30.0) * 1.7)
    }

    #[test]
    fn dct_matches_definition_and_inverts() {
        let b = test_block();
        let c = dct2(&b);
        let naive = dct_naive(&b);
        for i in 0..64 {
            assert!((c[i] - naive[i]).abs() < 1e-9);
        }
        let back = idct2(&c);
        for i in 0..64 {
            assert!((back[i] - b[i]).abs() < 1e-9);
        }
        let e_in: f64 = b.iter().map(|v| v * v).sum();
        let e_out: f64 = c.iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-8 * e_in);
    }

    #[test]
    fn quality_scaling_matches_table_formula() {
        assert_eq!(quant_steps(&LUMA_TABLE, 50)[0], 16.0);
        assert_eq!(quant_steps(&LUMA_TABLE, 100), [0.0; 64]);
        // q=10: scale 500, 16*500/100 = 80
        assert_eq!(quant_steps(&LUMA_TABLE, 10)[0], 80.0);
        assert_eq!(quant_steps(&LUMA_TABLE, 1)[63], 255.0);
    }

    #[test]
    fn constant_image_survives() {
        for q in [1, 30, 75, 100] {
            let img = Image::filled(16, 24, 3, 0.37).unwrap();
            let out = jpeg_like_compress(&img, q).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn quality_100_error_bound() {
        // a truncated coefficient moves by less than its step and a 2-D AC
        // basis function never exceeds 1/4 in magnitude; chroma reaches RGB
        // with gain at most 1.772
        let total = |t: &[u16; 64]| quant_steps(t, 100).iter().skip(1).sum::<f64>();
        let bound = 0.25 * (total(&LUMA_TABLE) + 1.772 * total(&CHROMA_TABLE)) / 255.0 + 1e-6;
        assert!(bound <= 2.0 / 255.0);
        for kind in ProceduralKind::ALL {
            let img = gen_procedural_hr(Seed(5), 32, kind).unwrap();
            let out = jpeg_like_compress(&img, 100).unwrap();
            assert!(out.max_abs_diff(&img).unwrap() as f64 <= bound, "{kind:?}");
        }
    }

    #[test]
    fn block_energy_never_grows() {
        let img = gen_procedural_hr(Seed(6), 32, ProceduralKind::Glyphs).unwrap();
        let gray = Image::from_planes(32, 32, &[luma_plane(&img)]).unwrap();
        for q in [5, 30, 60, 95] {
            let out = jpeg_like_compress(&gray, q).unwrap();
            for by in (0..32).step_by(8) {
                for bx in (0..32).step_by(8) {
                    let energy = |im: &Image| {
                        let mut s = 0.0f64;
                        for y in by..by + 8 {
                            for x in bx..bx + 8 {
                                s += (im.get(y, x, 0) as f64).powi(2);
                            }
                        }
                        s.sqrt()
                    };
                    assert!(energy(&out) <= energy(&gray) + 1e-5, "q={q} block ({by},{bx})");
                }
            }
        }
    }

    #[test]
    fn lower_quality_loses_more() {
        let img = gen_procedural_hr(Seed(8), 32, ProceduralKind::Mixed).unwrap();
        let err = |q| {
            let out = jpeg_like_compress(&img, q).unwrap();
            img.data().iter().zip(out.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
        };
        assert!(err(10) > err(50) && err(50) > err(95));
    }

    #[test]
    fn odd_sizes_and_bad_quality() {
        let img = gen_procedural_hr(Seed(1), 16, ProceduralKind::Blobs).unwrap().crop(0, 0, 13, 11).unwrap();
        let out = jpeg_like_compress(&img, 40).unwrap();
        assert_eq!(out.dims(), (13, 11, 3));
        assert!(jpeg_like_compress(&img, 0).is_err());
        assert!(jpeg_like_compress(&img, 101).is_err());
    }
}
