use std::str::FromStr;

use super::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
    /// Box filter weighted by pixel overlap; an exact block mean when the
    /// factor is an integer.
    Area,
}

impl FromStr for ResizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            "area" => Ok(ResizeMode::Area),
            _ => Err(Error::Config(format!("unknown resize mode {s:?}"))),
        }
    }
}

/// 1-D resampling weights: for each output index, `(source index, weight)`.
fn weights(input: usize, output: usize, mode: ResizeMode) -> Vec<Vec<(usize, f64)>> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| match mode {
            ResizeMode::Nearest => {
                let s = (((o as f64 + 0.5) * ratio).floor() as usize).min(input - 1);
                vec![(s, 1.0)]
            }
            ResizeMode::Bilinear => {
                let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                let f = s - i0 as f64;
                if f == 0.0 || i0 == i1 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            }
            ResizeMode::Area => {
                let (lo, hi) = (o as f64 * ratio, (o + 1) as f64 * ratio);
                let mut w = Vec::new();
                let mut i = lo.floor() as usize;
                while (i as f64) < hi && i < input {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        w.push((i, overlap / ratio));
                    }
                    i += 1;
                }
                w
            }
        })
        .collect()
}

/// Separable resampling to `out_h × out_w`.
pub fn resize(img: &Image, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("resize target extents must be positive"));
    }
    let (h, w, c) = img.dims();
    let wx = weights(w, out_w, mode);
    let wy = weights(h, out_h, mode);
    // horizontal pass in f64
    let mut tmp = vec![0f64; h * out_w * c];
    for y in 0..h {
        for (ox, taps) in wx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sx, wgt) in taps {
                    acc += wgt * img.get(y, sx, ch) as f64;
                }
                tmp[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0f32; out_h * out_w * c];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, wgt) in taps {
                    acc += wgt * tmp[(sy * out_w + ox) * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc as f32;
            }
        }
    }
    Image::from_clamped(out_h, out_w, c, out)
}
