//! LR synthesis: blur, area downsampling, additive noise and block-DCT
//! compression, optionally repeated in a second stage.

mod jpeg;

pub use jpeg::{jpeg_like_compress, quant_steps};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imagecore::{resize, Image, ResizeMode};
use crate::kv::KvDoc;
use crate::par;
use crate::rng::Seed;

/// Closed interval a degradation parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Copy> Range<T> {
    pub fn fixed(v: T) -> Self {
        Range { lo: v, hi: v }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeParams {
    pub blur_sigma: Range<f64>,
    pub noise_sigma: Range<f64>,
    pub jpeg_quality: Range<u8>,
    pub scale: usize,
    pub second_stage: bool,
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams {
            blur_sigma: Range { lo: 0.2, hi: 1.5 },
            noise_sigma: Range { lo: 0.0, hi: 0.03 },
            jpeg_quality: Range { lo: 30, hi: 95 },
            scale: 4,
            second_stage: false,
        }
    }
}

impl DegradeParams {
    /// Every stage at its identity setting.
    pub fn identity(scale: usize) -> Self {
        DegradeParams {
            blur_sigma: Range::fixed(0.0),
            noise_sigma: Range::fixed(0.0),
            jpeg_quality: Range::fixed(100),
            scale,
            second_stage: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.blur_sigma;
        if !(r.lo >= 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
            return Err(Error::Config(format!("blur_sigma range [{}, {}] is invalid", r.lo, r.hi)));
        }
        let r = &self.noise_sigma;
        if !(r.lo >= 0.0 && r.lo <= r.hi && r.hi.is_finite()) {
            return Err(Error::Config(format!("noise_sigma range [{}, {}] is invalid", r.lo, r.hi)));
        }
        let r = &self.jpeg_quality;
        if r.lo < 1 || r.lo > r.hi || r.hi > 100 {
            return Err(Error::Config(format!("jpeg_quality range [{}, {}] is invalid", r.lo, r.hi)));
        }
        if self.scale < 2 {
            return Err(Error::Config(format!("scale must be at least 2, got {}", self.scale)));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 8] = [
        "blur_lo",
        "blur_hi",
        "noise_lo",
        "noise_hi",
        "quality_lo",
        "quality_hi",
        "scale",
        "second_stage",
    ];

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let k = |s: &str| format!("{prefix}{s}");
        doc.set(&k("blur_lo"), self.blur_sigma.lo);
        doc.set(&k("blur_hi"), self.blur_sigma.hi);
        doc.set(&k("noise_lo"), self.noise_sigma.lo);
        doc.set(&k("noise_hi"), self.noise_sigma.hi);
        doc.set(&k("quality_lo"), self.jpeg_quality.lo);
        doc.set(&k("quality_hi"), self.jpeg_quality.hi);
        doc.set(&k("scale"), self.scale);
        doc.set(&k("second_stage"), self.second_stage);
    }

    pub fn read_kv(mut self, doc: &KvDoc, prefix: &str) -> Result<Self> {
        let k = |s: &str| format!("{prefix}{s}");
        macro_rules! field {
            ($key:literal, $($place:tt)+) => {
                if let Some(v) = doc.get(&k($key))? {
                    self.$($place)+ = v;
                }
            };
        }
        field!("blur_lo", blur_sigma.lo);
        field!("blur_hi", blur_sigma.hi);
        field!("noise_lo", noise_sigma.lo);
        field!("noise_hi", noise_sigma.hi);
        field!("quality_lo", jpeg_quality.lo);
        field!("quality_hi", jpeg_quality.hi);
        field!("scale", scale);
        field!("second_stage", second_stage);
        self.validate()?;
        Ok(self)
    }
}

fn draw(rng: &mut impl Rng, r: Range<f64>) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.gen_range(r.lo..=r.hi)
    }
}

fn draw_quality(rng: &mut impl Rng, r: Range<u8>) -> u8 {
    rng.gen_range(r.lo..=r.hi)
}

/// Normalized 1-D Gaussian taps of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Mirror index without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::contract(format!("blur sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (h, w, c) = img.dims();
    let planes: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let src = img.plane(ch);
            let mut tmp = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    tmp[y * w + x] = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, wk)| wk * src[y * w + reflect(x as i64 + k as i64 - radius, w)])
                        .sum();
                }
            }
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    out[y * w + x] = kernel
                        .iter()
                        .enumerate()
                        .map(|(k, wk)| wk * tmp[reflect(y as i64 + k as i64 - radius, h) * w + x])
                        .sum();
                }
            }
            out
        })
        .collect();
    Image::from_planes(h, w, &planes)
}

/// Add i.i.d. `N(0, σ²)` noise to every value, then clamp to `[0, 1]`.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: Seed) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::contract(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = seed.rng();
    let (h, w, c) = img.dims();
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            (v as f64 + sigma * z) as f32
        })
        .collect();
    Image::from_clamped(h, w, c, data)
}

/// The settings actually drawn for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawnStage {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub quality: u8,
}

/// Degrade one HR image into its LR counterpart.
pub fn degrade_pipeline(hr: &Image, params: &DegradeParams, seed: Seed) -> Result<Image> {
    degrade_with_trace(hr, params, seed).map(|(lr, _)| lr)
}

/// Like [`degrade_pipeline`], also returning the drawn per-stage settings.
pub fn degrade_with_trace(hr: &Image, params: &DegradeParams, seed: Seed) -> Result<(Image, Vec<DrawnStage>)> {
    params.validate()?;
    let (h, w, _) = hr.dims();
    let s = params.scale;
    if h % s != 0 || w % s != 0 {
        return Err(Error::contract(format!("HR size {h}x{w} is not divisible by scale {s}")));
    }
    let mut rng = seed.derive(0).rng();
    let stages = if params.second_stage { 2 } else { 1 };
    let mut trace = Vec::with_capacity(stages);
    let mut img = hr.clone();
    for stage in 0..stages {
        let drawn = DrawnStage {
            blur_sigma: draw(&mut rng, params.blur_sigma),
            noise_sigma: draw(&mut rng, params.noise_sigma),
            quality: draw_quality(&mut rng, params.jpeg_quality),
        };
        img = gaussian_blur(&img, drawn.blur_sigma)?;
        if stage == 0 {
            img = resize(&img, h / s, w / s, ResizeMode::Area)?;
        }
        img = add_gaussian_noise(&img, drawn.noise_sigma, seed.derive(1 + stage as u64))?;
        img = jpeg_like_compress(&img, drawn.quality)?;
        trace.push(drawn);
    }
    Ok((img, trace))
}

/// Degrade a batch, image `i` using `seed.derive(i)`.
pub fn degrade_batch(hrs: &[Image], params: &DegradeParams, seed: Seed) -> Result<Vec<Image>> {
    par::try_map_indices(hrs.len(), |i| degrade_pipeline(&hrs[i], params, seed.derive(i as u64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{gen_procedural_hr, ProceduralKind};

    #[test]
    fn params_kv_round_trip() {
        let p = DegradeParams { second_stage: true, jpeg_quality: Range { lo: 40, hi: 60 }, ..DegradeParams::default() };
        let mut doc = KvDoc::new();
        p.write_kv(&mut doc, "degrade.");
        assert_eq!(doc.len(), DegradeParams::KEYS.len());
        assert_eq!(DegradeParams::default().read_kv(&doc, "degrade.").unwrap(), p);
        doc.set("degrade.quality_hi", 101);
        assert!(DegradeParams::default().read_kv(&doc, "degrade.").is_err());
    }

    #[test]
    fn blur_identity_and_constants() {
        let img = gen_procedural_hr(Seed(2), 16, ProceduralKind::Mixed).unwrap();
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let flat = Image::filled(9, 7, 3, 0.42).unwrap();
        for sigma in [0.3, 1.0, 2.5, 6.0] {
            let out = gaussian_blur(&flat, sigma).unwrap();
            assert!(out.max_abs_diff(&flat).unwrap() < 1e-6);
        }
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn impulse_center_is_kernel_peak() {
        let mut data = vec![0.0; 21 * 21];
        data[10 * 21 + 10] = 1.0;
        let img = Image::new(21, 21, 1, data).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        // radius 3, taps exp(-i^2/2) normalized; 2-D centre = g(0)^2
        let z: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let expected = 1.0 / (z * z);
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert!((out.get(10, 10, 0) as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn noise_identity_and_determinism() {
        let img = gen_procedural_hr(Seed(2), 16, ProceduralKind::Blobs).unwrap();
        assert_eq!(add_gaussian_noise(&img, 0.0, Seed(1)).unwrap(), img);
        let a = add_gaussian_noise(&img, 0.05, Seed(1)).unwrap();
        let b = add_gaussian_noise(&img, 0.05, Seed(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_gaussian_noise(&img, 0.05, Seed(2)).unwrap());
    }

    #[test]
    fn noise_mean_abs_deviation_is_half_normal() {
        // 1000 x 1000 mid-gray pixels; clamping never triggers at 5 sigma
        let img = Image::filled(1000, 1000, 1, 0.5).unwrap();
        let out = add_gaussian_noise(&img, 0.1, Seed(11)).unwrap();
        let mad: f64 =
            out.data().iter().map(|&v| (v as f64 - 0.5).abs()).sum::<f64>() / 1e6;
        let expected = 0.1 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mad - expected).abs() <= 0.01 * expected, "{mad} vs {expected}");
    }

    #[test]
    fn identity_pipeline_is_area_downsample() {
        let hr = gen_procedural_hr(Seed(3), 64, ProceduralKind::Mixed).unwrap();
        let lr = degrade_pipeline(&hr, &DegradeParams::identity(4), Seed(0)).unwrap();
        let area = resize(&hr, 16, 16, ResizeMode::Area).unwrap();
        assert!(lr.max_abs_diff(&area).unwrap() <= 2.0 / 255.0);
    }

    #[test]
    fn output_size_follows_scale() {
        let hr = gen_procedural_hr(Seed(3), 512, ProceduralKind::Gradient).unwrap();
        let lr = degrade_pipeline(&hr, &DegradeParams::default(), Seed(0)).unwrap();
        assert_eq!(lr.dims(), (128, 128, 3));
        let two = DegradeParams { second_stage: true, ..DegradeParams::default() };
        let (lr2, trace) = degrade_with_trace(&hr.crop(0, 0, 64, 64).unwrap(), &two, Seed(0)).unwrap();
        assert_eq!(lr2.dims(), (16, 16, 3));
        assert_eq!(trace.len(), 2);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let hr = gen_procedural_hr(Seed(0), 64, ProceduralKind::Checker).unwrap();
        let p = DegradeParams { second_stage: true, ..DegradeParams::default() };
        assert_eq!(
            degrade_pipeline(&hr, &p, Seed(9)).unwrap(),
            degrade_pipeline(&hr, &p, Seed(9)).unwrap()
        );
        let batch = degrade_batch(&[hr.clone(), hr.clone()], &p, Seed(9)).unwrap();
        assert_eq!(batch[0], degrade_pipeline(&hr, &p, Seed(9).derive(0)).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let hr = gen_procedural_hr(Seed(0), 48, ProceduralKind::Blobs).unwrap();
        let p = DegradeParams { scale: 5, ..DegradeParams::default() };
        assert!(degrade_pipeline(&hr, &p, Seed(0)).unwrap_err().is_contract_violation());
        let p = DegradeParams { jpeg_quality: Range { lo: 90, hi: 40 }, ..DegradeParams::default() };
        assert!(degrade_pipeline(&hr, &p, Seed(0)).is_err());
        let p = DegradeParams { scale: 1, ..DegradeParams::default() };
        assert!(degrade_pipeline(&hr, &p, Seed(0)).is_err());
    }

    #[test]
    fn severity_grows_with_noise() {
        let hr = gen_procedural_hr(Seed(12), 64, ProceduralKind::Mixed).unwrap();
        let mse = |sigma: f64| {
            let p = DegradeParams { noise_sigma: Range::fixed(sigma), ..DegradeParams::default() };
            let lr = degrade_pipeline(&hr, &p, Seed(4)).unwrap();
            let up = resize(&lr, 64, 64, ResizeMode::Bilinear).unwrap();
            hr.data().iter().zip(up.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
        };
        let grid = [mse(0.0), mse(0.05), mse(0.15)];
        assert!(grid[0] <= grid[1] && grid[1] <= grid[2], "{grid:?}");
    }
}
