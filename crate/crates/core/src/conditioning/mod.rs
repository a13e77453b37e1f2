//! LR-derived conditions: the structural latent, semantic tokens, the
//! conditioning mode and the two guidance combiners.

mod codec;
mod semantic;

pub use codec::{make_structural_condition, LatentCodec, LATENT_MEAN, LATENT_STD};
pub use semantic::SemanticEncoder;

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::numerics::{Real, Tensor};

/// Everything needed to turn an LR image into model conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub codec: LatentCodec,
    pub semantic: SemanticEncoder,
    /// HR size over LR size.
    pub scale: usize,
}

impl Conditioner {
    /// `(c_str, c_sem)` for an LR image.
    pub fn conditions<T: Real>(&self, lr: &Image) -> Result<(Tensor<T>, Tensor<T>)> {
        let (h, w, _) = lr.dims();
        let c_str = make_structural_condition(&self.codec, lr, h * self.scale, w * self.scale)?;
        Ok((c_str, self.semantic.encode(lr)?))
    }

    /// Latent shape of the HR image paired with an `h × w × c` LR image.
    pub fn latent_shape(&self, h: usize, w: usize, c: usize) -> Result<[usize; 3]> {
        self.codec.latent_shape(h * self.scale, w * self.scale, c)
    }
}

/// Which conditions the backbone sees.
#[derive(Debug, Clone, PartialEq)]
pub enum CondMode<T> {
    /// Structural latent plus semantic tokens.
    Full { c_str: Tensor<T>, c_sem: Tensor<T> },
    /// Attenuated structural latent, no semantic tokens.
    Partial { c_str_scaled: Tensor<T>, alpha: f64 },
    /// Full-strength structural latent, no semantic tokens.
    StructureOnly { c_str: Tensor<T> },
}

impl<T: Real> CondMode<T> {
    pub fn full(c_str: Tensor<T>, c_sem: Tensor<T>) -> Self {
        CondMode::Full { c_str, c_sem }
    }

    /// Partial mode with the stored latent `alpha · c_str`.
    pub fn partial(c_str: &Tensor<T>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::contract(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(CondMode::Partial {
            c_str_scaled: c_str.scale(T::c(alpha)),
            alpha,
        })
    }

    /// The latent concatenated with `z_t`.
    pub fn structural(&self) -> &Tensor<T> {
        match self {
            CondMode::Full { c_str, .. } | CondMode::StructureOnly { c_str } => c_str,
            CondMode::Partial { c_str_scaled, .. } => c_str_scaled,
        }
    }

    /// Semantic tokens, absent outside Full mode.
    pub fn semantic(&self) -> Option<&Tensor<T>> {
        match self {
            CondMode::Full { c_sem, .. } => Some(c_sem),
            _ => None,
        }
    }

    pub fn is_partial(&self) -> bool {
        matches!(self, CondMode::Partial { .. })
    }
}

/// Draw Partial with probability `p_partial` (α uniform on `alpha_range`),
/// otherwise Full.
pub fn sample_cond_mode<T: Real>(
    rng: &mut impl Rng,
    c_str: &Tensor<T>,
    c_sem: &Tensor<T>,
    p_partial: f64,
    alpha_range: (f64, f64),
) -> Result<CondMode<T>> {
    if !(0.0..=1.0).contains(&p_partial) {
        return Err(Error::contract(format!("p_partial must lie in [0, 1], got {p_partial}")));
    }
    let (lo, hi) = alpha_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::contract(format!("alpha range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1")));
    }
    if rng.gen::<f64>() < p_partial {
        let alpha = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        CondMode::partial(c_str, alpha)
    } else {
        Ok(CondMode::full(c_str.clone(), c_sem.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceStyle {
    /// Full branch against the attenuated, semantics-free partial branch.
    Restoration,
    /// Full branch against a full-structure, semantics-free branch.
    T2iBaseline,
    None,
}

impl GuidanceStyle {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceStyle::Restoration => "restoration",
            GuidanceStyle::T2iBaseline => "t2i_baseline",
            GuidanceStyle::None => "none",
        }
    }
}

impl FromStr for GuidanceStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restoration" => Ok(GuidanceStyle::Restoration),
            "t2i_baseline" | "t2i" => Ok(GuidanceStyle::T2iBaseline),
            "none" => Ok(GuidanceStyle::None),
            _ => Err(Error::Config(format!("unknown guidance style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub alpha_infer: f64,
    pub style: GuidanceStyle,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            scale: 1.0,
            alpha_infer: 0.15,
            style: GuidanceStyle::Restoration,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("guidance scale must be finite and >= 0, got {}", self.scale)));
        }
        if !(self.alpha_infer > 0.0 && self.alpha_infer < 1.0) {
            return Err(Error::Config(format!("alpha_infer must lie in (0, 1), got {}", self.alpha_infer)));
        }
        Ok(())
    }
}

/// `s·a + (1−s)·b`, written so that `s = 1` returns `a` and `s = 0` returns
/// `b` bit for bit.
fn blend<T: Real>(a: &Tensor<T>, b: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    let (sa, sb) = (T::c(s), T::c(1.0 - s));
    a.zip_map(b, |x, y| sa * x + sb * y)
}

/// Restoration-oriented guidance: `v_pcond + s·(v_cond − v_pcond)`.
pub fn guide<T: Real>(v_cond: &Tensor<T>, v_pcond: &Tensor<T>, cfg: &GuidanceConfig) -> Result<Tensor<T>> {
    v_cond.same_shape(v_pcond, "guidance branches")?;
    match cfg.style {
        GuidanceStyle::None => Ok(v_cond.clone()),
        _ => blend(v_cond, v_pcond, cfg.scale),
    }
}

/// Text-to-image style guidance: `v_nosem + s·(v_full − v_nosem)`.
pub fn guide_t2i_baseline<T: Real>(v_full: &Tensor<T>, v_nosem: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    v_full.same_shape(v_nosem, "guidance branches")?;
    blend(v_full, v_nosem, scale)
}
