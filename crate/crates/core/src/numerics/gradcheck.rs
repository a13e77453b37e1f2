//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Seed;

/// A scalar objective over a [`ParamSet`] with an analytic gradient.
pub trait Objective<T: Real> {
    /// Loss value. Implementations may evaluate in higher precision than `T`.
    fn value(&self, params: &ParamSet<T>) -> Result<f64>;

    /// Analytic gradient, one tensor per parameter.
    fn gradient(&self, params: &ParamSet<T>) -> Result<Vec<Tensor<T>>>;
}

/// Central-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error O(h²).
    ThreePoint,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error O(h⁴). Permits a
    /// larger `h`, which lowers the rounding floor on small gradients. Weights
    /// are recomputed for the offsets actually realized in `T`.
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub eps: f64,
    pub max_coords_per_tensor: usize,
    pub seed: Seed,
    pub stencil: Stencil,
    /// Denominator floor for the relative error, as a fraction of the
    /// largest numeric gradient magnitude among the checked coordinates.
    pub rel_floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            max_coords_per_tensor: 64,
            seed: Seed(0x6ad),
            stencil: Stencil::ThreePoint,
            rel_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compare analytic gradients with central differences on up to
/// `max_coords_per_tensor` sampled coordinates of every tensor. The error
/// of a coordinate is `|analytic - numeric| / max(|numeric|, floor)` with
/// `floor = rel_floor * max |numeric|`, and at least 1e-12.
pub fn finite_diff_check<T: Real>(
    objective: &impl Objective<T>,
    params: &ParamSet<T>,
    opts: FdOptions,
) -> Result<FdReport> {
    let analytic = objective.gradient(params)?;
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient has {} tensors for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut rng = opts.seed.rng();
    let mut work = params.clone();
    // (tensor, index, analytic, numeric)
    let mut checked: Vec<(usize, usize, f64, f64)> = Vec::new();
    for id in 0..params.len() {
        let n = params.get(id).len();
        let coords: Vec<usize> = if n <= opts.max_coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            let mut eval = |offset: f64| -> Result<(f64, f64)> {
                let x = orig + T::c(offset);
                work.get_mut(id).data_mut()[i] = x;
                let f = objective.value(&work)?;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at {}[{i}] is not finite",
                        params.name(id)
                    )));
                }
                // the realized offset, which differs from `offset` after rounding in T
                Ok((x.f64() - orig.f64(), f))
            };
            let numeric = match opts.stencil {
                Stencil::ThreePoint => {
                    let (du, fu) = eval(opts.eps)?;
                    let (dd, fd) = eval(-opts.eps)?;
                    (fu - fd) / (du - dd)
                }
                Stencil::FivePoint => {
                    let points = [eval(-2.0 * opts.eps)?, eval(-opts.eps)?, eval(opts.eps)?, eval(2.0 * opts.eps)?];
                    let offsets = points.map(|(d, _)| d);
                    // the weights sum to zero; differencing keeps a flat loss exactly flat
                    let base = points[0].1;
                    points.iter().zip(derivative_weights(offsets)).map(|((_, f), w)| w * (f - base)).sum()
                }
            };
            work.get_mut(id).data_mut()[i] = orig;
            checked.push((id, i, analytic[id].data()[i].f64(), numeric));
        }
    }
    let largest = checked.iter().map(|c| c.3.abs()).fold(0.0, f64::max);
    let floor = (opts.rel_floor * largest).max(1e-12);
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        coords_checked: checked.len(),
    };
    for (id, i, a, numeric) in checked {
        let abs = (a - numeric).abs();
        let rel = abs / numeric.abs().max(floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((params.name(id).to_string(), i));
        }
    }
    Ok(report)
}

/// Weights `w` with `Σ w_k f(d_k)` the derivative at 0 of the cubic
/// interpolating `f` at the four offsets `d`.
fn derivative_weights(d: [f64; 4]) -> [f64; 4] {
    let mut w = [0.0; 4];
    for i in 0..4 {
        let denom: f64 = (0..4).filter(|&j| j != i).map(|j| d[i] - d[j]).product();
        // d/dx Π_{j≠i}(x − d_j) at x = 0
        let mut num = 0.0;
        for k in (0..4).filter(|&k| k != i) {
            num += (0..4).filter(|&j| j != i && j != k).map(|j| -d[j]).product::<f64>();
        }
        w[i] = num / denom;
    }
    w
}
