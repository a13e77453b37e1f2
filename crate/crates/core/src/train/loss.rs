use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainRecipe;
use crate::backbone::VelocityModel;
use crate::conditioning::{make_structural_condition, sample_cond_mode, CondMode, LatentCodec, SemanticEncoder};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::numerics::{Graph, ParamSet, Real, Tensor, Var};
use crate::par;
use crate::rng::Seed;

/// One training example: the clean latent and both LR-derived conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair<T> {
    pub z0: Tensor<T>,
    pub c_str: Tensor<T>,
    pub c_sem: Tensor<T>,
}

impl<T: Real> TrainPair<T> {
    pub fn new(hr: &Image, lr: &Image, codec: &LatentCodec, semantic: &SemanticEncoder) -> Result<Self> {
        Ok(TrainPair {
            z0: codec.encode(hr)?,
            c_str: make_structural_condition(codec, lr, hr.height(), hr.width())?,
            c_sem: semantic.encode(lr)?,
        })
    }

    pub fn full_mode(&self) -> CondMode<T> {
        CondMode::full(self.c_str.clone(), self.c_sem.clone())
    }
}

/// Standard normal latent of the given shape.
pub fn normal_latent<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::c(z)
    })
}

/// `z_t = (1 − t)·z0 + t·z1` and `v_t = z1 − z0`.
pub fn make_zt<T: Real>(z0: &Tensor<T>, z1: &Tensor<T>, t: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    z0.same_shape(z1, "z0 and z1")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("t must lie in [0, 1], got {t}")));
    }
    let (a, b) = (T::c(1.0 - t), T::c(t));
    let z_t = z0.zip_map(z1, |x, y| a * x + b * y)?;
    let v_t = z1.sub(z0)?;
    Ok((z_t, v_t))
}

/// The random inputs of one flow-matching sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDraw<T> {
    pub z1: Tensor<T>,
    pub t: f64,
    pub mode: CondMode<T>,
}

/// Draw `t ~ U[0, 1)`, `z1 ~ N(0, I)` and a conditioning mode.
pub fn draw_flow<T: Real>(pair: &TrainPair<T>, seed: Seed, recipe: &TrainRecipe) -> Result<FlowDraw<T>> {
    let mut rng = seed.rng();
    let t = rng.gen::<f64>();
    let z1 = normal_latent(pair.z0.shape(), &mut rng);
    let mode = sample_cond_mode(&mut rng, &pair.c_str, &pair.c_sem, recipe.p_partial, (recipe.alpha_lo, recipe.alpha_hi))?;
    Ok(FlowDraw { z1, t, mode })
}

/// Record `mean((v_θ(z_t, t, κ) − v_t)²)` for one sample.
pub fn record_flow_loss<T: Real, M: VelocityModel<T> + ?Sized>(
    model: &M,
    g: &mut Graph<T>,
    z0: &Tensor<T>,
    draw: &FlowDraw<T>,
    trainable: bool,
) -> Result<Var> {
    let (z_t, v_t) = make_zt(z0, &draw.z1, draw.t)?;
    let pred = model.record(g, &z_t, draw.t, draw.t, &draw.mode, trainable)?;
    let target = g.constant(model.to_output_layout(&v_t)?);
    let diff = g.sub(pred, target)?;
    let loss = g.mean_square(diff);
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("flow loss is {value} at t = {}", draw.t)));
    }
    Ok(loss)
}

/// Mean over `count` per-sample scalar graphs of their value and gradient
/// with respect to `params`. Samples are evaluated concurrently; gradients are
/// summed in index order.
pub fn batch_value_and_grad<T, F>(params: &ParamSet<T>, count: usize, per_sample: F) -> Result<(f64, Vec<Tensor<T>>)>
where
    T: Real,
    F: Fn(usize, &mut Graph<T>) -> Result<Var> + Sync + Send,
{
    if count == 0 {
        return Err(Error::contract("empty batch"));
    }
    let results = par::try_map_indices(count, |i| {
        let mut g = Graph::new();
        let loss = per_sample(i, &mut g)?;
        let value = g.value(loss).data()[0].f64();
        let grads = g.backward(loss)?;
        Ok::<_, Error>((value, grads))
    })?;
    let mut total = 0.0;
    let mut sum = params.zeros_like();
    for (value, grads) in results {
        total += value;
        for (id, acc) in sum.iter_mut().enumerate() {
            if let Some(g) = grads.get(id) {
                // vectors enter graphs as single rows
                if g.shape() == acc.shape() {
                    acc.axpy(T::one(), g)?;
                } else {
                    acc.axpy(T::one(), &g.clone().reshape(params.get(id).shape())?)?;
                }
            }
        }
    }
    let inv = T::c(1.0 / count as f64);
    Ok((total / count as f64, sum.into_iter().map(|g| g.scale(inv)).collect()))
}

/// Batch flow loss; sample `i` draws from `seed.derive(i)`.
pub fn flow_loss<T: Real, M: VelocityModel<T> + ?Sized>(
    model: &M,
    batch: &[&TrainPair<T>],
    seed: Seed,
    recipe: &TrainRecipe,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let values = par::try_map_indices(batch.len(), |i| {
        let draw = draw_flow(batch[i], seed.derive(i as u64), recipe)?;
        let mut g = Graph::new();
        let loss = record_flow_loss(model, &mut g, &batch[i].z0, &draw, false)?;
        Ok::<_, Error>(g.value(loss).data()[0].f64())
    })?;
    Ok(values.iter().sum::<f64>() / batch.len() as f64)
}

/// [`flow_loss`] together with its gradient with respect to `params`.
pub fn flow_loss_and_grad<T: Real, M: VelocityModel<T> + ?Sized>(
    model: &M,
    params: &ParamSet<T>,
    batch: &[&TrainPair<T>],
    seed: Seed,
    recipe: &TrainRecipe,
) -> Result<(f64, Vec<Tensor<T>>)> {
    batch_value_and_grad(params, batch.len(), |i, g| {
        let draw = draw_flow(batch[i], seed.derive(i as u64), recipe)?;
        record_flow_loss(model, g, &batch[i].z0, &draw, true)
    })
}
