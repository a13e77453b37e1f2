//! A small diffusion transformer predicting latent velocities.

mod checkpoint;
mod config;
mod model;
mod tokens;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, WeightSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use model::{parameter_count, Model};
pub use tokens::{patchify, timestep_features, unpatchify};

use crate::conditioning::CondMode;
use crate::error::Result;
use crate::numerics::{Graph, Real, Tensor, Var};

/// Anything that maps `(z_t, t, r, κ)` to a velocity-like latent.
///
/// Predictions are recorded into a [`Graph`] so learned models can be
/// differentiated; the recorded value may use an internal layout, converted
/// with [`to_output_layout`](Self::to_output_layout) and
/// [`from_output_layout`](Self::from_output_layout).
pub trait VelocityModel<T: Real>: Sync {
    /// Record a prediction. With `trainable`, parameters are registered for
    /// gradients; otherwise they enter as constants.
    fn record(
        &self,
        g: &mut Graph<T>,
        z_t: &Tensor<T>,
        t: f64,
        r: f64,
        mode: &CondMode<T>,
        trainable: bool,
    ) -> Result<Var>;

    fn to_output_layout(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(latent.clone())
    }

    fn from_output_layout(&self, out: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(out.clone())
    }

    /// Evaluate without gradients, in latent layout.
    fn predict(&self, z_t: &Tensor<T>, t: f64, r: f64, mode: &CondMode<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let out = self.record(&mut g, z_t, t, r, mode, false)?;
        self.from_output_layout(g.value(out))
    }
}

/// A gradient-free model given by a closure, for analytic teachers and stubs.
pub struct FnModel<F>(pub F);

impl<T, F> VelocityModel<T> for FnModel<F>
where
    T: Real,
    F: Fn(&Tensor<T>, f64, f64, &CondMode<T>) -> Result<Tensor<T>> + Sync,
{
    fn record(
        &self,
        g: &mut Graph<T>,
        z_t: &Tensor<T>,
        t: f64,
        r: f64,
        mode: &CondMode<T>,
        _trainable: bool,
    ) -> Result<Var> {
        let v = (self.0)(z_t, t, r, mode)?;
        Ok(g.constant(v))
    }
}
