//! Flow-matching training with AdamW, clipping and an EMA shadow.

mod loss;
mod optim;
mod recipe;

pub use loss::{
    batch_value_and_grad, draw_flow, flow_loss, flow_loss_and_grad, make_zt, normal_latent, record_flow_loss,
    FlowDraw, TrainPair,
};
pub use optim::{clip_scale, global_norm, optimizer_step, AdamState, StepStats};
pub use recipe::{LrSchedule, TrainRecipe};

use std::io::Write;

use rand::seq::SliceRandom;

use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Real};
use crate::par;
use crate::rng::Seed;

/// Progress callbacks of a training run.
pub trait TrainObserver<T: Real> {
    fn on_step(&mut self, _step: usize, _loss: f64) -> Result<()> {
        Ok(())
    }

    /// Steps between checkpoint callbacks; 0 disables them.
    fn checkpoint_every(&self) -> usize {
        0
    }

    fn on_checkpoint(&mut self, _step: usize, _model: &Model<T>, _ema: &ParamSet<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Real> TrainObserver<T> for () {}

/// Writes `step <n> loss <f>` lines.
pub struct LossLog<W> {
    pub out: W,
}

impl<W: Write> LossLog<W> {
    pub fn line(&mut self, step: usize, loss: f64) -> Result<()> {
        writeln!(self.out, "step {step} loss {loss}").map_err(|e| Error::io("<loss log>", e))
    }
}

impl<T: Real, W: Write> TrainObserver<T> for LossLog<W> {
    fn on_step(&mut self, step: usize, loss: f64) -> Result<()> {
        self.line(step, loss)
    }
}

/// Parse a loss log back into `(step, loss)` pairs.
pub fn parse_loss_log(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut offset = 0;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["step", n, "loss", v] => match (n.parse(), v.parse()) {
                (Ok(n), Ok(v)) => out.push((n, v)),
                _ => {
                    return Err(Error::Parse {
                        offset,
                        message: format!("bad loss line {line:?}"),
                    })
                }
            },
            _ => {
                return Err(Error::Parse {
                    offset,
                    message: format!("bad loss line {line:?}"),
                })
            }
        }
        offset += line.len();
    }
    Ok(out)
}

/// Corpus indices for `step`: each epoch visits a fresh permutation.
pub fn batch_indices(corpus: usize, batch: usize, step: usize, seed: Seed) -> Vec<usize> {
    (0..batch)
        .map(|j| {
            let pos = step * batch + j;
            let epoch = pos / corpus;
            let mut perm: Vec<usize> = (0..corpus).collect();
            perm.shuffle(&mut seed.derive2(0xE90C, epoch as u64).rng());
            perm[pos % corpus]
        })
        .collect()
}

/// Seed of the random draws of training step `step`.
pub fn step_seed(seed: u64, step: usize) -> Seed {
    Seed(seed).derive2(1, step as u64)
}

/// Model, EMA shadow and optimizer state of a run in progress.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: Model<T>,
    pub ema: ParamSet<T>,
    pub adam: AdamState,
    pub losses: Vec<f64>,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: Model<T>) -> Self {
        let ema = model.params.clone();
        let adam = AdamState::new(&model.params);
        TrainState {
            model,
            ema,
            adam,
            losses: Vec::new(),
        }
    }
}

/// Run `recipe.steps` optimizer steps of flow matching on `pairs`.
pub fn train<T: Real>(
    pairs: &[TrainPair<T>],
    recipe: &TrainRecipe,
    model: Model<T>,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainState<T>> {
    recipe.validate()?;
    if pairs.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut state = TrainState::new(model);
    for step in 0..recipe.steps {
        let batch: Vec<&TrainPair<T>> = batch_indices(pairs.len(), recipe.batch, step, Seed(recipe.seed))
            .into_iter()
            .map(|i| &pairs[i])
            .collect();
        let (loss, grads) =
            flow_loss_and_grad(&state.model, &state.model.params, &batch, step_seed(recipe.seed, step), recipe)?;
        optimizer_step(&mut state.model.params, &grads, &mut state.adam, &mut state.ema, recipe)?;
        state.losses.push(loss);
        observer.on_step(step + 1, loss)?;
        let every = observer.checkpoint_every();
        if every > 0 && ((step + 1) % every == 0 || step + 1 == recipe.steps) {
            observer.on_checkpoint(step + 1, &state.model, &state.ema)?;
        }
    }
    Ok(state)
}

/// Flow loss averaged over `draws` fixed draws per pair, for comparing models
/// on identical noise.
pub fn eval_flow_loss<T: Real, M: crate::backbone::VelocityModel<T>>(
    model: &M,
    pairs: &[TrainPair<T>],
    draws: usize,
    seed: Seed,
    recipe: &TrainRecipe,
) -> Result<f64> {
    let losses = par::try_map_indices(pairs.len(), |i| {
        let batch = vec![&pairs[i]; draws];
        flow_loss(model, &batch, seed.derive(i as u64), recipe)
    })?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}
