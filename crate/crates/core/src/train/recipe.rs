use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Learning-rate schedule over the optimizer steps of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// From `lr` at the first step linearly down to `lr/steps` at the last.
    LinearDecay,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::LinearDecay => "linear_decay",
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "linear_decay" => Ok(LrSchedule::LinearDecay),
            _ => Err(Error::Config(format!("unsupported lr_schedule {s:?}"))),
        }
    }
}

/// Optimization recipe. Defaults are the full-scale multi-step pretraining
/// values; step count and batch are desk-scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub ema_decay: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub p_partial: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            lr: 1.0e-4,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            ema_decay: 0.9999,
            warmup_steps: 0,
            steps: 2000,
            batch: 8,
            seed: 0,
            p_partial: 0.1,
            alpha_lo: 0.05,
            alpha_hi: 0.25,
        }
    }
}

impl TrainRecipe {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("ema_decay", self.ema_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.warmup_steps != 0 {
            return Err(Error::Config("only a constant learning rate without warm-up is supported".into()));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_partial) {
            return Err(Error::Config(format!("p_partial must lie in [0, 1], got {}", self.p_partial)));
        }
        if !(self.alpha_lo > 0.0 && self.alpha_lo <= self.alpha_hi && self.alpha_hi < 1.0) {
            return Err(Error::Config(format!(
                "alpha range [{}, {}] must satisfy 0 < lo <= hi < 1",
                self.alpha_lo, self.alpha_hi
            )));
        }
        Ok(())
    }

    /// Learning rate of optimizer step `step`, counted from 1.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::LinearDecay => {
                let done = step.saturating_sub(1).min(self.steps.saturating_sub(1));
                self.lr * (self.steps - done) as f64 / self.steps as f64
            }
        }
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let k = |s: &str| format!("{prefix}{s}");
        doc.set(&k("lr"), self.lr);
        doc.set(&k("lr_schedule"), self.lr_schedule.name());
        doc.set(&k("warmup_steps"), self.warmup_steps);
        doc.set(&k("beta1"), self.beta1);
        doc.set(&k("beta2"), self.beta2);
        doc.set(&k("adam_eps"), self.adam_eps);
        doc.set(&k("weight_decay"), self.weight_decay);
        doc.set(&k("grad_clip"), self.grad_clip);
        doc.set(&k("ema_decay"), self.ema_decay);
        doc.set(&k("steps"), self.steps);
        doc.set(&k("batch"), self.batch);
        doc.set(&k("seed"), self.seed);
        doc.set(&k("p_partial"), self.p_partial);
        doc.set(&k("alpha_lo"), self.alpha_lo);
        doc.set(&k("alpha_hi"), self.alpha_hi);
    }

    pub fn read_kv(mut self, doc: &KvDoc, prefix: &str) -> Result<Self> {
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = doc.get(&format!("{prefix}{}", stringify!($name)))? {
                    self.$name = v;
                }
            };
        }
        field!(lr);
        field!(lr_schedule);
        field!(warmup_steps);
        field!(beta1);
        field!(beta2);
        field!(adam_eps);
        field!(weight_decay);
        field!(grad_clip);
        field!(ema_decay);
        field!(steps);
        field!(batch);
        field!(seed);
        field!(p_partial);
        field!(alpha_lo);
        field!(alpha_hi);
        self.validate()?;
        Ok(self)
    }

    pub const KEYS: [&'static str; 15] = [
        "lr",
        "lr_schedule",
        "warmup_steps",
        "beta1",
        "beta2",
        "adam_eps",
        "weight_decay",
        "grad_clip",
        "ema_decay",
        "steps",
        "batch",
        "seed",
        "p_partial",
        "alpha_lo",
        "alpha_hi",
    ];
}
