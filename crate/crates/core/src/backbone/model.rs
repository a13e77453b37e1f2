use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tokens::{patchify, timestep_features, unpatchify};
use super::{ModelConfig, VelocityModel};
use crate::conditioning::CondMode;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamSet, Real, Tensor, Var};
use crate::rng::Seed;

const LN_EPS: f64 = 1e-6;

/// Network weights together with the configuration that shapes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

/// Closed-form number of scalars in a model built from `cfg`.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let d = cfg.dim;
    let linear = |i: usize, o: usize| i * o + o;
    let time_mlp = 2 * linear(d, d);
    // key projections carry no bias: softmax ignores a shift shared by all keys
    let block = linear(d, 9 * d)
        + 3 * linear(d, d)
        + d * d
        + 2 * linear(d, d)
        + linear(cfg.d_sem, d)
        + cfg.d_sem * d
        + linear(d, cfg.hidden())
        + linear(cfg.hidden(), d);
    linear(cfg.token_in(), d)
        + cfg.tokens() * d
        + time_mlp
        + if cfg.student_mode { time_mlp } else { 0 }
        + cfg.d_sem
        + cfg.depth * block
        + linear(d, 2 * d)
        + linear(d, cfg.token_out())
}

enum Init {
    Xavier,
    Zero,
    Normal(f64),
}

struct Builder<'a, T> {
    params: ParamSet<T>,
    rng: &'a mut crate::rng::Rng,
}

impl<T: Real> Builder<'_, T> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        let t = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::Xavier => {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| T::c(rng.gen_range(-bound..bound)))
            }
            Init::Normal(std) => {
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::c(std * z)
                })
            }
        };
        self.params.insert(name, t)?;
        Ok(())
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> Result<()> {
        let init = if zero { Init::Zero } else { Init::Xavier };
        self.tensor(&format!("{name}.w"), &[fan_in, fan_out], init)?;
        self.tensor(&format!("{name}.b"), &[fan_out], Init::Zero)
    }
}

impl<T: Real> Model<T> {
    /// Deterministic initialization. Modulation and output head start at zero,
    /// so the initial prediction is exactly zero.
    pub fn init(config: ModelConfig, seed: Seed) -> Result<Self> {
        config.validate()?;
        let mut rng = seed.rng();
        let mut b = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let d = config.dim;
        b.linear("embed", config.token_in(), d, false)?;
        b.tensor("pos", &[config.tokens(), d], Init::Normal(0.02))?;
        b.linear("time.fc1", d, d, false)?;
        b.linear("time.fc2", d, d, false)?;
        if config.student_mode {
            b.linear("rtime.fc1", d, d, false)?;
            b.linear("rtime.fc2", d, d, true)?;
        }
        b.tensor("null_sem", &[1, config.d_sem], Init::Normal(1.0))?;
        for i in 0..config.depth {
            let p = format!("blocks.{i}");
            b.linear(&format!("{p}.mod"), d, 9 * d, true)?;
            for name in ["q", "v", "o", "xq", "xo"] {
                b.linear(&format!("{p}.{name}"), d, d, false)?;
            }
            b.tensor(&format!("{p}.k.w"), &[d, d], Init::Xavier)?;
            b.tensor(&format!("{p}.xk.w"), &[config.d_sem, d], Init::Xavier)?;
            b.linear(&format!("{p}.xv"), config.d_sem, d, false)?;
            b.linear(&format!("{p}.fc1"), d, config.hidden(), false)?;
            b.linear(&format!("{p}.fc2"), config.hidden(), d, false)?;
        }
        b.linear("final.mod", d, 2 * d, true)?;
        b.linear("head", d, config.token_out(), true)?;
        let params = b.params;
        debug_assert_eq!(params.numel(), parameter_count(&config));
        Ok(Model { config, params })
    }

    /// Student initialized from a teacher: shared weights copied, the
    /// target-time pathway freshly initialized with a zero output layer.
    pub fn student_from(teacher: &Model<T>, seed: Seed) -> Result<Self> {
        let config = ModelConfig {
            student_mode: true,
            ..teacher.config.clone()
        };
        let mut student = Model::init(config, seed)?;
        for (name, tensor) in teacher.params.iter() {
            let slot = student
                .params
                .by_name_mut(name)
                .ok_or_else(|| Error::contract(format!("student lacks teacher tensor {name}")))?;
            *slot = tensor.clone();
        }
        Ok(student)
    }

    /// Add `N(0, std²)` noise to every tensor. Useful to wake up zero-initialized
    /// paths before probing them.
    pub fn perturb(&mut self, seed: Seed, std: f64) {
        let mut rng = seed.rng();
        for id in 0..self.params.len() {
            for v in self.params.get_mut(id).data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = *v + T::c(std * z);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn check_latent(&self, z: &Tensor<T>, what: &str) -> Result<()> {
        let c = &self.config;
        if z.shape() != [c.grid_height, c.grid_width, c.latent_channels] {
            return Err(Error::shape(format!(
                "{what} has shape {:?}, model expects [{}, {}, {}]",
                z.shape(),
                c.grid_height,
                c.grid_width,
                c.latent_channels
            )));
        }
        Ok(())
    }
}

/// Records one forward pass, resolving parameter tensors by name.
struct Recorder<'a, T: Real> {
    g: &'a mut Graph<T>,
    params: &'a ParamSet<T>,
    trainable: bool,
}

impl<T: Real> Recorder<'_, T> {
    fn p(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        let value = self.params.get(id).clone();
        Ok(if self.trainable {
            self.g.param(id, value)
        } else {
            self.g.constant(value)
        })
    }

    fn row(&mut self, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
        let t = self.params.get(id);
        let value = t.clone().reshape(&[1, t.len()])?;
        Ok(if self.trainable {
            self.g.param(id, value)
        } else {
            self.g.constant(value)
        })
    }

    fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.row(&format!("{name}.b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    fn project(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        self.g.matmul(x, w)
    }

    fn time_mlp(&mut self, prefix: &str, t: f64, dim: usize) -> Result<Var> {
        let feats: Vec<T> = timestep_features(t, dim)?.into_iter().map(T::c).collect();
        let x = self.g.constant(Tensor::new(&[1, dim], feats)?);
        let h = self.linear(&format!("{prefix}.fc1"), x)?;
        let h = self.g.silu(h);
        self.linear(&format!("{prefix}.fc2"), h)
    }

    /// `layernorm(x) · (1 + scale) + shift`.
    fn modulate(&mut self, x: Var, shift: Var, scale: Var, one: Var) -> Result<Var> {
        let n = self.g.layernorm(x, T::c(LN_EPS))?;
        let gain = self.g.add(scale, one)?;
        let y = self.g.mul_row(n, gain)?;
        self.g.add_row(y, shift)
    }
}

impl<T: Real> VelocityModel<T> for Model<T> {
    fn record(
        &self,
        g: &mut Graph<T>,
        z_t: &Tensor<T>,
        t: f64,
        r: f64,
        mode: &CondMode<T>,
        trainable: bool,
    ) -> Result<Var> {
        let cfg = &self.config;
        self.check_latent(z_t, "z_t")?;
        self.check_latent(mode.structural(), "structural condition")?;
        let d = cfg.dim;
        let z_tokens = patchify(z_t, cfg.patch)?;
        let c_tokens = patchify(mode.structural(), cfg.patch)?;
        let n = z_tokens.rows();
        let (zw, cw) = (z_tokens.cols(), c_tokens.cols());
        let mut joined = Vec::with_capacity(n * (zw + cw));
        for (zr, cr) in z_tokens.data().chunks(zw).zip(c_tokens.data().chunks(cw)) {
            joined.extend_from_slice(zr);
            joined.extend_from_slice(cr);
        }
        let input = g.constant(Tensor::new(&[n, zw + cw], joined)?);

        let mut rec = Recorder {
            g,
            params: &self.params,
            trainable,
        };
        let one = rec.g.constant(Tensor::full(&[1, d], T::one()));
        let x = rec.linear("embed", input)?;
        let pos = rec.p("pos")?;
        let mut x = rec.g.add(x, pos)?;

        let mut temb = rec.time_mlp("time", t, d)?;
        if cfg.student_mode {
            let remb = rec.time_mlp("rtime", r, d)?;
            temb = rec.g.add(temb, remb)?;
        }
        let cond = rec.g.silu(temb);

        let sem = match mode.semantic() {
            Some(tokens) if cfg.use_semantic => {
                if tokens.shape().len() != 2 || tokens.cols() != cfg.d_sem {
                    return Err(Error::shape(format!(
                        "semantic tokens {:?} do not have width {}",
                        tokens.shape(),
                        cfg.d_sem
                    )));
                }
                rec.g.constant(tokens.clone())
            }
            _ => rec.p("null_sem")?,
        };

        for i in 0..cfg.depth {
            let p = format!("blocks.{i}");
            let m = rec.linear(&format!("{p}.mod"), cond)?;
            let part = |rec: &mut Recorder<T>, k: usize| rec.g.slice_cols(m, k * d, d);
            let chunks: Vec<Var> = (0..9).map(|k| part(&mut rec, k)).collect::<Result<_>>()?;

            let h = rec.modulate(x, chunks[0], chunks[1], one)?;
            let q = rec.linear(&format!("{p}.q"), h)?;
            let k = rec.project(&format!("{p}.k"), h)?;
            let v = rec.linear(&format!("{p}.v"), h)?;
            let a = rec.g.attention(q, k, v, cfg.heads)?;
            let a = rec.linear(&format!("{p}.o"), a)?;
            let a = rec.g.mul_row(a, chunks[2])?;
            x = rec.g.add(x, a)?;

            let h = rec.modulate(x, chunks[3], chunks[4], one)?;
            let q = rec.linear(&format!("{p}.xq"), h)?;
            let k = rec.project(&format!("{p}.xk"), sem)?;
            let v = rec.linear(&format!("{p}.xv"), sem)?;
            let a = rec.g.attention(q, k, v, cfg.heads)?;
            let a = rec.linear(&format!("{p}.xo"), a)?;
            let a = rec.g.mul_row(a, chunks[5])?;
            x = rec.g.add(x, a)?;

            let h = rec.modulate(x, chunks[6], chunks[7], one)?;
            let h = rec.linear(&format!("{p}.fc1"), h)?;
            let h = rec.g.gelu(h);
            let h = rec.linear(&format!("{p}.fc2"), h)?;
            let h = rec.g.mul_row(h, chunks[8])?;
            x = rec.g.add(x, h)?;
        }

        let m = rec.linear("final.mod", cond)?;
        let shift = rec.g.slice_cols(m, 0, d)?;
        let scale = rec.g.slice_cols(m, d, d)?;
        let h = rec.modulate(x, shift, scale, one)?;
        rec.linear("head", h)
    }

    fn to_output_layout(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_latent(latent, "latent")?;
        patchify(latent, self.config.patch)
    }

    fn from_output_layout(&self, out: &Tensor<T>) -> Result<Tensor<T>> {
        unpatchify(out, self.config.grid_height, self.config.grid_width, self.config.patch)
    }
}
