//! One-step distillation of a guided multi-step teacher into a student
//! predicting average velocities `u(z_t, t, r)` over `[r, t]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::backbone::{Model, VelocityModel};
use crate::conditioning::{sample_cond_mode, CondMode, Conditioner, GuidanceConfig, GuidanceStyle};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::kv::KvDoc;
use crate::numerics::{Graph, Real, Tensor, Var};
use crate::rng::Seed;
use crate::sampler::guided_velocity;
use crate::train::{
    batch_indices, batch_value_and_grad, make_zt, normal_latent, optimizer_step, step_seed, TrainObserver, TrainPair,
    TrainRecipe, TrainState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Shortcut,
    Rc,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Shortcut => "shortcut",
            Variant::Rc => "rc",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shortcut" => Ok(Variant::Shortcut),
            "rc" => Ok(Variant::Rc),
            _ => Err(Error::Config(format!("unknown distillation variant {s:?}"))),
        }
    }
}

/// Weights `(c_l, c_r)` of the RC residual `c_l·u − c_r·u_tar − v_tea`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RcCoefficients {
    /// `c_l = (t−r)/(t−t_m)`, `c_r = (t_m−r)/(t−t_m)`: the residual vanishes
    /// exactly when `u` is the duration-weighted average of the warm-start and
    /// rollout segments.
    Trajectory,
    Fixed { c_l: f64, c_r: f64 },
}

impl RcCoefficients {
    pub fn resolve(self, t: f64, t_m: f64, r: f64) -> (f64, f64) {
        match self {
            RcCoefficients::Trajectory => ((t - r) / (t - t_m), (t_m - r) / (t - t_m)),
            RcCoefficients::Fixed { c_l, c_r } => (c_l, c_r),
        }
    }
}

impl fmt::Display for RcCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RcCoefficients::Trajectory => f.write_str("trajectory"),
            RcCoefficients::Fixed { c_l, c_r } => write!(f, "{c_l},{c_r}"),
        }
    }
}

impl FromStr for RcCoefficients {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "trajectory" {
            return Ok(RcCoefficients::Trajectory);
        }
        let bad = || Error::Config(format!("coefficients must be \"trajectory\" or \"c_l,c_r\", got {s:?}"));
        let (l, r) = s.split_once(',').ok_or_else(bad)?;
        Ok(RcCoefficients::Fixed {
            c_l: l.trim().parse().map_err(|_| bad())?,
            c_r: r.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Guidance weight of the teacher target.
    pub omega: f64,
    /// Retention factor of the teacher's partial branch.
    pub alpha_infer: f64,
    pub variant: Variant,
    /// Warm-start interval of the RC target.
    pub delta_t: f64,
    pub rollout_steps: usize,
    pub coefficients: RcCoefficients,
    /// Symmetric clip bound of the RC correction.
    pub clip: f64,
    pub aux_weight: f64,
    /// Probability of a diagonal draw `r = t`.
    pub p_diagonal: f64,
    /// Optimizer, step count, batch and conditioning-mode draws.
    pub recipe: TrainRecipe,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            omega: 1.5,
            alpha_infer: GuidanceConfig::default().alpha_infer,
            variant: Variant::Rc,
            delta_t: 0.25,
            rollout_steps: 4,
            coefficients: RcCoefficients::Trajectory,
            clip: 1.0,
            aux_weight: 1.0,
            p_diagonal: 0.25,
            recipe: TrainRecipe {
                lr: 2.0e-5,
                ..TrainRecipe::default()
            },
        }
    }
}

impl DistillConfig {
    pub const KEYS: [&'static str; 10] = [
        "omega",
        "alpha_infer",
        "variant",
        "delta_t",
        "rollout_steps",
        "coefficients",
        "clip",
        "aux_weight",
        "p_diagonal",
        "recipe",
    ];

    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(Error::Config("omega must be finite".into()));
        }
        if !(self.delta_t > 0.0) {
            return Err(Error::Config(format!("delta_t must be positive, got {}", self.delta_t)));
        }
        if self.rollout_steps == 0 {
            return Err(Error::Config("rollout_steps must be at least 1".into()));
        }
        if !(self.clip > 0.0) || !(self.aux_weight >= 0.0) {
            return Err(Error::Config("clip must be positive and aux_weight non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_diagonal) {
            return Err(Error::Config(format!("p_diagonal must lie in [0, 1], got {}", self.p_diagonal)));
        }
        self.guidance().validate()?;
        self.recipe.validate()
    }

    /// The teacher guidance this configuration distills.
    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            scale: self.omega,
            alpha_infer: self.alpha_infer,
            style: GuidanceStyle::Restoration,
        }
    }

    /// Writes `distill.*` keys and the recipe under `train.`.
    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("distill.omega", self.omega);
        doc.set("distill.alpha_infer", self.alpha_infer);
        doc.set("distill.variant", self.variant.name());
        doc.set("distill.delta_t", self.delta_t);
        doc.set("distill.rollout_steps", self.rollout_steps);
        doc.set("distill.coefficients", self.coefficients);
        doc.set("distill.clip", self.clip);
        doc.set("distill.aux_weight", self.aux_weight);
        doc.set("distill.p_diagonal", self.p_diagonal);
        self.recipe.write_kv(doc, "train.");
    }

    pub fn read_kv(mut self, doc: &KvDoc) -> Result<Self> {
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = doc.get(concat!("distill.", stringify!($name)))? {
                    self.$name = v;
                }
            };
        }
        field!(omega);
        field!(alpha_infer);
        field!(variant);
        field!(delta_t);
        field!(rollout_steps);
        field!(coefficients);
        field!(clip);
        field!(aux_weight);
        field!(p_diagonal);
        self.recipe = self.recipe.read_kv(doc, "train.")?;
        self.validate()?;
        Ok(self)
    }
}

/// `v_pcond + ω·(v_cond − v_pcond)` from the teacher's Full and
/// Partial(α_infer) branches.
pub fn teacher_guided_velocity<T: Real, M: VelocityModel<T> + ?Sized>(
    teacher: &M,
    z_t: &Tensor<T>,
    t: f64,
    c_str: &Tensor<T>,
    c_sem: &Tensor<T>,
    omega: f64,
    alpha_infer: f64,
) -> Result<Tensor<T>> {
    let cfg = GuidanceConfig {
        scale: omega,
        alpha_infer,
        style: GuidanceStyle::Restoration,
    };
    guided_velocity(teacher, z_t, t, c_str, c_sem, &cfg)
}

/// Random quantities of one distillation sample.
#[derive(Debug, Clone)]
pub struct DistillDraw<T> {
    pub z1: Tensor<T>,
    pub t: f64,
    /// Equal to `t` for diagonal draws, otherwise in `[0, t)`.
    pub r: f64,
    pub mode: CondMode<T>,
}

/// `t ~ U[0, 1)`; `r = t` with probability `p_diagonal`, else `r ~ U[0, t)`.
pub fn draw_distill<T: Real>(pair: &TrainPair<T>, seed: Seed, cfg: &DistillConfig) -> Result<DistillDraw<T>> {
    let mut rng = seed.rng();
    let t = rng.gen::<f64>();
    let z1 = normal_latent(pair.z0.shape(), &mut rng);
    let recipe = &cfg.recipe;
    let mode = sample_cond_mode(&mut rng, &pair.c_str, &pair.c_sem, recipe.p_partial, (recipe.alpha_lo, recipe.alpha_hi))?;
    let diagonal = rng.gen::<f64>() < cfg.p_diagonal;
    let r = if diagonal { t } else { rng.gen::<f64>() * t };
    Ok(DistillDraw { z1, t, r, mode })
}

fn check_interval(t: f64, r: f64) -> Result<()> {
    if !(r < t) {
        return Err(Error::contract(format!("consistency losses need r < t, got t = {t}, r = {r}")));
    }
    Ok(())
}

/// Record `mean((u − target)²)` with a latent-layout target held constant.
fn record_match<T: Real, M: VelocityModel<T> + ?Sized>(g: &mut Graph<T>, model: &M, u: Var, target: &Tensor<T>) -> Result<Var> {
    let target = g.constant(model.to_output_layout(target)?);
    let diff = g.sub(u, target)?;
    Ok(g.mean_square(diff))
}

fn latent_value<T: Real, M: VelocityModel<T> + ?Sized>(g: &Graph<T>, model: &M, v: Var) -> Result<Tensor<T>> {
    model.from_output_layout(g.value(v))
}

/// Base objective `mean((f(z_t, t, t, κ) − v_tea)²)`.
fn record_base<T: Real, M: VelocityModel<T> + ?Sized>(
    g: &mut Graph<T>,
    student: &M,
    z_t: &Tensor<T>,
    t: f64,
    mode: &CondMode<T>,
    v_tea: &Tensor<T>,
    trainable: bool,
) -> Result<Var> {
    let u = student.record(g, z_t, t, t, mode, trainable)?;
    record_match(g, student, u, v_tea)
}

/// Midpoint consistency `mean((u_{t→r} − sg((u_{t→m} + u_{m→r})/2))²)`.
fn record_shortcut<T: Real, M: VelocityModel<T> + ?Sized>(
    g: &mut Graph<T>,
    student: &M,
    z_t: &Tensor<T>,
    t: f64,
    r: f64,
    mode: &CondMode<T>,
    trainable: bool,
) -> Result<Var> {
    check_interval(t, r)?;
    let m = 0.5 * (t + r);
    let u_tr = student.record(g, z_t, t, r, mode, trainable)?;
    let u_tm = student.predict(z_t, t, m, mode)?;
    let mut z_m = z_t.clone();
    z_m.axpy(T::c(-(t - m)), &u_tm)?;
    let u_mr = student.predict(&z_m, m, r, mode)?;
    let target = u_tm.add(&u_mr)?.scale(T::c(0.5));
    record_match(g, student, u_tr, &target)
}

/// Detached student rollout of `steps` steps from `(z, from)` down to `to`,
/// each step using the student's average velocity over its sub-interval.
fn student_rollout<T: Real, M: VelocityModel<T> + ?Sized>(
    student: &M,
    z: &Tensor<T>,
    from: f64,
    to: f64,
    steps: usize,
    mode: &CondMode<T>,
) -> Result<Tensor<T>> {
    let grid = |k: usize| from - (from - to) * k as f64 / steps as f64;
    let mut z = z.clone();
    for k in 0..steps {
        let (s, s_next) = (grid(k), if k + 1 == steps { to } else { grid(k + 1) });
        let u = student.predict(&z, s, s_next, mode)?;
        z.axpy(T::c(-(s - s_next)), &u)?;
    }
    Ok(z)
}

/// Teacher evaluation shared by the RC target, for a given sample.
struct TeacherCtx<'a, T: Real, Q: VelocityModel<T> + ?Sized> {
    teacher: &'a Q,
    c_str: &'a Tensor<T>,
    c_sem: &'a Tensor<T>,
    cfg: &'a DistillConfig,
}

impl<T: Real, Q: VelocityModel<T> + ?Sized> TeacherCtx<'_, T, Q> {
    fn velocity(&self, z: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
        teacher_guided_velocity(self.teacher, z, t, self.c_str, self.c_sem, self.cfg.omega, self.cfg.alpha_infer)
    }
}

/// RC consistency. Returns the loss node and the clipped correction in
/// latent layout.
fn record_rc<T: Real, M: VelocityModel<T> + ?Sized, Q: VelocityModel<T> + ?Sized>(
    g: &mut Graph<T>,
    student: &M,
    teacher: &TeacherCtx<'_, T, Q>,
    z_t: &Tensor<T>,
    t: f64,
    r: f64,
    mode: &CondMode<T>,
    v_tea: &Tensor<T>,
    trainable: bool,
) -> Result<(Var, Tensor<T>)> {
    check_interval(t, r)?;
    let cfg = teacher.cfg;
    let u = student.record(g, z_t, t, r, mode, trainable)?;
    let u_val = latent_value(g, student, u)?;
    let t_m = (t - cfg.delta_t).max(r);
    let mut z_tm = z_t.clone();
    z_tm.axpy(T::c(-(t - t_m)), v_tea)?;
    let u_tar = if t_m > r {
        let z_r = student_rollout(student, &z_tm, t_m, r, cfg.rollout_steps, mode)?;
        z_tm.sub(&z_r)?.scale(T::c(1.0 / (t_m - r)))
    } else {
        teacher.velocity(&z_tm, t_m)?
    };
    let (c_l, c_r) = cfg.coefficients.resolve(t, t_m, r);
    let (c_l, c_r, bound) = (T::c(c_l), T::c(c_r), T::c(cfg.clip));
    let mut corr = u_val.zip_map(&u_tar, |a, b| c_l * a - c_r * b)?;
    corr = corr.zip_map(v_tea, |x, v| {
        let y = x - v;
        if y > bound {
            bound
        } else if y < -bound {
            -bound
        } else {
            y
        }
    })?;
    let target = u_val.sub(&corr)?;
    let loss = record_match(g, student, u, &target)?;
    Ok((loss, corr))
}

/// Base loss of one sample; the teacher target is detached.
pub fn base_loss<T: Real, M: VelocityModel<T> + ?Sized, Q: VelocityModel<T> + ?Sized>(
    student: &M,
    teacher: &Q,
    pair: &TrainPair<T>,
    draw: &DistillDraw<T>,
    cfg: &DistillConfig,
) -> Result<f64> {
    let (z_t, _) = make_zt(&pair.z0, &draw.z1, draw.t)?;
    let v_tea = teacher_guided_velocity(teacher, &z_t, draw.t, &pair.c_str, &pair.c_sem, cfg.omega, cfg.alpha_infer)?;
    let mut g = Graph::new();
    let loss = record_base(&mut g, student, &z_t, draw.t, &draw.mode, &v_tea, false)?;
    finite(g.value(loss).data()[0].f64(), "base loss")
}

/// Shortcut consistency loss at `(z_t, t, r, κ)`.
pub fn shortcut_loss<T: Real, M: VelocityModel<T> + ?Sized>(
    student: &M,
    z_t: &Tensor<T>,
    t: f64,
    r: f64,
    mode: &CondMode<T>,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = record_shortcut(&mut g, student, z_t, t, r, mode, false)?;
    finite(g.value(loss).data()[0].f64(), "shortcut loss")
}

/// Value of the RC loss together with its clipped correction.
#[derive(Debug, Clone)]
pub struct RcTerms<T> {
    pub loss: f64,
    pub corr: Tensor<T>,
}

/// RC consistency loss at `(z_t, t, r, κ)` with the teacher's guided
/// velocity at `(z_t, t)` as warm start.
#[allow(clippy::too_many_arguments)]
pub fn rc_loss<T: Real, M: VelocityModel<T> + ?Sized, Q: VelocityModel<T> + ?Sized>(
    student: &M,
    teacher: &Q,
    z_t: &Tensor<T>,
    t: f64,
    r: f64,
    mode: &CondMode<T>,
    conds: (&Tensor<T>, &Tensor<T>),
    cfg: &DistillConfig,
) -> Result<RcTerms<T>> {
    check_interval(t, r)?;
    let ctx = TeacherCtx {
        teacher,
        c_str: conds.0,
        c_sem: conds.1,
        cfg,
    };
    let v_tea = ctx.velocity(z_t, t)?;
    let mut g = Graph::new();
    let (loss, corr) = record_rc(&mut g, student, &ctx, z_t, t, r, mode, &v_tea, false)?;
    Ok(RcTerms {
        loss: finite(g.value(loss).data()[0].f64(), "rc loss")?,
        corr,
    })
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Which side of the distillation graph receives parameter registrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradTarget {
    Student,
    Teacher,
}

/// Total loss `base + aux_weight·aux` of one sample. Teacher evaluations are
/// recorded into the same graph and cut with a stop-gradient.
#[allow(clippy::too_many_arguments)]
fn record_sample<T: Real, M: VelocityModel<T> + ?Sized, Q: VelocityModel<T> + ?Sized>(
    g: &mut Graph<T>,
    student: &M,
    teacher: &Q,
    pair: &TrainPair<T>,
    draw: &DistillDraw<T>,
    cfg: &DistillConfig,
    target: GradTarget,
) -> Result<Var> {
    let (z_t, _) = make_zt(&pair.z0, &draw.z1, draw.t)?;
    let track = target == GradTarget::Teacher;
    let full = CondMode::full(pair.c_str.clone(), pair.c_sem.clone());
    let partial = CondMode::partial(&pair.c_str, cfg.alpha_infer)?;
    let v_cond = teacher.record(g, &z_t, draw.t, draw.t, &full, track)?;
    let v_pcond = teacher.record(g, &z_t, draw.t, draw.t, &partial, track)?;
    let (v_cond, v_pcond) = (g.stop_grad(v_cond), g.stop_grad(v_pcond));
    let v_tea = crate::conditioning::guide(
        &latent_value(g, teacher, v_cond)?,
        &latent_value(g, teacher, v_pcond)?,
        &cfg.guidance(),
    )?;

    let trainable = target == GradTarget::Student;
    let mut loss = record_base(g, student, &z_t, draw.t, &draw.mode, &v_tea, trainable)?;
    if draw.r < draw.t {
        let aux = match cfg.variant {
            Variant::Shortcut => record_shortcut(g, student, &z_t, draw.t, draw.r, &draw.mode, trainable)?,
            Variant::Rc => {
                let ctx = TeacherCtx {
                    teacher,
                    c_str: &pair.c_str,
                    c_sem: &pair.c_sem,
                    cfg,
                };
                record_rc(g, student, &ctx, &z_t, draw.t, draw.r, &draw.mode, &v_tea, trainable)?.0
            }
        };
        let aux = g.scale(aux, T::c(cfg.aux_weight));
        loss = g.add(loss, aux)?;
    }
    let value = g.value(loss).data()[0].f64();
    finite(value, &format!("distillation loss at t = {}, r = {}", draw.t, draw.r))?;
    Ok(loss)
}

/// Batch distillation loss and its gradient with respect to the student.
pub fn distill_loss_and_grad<T: Real, Q: VelocityModel<T> + ?Sized>(
    student: &Model<T>,
    teacher: &Q,
    batch: &[&TrainPair<T>],
    seed: Seed,
    cfg: &DistillConfig,
) -> Result<(f64, Vec<Tensor<T>>)> {
    batch_value_and_grad(&student.params, batch.len(), |i, g| {
        let draw = draw_distill(batch[i], seed.derive(i as u64), cfg)?;
        record_sample(g, student, teacher, batch[i], &draw, cfg, GradTarget::Student)
    })
}

/// Gradient of the batch distillation loss with respect to the teacher's
/// parameters, which the target detachment makes identically zero.
pub fn teacher_gradient<T: Real, M: VelocityModel<T> + ?Sized>(
    student: &M,
    teacher: &Model<T>,
    batch: &[&TrainPair<T>],
    seed: Seed,
    cfg: &DistillConfig,
) -> Result<Vec<Tensor<T>>> {
    let (_, grads) = batch_value_and_grad(&teacher.params, batch.len(), |i, g| {
        let draw = draw_distill(batch[i], seed.derive(i as u64), cfg)?;
        record_sample(g, student, teacher, batch[i], &draw, cfg, GradTarget::Teacher)
    })?;
    Ok(grads)
}

/// Distill `teacher` into `student` for `cfg.recipe.steps` optimizer steps.
/// The caller initializes the student, normally with [`Model::student_from`].
pub fn distill<T: Real, Q: VelocityModel<T> + ?Sized>(
    teacher: &Q,
    student: Model<T>,
    pairs: &[TrainPair<T>],
    cfg: &DistillConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainState<T>> {
    cfg.validate()?;
    if !student.config.student_mode {
        return Err(Error::contract("the distillation student needs an r embedding (student_mode)"));
    }
    if pairs.is_empty() {
        return Err(Error::contract("distillation corpus is empty"));
    }
    let recipe = &cfg.recipe;
    let mut state = TrainState::new(student);
    for step in 0..recipe.steps {
        let batch: Vec<&TrainPair<T>> = batch_indices(pairs.len(), recipe.batch, step, Seed(recipe.seed))
            .into_iter()
            .map(|i| &pairs[i])
            .collect();
        let (loss, grads) = distill_loss_and_grad(&state.model, teacher, &batch, step_seed(recipe.seed, step), cfg)?;
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

/// `z1 − u(z1, 1, 0, Full)` from a single student evaluation, decoded.
pub fn one_step_super_resolve<T: Real, M: VelocityModel<T> + ?Sized>(
    student: &M,
    conditioner: &Conditioner,
    lr: &Image,
    seed: u64,
) -> Result<Image> {
    let (c_str, c_sem): (Tensor<T>, Tensor<T>) = conditioner.conditions(lr)?;
    let z1: Tensor<T> = normal_latent(c_str.shape(), &mut Seed(seed).rng());
    let u = student.predict(&z1, 1.0, 0.0, &CondMode::full(c_str, c_sem))?;
    let z0 = z1.sub(&u)?;
    if !z0.all_finite() {
        return Err(Error::NonFinite("one-step prediction".into()));
    }
    conditioner.codec.decode(&z0)
}
