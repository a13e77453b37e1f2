//! Multi-step Euler sampling with guidance, and end-to-end super-resolution.

use crate::backbone::VelocityModel;
use crate::conditioning::{guide, guide_t2i_baseline, CondMode, Conditioner, GuidanceConfig, GuidanceStyle};
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::numerics::{Real, Tensor};
use crate::rng::Seed;
use crate::train::normal_latent;

/// The step count used for multi-step sampling unless overridden.
pub const DEFAULT_STEPS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    /// Load the EMA weights rather than the raw ones.
    pub use_ema: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: DEFAULT_STEPS,
            guidance: GuidanceConfig::default(),
            seed: 0,
            use_ema: true,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampling needs at least one step".into()));
        }
        self.guidance.validate()
    }
}

/// Integrate `dz/dt = v(z, t)` from `t = 1` to `t = 0` on the uniform grid
/// `t_k = 1 − k/steps` with explicit Euler steps.
pub fn euler_integrate<T: Real>(
    mut velocity: impl FnMut(&Tensor<T>, f64) -> Result<Tensor<T>>,
    z1: &Tensor<T>,
    steps: usize,
) -> Result<Tensor<T>> {
    if steps == 0 {
        return Err(Error::contract("euler_integrate needs at least one step"));
    }
    let grid = |k: usize| 1.0 - k as f64 / steps as f64;
    let mut z = z1.clone();
    for k in 0..steps {
        let (t, t_next) = (grid(k), grid(k + 1));
        let v = velocity(&z, t)?;
        z.axpy(T::c(-(t - t_next)), &v)?;
        if !z.all_finite() {
            return Err(Error::NonFinite(format!("sampler state became non-finite at step {k} (t = {t})")));
        }
    }
    Ok(z)
}

/// Guided teacher velocity. Restoration style contrasts Full against
/// Partial(α_infer); the baseline style contrasts Full against a
/// semantics-free full-structure branch; `None` evaluates Full once.
pub fn guided_velocity<T: Real, M: VelocityModel<T> + ?Sized>(
    teacher: &M,
    z_t: &Tensor<T>,
    t: f64,
    c_str: &Tensor<T>,
    c_sem: &Tensor<T>,
    cfg: &GuidanceConfig,
) -> Result<Tensor<T>> {
    let full = CondMode::full(c_str.clone(), c_sem.clone());
    let v_cond = teacher.predict(z_t, t, t, &full)?;
    match cfg.style {
        GuidanceStyle::None => Ok(v_cond),
        GuidanceStyle::Restoration => {
            let partial = CondMode::partial(c_str, cfg.alpha_infer)?;
            let v_pcond = teacher.predict(z_t, t, t, &partial)?;
            guide(&v_cond, &v_pcond, cfg)
        }
        GuidanceStyle::T2iBaseline => {
            let nosem = CondMode::StructureOnly { c_str: c_str.clone() };
            let v_nosem = teacher.predict(z_t, t, t, &nosem)?;
            guide_t2i_baseline(&v_cond, &v_nosem, cfg.scale)
        }
    }
}

/// Multi-step super-resolution of one LR image.
pub fn super_resolve<T: Real, M: VelocityModel<T> + ?Sized>(
    teacher: &M,
    conditioner: &Conditioner,
    lr: &Image,
    cfg: &SampleConfig,
) -> Result<Image> {
    cfg.validate()?;
    let (c_str, c_sem): (Tensor<T>, Tensor<T>) = conditioner.conditions(lr)?;
    let z1: Tensor<T> = normal_latent(c_str.shape(), &mut Seed(cfg.seed).rng());
    let z0 = euler_integrate(
        |z, t| guided_velocity(teacher, z, t, &c_str, &c_sem, &cfg.guidance),
        &z1,
        cfg.steps,
    )?;
    conditioner.codec.decode(&z0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{FnModel, Model, ModelConfig};
    use crate::conditioning::{LatentCodec, SemanticEncoder};
    use crate::imagecore::{gen_procedural_hr, ProceduralKind};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn constant_field_is_exact() {
        let z1 = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.3 - 0.2);
        let c = 0.7;
        for steps in [1, 3, 25, 100] {
            let z0 = euler_integrate(|z, _| Ok(Tensor::full(z.shape(), c)), &z1, steps).unwrap();
            for (a, b) in z0.data().iter().zip(z1.data()) {
                assert!((a - (b - c)).abs() <= 4.0 * f64::EPSILON, "{steps}: {a} vs {}", b - c);
            }
        }
    }

    #[test]
    fn single_step_is_one_euler_step() {
        let z1 = Tensor::<f64>::from_fn(&[3], |i| i as f64);
        let v = |z: &Tensor<f64>, t: f64| Ok(z.map(|x| x * x + t));
        let z0 = euler_integrate(v, &z1, 1).unwrap();
        let expected = z1.sub(&v(&z1, 1.0).unwrap()).unwrap();
        assert_eq!(z0, expected);
    }

    #[test]
    fn first_order_convergence() {
        // v = t: exact displacement 1/2, Euler from the top of each interval
        // overshoots by 1/(2n)
        let err = |n: usize| {
            let z0 = euler_integrate(|z: &Tensor<f64>, t| Ok(Tensor::full(z.shape(), t)), &Tensor::zeros(&[1]), n).unwrap();
            (z0.data()[0] + 0.5).abs()
        };
        assert!((err(10) - 0.05).abs() < 1e-12);
        let ratio = err(10) / err(20);
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn non_finite_state_reports_step() {
        let z1 = Tensor::<f64>::zeros(&[2]);
        let err = euler_integrate(
            |z, t| Ok(if t < 0.6 { Tensor::full(z.shape(), f64::INFINITY) } else { z.clone() }),
            &z1,
            4,
        )
        .unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }

    fn branch_stub(calls: &AtomicUsize) -> FnModel<impl Fn(&Tensor<f64>, f64, f64, &CondMode<f64>) -> Result<Tensor<f64>> + Sync + '_> {
        FnModel(move |z: &Tensor<f64>, t: f64, _r: f64, mode: &CondMode<f64>| {
            calls.fetch_add(1, Ordering::SeqCst);
            let bias = match mode {
                CondMode::Full { .. } => 1.0,
                CondMode::Partial { alpha, .. } => *alpha,
                CondMode::StructureOnly { .. } => -1.0,
            };
            Ok(z.map(|x| x * t + bias))
        })
    }

    #[test]
    fn guidance_endpoints_and_call_counts() {
        let calls = AtomicUsize::new(0);
        let stub = branch_stub(&calls);
        let z = Tensor::<f64>::from_fn(&[4], |i| i as f64);
        let c_str = Tensor::full(&[4], 0.5);
        let c_sem = Tensor::full(&[2], 0.1);
        let full = stub.predict(&z, 0.4, 0.4, &CondMode::full(c_str.clone(), c_sem.clone())).unwrap();
        let partial = stub.predict(&z, 0.4, 0.4, &CondMode::partial(&c_str, 0.15).unwrap()).unwrap();
        calls.store(0, Ordering::SeqCst);
        let cfg = |scale, style| GuidanceConfig { scale, style, ..GuidanceConfig::default() };
        let s1 = guided_velocity(&stub, &z, 0.4, &c_str, &c_sem, &cfg(1.0, GuidanceStyle::Restoration)).unwrap();
        assert_eq!(calls.swap(0, Ordering::SeqCst), 2);
        assert_eq!(s1, full);
        let s0 = guided_velocity(&stub, &z, 0.4, &c_str, &c_sem, &cfg(0.0, GuidanceStyle::Restoration)).unwrap();
        assert_eq!(s0, partial);
        calls.store(0, Ordering::SeqCst);
        let none = guided_velocity(&stub, &z, 0.4, &c_str, &c_sem, &cfg(3.0, GuidanceStyle::None)).unwrap();
        assert_eq!(calls.swap(0, Ordering::SeqCst), 1);
        assert_eq!(none, full);
        let t2i = guided_velocity(&stub, &z, 0.4, &c_str, &c_sem, &cfg(0.0, GuidanceStyle::T2iBaseline)).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert!(t2i.data().iter().zip(z.data()).all(|(v, x)| *v == x * 0.4 - 1.0));
    }

    fn conditioner() -> Conditioner {
        Conditioner {
            codec: LatentCodec::new(2).unwrap(),
            semantic: SemanticEncoder::new(Seed(1), 4, 8, 3).unwrap(),
            scale: 4,
        }
    }

    #[test]
    fn super_resolve_size_and_determinism() {
        let calls = AtomicUsize::new(0);
        let stub = branch_stub(&calls);
        let lr = gen_procedural_hr(Seed(2), 16, ProceduralKind::Blobs).unwrap();
        let cfg = SampleConfig { steps: 5, ..SampleConfig::default() };
        let a = super_resolve::<f64, _>(&stub, &conditioner(), &lr, &cfg).unwrap();
        assert_eq!(a.dims(), (64, 64, 3));
        assert_eq!(calls.load(Ordering::SeqCst), 10);
        let b = super_resolve::<f64, _>(&stub, &conditioner(), &lr, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(SampleConfig::default().steps, 25);
    }

    #[test]
    fn protocol_output_size() {
        // 128² LR to 512² HR through a small untrained network
        let cond = Conditioner {
            codec: LatentCodec::new(4).unwrap(),
            semantic: SemanticEncoder::new(Seed(1), 16, 8, 3).unwrap(),
            scale: 4,
        };
        let cfg = ModelConfig {
            dim: 8,
            depth: 1,
            heads: 2,
            patch: 8,
            d_sem: 8,
            latent_channels: 48,
            grid_height: 128,
            grid_width: 128,
            ..ModelConfig::default()
        };
        let model = Model::<f32>::init(cfg, Seed(0)).unwrap();
        let lr = gen_procedural_hr(Seed(0), 128, ProceduralKind::Gradient).unwrap();
        let out = super_resolve(&model, &cond, &lr, &SampleConfig { steps: 1, ..SampleConfig::default() }).unwrap();
        assert_eq!(out.dims(), (512, 512, 3));
    }
}
