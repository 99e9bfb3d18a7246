//! Nesterov momentum with global-norm gradient clipping.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Trust-region radius for the global gradient norm; `None` disables clipping.
    pub clip_threshold: Option<f64>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_CLIP: f64 = 0.1;

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            momentum: DEFAULT_MOMENTUM,
            clip_threshold: Some(DEFAULT_CLIP),
        }
    }
}

impl OptimizerConfig {
    /// Default config with the learning rate drawn uniformly from `[1, 2]`.
    pub fn sampled<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            learning_rate: rng.random_range(1.0..=2.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Contract(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(eps) = self.clip_threshold {
            if !(eps > 0.0) {
                return Err(Error::Contract(format!(
                    "clip threshold must be positive, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    pub pre_norm: f64,
    pub post_norm: f64,
    pub scaled: bool,
}

/// L2 norm of the concatenation of `grads`, accumulated in 64-bit.
pub fn global_norm<'a, T: Scalar>(grads: impl IntoIterator<Item = &'a Tensor<T>>) -> f64 {
    grads
        .into_iter()
        .flat_map(|t| t.data().iter())
        .map(|v| {
            let x = v.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient by `eps / ‖g‖` when the global norm exceeds `eps`.
///
/// If rounding leaves the rescaled norm above `eps`, it is nudged down by a
/// few ulps, so the result never exceeds `eps` and clipping is idempotent.
pub fn clip_tensors<T: Scalar>(grads: &mut [&mut Tensor<T>], eps: f64) -> ClipReport {
    let pre_norm = global_norm(grads.iter().map(|t| &**t));
    if pre_norm > eps && pre_norm.is_finite() {
        let factor = T::from_f64_lossy(eps / pre_norm);
        for g in grads.iter_mut() {
            g.scale_in_place(factor);
        }
        let mut post_norm = global_norm(grads.iter().map(|t| &**t));
        let nudge = T::one() - T::epsilon();
        for _ in 0..16 {
            if post_norm <= eps {
                break;
            }
            for g in grads.iter_mut() {
                g.scale_in_place(nudge);
            }
            post_norm = global_norm(grads.iter().map(|t| &**t));
        }
        ClipReport {
            pre_norm,
            post_norm,
            scaled: true,
        }
    } else {
        ClipReport {
            pre_norm,
            post_norm: pre_norm,
            scaled: false,
        }
    }
}

/// [`clip_tensors`] over every gradient slot of `params`.
pub fn clip_global<T: Scalar>(params: &mut [Parameter<T>], eps: f64) -> ClipReport {
    let mut grads: Vec<&mut Tensor<T>> = params
        .iter_mut()
        .flat_map(|p| p.slots_mut())
        .map(|s| &mut s.grad)
        .collect();
    clip_tensors(&mut grads, eps)
}

/// One Nesterov update on every slot:
/// `buf ← μ·buf − lr·grad; value ← value + μ·buf − lr·grad`.
pub fn nesterov_step<T: Scalar>(params: &mut [Parameter<T>], cfg: &OptimizerConfig) {
    let mu = T::from_f64_lossy(cfg.momentum);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    for p in params.iter_mut() {
        for slot in p.slots_mut() {
            let value = slot.value.data_mut();
            let buf = slot.momentum.data_mut();
            for ((v, b), &g) in value.iter_mut().zip(buf.iter_mut()).zip(slot.grad.data()) {
                let step = lr * g;
                *b = mu * *b - step;
                *v += mu * *b - step;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_tensor(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn clips_large_gradient() {
        let mut a = vec_tensor(&[3.0, 0.0]);
        let mut b = vec_tensor(&[0.0, 4.0]);
        let r = clip_tensors(&mut [&mut a, &mut b], 0.1);
        assert!(r.scaled);
        assert!((r.pre_norm - 5.0).abs() < 1e-12);
        assert!((r.post_norm - 0.1).abs() < 1e-12);
        assert!((a.data()[0] - 0.06).abs() < 1e-12);
        assert!((b.data()[1] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn leaves_small_and_zero_gradients() {
        let mut a = vec_tensor(&[0.03, 0.04]);
        let r = clip_tensors(&mut [&mut a], 0.1);
        assert!(!r.scaled);
        assert_eq!(a.data(), &[0.03, 0.04]);
        let mut z = vec_tensor(&[0.0, 0.0]);
        let r = clip_tensors(&mut [&mut z], 0.1);
        assert_eq!(r.pre_norm, 0.0);
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    fn param(value: f64, grad: f64) -> Parameter<f64> {
        let mut p = Parameter::plain("x", vec_tensor(&[value]));
        p.direction.grad = vec_tensor(&[grad]);
        p
    }

    #[test]
    fn zero_momentum_is_sgd() {
        let mut ps = vec![param(1.0, 0.5)];
        let cfg = OptimizerConfig {
            learning_rate: 0.2,
            momentum: 0.0,
            clip_threshold: None,
        };
        nesterov_step(&mut ps, &cfg);
        assert_eq!(ps[0].direction.value.data()[0], 1.0 - 0.2 * 0.5);
    }

    #[test]
    fn two_step_hand_trace() {
        let (lr, mu, g) = (0.5, 0.99, 2.0);
        let mut ps = vec![param(0.0, g)];
        let cfg = OptimizerConfig {
            learning_rate: lr,
            momentum: mu,
            clip_threshold: None,
        };
        nesterov_step(&mut ps, &cfg);
        nesterov_step(&mut ps, &cfg);
        // step 1 moves −lr·g(1+μ); step 2 moves −lr·g(1 + μ + μ²)
        let expected = -lr * g * (2.0 + 2.0 * mu + mu * mu);
        assert!((ps[0].direction.value.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            clip_threshold: None,
        };
        let mut ps = vec![param(1.0, 0.0)];
        let mut trace = Vec::new();
        for _ in 0..50 {
            let theta = ps[0].direction.value.data()[0];
            ps[0].direction.grad = vec_tensor(&[theta]);
            nesterov_step(&mut ps, &cfg);
            trace.push(ps[0].direction.value.data()[0].abs());
        }
        // Momentum makes |θ| oscillate; its envelope over 10-step windows shrinks monotonically.
        let env: Vec<f64> = trace
            .chunks(10)
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .collect();
        assert!(env.windows(2).all(|w| w[1] < w[0]), "{env:?}");
        assert!(trace[49] < 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
