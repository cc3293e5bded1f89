use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidArgument(format!("momentum {m} outside [0, 1)")));
            }
        }
        if let Some(d) = self.weight_decay {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight decay {d} is negative")));
            }
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `v ← m·v + g`, `θ ← θ − lr·v`, with decay added to `g` as an L2 term.
pub fn sgd_update<T: Scalar>(theta: &mut [T], grad: &[T], v: &mut [T], lr: f64, momentum: f64, decay: f64) {
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(decay));
    for ((p, &g), v) in theta.iter_mut().zip(grad).zip(v.iter_mut()) {
        let g = g + wd * *p;
        *v = m * *v + g;
        *p -= lr * *v;
    }
}

/// One Adam step with bias correction; `t` counts from 1.
pub fn adam_update<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    decay: f64,
) {
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let c1 = T::one() - T::of(ADAM_BETA1.powi(t as i32));
    let c2 = T::one() - T::of(ADAM_BETA2.powi(t as i32));
    let (lr, wd, eps) = (T::of(lr), T::of(decay), T::of(ADAM_EPS));
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g + wd * *p;
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Optimizer state for every entry of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    hp: Hyperparams,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Optimizer {
            hp,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update to every trainable parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        if self.first.len() < store.len() {
            for e in &store.entries()[self.first.len()..] {
                self.first.push(vec![T::zero(); e.value.len()]);
                if self.hp.optimizer == OptimizerKind::Adam {
                    self.second.push(vec![T::zero(); e.value.len()]);
                }
            }
        }
        self.steps += 1;
        let decay = self.hp.weight_decay.unwrap_or(0.0);
        for i in 0..store.len() {
            let Some(g) = grads.by_index(i) else { continue };
            let theta = store.entry_value_mut(i);
            match self.hp.optimizer {
                OptimizerKind::SgdMomentum => sgd_update(
                    theta,
                    g,
                    &mut self.first[i],
                    self.hp.learning_rate,
                    self.hp.momentum.unwrap_or(0.0),
                    decay,
                ),
                OptimizerKind::Adam => adam_update(
                    theta,
                    g,
                    &mut self.first[i],
                    &mut self.second[i],
                    self.steps,
                    self.hp.learning_rate,
                    decay,
                ),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(kind: OptimizerKind) -> Hyperparams {
        Hyperparams {
            learning_rate: 0.1,
            batch_size: 1,
            momentum: Some(0.9),
            weight_decay: None,
            epochs: 1,
            optimizer: kind,
        }
    }

    #[test]
    fn sgd_one_step() {
        let mut theta = [1.0f64];
        let mut v = [0.0];
        sgd_update(&mut theta, &[2.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(v[0], 2.0);
        assert!((theta[0] - 0.8).abs() < 1e-15);
        sgd_update(&mut theta, &[0.0], &mut v, 0.1, 0.9, 0.0);
        assert!((v[0] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_fixed_point() {
        let mut theta = [0.3f64, -1.2];
        let mut v = [0.0; 2];
        sgd_update(&mut theta, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(theta, [0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut theta = [0.5f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, 0.01, 0.0);
        // m̂ = v̂ = 1 after bias correction, so the step is lr/(1+eps)
        assert!((0.5 - theta[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_decay_is_added_to_gradient() {
        let mut a = [2.0f64];
        let mut b = [2.0f64];
        let (mut m1, mut v1, mut m2, mut v2) = ([0.0], [0.0], [0.0], [0.0]);
        adam_update(&mut a, &[0.3], &mut m1, &mut v1, 1, 0.01, 0.05);
        adam_update(&mut b, &[0.3 + 0.05 * 2.0], &mut m2, &mut v2, 1, 0.01, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let mut h = hp(OptimizerKind::SgdMomentum);
        assert!(h.validate().is_ok());
        h.momentum = Some(1.0);
        assert!(h.validate().is_err());
        let mut h = hp(OptimizerKind::Adam);
        h.learning_rate = 0.0;
        assert!(Optimizer::<f64>::new(h.clone()).is_err());
        h.learning_rate = 0.1;
        h.batch_size = 0;
        assert!(h.validate().is_err());
    }
}
