//! AdamW with bias correction and decoupled weight decay.
//!
//! The decay term `−lr·γ·w` realises the `γ‖w‖²` regulariser of the member
//! objective; it is never folded into the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Decoupled decay coefficient γ.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            learning_rate: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 100,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the number of updates taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub first: Params,
    pub second: Params,
    pub steps: u64,
}

impl OptState {
    pub fn new(params: &Params) -> Self {
        OptState {
            first: Params::zeros(params.arch()),
            second: Params::zeros(params.arch()),
            steps: 0,
        }
    }
}

/// In-place AdamW update.
pub fn step_in_place(params: &mut Params, grad: &Params, state: &mut OptState, cfg: &OptConfig) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(&state.first) || !params.same_shape(&state.second) {
        return Err(Error::Dimension(
            "parameters, gradient and optimizer state must share one architecture".into(),
        ));
    }
    state.steps += 1;
    let t = state.steps as i32;
    let correct1 = 1.0 - cfg.beta1.powi(t);
    let correct2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let decay = lr * cfg.weight_decay;

    let blocks = params
        .slices_mut()
        .zip(grad.slices())
        .zip(state.first.slices_mut().zip(state.second.slices_mut()));
    for ((w, g), (m, v)) in blocks {
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            let old = w[i];
            w[i] = old - lr * (m_hat / (v_hat.sqrt() + cfg.epsilon)) - decay * old;
        }
    }
    Ok(())
}

/// Pure form of [`step_in_place`].
pub fn step(params: &Params, grad: &Params, state: &OptState, cfg: &OptConfig) -> Result<(Params, OptState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    step_in_place(&mut params, grad, &mut state, cfg)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    fn scalar_arch() -> ArchSpec {
        // 1×2 weight + 2 bias; coordinate 0 plays the scalar parameter
        ArchSpec::new(1, vec![], 2).unwrap()
    }

    fn cfg(lr: f64, wd: f64) -> OptConfig {
        OptConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..OptConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let arch = scalar_arch();
        let p = Params::he_uniform(&arch, 1);
        let g = Params::zeros(&arch);
        let (next, state) = step(&p, &g, &OptState::new(&p), &cfg(0.01, 0.0)).unwrap();
        assert_eq!(next, p);
        assert_eq!(state.steps, 1);
    }

    #[test]
    fn decay_only_arithmetic() {
        let arch = scalar_arch();
        let mut p = Params::zeros(&arch);
        p.set(0, 1.0);
        let g = Params::zeros(&arch);
        let (next, _) = step(&p, &g, &OptState::new(&p), &cfg(0.01, 0.1)).unwrap();
        assert!((next.get(0) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let arch = scalar_arch();
        let mut p = Params::zeros(&arch);
        let mut g = Params::zeros(&arch);
        g.set(0, 0.37);
        g.set(1, -2.5);
        let c = cfg(1e-3, 0.0);
        let mut state = OptState::new(&p);
        let mut last = p.clone();
        for _ in 0..10_000 {
            last = p.clone();
            step_in_place(&mut p, &g, &mut state, &c).unwrap();
        }
        for idx in 0..2 {
            let delta = (p.get(idx) - last.get(idx)).abs();
            assert!((delta - 1e-3).abs() < 1e-5, "coordinate {idx}: {delta}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = Params::zeros(&scalar_arch());
        let b = Params::zeros(&ArchSpec::new(2, vec![], 2).unwrap());
        assert!(matches!(
            step(&a, &b, &OptState::new(&a), &cfg(0.1, 0.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(OptConfig {
            beta1: 1.0,
            ..cfg(0.1, 0.0)
        }
        .validate()
        .is_err());
        assert!(cfg(0.1, 0.5).validate().is_ok());
    }
}
