//! Adam optimizer over a ParamSet.

use crate::param::ParamSet;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    t: u64,
}

impl AdamState {
    pub fn new(set: &ParamSet) -> Self {
        let m = set
            .iter()
            .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update with bias correction, consuming the grads currently
    /// stored in `set`. Deterministic given inputs.
    pub fn step(&mut self, set: &mut ParamSet, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for idx in 0..set.len() {
            let p = set.get_mut(idx);
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let g = p.grad.data();
            let theta = p.value.data_mut();
            for e in 0..g.len() {
                m[e] = cfg.beta1 * m[e] + (1.0 - cfg.beta1) * g[e];
                v[e] = cfg.beta2 * v[e] + (1.0 - cfg.beta2) * g[e] * g[e];
                let m_hat = m[e] / bc1;
                let v_hat = v[e] / bc2;
                theta[e] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut set = ParamSet::new();
        let id = set.add("w", Tensor2::from_vec(1, 2, vec![1.5, -0.5]).unwrap());
        let mut state = AdamState::new(&set);
        let cfg = AdamConfig::default();
        state.step(&mut set, &cfg);
        assert_eq!(set.value(id).data(), &[1.5, -0.5]);
    }

    #[test]
    fn first_step_hand_trace() {
        // theta=1, g=2, lr=0.001: m_hat = g, v_hat = g^2, step ~= lr
        let mut set = ParamSet::new();
        let id = set.add("w", Tensor2::from_vec(1, 1, vec![1.0]).unwrap());
        set.grad_mut(id).data_mut()[0] = 2.0;
        let mut state = AdamState::new(&set);
        state.step(&mut set, &AdamConfig::default());
        let theta = set.value(id).at(0, 0);
        let expect = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((theta - expect).abs() < 1e-15);
        assert!((theta - 0.999).abs() < 1e-8);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut set = ParamSet::new();
            let id = set.add("w", Tensor2::from_vec(1, 1, vec![0.3]).unwrap());
            let mut state = AdamState::new(&set);
            let cfg = AdamConfig::default();
            for step in 0..50 {
                set.zero_grads();
                let theta = set.value(id).at(0, 0);
                set.grad_mut(id).data_mut()[0] = 2.0 * theta + (step as f64 * 0.01).sin();
                state.step(&mut set, &cfg);
            }
            set.value(id).at(0, 0).to_bits()
        };
        assert_eq!(run(), run());
    }
}
