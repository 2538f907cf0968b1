use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(format!(
                "adam: param {i} {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mj / c1;
            let v_hat = vj / c2;
            *pj -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::row(&[1.0, -2.0])];
        let mut state = AdamState::new(&params);
        state.m[0] = Tensor::row(&[0.5, 0.5]);
        state.v[0] = Tensor::row(&[0.25, 0.25]);
        state.step = 3;
        let before_m = state.m[0].clone();
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        adam_step(&mut params, &[Tensor::zeros([1, 2])], &mut state, &cfg).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert!(state.m[0].data()[0] < before_m.data()[0]);
        assert!(state.v[0].data()[0] < 0.25);

        let mut fresh = vec![Tensor::row(&[3.0])];
        let mut st = AdamState::new(&fresh);
        adam_step(&mut fresh, &[Tensor::zeros([1, 1])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(fresh[0].item(), 3.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, &cfg).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((params[0].item() - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![Tensor::row(&[0.3, 0.7, -1.1])];
            let mut s = AdamState::new(&p);
            for k in 0..20 {
                let g = Tensor::row(&[k as f64 * 0.1, -0.2, (k as f64).sin()]);
                adam_step(&mut p, &[g], &mut s, &AdamConfig::default()).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        for (x, y) in a[0].data().iter().zip(b[0].data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::zeros([2, 2])];
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::zeros([1, 4])], &mut s, &AdamConfig::default());
        assert!(matches!(err, Err(Error::ShapeError(_))));
        assert!(adam_step(&mut p, &[], &mut s, &AdamConfig::default()).is_err());
    }
}
