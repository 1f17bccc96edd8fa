//! AdamW with bias correction and decoupled weight decay.
//!
//! Decay is applied multiplicatively to each decayable tensor (weights yes,
//! biases no) before the Adam update, so with a zero gradient a decayed
//! parameter shrinks by exactly `(1 - lr * weight_decay)` per step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: step counter plus first/second moment buffers, one pair
/// per parameter tensor in a fixed order chosen by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(cfg: AdamWConfig, lens: &[usize]) -> Self {
        AdamWState {
            cfg,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW step over a fixed list of parameter tensors.
pub fn adamw_step(
    state: &mut AdamWState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    decay: &[bool],
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() || decay.len() != params.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "adamw: {} params, {} grads, {} decay flags, {} moment pairs",
            params.len(),
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.len() != grads[i].len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch(format!(
                "adamw: tensor {i} has {} params, {} grads, {} moments",
                p.len(),
                grads[i].len(),
                state.m[i].len()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let cfg = state.cfg;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for i in 0..params.len() {
        let p = &mut *params[i];
        let g = grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let shrink = 1.0 - cfg.lr * cfg.weight_decay;
        for j in 0..p.len() {
            if decay[i] {
                p[j] *= shrink;
            }
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = AdamWState::new(cfg, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        let g = vec![0.0; 3];
        for _ in 0..5 {
            adamw_step(&mut state, &mut [&mut p], &[&g], &[true]).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_signed_unit_step() {
        // Fresh state, constant gradient: bias-corrected moments reduce to g
        // and g^2, so the update is -lr * g / (|g| + eps) per element.
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = AdamWState::new(cfg, &[3]);
        let mut p = vec![0.0, 0.0, 0.0];
        let g = vec![2.0, -0.5, 1e-3];
        adamw_step(&mut state, &mut [&mut p], &[&g], &[true]).unwrap();
        for j in 0..3 {
            let want = -cfg.lr * g[j] / (g[j].abs() + cfg.epsilon);
            assert!((p[j] - want).abs() < 1e-15, "{} vs {}", p[j], want);
        }
    }

    #[test]
    fn decoupled_decay_acts_alone_on_zero_grad() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut state = AdamWState::new(cfg, &[2]);
        let mut p = vec![4.0, -8.0];
        let g = vec![0.0, 0.0];
        let steps = 7;
        for _ in 0..steps {
            adamw_step(&mut state, &mut [&mut p], &[&g], &[true]).unwrap();
        }
        let factor = (1.0 - cfg.lr * 0.01f64).powi(steps);
        assert!((p[0] - 4.0 * factor).abs() < 1e-12);
        assert!((p[1] + 8.0 * factor).abs() < 1e-12);
    }

    #[test]
    fn non_decayable_tensors_skip_decay() {
        let cfg = AdamWConfig::default();
        let mut state = AdamWState::new(cfg, &[1]);
        let mut p = vec![3.0];
        adamw_step(&mut state, &mut [&mut p], &[&[0.0]], &[false]).unwrap();
        assert_eq!(p[0], 3.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamWState::new(AdamWConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        let g = vec![0.0; 3];
        assert!(adamw_step(&mut state, &mut [&mut p], &[&g], &[true]).is_err());
    }
}
