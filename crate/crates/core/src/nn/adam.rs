use serde::{Deserialize, Serialize};

use super::model::NetworkParams;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

/// First and second moment estimates for every trainable tensor, in
/// declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let sizes: Vec<usize> = params
            .tensors()
            .iter()
            .filter(|(_, _, t)| *t)
            .map(|(_, p, _)| p.data.len())
            .collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// Scalar bias-corrected Adam step; returns the new value.
pub fn adam_scalar(theta: f64, g: f64, m: &mut f64, v: &mut f64, t: u64, lr: f64) -> f64 {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let mhat = *m / (1.0 - BETA1.powi(t as i32));
    let vhat = *v / (1.0 - BETA2.powi(t as i32));
    theta - lr * mhat / (vhat.sqrt() + EPSILON)
}

/// One Adam step over all trainable tensors. Running statistics are left
/// untouched.
pub fn adam_update(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, lr: f64) -> Result<()> {
    let gs: Vec<&[f64]> = grads
        .tensors()
        .into_iter()
        .filter(|(_, _, t)| *t)
        .map(|(_, p, _)| p.data.as_slice())
        .collect();
    let mut ps: Vec<_> = params.tensors_mut().into_iter().filter(|(_, _, t)| *t).collect();
    if ps.len() != gs.len() || ps.len() != state.m.len() {
        return Err(Error::shape("optimizer state does not match parameters"));
    }
    for (k, (_, p, _)) in ps.iter_mut().enumerate() {
        if p.data.len() != gs[k].len() || p.data.len() != state.m[k].len() {
            return Err(Error::shape("gradient size does not match parameter"));
        }
    }
    state.t += 1;
    let t = state.t;
    for (k, (_, p, _)) in ps.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            p.data[i] = adam_scalar(p.data[i], gs[k][i], &mut m[i], &mut v[i], t, lr);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_value() {
        let (mut m, mut v) = (0.0, 0.0);
        assert_eq!(adam_scalar(0.7, 0.0, &mut m, &mut v, 1, 1e-3), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut m, mut v) = (0.0, 0.0);
        let next = adam_scalar(0.0, 0.5, &mut m, &mut v, 1, 1e-3);
        assert!((next + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn descends_quadratic() {
        let (mut m, mut v) = (0.0, 0.0);
        let mut theta = 1.0;
        let mut last = 0.5 * theta * theta;
        for t in 1..=2 {
            theta = adam_scalar(theta, theta, &mut m, &mut v, t, 0.1);
            let loss = 0.5 * theta * theta;
            assert!(loss < last);
            last = loss;
        }
    }
}
