//! SGD with heavy-ball momentum.

use crate::error::{Error, Result};

/// Velocity buffer plus hyperparameters for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl OptState {
    pub fn new(len: usize, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid("lr", format!("must be finite and non-negative, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("momentum", format!("must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: vec![0.0; len],
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `v <- m v + g; p <- p - lr v`. Callers maximizing an objective pass its negated gradient.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        sgd_momentum_step(params, grads, self)
    }
}

pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], state: &mut OptState) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(Error::shape("optimizer velocity", state.velocity.len(), params.len()));
    }
    if grads.len() != params.len() {
        return Err(Error::shape("optimizer grads", params.len(), grads.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("optimizer gradient".into()));
    }
    let (lr, m) = (state.lr, state.momentum);
    for ((p, v), g) in params.iter_mut().zip(&mut state.velocity).zip(grads) {
        *v = m * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut s = OptState::new(2, 0.5, 0.0).unwrap();
        let mut p = [1.0, 2.0];
        s.step(&mut p, &[2.0, -4.0]).unwrap();
        assert_eq!(p, [0.0, 4.0]);
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut s = OptState::new(3, 0.1, 0.9).unwrap();
        let mut p = [1.0, -1.0, 0.5];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -1.0, 0.5]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut s = OptState::new(1, 0.1, 0.9).unwrap();
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = OptState::new(1, 0.1, 0.9).unwrap();
        assert!(s.step(&mut [0.0], &[f64::NAN]).is_err());
        assert!(s.step(&mut [0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(OptState::new(1, 0.1, 1.0).is_err());
    }
}
