//! Dynamic task weights from exponential moving averages of task losses.

use serde::{Deserialize, Serialize};

pub const MIN_WEIGHT: f64 = 0.1;
pub const MAX_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBalancer {
    decay: f64,
    warmup_steps: usize,
    ema: Vec<Option<f64>>,
    steps: usize,
}

impl LossBalancer {
    pub fn new(num_tasks: usize, decay: f64, warmup_steps: usize) -> Self {
        Self {
            decay,
            warmup_steps,
            ema: vec![None; num_tasks],
            steps: 0,
        }
    }

    pub fn ema(&self, task: usize) -> Option<f64> {
        self.ema[task]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Current weight of `task`: mean EMA over observed tasks divided by
    /// the task's own EMA, clamped to [0.1, 10]; 1 during warmup or before
    /// the task has been seen.
    pub fn weight(&self, task: usize) -> f64 {
        let Some(own) = self.ema[task] else {
            return 1.0;
        };
        if self.steps <= self.warmup_steps {
            return 1.0;
        }
        let seen: Vec<f64> = self.ema.iter().flatten().copied().collect();
        let mean = seen.iter().sum::<f64>() / seen.len() as f64;
        if own <= 0.0 {
            return if mean <= 0.0 { 1.0 } else { MAX_WEIGHT };
        }
        (mean / own).clamp(MIN_WEIGHT, MAX_WEIGHT)
    }

    /// Folds in one raw loss and returns the weight to apply to it. A
    /// non-finite or negative loss leaves the state untouched.
    pub fn update(&mut self, task: usize, raw_loss: f64) -> Result<f64, f64> {
        if !raw_loss.is_finite() || raw_loss < 0.0 {
            return Err(raw_loss);
        }
        let d = self.decay;
        self.ema[task] = Some(match self.ema[task] {
            None => raw_loss,
            Some(e) => d * e + (1.0 - d) * raw_loss,
        });
        self.steps += 1;
        Ok(self.weight(task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_losses_weight_one() {
        let mut b = LossBalancer::new(2, 0.9, 5);
        for _ in 0..200 {
            assert_eq!(b.update(0, 1.7).unwrap(), 1.0);
            assert_eq!(b.update(1, 1.7).unwrap(), 1.0);
        }
    }

    #[test]
    fn single_task_weight_one() {
        let mut b = LossBalancer::new(1, 0.9, 0);
        for i in 0..100 {
            assert_eq!(b.update(0, 0.1 + i as f64).unwrap(), 1.0);
        }
    }

    #[test]
    fn warmup_holds_weights_at_one() {
        let mut b = LossBalancer::new(2, 0.9, 4);
        for _ in 0..2 {
            assert_eq!(b.update(0, 2.0).unwrap(), 1.0);
            assert_eq!(b.update(1, 4.0).unwrap(), 1.0);
        }
        assert!((b.update(0, 2.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn weights_clamped() {
        let mut b = LossBalancer::new(2, 0.5, 0);
        b.update(0, 1e-6).unwrap();
        b.update(1, 100.0).unwrap();
        assert_eq!(b.weight(0), MAX_WEIGHT);
        assert!((b.weight(1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        let mut b = LossBalancer::new(1, 0.9, 0);
        assert!(b.update(0, f64::NAN).is_err());
        assert!(b.update(0, f64::INFINITY).is_err());
        assert_eq!(b.steps(), 0);
    }
}
