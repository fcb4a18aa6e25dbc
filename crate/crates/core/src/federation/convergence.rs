use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Early stopping on an evaluation metric where higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub max_rounds: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            max_rounds: 200,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

impl ConvergenceRule {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 || self.patience == 0 {
            return Err(Error::Config("max_rounds and patience must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!("min_delta = {} must be non-negative", self.min_delta)));
        }
        Ok(())
    }
}

/// 1-based round of the best value: a value only counts as better when it
/// beats the best so far by at least `min_delta`. `None` for an empty history.
pub fn best_round(history: &[f64], min_delta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in history.iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v >= b + min_delta => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i + 1)
}

/// True once `patience` rounds have passed without improvement, or the
/// history has reached `max_rounds`.
pub fn check_convergence(history: &[f64], rule: &ConvergenceRule) -> bool {
    if history.is_empty() {
        return false;
    }
    if history.len() >= rule.max_rounds {
        return true;
    }
    let best = best_round(history, rule.min_delta).expect("nonempty");
    history.len() - best >= rule.patience
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_history_keeps_going() {
        let h: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 * 0.001).collect();
        assert!(!check_convergence(&h, &ConvergenceRule::default()));
        assert_eq!(best_round(&h, 1e-4), Some(50));
    }

    #[test]
    fn flat_history_stops_after_patience() {
        let rule = ConvergenceRule::default();
        assert!(check_convergence(&[0.7; 11], &rule));
        assert!(!check_convergence(&[0.7; 10], &rule));
    }

    #[test]
    fn sub_delta_gains_do_not_count() {
        let mut h = vec![0.60, 0.70];
        h.extend([0.70005; 10]);
        assert!(check_convergence(&h, &ConvergenceRule::default()));
        assert_eq!(best_round(&h, 1e-4), Some(2));
    }

    #[test]
    fn max_rounds_caps() {
        let rule = ConvergenceRule {
            max_rounds: 3,
            ..ConvergenceRule::default()
        };
        assert!(check_convergence(&[0.1, 0.2, 0.3], &rule));
        assert!(!check_convergence(&[], &rule));
    }
}
