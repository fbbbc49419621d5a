//! Three-case reward with a short-answer margin, and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::env::Query;
use crate::error::{config_err, Result};
use crate::policy::{ControlToken, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Margin by which a correct think answer scores below a correct short one.
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { gamma: 0.1 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return config_err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        Ok(())
    }
}

/// `1` for a correct short answer, `1 - gamma` for a correct think answer, `-1` otherwise.
pub fn compute_reward(control: ControlToken, correct: bool, cfg: &RewardConfig) -> f64 {
    match (control, correct) {
        (_, false) => -1.0,
        (ControlToken::Short, true) => 1.0,
        (ControlToken::Think, true) => 1.0 - cfg.gamma,
    }
}

/// `r_i - mean(r)`; no standard-deviation scaling.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return config_err(format!(
            "a group needs at least 2 rollouts for a relative signal, got {}",
            rewards.len()
        ));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// The `G` scored rollouts of one query and their advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub query: Query,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    /// Computes advantages from the trajectories' rewards.
    pub fn new(query: Query, trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(t) = trajectories.iter().find(|t| t.query != query) {
            return config_err(format!(
                "trajectory for class {} placed in the group of class {}",
                t.query.class_id, query.class_id
            ));
        }
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            query,
            trajectories,
            advantages,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CFG: RewardConfig = RewardConfig { gamma: 0.1 };

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(ControlToken::Short, true, &CFG), 1.0);
        assert_eq!(compute_reward(ControlToken::Think, true, &CFG), 0.9);
        assert_eq!(compute_reward(ControlToken::Think, false, &CFG), -1.0);
        assert_eq!(compute_reward(ControlToken::Short, false, &CFG), -1.0);
    }

    #[test]
    fn gamma_bounds() {
        assert!(RewardConfig { gamma: 0.0 }.validate().is_err());
        assert!(RewardConfig { gamma: 1.0 }.validate().is_err());
        assert!(RewardConfig { gamma: 0.5 }.validate().is_ok());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        let a = group_advantages(&[1.0, 0.9, -1.0, -1.0]).unwrap();
        for (x, want) in a.iter().zip([1.025, 0.925, -0.975, -0.975]) {
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
        assert!(group_advantages(&[1.0]).is_err());
        assert!(group_advantages(&[]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(rewards in proptest::collection::vec(
            prop_oneof![Just(1.0), Just(0.9), Just(-1.0), -1.0f64..1.0], 2..32)) {
            let a = group_advantages(&rewards).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn short_correct_beats_think_correct(
            gamma in 0.001f64..0.999,
            others in proptest::collection::vec(any::<(bool, bool)>(), 0..14),
        ) {
            let cfg = RewardConfig { gamma };
            let mut rewards = vec![
                compute_reward(ControlToken::Short, true, &cfg),
                compute_reward(ControlToken::Think, true, &cfg),
            ];
            for (think, correct) in others {
                let c = if think { ControlToken::Think } else { ControlToken::Short };
                rewards.push(compute_reward(c, correct, &cfg));
            }
            let a = group_advantages(&rewards).unwrap();
            prop_assert!(a[0] > a[1]);
        }

        #[test]
        fn reward_range_and_monotonicity(g1 in 0.001f64..0.999, g2 in 0.001f64..0.999) {
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let a = compute_reward(ControlToken::Think, true, &RewardConfig { gamma: lo });
            let b = compute_reward(ControlToken::Think, true, &RewardConfig { gamma: hi });
            prop_assert!(a >= b);
            for c in ControlToken::ALL {
                for ok in [true, false] {
                    let r = compute_reward(c, ok, &RewardConfig { gamma: lo });
                    prop_assert!(r == 1.0 || r == 1.0 - lo || r == -1.0);
                }
            }
        }
    }
}
