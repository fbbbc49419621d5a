//! Synthetic hybrid-reasoning environment.
//!
//! Each query class owns one difficulty profile and one ground-truth answer
//! token. A response is correct when its answer slot holds the truth token
//! and a mode-dependent Bernoulli flip does not fire, so the best reachable
//! accuracy is `1 - eta_short` in short mode and `1 - eta_think` in think
//! mode.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::policy::{ControlToken, Trajectory};

/// Token emitted at a response position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Answer(u16),
    Scratch(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyProfile {
    pub name: String,
    /// Probability that a truth-emitting short response is judged wrong.
    pub eta_short: f64,
    /// Probability that a truth-emitting think response is judged wrong.
    pub eta_think: f64,
    /// Sampling proportion of this profile.
    pub weight: f64,
}

impl DifficultyProfile {
    pub fn new(name: &str, eta_short: f64, eta_think: f64, weight: f64) -> Self {
        Self {
            name: name.to_string(),
            eta_short,
            eta_think,
            weight,
        }
    }

    pub fn eta(&self, mode: ControlToken) -> f64 {
        match mode {
            ControlToken::Short => self.eta_short,
            ControlToken::Think => self.eta_think,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(rename = "classes")]
    pub num_query_classes: usize,
    pub profiles: Vec<DifficultyProfile>,
    pub t_short: usize,
    pub t_think: usize,
    #[serde(rename = "answer_vocab")]
    pub vocab_answer_size: usize,
    #[serde(rename = "scratch_vocab")]
    pub vocab_scratch_size: usize,
}

impl Default for EnvConfig {
    /// Thirty classes split evenly over easy, medium and hard profiles.
    fn default() -> Self {
        let w = 1.0 / 3.0;
        Self {
            num_query_classes: 30,
            profiles: vec![
                DifficultyProfile::new("easy", 0.0, 0.0, w),
                DifficultyProfile::new("medium", 0.3, 0.05, w),
                DifficultyProfile::new("hard", 0.8, 0.1, 1.0 - 2.0 * w),
            ],
            t_short: 2,
            t_think: 50,
            vocab_answer_size: 10,
            vocab_scratch_size: 8,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_query_classes == 0 {
            return config_err("classes must be positive");
        }
        if self.profiles.is_empty() {
            return config_err("at least one difficulty profile is required");
        }
        if self.t_short < 2 {
            return config_err(format!("t_short must be >= 2, got {}", self.t_short));
        }
        if self.t_think <= self.t_short {
            return config_err(format!(
                "t_think ({}) must exceed t_short ({})",
                self.t_think, self.t_short
            ));
        }
        if self.vocab_answer_size == 0 || self.vocab_answer_size > u16::MAX as usize {
            return config_err("answer_vocab must be in 1..=65535");
        }
        if self.vocab_scratch_size == 0 || self.vocab_scratch_size > u16::MAX as usize {
            return config_err("scratch_vocab must be in 1..=65535");
        }
        let mut total = 0.0;
        for p in &self.profiles {
            for (key, v) in [("eta_short", p.eta_short), ("eta_think", p.eta_think), ("weight", p.weight)] {
                if !(0.0..=1.0).contains(&v) {
                    return config_err(format!("profile '{}': {key} = {v} outside [0, 1]", p.name));
                }
            }
            total += p.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return config_err(format!("profile weights sum to {total}, expected 1"));
        }
        for (k, p) in self.profiles.iter().enumerate() {
            if p.weight > 0.0 && k >= self.num_query_classes {
                return config_err(format!(
                    "profile '{}' has positive weight but owns no query class",
                    p.name
                ));
            }
        }
        Ok(())
    }
}

/// A sampled task instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub class_id: usize,
    /// Index into [`Environment::profiles`].
    pub profile: usize,
    /// Ground-truth answer token id.
    pub truth: u16,
}

/// Immutable environment. Safe to share across rollout workers.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    class_profile: Vec<usize>,
    class_truth: Vec<u16>,
    profile_classes: Vec<Vec<usize>>,
}

/// Builds an environment.
///
/// Class `k` belongs to profile `k mod P`. Truth tokens are dealt
/// round-robin over the answer vocabulary starting at a seed-derived offset.
pub fn build_env(config: EnvConfig, seed: u64) -> Result<Environment> {
    config.validate()?;
    let n_profiles = config.profiles.len();
    let vocab = config.vocab_answer_size;
    let mut rng = crate::rng::stream(seed, &[0x656e_76]);
    let offset = rng.gen_range(0..vocab);

    let class_profile: Vec<usize> = (0..config.num_query_classes).map(|k| k % n_profiles).collect();
    let class_truth: Vec<u16> = (0..config.num_query_classes)
        .map(|k| ((k + offset) % vocab) as u16)
        .collect();
    let mut profile_classes = vec![Vec::new(); n_profiles];
    for (k, &p) in class_profile.iter().enumerate() {
        profile_classes[p].push(k);
    }
    Ok(Environment {
        config,
        class_profile,
        class_truth,
        profile_classes,
    })
}

impl Environment {
    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_query_classes
    }

    pub fn profiles(&self) -> &[DifficultyProfile] {
        &self.config.profiles
    }

    pub fn profile_of(&self, query: &Query) -> &DifficultyProfile {
        &self.config.profiles[query.profile]
    }

    pub fn classes_of_profile(&self, profile: usize) -> &[usize] {
        &self.profile_classes[profile]
    }

    /// Query for a fixed class.
    pub fn query(&self, class_id: usize) -> Query {
        Query {
            class_id,
            profile: self.class_profile[class_id],
            truth: self.class_truth[class_id],
        }
    }

    /// Number of response tokens for a mode.
    pub fn template_len(&self, mode: ControlToken) -> usize {
        match mode {
            ControlToken::Short => self.config.t_short,
            ControlToken::Think => self.config.t_think,
        }
    }

    /// Draws a profile by weight, then a class uniformly within it.
    pub fn sample_query<R: Rng + ?Sized>(&self, rng: &mut R) -> Query {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, p) in self.config.profiles.iter().enumerate() {
            if p.weight <= 0.0 {
                continue;
            }
            acc += p.weight;
            chosen = Some(k);
            if u < acc {
                break;
            }
        }
        // validate() guarantees some profile has positive weight
        let profile = chosen.expect("no profile with positive weight");
        let classes = &self.profile_classes[profile];
        let class_id = classes[rng.gen_range(0..classes.len())];
        self.query(class_id)
    }

    /// Correctness of a trajectory. One uniform draw is consumed per call.
    pub fn judge<R: Rng + ?Sized>(&self, trajectory: &Trajectory, query: &Query, rng: &mut R) -> bool {
        let eta = self.profile_of(query).eta(trajectory.control);
        let flip = rng.gen::<f64>() < eta;
        extract_answer(trajectory) == Some(query.truth) && !flip
    }
}

/// Token in the final (answer) slot, if it is an answer token.
pub fn extract_answer(trajectory: &Trajectory) -> Option<u16> {
    match trajectory.response.last() {
        Some(Token::Answer(a)) => Some(*a),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ControlToken;
    use crate::rng::stream;

    fn traj(control: ControlToken, response: Vec<Token>) -> Trajectory {
        let n = response.len();
        Trajectory {
            control,
            response,
            logp: vec![0.0; n + 1],
            query: Query { class_id: 0, profile: 0, truth: 7 },
            correct: false,
            reward: 0.0,
        }
    }

    fn single_class() -> EnvConfig {
        EnvConfig {
            num_query_classes: 1,
            profiles: vec![DifficultyProfile::new("only", 0.0, 0.0, 1.0)],
            ..EnvConfig::default()
        }
    }

    #[test]
    fn single_class_env_always_samples_class_zero() {
        let env = build_env(single_class(), 3).unwrap();
        let mut rng = stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(env.sample_query(&mut rng).class_id, 0);
        }
    }

    #[test]
    fn same_seed_same_truth_table() {
        let a = build_env(EnvConfig::default(), 11).unwrap();
        let b = build_env(EnvConfig::default(), 11).unwrap();
        assert_eq!(a.class_truth, b.class_truth);
        assert_eq!(a.class_profile, b.class_profile);
    }

    #[test]
    fn round_robin_gives_ten_classes_per_profile() {
        let env = build_env(EnvConfig::default(), 0).unwrap();
        for p in 0..3 {
            assert_eq!(env.classes_of_profile(p).len(), 10);
        }
        // every answer token is used exactly three times over 30 classes
        let mut counts = [0usize; 10];
        for &t in &env.class_truth {
            counts[t as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 3));
    }

    #[test]
    fn zero_weight_profile_never_sampled() {
        let cfg = EnvConfig {
            num_query_classes: 4,
            profiles: vec![
                DifficultyProfile::new("a", 0.0, 0.0, 1.0),
                DifficultyProfile::new("b", 0.0, 0.0, 0.0),
            ],
            ..EnvConfig::default()
        };
        let env = build_env(cfg, 0).unwrap();
        let mut rng = stream(5, &[]);
        for _ in 0..10_000 {
            assert_eq!(env.sample_query(&mut rng).profile, 0);
        }
    }

    #[test]
    fn equal_weights_split_evenly() {
        let cfg = EnvConfig {
            num_query_classes: 4,
            profiles: vec![
                DifficultyProfile::new("a", 0.0, 0.0, 0.5),
                DifficultyProfile::new("b", 0.0, 0.0, 0.5),
            ],
            ..EnvConfig::default()
        };
        let env = build_env(cfg, 0).unwrap();
        let mut rng = stream(42, &[]);
        let n = 100_000;
        let first = (0..n).filter(|_| env.sample_query(&mut rng).profile == 0).count();
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = EnvConfig::default();
        cfg.t_think = cfg.t_short;
        assert!(build_env(cfg, 0).is_err());

        let mut cfg = EnvConfig::default();
        cfg.profiles[0].weight = 0.5;
        assert!(build_env(cfg, 0).is_err());

        let mut cfg = EnvConfig::default();
        cfg.t_short = 1;
        assert!(build_env(cfg, 0).is_err());
    }

    #[test]
    fn extract_answer_cases() {
        let t = traj(ControlToken::Short, vec![Token::Scratch(0), Token::Answer(7)]);
        assert_eq!(extract_answer(&t), Some(7));
        let t = traj(ControlToken::Think, vec![Token::Answer(1), Token::Scratch(3)]);
        assert_eq!(extract_answer(&t), None);
        let t = traj(ControlToken::Short, vec![]);
        assert_eq!(extract_answer(&t), None);
    }

    #[test]
    fn judge_mismatch_and_noiseless() {
        let cfg = EnvConfig {
            profiles: vec![DifficultyProfile::new("only", 1.0, 0.0, 1.0)],
            ..single_class()
        };
        let env = build_env(cfg, 0).unwrap();
        let q = env.query(0);
        let mut rng = stream(9, &[]);
        let wrong = traj(ControlToken::Think, vec![Token::Scratch(0), Token::Answer((q.truth + 1) % 10)]);
        let right = traj(ControlToken::Think, vec![Token::Scratch(0), Token::Answer(q.truth)]);
        let right_short = traj(ControlToken::Short, vec![Token::Scratch(0), Token::Answer(q.truth)]);
        for _ in 0..1000 {
            assert!(!env.judge(&wrong, &q, &mut rng));
            assert!(env.judge(&right, &q, &mut rng));
            // eta_short = 1: every short answer flips
            assert!(!env.judge(&right_short, &q, &mut rng));
        }
    }

    #[test]
    fn judge_short_accuracy_matches_flip_rate() {
        let cfg = EnvConfig {
            profiles: vec![DifficultyProfile::new("only", 0.8, 0.0, 1.0)],
            ..single_class()
        };
        let env = build_env(cfg, 0).unwrap();
        let q = env.query(0);
        let t = traj(ControlToken::Short, vec![Token::Scratch(0), Token::Answer(q.truth)]);
        let mut rng = stream(2024, &[]);
        let n = 100_000;
        let hits = (0..n).filter(|_| env.judge(&t, &q, &mut rng)).count();
        let acc = hits as f64 / n as f64;
        assert!((acc - 0.2).abs() < 0.01, "{acc}");
    }

    #[test]
    fn judge_replays_with_same_stream() {
        let env = build_env(EnvConfig::default(), 0).unwrap();
        let q = env.query(4);
        let t = traj(ControlToken::Short, vec![Token::Scratch(0), Token::Answer(q.truth)]);
        let run = |seed| {
            let mut rng = stream(seed, &[]);
            (0..200).map(|_| env.judge(&t, &q, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(77), run(77));
    }
}
