//! Training loop: snapshot, roll out, score, take several AdamW ascent steps
//! on the frozen batch, record metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{config_err, Error, Result};
use crate::objective::{evaluate, ObjectiveConfig};
use crate::policy::{ControlToken, PolicyParams};
use crate::reward::{compute_reward, GroupBatch, RewardConfig};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_queries: usize,
    pub group_size: usize,
    /// Optimizer steps taken on each rollout batch.
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub reward: RewardConfig,
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_queries: 64,
            group_size: 8,
            inner_epochs: 4,
            learning_rate: 5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            seed: 0,
            objective: ObjectiveConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return config_err("steps must be >= 1");
        }
        self.validate_loop()
    }

    /// Everything except the step count.
    fn validate_loop(&self) -> Result<()> {
        if self.batch_queries < 1 {
            return config_err("batch_queries must be >= 1");
        }
        if self.group_size < 2 {
            return config_err(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if self.inner_epochs < 1 {
            return config_err("inner_epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config_err(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return config_err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return config_err("adam_eps must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return config_err("weight_decay must be >= 0");
        }
        self.objective.validate()?;
        self.reward.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// One AdamW step that *ascends* `gradient`.
///
/// Weight decay is decoupled: `theta <- theta * (1 - lr * wd)` before the
/// moment update is added.
pub fn adam_step(params: &mut PolicyParams, gradient: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if gradient.len() != params.dim() || state.m.len() != params.dim() {
        return Err(Error::Dimension("gradient, optimizer state and parameters differ in length".into()));
    }
    if let Some(k) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Usage(format!("non-finite gradient at feature {k}")));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    let mut next = params.theta.clone();
    for (k, x) in next.iter_mut().enumerate() {
        let g = gradient[k];
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        *x = *x * decay + cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    if let Some(k) = next.iter().position(|x| !x.is_finite()) {
        return Err(Error::Usage(format!("update made feature {k} non-finite")));
    }
    params.theta = next;
    Ok(())
}

/// Statistics of one step's rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub rollouts: usize,
    pub think_count: usize,
    pub think_fraction: f64,
    /// Accuracy of short rollouts; `None` if the step had none.
    pub acc_short: Option<f64>,
    pub acc_think: Option<f64>,
    /// Queries whose whole group answered in short mode and correctly.
    pub all_correct_short: usize,
    pub mean_reward: f64,
    /// Objective at the last inner epoch.
    pub objective_value: f64,
    pub kl: f64,
    /// Think fraction per profile (environment order); `None` if the profile was not sampled.
    pub think_fraction_by_profile: Vec<Option<f64>>,
}

/// Counts think/short rollouts, per-mode accuracy and all-correct-short groups.
///
/// `objective_value` and `kl` are left at zero for the caller to fill in.
pub fn collect_metrics(step: usize, groups: &[GroupBatch], env: &Environment) -> MetricsRecord {
    let n_profiles = env.profiles().len();
    let mut mode_total = [0usize; 2];
    let mut mode_correct = [0usize; 2];
    let mut profile_total = vec![0usize; n_profiles];
    let mut profile_think = vec![0usize; n_profiles];
    let mut reward_sum = 0.0;
    let mut all_correct_short = 0;
    for g in groups {
        let mut all_short_correct = true;
        for t in &g.trajectories {
            let m = t.control.index();
            mode_total[m] += 1;
            mode_correct[m] += t.correct as usize;
            profile_total[t.query.profile] += 1;
            if t.control == ControlToken::Think {
                profile_think[t.query.profile] += 1;
            }
            reward_sum += t.reward;
            all_short_correct &= t.control == ControlToken::Short && t.correct;
        }
        if all_short_correct && !g.is_empty() {
            all_correct_short += 1;
        }
    }
    let rollouts = mode_total[0] + mode_total[1];
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    MetricsRecord {
        step,
        rollouts,
        think_count: mode_total[1],
        think_fraction: ratio(mode_total[1], rollouts).unwrap_or(0.0),
        acc_short: ratio(mode_correct[0], mode_total[0]),
        acc_think: ratio(mode_correct[1], mode_total[1]),
        all_correct_short,
        mean_reward: if rollouts > 0 { reward_sum / rollouts as f64 } else { 0.0 },
        objective_value: 0.0,
        kl: 0.0,
        think_fraction_by_profile: (0..n_profiles)
            .map(|p| ratio(profile_think[p], profile_total[p]))
            .collect(),
    }
}

/// Samples, judges and scores one step's `batch_queries` groups from `old`.
///
/// Query draws come from stream `(seed, step, 0)`; group `j` uses stream
/// `(seed, step, 1, j)`, so groups can be generated in parallel.
pub fn collect_rollouts(env: &Environment, old: &PolicyParams, cfg: &TrainConfig, step: usize) -> Result<Vec<GroupBatch>> {
    let mut query_rng = stream(cfg.seed, &[step as u64, 0]);
    let queries: Vec<_> = (0..cfg.batch_queries).map(|_| env.sample_query(&mut query_rng)).collect();
    queries
        .par_iter()
        .enumerate()
        .map(|(j, q)| {
            let mut rng = stream(cfg.seed, &[step as u64, 1, j as u64]);
            let trajectories = (0..cfg.group_size)
                .map(|_| {
                    let mut t = old.sample_trajectory(q, &mut rng);
                    t.correct = env.judge(&t, q, &mut rng);
                    t.reward = compute_reward(t.control, t.correct, &cfg.reward);
                    t
                })
                .collect();
            GroupBatch::new(*q, trajectories)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
}

fn dump_batch(groups: &[GroupBatch]) -> String {
    serde_json::to_string(groups).unwrap_or_else(|e| format!("<unserializable batch: {e}>"))
}

/// Runs `cfg.steps` outer steps starting from `init`, which also serves as the
/// fixed reference policy for the KL term.
pub fn run_training(env: &Environment, init: &PolicyParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_training_with(env, init, cfg, |_, _| {})
}

/// [`run_training`] with a callback invoked after every step with the live
/// parameters and the step's metrics.
pub fn run_training_with<F>(env: &Environment, init: &PolicyParams, cfg: &TrainConfig, mut on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(&PolicyParams, &MetricsRecord),
{
    init.check_matches(env)?;
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            params: init.clone(),
            metrics: Vec::new(),
        });
    }
    cfg.validate_loop()?;
    if !init.is_finite() {
        return config_err("initial parameters contain non-finite entries");
    }

    let reference = init.snapshot();
    let mut live = init.clone();
    let mut adam = AdamState::new(live.dim());
    let adam_cfg = cfg.adam();
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let old = live.snapshot();
        let groups = collect_rollouts(env, &old, cfg, step)?;
        let mut record = collect_metrics(step, &groups, env);
        for epoch in 0..cfg.inner_epochs {
            let report = evaluate(&groups, &live, &old, &reference, &cfg.objective)?;
            if !report.value.is_finite() || report.gradient.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    epoch,
                    what: "objective or gradient".into(),
                    dump: dump_batch(&groups),
                });
            }
            record.objective_value = report.value;
            record.kl = report.kl_term;
            if let Err(e) = adam_step(&mut live, &report.gradient, &mut adam, &adam_cfg) {
                return Err(Error::NonFinite {
                    step,
                    epoch,
                    what: e.to_string(),
                    dump: dump_batch(&groups),
                });
            }
        }
        on_step(&live, &record);
        metrics.push(record);
    }
    Ok(TrainOutcome { params: live, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_env, DifficultyProfile, EnvConfig, Query, Token};
    use crate::policy::{Context, Layout, Trajectory};

    fn adam_cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn small_params(theta: Vec<f64>) -> PolicyParams {
        // 1 class, answer vocab 1, scratch vocab 1: block of 2 + 2 * 2 = 6
        let layout = Layout {
            classes: 1,
            answer_vocab: 1,
            scratch_vocab: 1,
            t_short: 2,
            t_think: 3,
        };
        PolicyParams::from_theta(layout, theta).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = small_params(vec![0.3, -1.0, 2.0, 0.0, 5.0, -0.25]);
        let before = p.clone();
        let mut s = AdamState::new(6);
        adam_step(&mut p, &[0.0; 6], &mut s, &adam_cfg(0.1, 0.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = small_params(vec![0.0; 6]);
        let g = [2.0, -0.5, 1e-3, 0.0, -7.0, 0.25];
        let mut s = AdamState::new(6);
        let lr = 0.01;
        adam_step(&mut p, &g, &mut s, &adam_cfg(lr, 0.0)).unwrap();
        for (x, gk) in p.theta.iter().zip(g) {
            // m_hat = g, v_hat = g^2 at t = 1
            let want = lr * gk / (gk.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
        }
    }

    #[test]
    fn adam_decoupled_weight_decay_shrinks() {
        let theta = vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5];
        let mut p = small_params(theta.clone());
        let mut s = AdamState::new(6);
        adam_step(&mut p, &[0.0; 6], &mut s, &adam_cfg(0.1, 0.01)).unwrap();
        for (x, x0) in p.theta.iter().zip(theta) {
            assert_eq!(*x, x0 * (1.0 - 0.1 * 0.01));
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = small_params(vec![0.0; 6]);
        let mut s = AdamState::new(6);
        let mut g = [0.0; 6];
        g[2] = f64::NAN;
        assert!(adam_step(&mut p, &g, &mut s, &adam_cfg(0.1, 0.0)).is_err());
    }

    fn scored(control: ControlToken, correct: bool, class: usize, profile: usize) -> Trajectory {
        let n = if control == ControlToken::Short { 2 } else { 50 };
        let mut response = vec![Token::Scratch(0); n - 1];
        response.push(Token::Answer(0));
        Trajectory {
            control,
            response,
            logp: vec![-0.5; n + 1],
            query: Query { class_id: class, profile, truth: 0 },
            correct,
            reward: compute_reward(control, correct, &RewardConfig::default()),
        }
    }

    #[test]
    fn metrics_all_think() {
        let env = build_env(EnvConfig::default(), 0).unwrap();
        let q = env.query(0);
        let trajs = (0..8).map(|_| scored(ControlToken::Think, true, 0, q.profile)).collect();
        let g = GroupBatch { query: q, trajectories: trajs, advantages: vec![0.0; 8] };
        let m = collect_metrics(0, &[g], &env);
        assert_eq!(m.think_fraction, 1.0);
        assert_eq!(m.acc_short, None);
        assert_eq!(m.acc_think, Some(1.0));
    }

    #[test]
    fn metrics_all_correct_short_and_mixed_fraction() {
        let env = build_env(EnvConfig::default(), 0).unwrap();
        let q = env.query(0);
        let trajs: Vec<_> = (0..8).map(|_| scored(ControlToken::Short, true, 0, q.profile)).collect();
        let g = GroupBatch { query: q, trajectories: trajs.clone(), advantages: vec![0.0; 8] };
        assert_eq!(collect_metrics(0, &[g], &env).all_correct_short, 1);

        let mut mixed = trajs;
        for t in mixed.iter_mut().take(3) {
            *t = scored(ControlToken::Think, false, 0, q.profile);
        }
        let g = GroupBatch { query: q, trajectories: mixed, advantages: vec![0.0; 8] };
        let m = collect_metrics(0, &[g], &env);
        assert_eq!(m.think_fraction, 0.375);
        assert_eq!(m.think_count + (m.rollouts - m.think_count), 8);
        assert_eq!(m.all_correct_short, 0);
        assert_eq!(m.acc_think, Some(0.0));
        assert_eq!(m.acc_short, Some(1.0));
    }

    fn tiny_run(steps: usize) -> (crate::env::Environment, PolicyParams, TrainConfig) {
        let env = build_env(EnvConfig { num_query_classes: 6, ..EnvConfig::default() }, 1).unwrap();
        let init = PolicyParams::warmup_init(&env, &[0.5; 3], &[0.8; 3]).unwrap();
        let cfg = TrainConfig { steps, batch_queries: 8, group_size: 4, inner_epochs: 2, seed: 5, ..TrainConfig::default() };
        (env, init, cfg)
    }

    #[test]
    fn zero_steps_returns_init() {
        let (env, init, cfg) = tiny_run(0);
        let out = run_training(&env, &init, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn runs_are_deterministic_and_conserve_counts() {
        let (env, init, cfg) = tiny_run(5);
        let a = run_training(&env, &init, &cfg).unwrap();
        let b = run_training(&env, &init, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        for m in &a.metrics {
            assert_eq!(m.rollouts, cfg.batch_queries * cfg.group_size);
            assert!(m.all_correct_short <= cfg.batch_queries);
        }
        assert_ne!(a.params, init);
    }

    #[test]
    fn single_mode_noiseless_run_is_a_fixed_point() {
        // saturated short control and a perfect short answer: every reward is 1
        let env = build_env(
            EnvConfig {
                num_query_classes: 3,
                profiles: vec![DifficultyProfile::new("easy", 0.0, 0.0, 1.0)],
                ..EnvConfig::default()
            },
            0,
        )
        .unwrap();
        let mut init = PolicyParams::zeros(Layout::of(&env));
        for c in 0..3 {
            init.logits_mut(c, Context::Control).copy_from_slice(&[40.0, -40.0]);
            let truth = env.query(c).truth as usize;
            init.logits_mut(c, Context::Answer(ControlToken::Short))[truth] = 40.0;
            for x in init.logits_mut(c, Context::Answer(ControlToken::Short)).iter_mut() {
                if *x == 0.0 {
                    *x = -40.0;
                }
            }
        }
        let mut cfg = TrainConfig { steps: 3, batch_queries: 4, group_size: 4, ..TrainConfig::default() };
        cfg.objective.beta = 0.0;
        let out = run_training(&env, &init, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.metrics.iter().all(|m| m.think_count == 0 && m.mean_reward == 1.0));
    }
}
