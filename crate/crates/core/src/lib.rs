//! Vanilla and decoupled group-relative policy optimization over a synthetic
//! hybrid-reasoning task.
//!
//! A policy first emits a control token (`Short` or `Think`), then a
//! fixed-length response whose last token is the answer. Rewards favour
//! correct short answers by a margin `gamma`. The two objectives differ only
//! in how the control token and the response tokens are normalized:
//! [`objective::grpo_objective`] weights every token of trajectory `i` by
//! `1 / (T_i + 1)`, while [`objective::degrpo_objective`] gives the control
//! token a fixed weight `alpha` and the response tokens `1 / T_i`.

pub mod env;
pub mod error;
pub mod gradcheck;
pub mod objective;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use env::{build_env, extract_answer, DifficultyProfile, EnvConfig, Environment, Query, Token};
pub use error::{Error, Result};
pub use objective::{ObjectiveConfig, ObjectiveReport, Variant};
pub use policy::{Context, ControlToken, Layout, PolicyParams, Trajectory};
pub use reward::{compute_reward, group_advantages, GroupBatch, RewardConfig};
pub use trainer::{run_training, MetricsRecord, TrainConfig, TrainOutcome};
