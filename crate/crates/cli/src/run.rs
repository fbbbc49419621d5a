//! Single training runs and their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use degrpo_core::trainer::run_training_with;
use degrpo_core::{Error, MetricsRecord, PolicyParams, Variant};
use serde::{Deserialize, Serialize};

use crate::analysis::p_think_by_profile;
use crate::config::{fresh_dir, RunConfig};
use crate::error::{CliError, CliResult};
use crate::metrics::{write_metrics, MetricsRow};
use crate::svg::{line_charts, Chart, Series};

/// Number of trailing steps averaged in `summary.json`.
pub const LAST_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAverages {
    pub think_fraction: f64,
    pub acc_short: Option<f64>,
    pub acc_think: Option<f64>,
    pub all_correct_short: f64,
    pub mean_reward: f64,
    pub kl: f64,
}

impl StepAverages {
    /// Means over `records`; per-mode accuracy over the steps where it exists.
    pub fn of(records: &[MetricsRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: fn(&MetricsRecord) -> Option<f64>| {
            let v: Vec<f64> = records.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            think_fraction: mean(|m| m.think_fraction),
            acc_short: mean_opt(|m| m.acc_short),
            acc_think: mean_opt(|m| m.acc_think),
            all_correct_short: mean(|m| m.all_correct_short as f64),
            mean_reward: mean(|m| m.mean_reward),
            kl: mean(|m| m.kl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: Option<String>,
    pub variant: Variant,
    pub seed: u64,
    pub steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Final parameters, relative to the run directory.
    pub final_params: String,
    pub last_k: usize,
    pub last_k_means: StepAverages,
    pub final_think_fraction: f64,
    pub final_acc_short: Option<f64>,
    pub final_acc_think: Option<f64>,
    /// Mean `P(think)` over each profile's classes under the final
    /// parameters, in profile order.
    pub p_think_by_profile: Vec<ProfileMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMean {
    pub profile: String,
    pub p_think: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub params: PolicyParams,
    pub summary: Summary,
}

/// Think fraction, per-mode accuracy and all-correct-short charts, one
/// series (or one per mode) for each labelled metrics table.
pub fn metric_charts(inputs: &[(String, Vec<MetricsRow>)]) -> Vec<Chart> {
    let mut think = Chart::new("think fraction", "step", "fraction of rollouts").with_y_range(0.0, 1.0);
    let mut acc = Chart::new("accuracy by mode", "step", "accuracy").with_y_range(0.0, 1.0);
    let mut acs = Chart::new("all-correct short groups", "step", "groups");
    for (label, rows) in inputs {
        let series = |suffix: &str, f: &dyn Fn(&MetricsRow) -> Option<f64>| Series {
            label: format!("{label}{suffix}"),
            points: rows.iter().map(|r| (r.step as f64, f(r))).collect(),
        };
        think.series.push(series("", &|r| Some(r.think_fraction)));
        acc.series.push(series(" short", &|r| r.acc_short));
        acc.series.push(series(" think", &|r| r.acc_think));
        acs.series.push(series("", &|r| Some(r.all_correct_short as f64)));
    }
    vec![think, acc, acs]
}

/// Trains under `cfg` and writes `config.json`, `metrics.csv`, `curves.svg`,
/// `params.bin` and `summary.json` into a fresh directory `root/name`.
///
/// A non-finite abort leaves the offending batch in `nonfinite_batch.json`.
pub fn execute_run(cfg: &RunConfig, root: &Path, name: &str) -> CliResult<RunResult> {
    let (env, init) = cfg.build()?;
    let dir = fresh_dir(root, name)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;

    let outcome = match run_training_with(&env, &init, &cfg.train, |_, _| {}) {
        Ok(o) => o,
        Err(Error::NonFinite { step, epoch, what, dump }) => {
            let path = dir.join("nonfinite_batch.json");
            fs::write(&path, dump)?;
            return Err(CliError::Runtime(format!(
                "non-finite value at step {step}, inner epoch {epoch}: {what} (batch saved to {})",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let rows: Vec<MetricsRow> = outcome.metrics.iter().map(|m| MetricsRow::from_record(m, env.profiles())).collect();
    write_metrics(fs::File::create(dir.join("metrics.csv"))?, &rows)?;
    let label = cfg.run_name();
    fs::write(dir.join("curves.svg"), line_charts(&metric_charts(&[(label, rows)]), 3))?;
    outcome.params.save(&dir.join("params.bin"))?;

    let tail = &outcome.metrics[outcome.metrics.len().saturating_sub(LAST_K)..];
    let last = outcome.metrics.last();
    let objective = &cfg.train.objective;
    let summary = Summary {
        preset: cfg.preset.clone(),
        variant: objective.variant,
        seed: cfg.train.seed,
        steps: cfg.train.steps,
        alpha: objective.alpha,
        beta: objective.beta,
        epsilon: objective.epsilon,
        gamma: cfg.train.reward.gamma,
        final_params: "params.bin".into(),
        last_k: tail.len(),
        last_k_means: StepAverages::of(tail),
        final_think_fraction: last.map(|m| m.think_fraction).unwrap_or(f64::NAN),
        final_acc_short: last.and_then(|m| m.acc_short),
        final_acc_think: last.and_then(|m| m.acc_think),
        p_think_by_profile: env
            .profiles()
            .iter()
            .zip(p_think_by_profile(&env, &outcome.params))
            .map(|(p, p_think)| ProfileMean {
                profile: p.name.clone(),
                p_think,
            })
            .collect(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;

    Ok(RunResult {
        dir,
        metrics: outcome.metrics,
        params: outcome.params,
        summary,
    })
}
