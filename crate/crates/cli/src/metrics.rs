//! `metrics.csv` reading and writing.

use std::io::{Read, Write};

use degrpo_core::{DifficultyProfile, MetricsRecord};

use crate::error::{CliError, CliResult};

pub const COLUMNS: [&str; 11] = [
    "step",
    "think_fraction",
    "acc_short",
    "acc_think",
    "all_correct_short",
    "mean_reward",
    "objective",
    "kl",
    "think_frac_easy",
    "think_frac_medium",
    "think_frac_hard",
];

/// Profile names that get their own `think_frac_*` column.
pub const PROFILE_COLUMNS: [&str; 3] = ["easy", "medium", "hard"];

/// One parsed CSV row. Empty fields become `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub think_fraction: f64,
    pub acc_short: Option<f64>,
    pub acc_think: Option<f64>,
    pub all_correct_short: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub kl: f64,
    pub think_frac_profile: [Option<f64>; 3],
}

impl MetricsRow {
    pub fn from_record(m: &MetricsRecord, profiles: &[DifficultyProfile]) -> Self {
        let by_name = |name: &str| {
            profiles
                .iter()
                .position(|p| p.name == name)
                .and_then(|k| m.think_fraction_by_profile.get(k).copied().flatten())
        };
        Self {
            step: m.step,
            think_fraction: m.think_fraction,
            acc_short: m.acc_short,
            acc_think: m.acc_think,
            all_correct_short: m.all_correct_short,
            mean_reward: m.mean_reward,
            objective: m.objective_value,
            kl: m.kl,
            think_frac_profile: PROFILE_COLUMNS.map(by_name),
        }
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = vec![
            self.step.to_string(),
            self.think_fraction.to_string(),
            opt(self.acc_short),
            opt(self.acc_think),
            self.all_correct_short.to_string(),
            self.mean_reward.to_string(),
            self.objective.to_string(),
            self.kl.to_string(),
        ];
        out.extend(self.think_frac_profile.iter().map(|v| opt(*v)));
        out
    }
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Runtime(format!("writing metrics: {e}"));
    out.write_record(COLUMNS).map_err(io)?;
    for row in rows {
        out.write_record(row.fields()).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a metrics file. Errors name the 1-based line of the offending row.
pub fn read_metrics<R: Read>(r: R) -> CliResult<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
    let mut rows = Vec::new();
    let mut header_seen = false;
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Validation(format!("line {line}: {e}"))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if !header_seen {
            if record.iter().ne(COLUMNS.iter().copied()) {
                return Err(CliError::Validation(format!(
                    "line {line}: header does not match the metrics schema ({})",
                    COLUMNS.join(",")
                )));
            }
            header_seen = true;
            continue;
        }
        if record.len() != COLUMNS.len() {
            return Err(CliError::Validation(format!(
                "line {line}: expected {} fields, found {}",
                COLUMNS.len(),
                record.len()
            )));
        }
        let bad = |col: usize| {
            CliError::Validation(format!("line {line}: column '{}': cannot parse '{}'", COLUMNS[col], &record[col]))
        };
        let real = |col: usize| record[col].parse::<f64>().map_err(|_| bad(col));
        let opt = |col: usize| -> CliResult<Option<f64>> {
            if record[col].is_empty() {
                Ok(None)
            } else {
                real(col).map(Some)
            }
        };
        let count = |col: usize| record[col].parse::<usize>().map_err(|_| bad(col));
        rows.push(MetricsRow {
            step: count(0)?,
            think_fraction: real(1)?,
            acc_short: opt(2)?,
            acc_think: opt(3)?,
            all_correct_short: count(4)?,
            mean_reward: real(5)?,
            objective: real(6)?,
            kl: real(7)?,
            think_frac_profile: [opt(8)?, opt(9)?, opt(10)?],
        });
    }
    if !header_seen {
        return Err(CliError::Validation("line 1: missing header".into()));
    }
    Ok(rows)
}
