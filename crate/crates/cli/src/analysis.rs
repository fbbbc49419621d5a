//! Property checks over training curves: mode collapse, U-shaped mode
//! selection, difficulty stratification and threshold crossings.

use degrpo_core::{Environment, MetricsRecord, PolicyParams};
use serde::Serialize;

/// Trailing moving average; early points average over what is available.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCheck {
    /// First step at which the minority mode fell below the collapse level.
    pub collapse_step: Option<usize>,
    /// Largest minority share from the collapse step to the end.
    pub max_after: Option<f64>,
    pub passed: bool,
}

/// The minority mode (the one not dominating the final step) must fall below
/// `below` by step `within` and stay at or under `recover` afterwards.
pub fn check_collapse(metrics: &[MetricsRecord], below: f64, within: usize, recover: f64) -> CollapseCheck {
    let think_wins = metrics.last().map(|m| m.think_fraction >= 0.5).unwrap_or(true);
    let minority: Vec<f64> = metrics
        .iter()
        .map(|m| if think_wins { 1.0 - m.think_fraction } else { m.think_fraction })
        .collect();
    let first = minority.iter().position(|&x| x < below);
    let max_after = first.map(|f| minority[f..].iter().copied().fold(0.0, f64::max));
    let collapse_step = first.map(|f| metrics[f].step);
    CollapseCheck {
        collapse_step,
        max_after,
        passed: matches!((collapse_step, max_after), (Some(s), Some(m)) if s <= within && m <= recover),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UCurveCheck {
    pub start: f64,
    pub peak: f64,
    pub peak_step: usize,
    pub end: f64,
    /// Both modes held at least the occupancy floor at every step.
    pub occupancy_ok: bool,
    pub passed: bool,
}

/// Smoothed think fraction must rise by `margin` above its first value and
/// fall by `margin` below its peak by the end, with neither mode under
/// `floor` at any step.
pub fn check_ucurve(metrics: &[MetricsRecord], window: usize, margin: f64, floor: f64) -> UCurveCheck {
    let raw: Vec<f64> = metrics.iter().map(|m| m.think_fraction).collect();
    let s = smooth(&raw, window);
    let (peak_idx, peak) = s
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let start = s.first().copied().unwrap_or(f64::NAN);
    let end = s.last().copied().unwrap_or(f64::NAN);
    let occupancy_ok = raw.iter().all(|&t| t >= floor && 1.0 - t >= floor);
    UCurveCheck {
        start,
        peak,
        peak_step: metrics.get(peak_idx).map(|m| m.step).unwrap_or(0),
        end,
        occupancy_ok,
        passed: !s.is_empty() && peak - start >= margin && peak - end >= margin && occupancy_ok,
    }
}

/// Mean `P(think)` over each profile's query classes, in profile order.
pub fn p_think_by_profile(env: &Environment, params: &PolicyParams) -> Vec<f64> {
    (0..env.profiles().len())
        .map(|p| {
            let classes = env.classes_of_profile(p);
            if classes.is_empty() {
                return f64::NAN;
            }
            classes.iter().map(|&c| params.p_think(&env.query(c))).sum::<f64>() / classes.len() as f64
        })
        .collect()
}

/// Strictly increasing along the profile order, with a last-minus-first gap
/// of at least `min_gap`.
pub fn check_stratification(p_think: &[f64], min_gap: f64) -> bool {
    p_think.len() >= 2
        && p_think.windows(2).all(|w| w[0] < w[1])
        && p_think[p_think.len() - 1] - p_think[0] >= min_gap
}

/// First step whose all-correct-short group count strictly exceeds `threshold`.
pub fn first_crossing(metrics: &[MetricsRecord], threshold: f64) -> Option<usize> {
    metrics.iter().find(|m| m.all_correct_short as f64 > threshold).map(|m| m.step)
}

/// Median with "never" as +infinity; the upper median for even counts.
pub fn median_crossing(crossings: &[Option<usize>]) -> f64 {
    let mut v: Vec<f64> = crossings.iter().map(|c| c.map(|s| s as f64).unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// At least `num/den` of the checks passed.
pub fn enough(passes: usize, total: usize, num: usize, den: usize) -> bool {
    passes * den >= total * num
}
