//! Central-difference oracle for the objectives' analytic gradients.
//!
//! Rollouts are frozen before differencing, so the objective is a
//! deterministic function of the parameter vector.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objective::{evaluate, ObjectiveConfig};
use crate::policy::{Layout, PolicyParams};
use crate::reward::GroupBatch;

/// Central-difference estimates at a set of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub step_size: f64,
    /// `(coordinate, estimate)` pairs, in request order.
    pub entries: Vec<(usize, f64)>,
    /// Coordinates whose evaluations were not finite.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub coordinates_checked: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub step_size: f64,
    pub rel_tol: f64,
    pub passed: bool,
}

/// `(f(theta + h e_k) - f(theta - h e_k)) / 2h` for every `k` in `coordinates`.
pub fn finite_difference_gradient<F>(f: F, theta: &[f64], coordinates: &[usize], h: f64) -> FdGradient
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let mut point = theta.to_vec();
    let mut entries = Vec::with_capacity(coordinates.len());
    let mut skipped = Vec::new();
    for &k in coordinates {
        let x = point[k];
        point[k] = x + h;
        let up = f(&point);
        point[k] = x - h;
        let down = f(&point);
        point[k] = x;
        let d = (up - down) / (2.0 * h);
        if d.is_finite() {
            entries.push((k, d));
        } else {
            skipped.push(k);
        }
    }
    FdGradient {
        step_size: h,
        entries,
        skipped,
    }
}

/// Compares analytic and numeric entries with
/// `|a - n| / max(|a|, |n|, abs_floor)`.
pub fn verify(analytic: &[f64], numeric: &FdGradient, rel_tol: f64, abs_floor: f64) -> GradReport {
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for &(k, n) in &numeric.entries {
        let a = analytic[k];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(abs_floor);
        if worst.is_none() || err > max_rel_error {
            max_rel_error = err;
            worst = Some(k);
        }
    }
    GradReport {
        coordinates_checked: numeric.entries.len(),
        max_rel_error,
        worst_coordinate: worst,
        step_size: numeric.step_size,
        rel_tol,
        passed: max_rel_error <= rel_tol && numeric.skipped.is_empty(),
    }
}

/// `n` distinct coordinates, half from the control blocks and half from the
/// response blocks of `classes`.
pub fn sample_coordinates<R: Rng + ?Sized>(layout: &Layout, classes: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    let block = layout.block_len();
    let mut control = Vec::new();
    let mut response = Vec::new();
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        control.extend([c * block, c * block + 1]);
        response.extend(c * block + 2..(c + 1) * block);
    }
    control.shuffle(rng);
    response.shuffle(rng);
    let want_control = (n / 2).min(control.len());
    let want_response = (n - want_control).min(response.len());
    let mut out: Vec<usize> = control[..want_control].to_vec();
    out.extend_from_slice(&response[..want_response]);
    if out.len() < n {
        // top up from whichever pool has leftovers
        out.extend(control[want_control..].iter().take(n - out.len()));
    }
    out
}

/// Checks [`evaluate`]'s gradient against central differences at `coordinates`.
pub fn check_objective(
    groups: &[GroupBatch],
    params: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    cfg: &ObjectiveConfig,
    coordinates: &[usize],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradReport> {
    let analytic = evaluate(groups, params, old, reference, cfg)?.gradient;
    let layout = *params.layout();
    let f = |theta: &[f64]| {
        let p = PolicyParams::from_theta(layout, theta.to_vec()).expect("same layout");
        evaluate(groups, &p, old, reference, cfg).map(|r| r.value).unwrap_or(f64::NAN)
    };
    let numeric = finite_difference_gradient(f, &params.theta, coordinates, h);
    Ok(verify(&analytic, &numeric, rel_tol, abs_floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn quadratic_and_constant() {
        let theta = [1.0, 3.0, -2.0];
        let fd = finite_difference_gradient(|x| x.iter().map(|v| v * v).sum(), &theta, &[1], 1e-5);
        assert!((fd.entries[0].1 - 6.0).abs() < 1e-8);
        let fd = finite_difference_gradient(|_| 4.2, &theta, &[0, 1, 2], 1e-5);
        assert!(fd.entries.iter().all(|&(_, d)| d == 0.0));
    }

    #[test]
    fn non_finite_coordinates_are_skipped() {
        let theta = [0.0, 0.0];
        let fd = finite_difference_gradient(|x| if x[1] != 0.0 { f64::NAN } else { x[0] }, &theta, &[0, 1], 1e-3);
        assert_eq!(fd.entries.len(), 1);
        assert_eq!(fd.skipped, vec![1]);
        assert!(!verify(&[1.0, 0.0], &fd, 1.0, 1e-8).passed);
    }

    #[test]
    fn verify_examples() {
        let same = FdGradient { step_size: 1e-5, entries: vec![(0, 0.5), (1, -2.0)], skipped: vec![] };
        let r = verify(&[0.5, -2.0], &same, 1e-4, 1e-8);
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);

        let tiny = FdGradient { step_size: 1e-5, entries: vec![(0, 1.0), (1, 1e-12)], skipped: vec![] };
        let r = verify(&[1.0, 0.0], &tiny, 1e-4, 1e-8);
        assert!((r.max_rel_error - 1e-4).abs() < 1e-12);
        assert!(r.passed);

        let off = FdGradient { step_size: 1e-5, entries: vec![(0, 1.1)], skipped: vec![] };
        let r = verify(&[1.0], &off, 1e-4, 1e-8);
        assert!((r.max_rel_error - 0.1 / 1.1).abs() < 1e-12);
        assert!((r.max_rel_error - 0.0909).abs() < 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, Some(0));
    }

    #[test]
    fn coordinates_cover_both_blocks() {
        let layout = Layout { classes: 4, answer_vocab: 10, scratch_vocab: 8, t_short: 2, t_think: 50 };
        let coords = sample_coordinates(&layout, &[0, 2, 3], 64, &mut stream(0, &[]));
        assert_eq!(coords.len(), 64);
        let block = layout.block_len();
        let n_control = coords.iter().filter(|&&k| k % block < 2).count();
        assert_eq!(n_control, 6);
        assert!(coords.iter().all(|&k| k / block != 1));
        let mut sorted = coords.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 64);
    }
}
