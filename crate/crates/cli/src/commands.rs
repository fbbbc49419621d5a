//! Multi-run experiments and analysis commands.

use std::fs;
use std::path::{Path, PathBuf};

use degrpo_core::gradcheck::{check_objective, sample_coordinates, GradReport};
use degrpo_core::objective::min_clip_distance;
use degrpo_core::rng::stream;
use degrpo_core::trainer::collect_rollouts;
use degrpo_core::{PolicyParams, Variant};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{check_collapse, enough, first_crossing, median_crossing, CollapseCheck};
use crate::config::{fresh_dir, RunConfig};
use crate::error::{CliError, CliResult};
use crate::metrics::read_metrics;
use crate::run::{execute_run, metric_charts, RunResult};
use crate::svg::{histogram, line_charts, Chart, Series};

/// Minority share that counts as collapsed, and the recovery ceiling after it.
pub const COLLAPSE_BELOW: f64 = 0.05;
pub const COLLAPSE_RECOVER: f64 = 0.10;
pub const COLLAPSE_WITHIN: usize = 200;
/// Share each mode must keep at every step of a non-collapsing run.
pub const OCCUPANCY_FLOOR: f64 = 0.05;
/// Default sweep threshold as a fraction of `batch_queries`.
pub const SWEEP_THRESHOLD_FRAC: f64 = 0.25;
pub const HISTOGRAM_BINS: usize = 20;

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn think_count_series(label: String, run: &RunResult) -> Series {
    Series {
        label,
        points: run.metrics.iter().map(|m| (m.step as f64, Some(m.think_count as f64))).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub seed: u64,
    pub vanilla: CollapseCheck,
    pub vanilla_final_think: f64,
    pub degrpo_min_mode_share: f64,
    pub degrpo_final_think: f64,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub dir: PathBuf,
    pub rows: Vec<CompareRow>,
    /// Vanilla collapses and DeGRPO keeps both modes in at least 4/5 of seeds.
    pub passed: bool,
}

fn min_mode_share(run: &RunResult) -> f64 {
    run.metrics
        .iter()
        .map(|m| m.think_fraction.min(1.0 - m.think_fraction))
        .fold(f64::INFINITY, f64::min)
}

/// Runs `base` under both objectives for every seed.
pub fn compare(base: &RunConfig, seeds: &[u64], root: &Path) -> CliResult<CompareOutcome> {
    base.validate()?;
    let dir = fresh_dir(root, &format!("compare-{}", base.preset.as_deref().unwrap_or("custom")))?;
    let jobs: Vec<(u64, Variant)> = seeds
        .iter()
        .flat_map(|&s| [(s, Variant::VanillaGrpo), (s, Variant::Degrpo)])
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(seed, variant)| {
            let mut cfg = base.clone();
            cfg.env.seed = seed;
            cfg.train.seed = seed;
            cfg.train.objective.variant = variant;
            execute_run(&cfg, &dir, &format!("{variant}-seed{seed}"))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut charts = [
        Chart::new("vanilla-grpo: think rollouts", "step", "count"),
        Chart::new("degrpo: think rollouts", "step", "count"),
    ];
    let mut rows = Vec::new();
    let mut table = csv::Writer::from_path(dir.join("compare.csv")).map_err(csv_err)?;
    table
        .write_record([
            "seed",
            "vanilla_collapse_step",
            "vanilla_max_minority_after",
            "vanilla_collapsed",
            "vanilla_final_think",
            "degrpo_min_mode_share",
            "degrpo_final_think",
        ])
        .map_err(csv_err)?;
    for (pair, &seed) in runs.chunks(2).zip(seeds) {
        let (vanilla, degrpo) = (&pair[0], &pair[1]);
        charts[0].series.push(think_count_series(format!("seed {seed}"), vanilla));
        charts[1].series.push(think_count_series(format!("seed {seed}"), degrpo));
        let row = CompareRow {
            seed,
            vanilla: check_collapse(&vanilla.metrics, COLLAPSE_BELOW, COLLAPSE_WITHIN, COLLAPSE_RECOVER),
            vanilla_final_think: vanilla.summary.final_think_fraction,
            degrpo_min_mode_share: min_mode_share(degrpo),
            degrpo_final_think: degrpo.summary.final_think_fraction,
        };
        let opt = |v: Option<String>| v.unwrap_or_else(|| "never".into());
        table
            .write_record([
                seed.to_string(),
                opt(row.vanilla.collapse_step.map(|s| s.to_string())),
                row.vanilla.max_after.map(|m| m.to_string()).unwrap_or_default(),
                row.vanilla.passed.to_string(),
                row.vanilla_final_think.to_string(),
                row.degrpo_min_mode_share.to_string(),
                row.degrpo_final_think.to_string(),
            ])
            .map_err(csv_err)?;
        rows.push(row);
    }
    table.flush()?;
    fs::write(dir.join("compare.svg"), line_charts(&charts, 2))?;

    let collapsed = rows.iter().filter(|r| r.vanilla.passed).count();
    let retained = rows.iter().filter(|r| r.degrpo_min_mode_share >= OCCUPANCY_FLOOR).count();
    let n = rows.len();
    Ok(CompareOutcome {
        dir,
        passed: n > 0 && enough(collapsed, n, 4, 5) && enough(retained, n, 4, 5),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub first_crossing: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub threshold: f64,
    pub rows: Vec<SweepRow>,
    /// `(alpha, median first crossing)`, "never" counted as infinity.
    pub medians: Vec<(f64, f64)>,
    /// The largest alpha's median is strictly below the smallest alpha's.
    pub passed: bool,
}

/// One run per `(alpha, seed)`; records when all-correct-short groups first
/// exceed `threshold` (default a quarter of `batch_queries`).
pub fn sweep_alpha(base: &RunConfig, alphas: &[f64], seeds: &[u64], threshold: Option<f64>, root: &Path) -> CliResult<SweepOutcome> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(CliError::Validation("sweep needs at least one alpha and one seed".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(CliError::Validation(format!("alpha must be > 0, got {a}")));
    }
    let mut base = base.clone();
    base.train.objective.variant = Variant::Degrpo;
    base.validate()?;
    let threshold = threshold.unwrap_or(SWEEP_THRESHOLD_FRAC * base.train.batch_queries as f64);
    let dir = fresh_dir(root, &format!("sweep-{}", base.preset.as_deref().unwrap_or("custom")))?;

    let jobs: Vec<(f64, u64)> = alphas.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(alpha, seed)| {
            let mut cfg = base.clone();
            cfg.env.seed = seed;
            cfg.train.seed = seed;
            cfg.train.objective.alpha = alpha;
            execute_run(&cfg, &dir, &format!("alpha{alpha}-seed{seed}"))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut chart = Chart::new("all-correct short groups", "step", "groups");
    let mut table = csv::Writer::from_path(dir.join("sweep.csv")).map_err(csv_err)?;
    table.write_record(["alpha", "seed", "first_crossing"]).map_err(csv_err)?;
    let mut rows = Vec::new();
    for (&(alpha, seed), run) in jobs.iter().zip(&runs) {
        let first = first_crossing(&run.metrics, threshold);
        table
            .write_record([
                alpha.to_string(),
                seed.to_string(),
                first.map(|s| s.to_string()).unwrap_or_else(|| "never".into()),
            ])
            .map_err(csv_err)?;
        chart.series.push(Series {
            label: format!("alpha={alpha} seed {seed}"),
            points: run.metrics.iter().map(|m| (m.step as f64, Some(m.all_correct_short as f64))).collect(),
        });
        rows.push(SweepRow {
            alpha,
            seed,
            first_crossing: first,
        });
    }
    table.flush()?;
    fs::write(dir.join("sweep.svg"), line_charts(&[chart], 1))?;

    let medians: Vec<(f64, f64)> = alphas
        .iter()
        .map(|&a| {
            let c: Vec<Option<usize>> = rows.iter().filter(|r| r.alpha == a).map(|r| r.first_crossing).collect();
            (a, median_crossing(&c))
        })
        .collect();
    let median_of = |a: f64| medians.iter().find(|m| m.0 == a).map(|m| m.1).unwrap();
    let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SweepOutcome {
        dir,
        threshold,
        passed: hi == lo || median_of(hi) < median_of(lo),
        rows,
        medians,
    })
}

#[derive(Debug, Clone)]
pub struct HistogramOutcome {
    pub dir: PathBuf,
    pub counts: Vec<usize>,
    /// `(profile, sampled queries, mean P(think))`.
    pub profile_means: Vec<(String, usize, f64)>,
}

/// Bin index of `p` among `bins` equal bins on `[0, 1]`; 1.0 falls in the last.
pub fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64) as usize).min(bins - 1)
}

/// Histogram of `P(think | x)` over `samples` queries drawn from the
/// environment's query distribution.
pub fn policy_histogram(cfg: &RunConfig, params_path: &Path, samples: usize, seed: u64, root: &Path) -> CliResult<HistogramOutcome> {
    if samples == 0 {
        return Err(CliError::Validation("samples must be >= 1".into()));
    }
    let (env, _) = cfg.build()?;
    let params = PolicyParams::load(params_path).map_err(|e| match e {
        degrpo_core::Error::Io(io) => CliError::Runtime(format!("{}: {io}", params_path.display())),
        other => CliError::Validation(format!("{}: {other}", params_path.display())),
    })?;
    params.check_matches(&env)?;

    let mut rng = stream(seed, &[0x68697374]);
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    let mut sums = vec![(0usize, 0.0f64); env.profiles().len()];
    for _ in 0..samples {
        let q = env.sample_query(&mut rng);
        let p = params.p_think(&q);
        counts[bin_of(p, HISTOGRAM_BINS)] += 1;
        sums[q.profile].0 += 1;
        sums[q.profile].1 += p;
    }
    let profile_means: Vec<(String, usize, f64)> = env
        .profiles()
        .iter()
        .zip(&sums)
        .map(|(prof, &(n, s))| (prof.name.clone(), n, if n > 0 { s / n as f64 } else { f64::NAN }))
        .collect();

    let dir = fresh_dir(root, "policy-histogram")?;
    let mut table = csv::Writer::from_path(dir.join("histogram.csv")).map_err(csv_err)?;
    table.write_record(["bin", "lower", "upper", "count"]).map_err(csv_err)?;
    for (k, c) in counts.iter().enumerate() {
        let width = 1.0 / HISTOGRAM_BINS as f64;
        table
            .write_record([
                k.to_string(),
                (k as f64 * width).to_string(),
                ((k + 1) as f64 * width).to_string(),
                c.to_string(),
            ])
            .map_err(csv_err)?;
    }
    table.flush()?;
    let mut means = csv::Writer::from_path(dir.join("profile_means.csv")).map_err(csv_err)?;
    means.write_record(["profile", "samples", "mean_p_think"]).map_err(csv_err)?;
    for (name, n, m) in &profile_means {
        means.write_record([name.clone(), n.to_string(), m.to_string()]).map_err(csv_err)?;
    }
    means.flush()?;
    fs::write(dir.join("histogram.svg"), histogram("P(think | query)", "P(think)", &counts, 0.0, 1.0))?;
    Ok(HistogramOutcome {
        dir,
        counts,
        profile_means,
    })
}

/// Renders metrics files into one SVG, labelling series by file name.
pub fn plot(inputs: &[PathBuf]) -> CliResult<String> {
    let mut tables = Vec::new();
    for path in inputs {
        let file = fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let rows = read_metrics(file).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        tables.push((path.display().to_string(), rows));
    }
    Ok(line_charts(&metric_charts(&tables), 3))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckCase {
    pub variant: Variant,
    pub beta: f64,
    pub min_clip_distance: f64,
    /// Token ratios outside the clip band, whose surrogate gradient is zero.
    pub clipped_ratios: usize,
    pub report: GradReport,
}

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub coordinates: usize,
    pub step_size: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub seed: u64,
    /// Queries in the frozen batch.
    pub batch_queries: usize,
    /// Minimum distance of every ratio from `1 +- epsilon`.
    pub kink_margin: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            coordinates: 64,
            step_size: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            seed: 0,
            batch_queries: 16,
            kink_margin: 1e-3,
        }
    }
}

fn perturbed<R: Rng>(base: &PolicyParams, scale: f64, rng: &mut R) -> PolicyParams {
    let mut p = base.clone();
    for v in &mut p.theta {
        *v += rng.gen_range(-scale..scale);
    }
    p
}

/// Checks both objectives, with and without the KL term, at a perturbed
/// point where some ratios are clipped but none sits near a clip boundary.
pub fn grad_check(cfg: &RunConfig, opts: &GradCheckOptions) -> CliResult<Vec<GradCheckCase>> {
    let (env, init) = cfg.build()?;
    let mut train = cfg.train.clone();
    train.batch_queries = opts.batch_queries;
    train.seed = opts.seed;
    let betas = if cfg.train.objective.beta > 0.0 {
        [0.0, cfg.train.objective.beta]
    } else {
        [0.0, 1e-3]
    };
    let mut cases = Vec::new();
    for (v, variant) in [Variant::VanillaGrpo, Variant::Degrpo].into_iter().enumerate() {
        for (b, beta) in betas.into_iter().enumerate() {
            let mut objective = cfg.train.objective;
            objective.variant = variant;
            objective.beta = beta;
            let mut found = None;
            for attempt in 0..64u64 {
                let mut rng = stream(opts.seed, &[0x67726164, v as u64, b as u64, attempt]);
                let old = perturbed(&init, 0.5, &mut rng);
                let groups = collect_rollouts(&env, &old, &train, attempt as usize)?;
                let live = perturbed(&old, 0.25, &mut rng);
                let margin = min_clip_distance(&groups, &live, objective.epsilon);
                if margin >= opts.kink_margin {
                    found = Some((old, groups, live, margin, rng));
                    break;
                }
            }
            let (old, groups, live, margin, mut rng) = found.ok_or_else(|| {
                CliError::Runtime("no evaluation point away from clip boundaries after 64 attempts".into())
            })?;
            let classes: Vec<usize> = groups.iter().map(|g| g.query.class_id).collect();
            let coords = sample_coordinates(live.layout(), &classes, opts.coordinates, &mut rng);
            let report = check_objective(
                &groups,
                &live,
                &old,
                &init,
                &objective,
                &coords,
                opts.step_size,
                opts.rel_tol,
                opts.abs_floor,
            )?;
            let clipped_ratios = groups
                .iter()
                .flat_map(|g| g.trajectories.iter())
                .flat_map(|t| live.trajectory_log_probs(t).into_iter().zip(t.logp.clone()))
                .filter(|(new, old)| ((new - old).exp() - 1.0).abs() > objective.epsilon)
                .count();
            cases.push(GradCheckCase {
                variant,
                beta,
                min_clip_distance: margin,
                clipped_ratios,
                report,
            });
        }
    }
    Ok(cases)
}
