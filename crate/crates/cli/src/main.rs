use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degrpo_core::Variant;
use degrpo_lab::commands::{self, GradCheckOptions};
use degrpo_lab::run::execute_run;
use degrpo_lab::{CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "degrpo-lab", version, about = "Vanilla vs decoupled GRPO on a synthetic hybrid-reasoning task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON run configuration; takes precedence over --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// vanilla-collapse, degrpo-ucurve or alpha-sweep.
    #[arg(long)]
    preset: Option<String>,
    /// Environment and training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// vanilla-grpo or degrpo.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Output root (default: $DEGRPO_LAB_OUT, else ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

impl RunArgs {
    fn load(&self, default_preset: &str) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::resolve(self.config.as_deref(), self.preset.as_deref(), default_preset)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            steps: self.steps,
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            beta: self.beta,
            variant: self.variant,
            out: self.out.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write its run directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train both objectives on the same environment for each seed.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// First step at which all-correct-short groups exceed a threshold, per alpha and seed.
    SweepAlpha {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.001")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Group count to exceed (default: a quarter of batch_queries).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Histogram of P(think | query) under saved parameters.
    PolicyHistogram {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Render metrics.csv files as SVG charts.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output SVG file.
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
    /// Compare analytic objective gradients with central differences.
    GradCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 64)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1e-8)]
        abs_floor: f64,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn fmt_step(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "never".into()
    }
}

fn train(run: &RunArgs) -> CliResult<()> {
    let cfg = run.load("degrpo-ucurve")?;
    let result = execute_run(&cfg, &cfg.output_root(), &cfg.run_name())?;
    let s = &result.summary;
    println!("run directory: {}", result.dir.display());
    println!(
        "final think_fraction {:.3}  acc_short {}  acc_think {}",
        s.final_think_fraction,
        fmt_opt(s.final_acc_short),
        fmt_opt(s.final_acc_think)
    );
    for m in &s.p_think_by_profile {
        println!("  P(think | {}) = {:.3}", m.profile, m.p_think);
    }
    Ok(())
}

fn compare(run: &RunArgs, seeds: &[u64]) -> CliResult<()> {
    let cfg = run.load("vanilla-collapse")?;
    let out = commands::compare(&cfg, seeds, &cfg.output_root())?;
    println!("compare directory: {}", out.dir.display());
    for r in &out.rows {
        println!(
            "seed {}: vanilla collapse step {} ({}), degrpo min mode share {:.3}",
            r.seed,
            r.vanilla.collapse_step.map(|s| s.to_string()).unwrap_or_else(|| "never".into()),
            if r.vanilla.passed { "collapsed" } else { "no collapse" },
            r.degrpo_min_mode_share
        );
    }
    if !out.passed {
        return Err(CliError::Property("vanilla collapse or degrpo occupancy held in fewer than 4/5 of seeds".into()));
    }
    Ok(())
}

fn sweep(run: &RunArgs, alphas: &[f64], seeds: &[u64], threshold: Option<f64>) -> CliResult<()> {
    let cfg = run.load("alpha-sweep")?;
    let out = commands::sweep_alpha(&cfg, alphas, seeds, threshold, &cfg.output_root())?;
    println!("sweep directory: {} (threshold {} groups)", out.dir.display(), out.threshold);
    for r in &out.rows {
        let first = r.first_crossing.map(|s| s.to_string()).unwrap_or_else(|| "never".into());
        println!("alpha {} seed {}: first crossing {first}", r.alpha, r.seed);
    }
    for (a, m) in &out.medians {
        println!("alpha {a}: median first crossing {}", fmt_step(*m));
    }
    if !out.passed {
        return Err(CliError::Property("largest alpha did not cross strictly earlier than the smallest".into()));
    }
    Ok(())
}

fn histogram(run: &RunArgs, params: &Path, samples: usize) -> CliResult<()> {
    let sibling = params.parent().map(|d| d.join("config.json")).filter(|p| p.is_file());
    let mut run = run.clone();
    if run.config.is_none() && run.preset.is_none() {
        run.config = sibling;
    }
    let cfg = run.load("degrpo-ucurve")?;
    let out = commands::policy_histogram(&cfg, params, samples, cfg.train.seed, &cfg.output_root())?;
    println!("histogram directory: {}", out.dir.display());
    for (name, n, m) in &out.profile_means {
        println!("  mean P(think | {name}) = {m:.3} over {n} queries");
    }
    Ok(())
}

fn grad_check(run: &RunArgs, coords: usize, h: f64, tol: f64, abs_floor: f64) -> CliResult<()> {
    let cfg = run.load("degrpo-ucurve")?;
    if !(h > 0.0) {
        return Err(CliError::Validation("h must be > 0".into()));
    }
    let opts = GradCheckOptions {
        coordinates: coords,
        step_size: h,
        rel_tol: tol,
        abs_floor,
        seed: cfg.train.seed,
        ..Default::default()
    };
    let cases = commands::grad_check(&cfg, &opts)?;
    let mut ok = true;
    for c in &cases {
        let r = &c.report;
        println!(
            "{:<12} beta={:<6} coords={} max_rel_error={:.3e} (tol {:.0e}) clipped ratios {} min clip distance {:.3e}: {}",
            c.variant.to_string(),
            c.beta,
            r.coordinates_checked,
            r.max_rel_error,
            r.rel_tol,
            c.clipped_ratios,
            c.min_clip_distance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    if !ok {
        return Err(CliError::Property("analytic gradient disagrees with finite differences".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train { run } => train(run),
        Command::Compare { run, seeds } => compare(run, seeds),
        Command::SweepAlpha { run, alphas, seeds, threshold } => sweep(run, alphas, seeds, *threshold),
        Command::PolicyHistogram { run, params, samples } => histogram(run, params, *samples),
        Command::Plot { inputs, out } => commands::plot(inputs).and_then(|svg| {
            std::fs::write(out, svg)?;
            println!("wrote {}", out.display());
            Ok(())
        }),
        Command::GradCheck { run, coords, h, tol, abs_floor } => grad_check(run, *coords, *h, *tol, *abs_floor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
