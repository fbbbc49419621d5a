//! Run configuration: JSON file format, presets and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use degrpo_core::{build_env, DifficultyProfile, EnvConfig, Environment, PolicyParams, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DEGRPO_LAB_OUT";
pub const DEFAULT_OUT: &str = "runs";

pub const PRESETS: [&str; 3] = ["vanilla-collapse", "degrpo-ucurve", "alpha-sweep"];

/// The `env` section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub classes: usize,
    pub profiles: Vec<DifficultyProfile>,
    pub t_short: usize,
    pub t_think: usize,
    pub answer_vocab: usize,
    pub scratch_vocab: usize,
    pub seed: u64,
}

impl EnvSection {
    pub fn new(config: EnvConfig, seed: u64) -> Self {
        Self {
            classes: config.num_query_classes,
            profiles: config.profiles,
            t_short: config.t_short,
            t_think: config.t_think,
            answer_vocab: config.vocab_answer_size,
            scratch_vocab: config.vocab_scratch_size,
            seed,
        }
    }

    pub fn to_config(&self) -> EnvConfig {
        EnvConfig {
            num_query_classes: self.classes,
            profiles: self.profiles.clone(),
            t_short: self.t_short,
            t_think: self.t_think,
            vocab_answer_size: self.answer_vocab,
            vocab_scratch_size: self.scratch_vocab,
        }
    }
}

/// Initial answer accuracy per mode, keyed by profile name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStart {
    pub p0_short: BTreeMap<String, f64>,
    pub p0_think: BTreeMap<String, f64>,
}

impl WarmStart {
    fn per_profile(names: &[&str], short: &[f64], think: &[f64]) -> Self {
        let zip = |v: &[f64]| names.iter().zip(v).map(|(n, p)| (n.to_string(), *p)).collect();
        Self {
            p0_short: zip(short),
            p0_think: zip(think),
        }
    }

    /// Per-profile vectors in the environment's profile order.
    pub fn resolve(&self, profiles: &[DifficultyProfile]) -> CliResult<(Vec<f64>, Vec<f64>)> {
        let pick = |key: &str, map: &BTreeMap<String, f64>| -> CliResult<Vec<f64>> {
            if let Some(extra) = map.keys().find(|k| !profiles.iter().any(|p| &p.name == *k)) {
                return Err(CliError::Validation(format!("warmup.{key}: unknown profile '{extra}'")));
            }
            profiles
                .iter()
                .map(|p| {
                    map.get(&p.name).copied().ok_or_else(|| {
                        CliError::Validation(format!("warmup.{key}: no entry for profile '{}'", p.name))
                    })
                })
                .collect()
        };
        Ok((pick("p0_short", &self.p0_short)?, pick("p0_think", &self.p0_think)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub warmup: WarmStart,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Flag values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub variant: Option<Variant>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(name: &str) -> CliResult<Self> {
        let env = EnvConfig::default();
        let names: Vec<&str> = env.profiles.iter().map(|p| p.name.as_str()).collect();
        let mut train = TrainConfig::default();
        let (steps, variant, p0_short) = match name {
            "vanilla-collapse" => (300, Variant::VanillaGrpo, [0.5, 0.5, 0.5]),
            "degrpo-ucurve" => (600, Variant::Degrpo, [0.5, 0.5, 0.5]),
            // easy queries start out reliable enough in short mode for
            // all-correct-short groups to appear once short is preferred
            "alpha-sweep" => (600, Variant::Degrpo, [0.8, 0.5, 0.5]),
            other => {
                return Err(CliError::Validation(format!(
                    "unknown preset '{other}' (available: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        train.steps = steps;
        train.objective.variant = variant;
        let warmup = WarmStart::per_profile(&names, &p0_short, &[0.9, 0.9, 0.9]);
        Ok(Self {
            env: EnvSection::new(env, 0),
            warmup,
            train,
            preset: Some(name.to_string()),
            output_dir: None,
        })
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `--config` wins over `--preset`; with neither, `default_preset` is used.
    pub fn resolve(config: Option<&Path>, preset: Option<&str>, default_preset: &str) -> CliResult<Self> {
        match (config, preset) {
            (Some(path), _) => Self::load(path),
            (None, Some(name)) => Self::preset(name),
            (None, None) => Self::preset(default_preset),
        }
    }

    /// `seed` sets both the environment and the training seed.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.env.seed = seed;
            self.train.seed = seed;
        }
        if let Some(steps) = o.steps {
            self.train.steps = steps;
        }
        if let Some(alpha) = o.alpha {
            self.train.objective.alpha = alpha;
        }
        if let Some(gamma) = o.gamma {
            self.train.reward.gamma = gamma;
        }
        if let Some(epsilon) = o.epsilon {
            self.train.objective.epsilon = epsilon;
        }
        if let Some(beta) = o.beta {
            self.train.objective.beta = beta;
        }
        if let Some(variant) = o.variant {
            self.train.objective.variant = variant;
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let env = self.env.to_config();
        env.validate().map_err(|e| CliError::Validation(format!("env: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
        let (short, think) = self.warmup.resolve(&env.profiles)?;
        for (key, v) in [("p0_short", &short), ("p0_think", &think)] {
            if let Some(p) = v.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
                return Err(CliError::Validation(format!("warmup.{key}: {p} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Environment and warm-started initial parameters.
    pub fn build(&self) -> CliResult<(Environment, PolicyParams)> {
        self.validate()?;
        let env = build_env(self.env.to_config(), self.env.seed)?;
        let (short, think) = self.warmup.resolve(env.profiles())?;
        let init = PolicyParams::warmup_init(&env, &short, &think)?;
        Ok((env, init))
    }

    /// Output root: explicit setting, then `DEGRPO_LAB_OUT`, then `runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_root)
    }

    /// Directory name for a single run of this config.
    pub fn run_name(&self) -> String {
        format!(
            "{}-{}-seed{}",
            self.preset.as_deref().unwrap_or("custom"),
            self.train.objective.variant,
            self.train.seed
        )
    }
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Creates `root/name`, or `root/name-1`, `root/name-2`, ... if taken.
pub fn fresh_dir(root: &Path, name: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(root)?;
    for n in 0usize.. {
        let candidate = if n == 0 {
            root.join(name)
        } else {
            root.join(format!("{name}-{n}"))
        };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(name));
        }
        assert_eq!(RunConfig::preset("vanilla-collapse").unwrap().train.steps, 300);
        let u = RunConfig::preset("degrpo-ucurve").unwrap();
        assert_eq!((u.train.steps, u.train.objective.alpha), (600, 1e-3));
        assert_eq!(u.train.objective.variant, Variant::Degrpo);
        assert!(matches!(RunConfig::preset("nope"), Err(CliError::Validation(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig::preset("alpha-sweep").unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            alpha: Some(0.5),
            out: Some("x/y".into()),
            ..Default::default()
        });
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!((back.env.seed, back.train.seed), (7, 7));
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::preset("degrpo-ucurve").unwrap().to_json()).unwrap();
        v["train"]["objective"]["alpah"] = 0.5.into();
        let err = RunConfig::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("alpah"), "{err}");
    }

    #[test]
    fn field_level_validation() {
        let mut cfg = RunConfig::preset("degrpo-ucurve").unwrap();
        cfg.train.steps = 0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("steps"), "{err}");

        let mut cfg = RunConfig::preset("degrpo-ucurve").unwrap();
        cfg.warmup.p0_think.remove("hard");
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("p0_think") && err.contains("hard"), "{err}");

        let mut cfg = RunConfig::preset("degrpo-ucurve").unwrap();
        cfg.train.objective.alpha = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("alpha"));
    }

    #[test]
    fn fresh_dir_never_reuses() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fresh_dir(tmp.path(), "run").unwrap();
        let b = fresh_dir(tmp.path(), "run").unwrap();
        assert_ne!(a, b);
        assert!(b.ends_with("run-1"));
    }
}
