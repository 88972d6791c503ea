//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use langtail::synth::SynthConfig;
use langtail::train::TrainConfig;

use crate::CliError;

pub const PATH_KEYS: [&str; 6] = ["corpus", "bank", "out", "pred", "gt", "checkpoint"];

const SYNTH_KEYS: [&str; 10] = [
    "n_classes",
    "points_per_scene",
    "n_scenes",
    "zipf_exponent",
    "input_dim",
    "class_separation",
    "noise_sigma",
    "entity_alias_rate",
    "spatial_extent",
    "distill_dim",
];

const TRAIN_KEYS: [&str; 27] = [
    "lambda",
    "granularities",
    "epochs",
    "batch_scenes",
    "lr0",
    "lr_min",
    "poly_power",
    "recluster_every",
    "tau",
    "warmup_epochs",
    "hidden",
    "feature_dim",
    "entity_batch",
    "s_prime",
    "normalize_freq",
    "global_branch",
    "freeze_spectral",
    "align_steps",
    "align_lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "superpoint_cap",
    "threads",
    "unmatched",
    "dump_spectral",
];

const BOOL_KEYS: [&str; 4] = ["normalize_freq", "global_branch", "freeze_spectral", "dump_spectral"];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    paths: [Option<PathBuf>; 6],
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| parse(key, p)).collect()
}

pub fn is_bool_key(key: &str) -> bool {
    BOOL_KEYS.contains(&key)
}

/// Flag spelling to config key: `--dump-spectral` is `dump_spectral`.
pub fn normalize_key(flag: &str) -> String {
    flag.replace('-', "_")
}

impl RunConfig {
    pub fn path(&self, key: &str) -> Option<&Path> {
        let i = PATH_KEYS.iter().position(|k| *k == key)?;
        self.paths[i].as_deref()
    }

    /// Sets one key. Relative paths are joined onto `base` when given.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), CliError> {
        let (s, t) = (&mut self.synth, &mut self.train);
        match key {
            "seed" => {
                let v = parse(key, value)?;
                s.seed = v;
                t.seed = v;
            }
            "n_classes" => s.n_classes = parse(key, value)?,
            "points_per_scene" => s.points_per_scene = parse(key, value)?,
            "n_scenes" => s.n_scenes = parse(key, value)?,
            "zipf_exponent" => s.zipf_exponent = parse(key, value)?,
            "input_dim" => s.input_dim = parse(key, value)?,
            "class_separation" => s.class_separation = parse(key, value)?,
            "noise_sigma" => s.noise_sigma = parse(key, value)?,
            "entity_alias_rate" => s.entity_alias_rate = parse(key, value)?,
            "spatial_extent" => s.spatial_extent = parse(key, value)?,
            "distill_dim" => s.distill_dim = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "granularities" => t.granularities = value.trim().parse().map_err(CliError::Core)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_scenes" => t.batch_scenes = parse(key, value)?,
            "lr0" => t.lr0 = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "poly_power" => t.poly_power = parse(key, value)?,
            "recluster_every" => t.recluster_every = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "hidden" => t.hidden = parse_list(key, value)?,
            "feature_dim" => t.feature_dim = parse(key, value)?,
            "entity_batch" => t.entity_batch = parse(key, value)?,
            "s_prime" => t.s_prime = parse(key, value)?,
            "normalize_freq" => t.normalize_freq = parse_bool(key, value)?,
            "global_branch" => t.global_branch = parse_bool(key, value)?,
            "freeze_spectral" => t.freeze_spectral = parse_bool(key, value)?,
            "align_steps" => t.align_steps = parse(key, value)?,
            "align_lr" => t.align_lr = parse(key, value)?,
            "adam_beta1" => t.adamw.beta1 = parse(key, value)?,
            "adam_beta2" => t.adamw.beta2 = parse(key, value)?,
            "adam_eps" => t.adamw.eps = parse(key, value)?,
            "weight_decay" => t.adamw.weight_decay = parse(key, value)?,
            "superpoint_cap" => t.superpoint_cap = parse(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "unmatched" => t.unmatched = value.trim().parse().map_err(CliError::Core)?,
            "dump_spectral" => t.dump_spectral = parse_bool(key, value)?,
            _ => match PATH_KEYS.iter().position(|k| *k == key) {
                Some(i) => {
                    let p = PathBuf::from(value.trim());
                    self.paths[i] = Some(match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    });
                }
                None => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
            },
        }
        Ok(())
    }

    /// Applies a config file; its relative paths resolve against its own
    /// directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(k.trim(), v, Some(&base)).map_err(|e| e.context(&format!("{}:{}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Every key with its effective value, in a form `apply_file` reads back.
    /// Paths are made absolute so the file works from any directory.
    pub fn render(&self) -> String {
        let (s, t) = (&self.synth, &self.train);
        let mut out = String::from("# resolved configuration\n");
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("seed", t.seed.to_string());
        for k in SYNTH_KEYS {
            let v = match k {
                "n_classes" => s.n_classes.to_string(),
                "points_per_scene" => s.points_per_scene.to_string(),
                "n_scenes" => s.n_scenes.to_string(),
                "zipf_exponent" => s.zipf_exponent.to_string(),
                "input_dim" => s.input_dim.to_string(),
                "class_separation" => s.class_separation.to_string(),
                "noise_sigma" => s.noise_sigma.to_string(),
                "entity_alias_rate" => s.entity_alias_rate.to_string(),
                "spatial_extent" => s.spatial_extent.to_string(),
                "distill_dim" => s.distill_dim.to_string(),
                _ => unreachable!(),
            };
            put(k, v);
        }
        for k in TRAIN_KEYS {
            let v = match k {
                "lambda" => t.lambda.to_string(),
                "granularities" => t.granularities.to_string(),
                "epochs" => t.epochs.to_string(),
                "batch_scenes" => t.batch_scenes.to_string(),
                "lr0" => t.lr0.to_string(),
                "lr_min" => t.lr_min.to_string(),
                "poly_power" => t.poly_power.to_string(),
                "recluster_every" => t.recluster_every.to_string(),
                "tau" => t.tau.to_string(),
                "warmup_epochs" => t.warmup_epochs.to_string(),
                "hidden" => t.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                "feature_dim" => t.feature_dim.to_string(),
                "entity_batch" => t.entity_batch.to_string(),
                "s_prime" => t.s_prime.to_string(),
                "normalize_freq" => t.normalize_freq.to_string(),
                "global_branch" => t.global_branch.to_string(),
                "freeze_spectral" => t.freeze_spectral.to_string(),
                "align_steps" => t.align_steps.to_string(),
                "align_lr" => t.align_lr.to_string(),
                "adam_beta1" => t.adamw.beta1.to_string(),
                "adam_beta2" => t.adamw.beta2.to_string(),
                "adam_eps" => t.adamw.eps.to_string(),
                "weight_decay" => t.adamw.weight_decay.to_string(),
                "superpoint_cap" => t.superpoint_cap.to_string(),
                "threads" => t.threads.to_string(),
                "unmatched" => t.unmatched.to_string(),
                "dump_spectral" => t.dump_spectral.to_string(),
                _ => unreachable!(),
            };
            put(k, v);
        }
        for (k, p) in PATH_KEYS.iter().zip(&self.paths) {
            if let Some(p) = p {
                let abs = std::path::absolute(p).unwrap_or_else(|_| p.clone());
                put(k, abs.display().to_string());
            }
        }
        out
    }
}
