//! Run configuration: a key-value config file merged with command-line
//! overrides. One file describes a whole reproducible experiment; flags
//! exist for the handful of knobs worth changing per invocation.

use crate::error::{user, CliError};
use std::path::{Path, PathBuf};
use tsviz_core::model::NetworkConfig;
use tsviz_core::perturb::ScoreClass;
use tsviz_core::trainer::TrainConfig;
use tsviz_core::viz::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    All,
    One(Method),
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::All => Method::ALL.to_vec(),
            MethodChoice::One(m) => vec![m],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub fc_width: usize,
    pub num_classes: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub per_class: usize,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    dataset_dir: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    pub method: MethodChoice,
    pub f_class: ScoreClass,
    pub threshold: f64,
    pub eval_images: usize,
    pub viz_images: usize,
    pub gradcheck_samples: usize,
    pub gradcheck_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            image_size: net.image_size,
            channels: net.channels,
            fc_width: net.fc_width,
            num_classes: net.num_classes,
            alpha: net.alpha,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            batch_size: train.batch_size,
            epochs: train.epochs,
            per_class: 128,
            seed: None,
            out_dir: PathBuf::from("tsviz-out"),
            dataset_dir: None,
            checkpoint: None,
            method: MethodChoice::All,
            f_class: ScoreClass::Predicted,
            threshold: 0.9,
            eval_images: 64,
            viz_images: 8,
            gradcheck_samples: 8,
            gradcheck_batch: 2,
        }
    }
}

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<String>,
    pub f_class: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| user(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_file(&text, path)?;
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            cfg.out_dir = out.clone();
        }
        if let Some(method) = &overrides.method {
            cfg.method = parse_method_choice(method)?;
        }
        if let Some(fc) = &overrides.f_class {
            cfg.f_class = fc.parse().map_err(user)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(path, lineno, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| config_err(path, lineno, &format!("{key}: {what}"));
            match key {
                "image_size" => self.image_size = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "channels" => {
                    let parsed: Option<Vec<usize>> =
                        value.split(',').map(|v| parse_num(v.trim())).collect();
                    self.channels = parsed.ok_or_else(|| bad("expected comma-separated positive integers"))?;
                }
                "fc_width" => self.fc_width = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "num_classes" => self.num_classes = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "alpha" => self.alpha = parse_float(value).ok_or_else(|| bad("expected a number"))?,
                "learning_rate" => self.learning_rate = parse_float(value).ok_or_else(|| bad("expected a number"))?,
                "momentum" => self.momentum = parse_float(value).ok_or_else(|| bad("expected a number"))?,
                "batch_size" => self.batch_size = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "epochs" => self.epochs = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "per_class" => self.per_class = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "seed" => {
                    self.seed = Some(value.parse().map_err(|_| bad("expected an unsigned integer"))?)
                }
                "out_dir" => self.out_dir = PathBuf::from(value),
                "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
                "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
                "method" => self.method = parse_method_choice(value)?,
                "f_class" => self.f_class = value.parse().map_err(user)?,
                "threshold" => self.threshold = parse_float(value).ok_or_else(|| bad("expected a number"))?,
                "eval_images" => self.eval_images = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "viz_images" => self.viz_images = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                "gradcheck_samples" => {
                    self.gradcheck_samples = value.parse().map_err(|_| bad("expected an integer"))?
                }
                "gradcheck_batch" => self.gradcheck_batch = parse_num(value).ok_or_else(|| bad("expected a positive integer"))?,
                other => {
                    return Err(config_err(path, lineno, &format!("unknown key {other:?}")))
                }
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(user(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.eval_images == 0 || self.viz_images == 0 {
            return Err(user("eval_images and viz_images must be at least 1"));
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            image_size: self.image_size,
            channels: self.channels.clone(),
            fc_width: self.fc_width,
            num_classes: self.num_classes,
            alpha: self.alpha,
        }
    }

    pub fn training(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            alpha: self.alpha,
            seed,
        }
    }

    /// Seed, or the error the seed-requiring commands share.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| user("this command needs a seed: set seed = N in the config or pass --seed N"))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("dataset"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }
}

fn parse_num(value: &str) -> Option<usize> {
    value.parse().ok().filter(|&n: &usize| n > 0)
}

fn parse_float(value: &str) -> Option<f64> {
    value.parse().ok().filter(|v: &f64| v.is_finite())
}

fn parse_method_choice(value: &str) -> Result<MethodChoice, CliError> {
    if value == "all" {
        return Ok(MethodChoice::All);
    }
    Ok(MethodChoice::One(value.parse().map_err(user)?))
}

fn config_err(path: &Path, lineno: usize, what: &str) -> CliError {
    user(format!("{}:{}: {what}", path.display(), lineno + 1))
}
