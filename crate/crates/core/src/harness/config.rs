//! Flat `key = value` experiment configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key except
//! `seed` has a default, and [`ExperimentConfig::to_kv`] lists every key with
//! its resolved value in a fixed order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consistency::{KlMode, TcrConfig, Variant};
use crate::decode::BeamConfig;
use crate::error::{Error, Result};
use crate::model::{AdamWConfig, ModelDims};
use crate::pruning::DEFAULT_BAND_WIDTH;
use crate::seeds::derive_seed;
use crate::synthdata::TaskSpec;
use crate::views::{AugmentSpec, MaskFill};

/// Regularizer selection: no consistency term, or one of the variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    Baseline,
    Consistency(Variant),
}

impl RegMode {
    pub const ALL: [RegMode; 7] = [
        RegMode::Baseline,
        RegMode::Consistency(Variant::Tcr),
        RegMode::Consistency(Variant::FullJoint),
        RegMode::Consistency(Variant::ThresholdTopk),
        RegMode::Consistency(Variant::BestOnePath),
        RegMode::Consistency(Variant::CompressedProb),
        RegMode::Consistency(Variant::EncoderMse),
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegMode::Baseline => "baseline",
            RegMode::Consistency(v) => v.name(),
        }
    }
}

impl fmt::Display for RegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            Ok(RegMode::Baseline)
        } else {
            s.parse().map(RegMode::Consistency)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: TaskSpec,
    pub n_train: usize,
    pub n_eval: usize,
    /// Load this dataset instead of generating one.
    pub data_path: Option<PathBuf>,
    pub hidden: usize,
    pub joiner: usize,
    pub context: usize,
    pub stride: usize,
    pub dropout: f64,
    pub optim: AdamWConfig,
    pub reg: RegMode,
    /// `variant` is overwritten from `reg` when resolved.
    pub tcr: TcrConfig,
    /// Apply the consistency term over the full lattice instead of the band.
    pub tcr_full_lattice: bool,
    pub band_width: usize,
    pub augment: AugmentSpec,
    /// `None` resolves to `round(27 * F / 80)`.
    pub freq_mask_width: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub duplicate_views: bool,
    pub beam: BeamConfig,
    pub eval_views: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        let task = TaskSpec::default();
        Self {
            seed,
            augment: AugmentSpec::for_features(task.feat_dim),
            task,
            n_train: 200,
            n_eval: 50,
            data_path: None,
            hidden: 32,
            joiner: 32,
            context: 2,
            stride: 1,
            dropout: 0.1,
            optim: AdamWConfig::default(),
            reg: RegMode::Consistency(Variant::Tcr),
            tcr: TcrConfig::default(),
            tcr_full_lattice: false,
            band_width: DEFAULT_BAND_WIDTH,
            freq_mask_width: None,
            epochs: 20,
            batch_size: 8,
            duplicate_views: true,
            beam: BeamConfig::default(),
            eval_views: true,
            output_dir: None,
        }
    }

    /// Parses config text on top of the defaults; `seed` must be present.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut cfg = Self::with_seed(0);
        let mut seen_seed = false;
        for (k, v) in pairs {
            seen_seed |= k == "seed";
            cfg.set(&k, &v)?;
        }
        if !seen_seed {
            return Err(Error::Config("`seed` is mandatory".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = num(key, v)?,
            "task.vocab" => self.task.vocab = num(key, v)?,
            "task.feat_dim" => self.task.feat_dim = num(key, v)?,
            "task.frames_min" => self.task.frames_per_token.0 = num(key, v)?,
            "task.frames_max" => self.task.frames_per_token.1 = num(key, v)?,
            "task.noise_std" => self.task.noise_std = num(key, v)?,
            "task.len_min" => self.task.len_range.0 = num(key, v)?,
            "task.len_max" => self.task.len_range.1 = num(key, v)?,
            "data.n_train" => self.n_train = num(key, v)?,
            "data.n_eval" => self.n_eval = num(key, v)?,
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "model.hidden" => self.hidden = num(key, v)?,
            "model.joiner" => self.joiner = num(key, v)?,
            "model.context" => self.context = num(key, v)?,
            "model.stride" => self.stride = num(key, v)?,
            "model.dropout" => self.dropout = num(key, v)?,
            "optim.peak_lr" => self.optim.schedule.peak = num(key, v)?,
            "optim.warmup" => self.optim.schedule.warmup = num(key, v)?,
            "optim.beta1" => self.optim.beta1 = num(key, v)?,
            "optim.beta2" => self.optim.beta2 = num(key, v)?,
            "optim.eps" => self.optim.eps = num(key, v)?,
            "optim.weight_decay" => self.optim.weight_decay = num(key, v)?,
            "optim.grad_clip" => {
                let c: f64 = num(key, v)?;
                self.optim.grad_clip = (c > 0.0).then_some(c);
            }
            "tcr.variant" => self.reg = v.parse()?,
            "tcr.lambda" => self.tcr.lambda = num(key, v)?,
            "tcr.beta_nonblank" => self.tcr.beta_nonblank = num(key, v)?,
            "tcr.beta_blank" => self.tcr.beta_blank = num(key, v)?,
            "tcr.clamp" => self.tcr.clamp = num(key, v)?,
            "tcr.kl_mode" => self.tcr.kl_mode = v.parse::<KlMode>()?,
            "tcr.topk_blank" => self.tcr.topk_blank = num(key, v)?,
            "tcr.topk_nonblank" => self.tcr.topk_nonblank = num(key, v)?,
            "tcr.full_lattice" => self.tcr_full_lattice = boolean(key, v)?,
            "prune.band_width" => self.band_width = num(key, v)?,
            "augment.n_time_masks" => self.augment.n_time_masks = num(key, v)?,
            "augment.time_mask_frac" => self.augment.time_mask_frac = num(key, v)?,
            "augment.n_freq_masks" => self.augment.n_freq_masks = num(key, v)?,
            "augment.freq_mask_width" => {
                self.freq_mask_width = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "augment.fill" => {
                self.augment.fill = match v {
                    "mean" => MaskFill::Mean,
                    "zero" => MaskFill::Zero,
                    _ => {
                        return Err(Error::Config(format!(
                            "augment.fill must be mean or zero, got {v:?}"
                        )))
                    }
                }
            }
            "train.epochs" => self.epochs = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "train.duplicate_views" => self.duplicate_views = boolean(key, v)?,
            "decode.beam_size" => self.beam.beam_size = num(key, v)?,
            "decode.blank_penalty" => self.beam.blank_penalty = num(key, v)?,
            "decode.max_symbols" => self.beam.max_symbols_per_step = num(key, v)?,
            "eval.views" => self.eval_views = boolean(key, v)?,
            "output.dir" => self.output_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| format!("{x:?}");
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        vec![
            ("seed", self.seed.to_string()),
            ("task.vocab", self.task.vocab.to_string()),
            ("task.feat_dim", self.task.feat_dim.to_string()),
            ("task.frames_min", self.task.frames_per_token.0.to_string()),
            ("task.frames_max", self.task.frames_per_token.1.to_string()),
            ("task.noise_std", f(self.task.noise_std)),
            ("task.len_min", self.task.len_range.0.to_string()),
            ("task.len_max", self.task.len_range.1.to_string()),
            ("data.n_train", self.n_train.to_string()),
            ("data.n_eval", self.n_eval.to_string()),
            ("data.path", path(&self.data_path)),
            ("model.hidden", self.hidden.to_string()),
            ("model.joiner", self.joiner.to_string()),
            ("model.context", self.context.to_string()),
            ("model.stride", self.stride.to_string()),
            ("model.dropout", f(self.dropout)),
            ("optim.peak_lr", f(self.optim.schedule.peak)),
            ("optim.warmup", self.optim.schedule.warmup.to_string()),
            ("optim.beta1", f(self.optim.beta1)),
            ("optim.beta2", f(self.optim.beta2)),
            ("optim.eps", f(self.optim.eps)),
            ("optim.weight_decay", f(self.optim.weight_decay)),
            ("optim.grad_clip", f(self.optim.grad_clip.unwrap_or(0.0))),
            ("tcr.variant", self.reg.to_string()),
            ("tcr.lambda", f(self.tcr.lambda)),
            ("tcr.beta_nonblank", f(self.tcr.beta_nonblank)),
            ("tcr.beta_blank", f(self.tcr.beta_blank)),
            ("tcr.clamp", f(self.tcr.clamp)),
            ("tcr.kl_mode", self.tcr.kl_mode.name().to_string()),
            ("tcr.topk_blank", self.tcr.topk_blank.to_string()),
            ("tcr.topk_nonblank", self.tcr.topk_nonblank.to_string()),
            ("tcr.full_lattice", self.tcr_full_lattice.to_string()),
            ("prune.band_width", self.band_width.to_string()),
            (
                "augment.n_time_masks",
                self.augment.n_time_masks.to_string(),
            ),
            ("augment.time_mask_frac", f(self.augment.time_mask_frac)),
            (
                "augment.n_freq_masks",
                self.augment.n_freq_masks.to_string(),
            ),
            (
                "augment.freq_mask_width",
                self.resolved_augment().freq_mask_width.to_string(),
            ),
            (
                "augment.fill",
                match self.augment.fill {
                    MaskFill::Mean => "mean",
                    MaskFill::Zero => "zero",
                }
                .to_string(),
            ),
            ("train.epochs", self.epochs.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.duplicate_views", self.duplicate_views.to_string()),
            ("decode.beam_size", self.beam.beam_size.to_string()),
            ("decode.blank_penalty", f(self.beam.blank_penalty)),
            (
                "decode.max_symbols",
                self.beam.max_symbols_per_step.to_string(),
            ),
            ("eval.views", self.eval_views.to_string()),
            ("output.dir", path(&self.output_dir)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// SHA-256 over the resolved key-value lines, excluding `output.dir`;
    /// first 16 hex digits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            if k != "output.dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model_dims().validate()?;
        self.optim.validate()?;
        self.tcr.validate()?;
        self.beam.validate()?;
        self.augment.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::Config(
                "data.n_train and data.n_eval must be >= 1".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be >= 1".into(),
            ));
        }
        if self.band_width == 0 {
            return Err(Error::Config("prune.band_width must be >= 1".into()));
        }
        if !self.duplicate_views && self.reg != RegMode::Baseline && self.tcr.lambda > 0.0 {
            return Err(Error::Config(
                "a consistency term needs two views; set train.duplicate_views = true".into(),
            ));
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            feat_dim: self.task.feat_dim,
            hidden: self.hidden,
            joiner: self.joiner,
            vocab: self.task.vocab,
            context: self.context,
            stride: self.stride,
        }
    }

    pub fn resolved_augment(&self) -> AugmentSpec {
        let auto = AugmentSpec::for_features(self.task.feat_dim).freq_mask_width;
        AugmentSpec {
            freq_mask_width: self.freq_mask_width.unwrap_or(auto),
            ..self.augment.clone()
        }
    }

    /// Consistency settings with the variant taken from `reg`.
    pub fn resolved_tcr(&self) -> TcrConfig {
        let mut t = self.tcr.clone();
        if let RegMode::Consistency(v) = self.reg {
            t.variant = v;
        }
        t
    }

    /// Task spec with the prototype seed drawn from the master seed.
    pub fn resolved_task(&self) -> TaskSpec {
        TaskSpec {
            seed: derive_seed(self.seed, "data"),
            ..self.task.clone()
        }
    }

    /// Weight on the consistency term; zero for the baseline.
    pub fn effective_lambda(&self) -> f64 {
        match self.reg {
            RegMode::Baseline => 0.0,
            RegMode::Consistency(_) => self.tcr.lambda,
        }
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}
