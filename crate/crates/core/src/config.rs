//! Model, training and run configuration, plus the flat `key = value` file
//! format used by the command line.
//!
//! Every key is listed in [`RunConfig::KEYS`]; anything else is rejected.
//! Precedence is defaults (chosen by `preset`) < config file < overrides.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::ViewConfig;
use crate::error::{Error, Result};
use crate::synth::{DatasetKind, SplitSpec, SynthConfig};

/// How instructive frames are picked from the confidence map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sampling {
    Random,
    Uniform,
    #[default]
    TopNc,
}

impl FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Sampling::Random),
            "uniform" => Ok(Sampling::Uniform),
            "top_nc" => Ok(Sampling::TopNc),
            other => Err(Error::Config(format!(
                "unknown sampling strategy {other:?} (random, uniform, top_nc)"
            ))),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampling::Random => "random",
            Sampling::Uniform => "uniform",
            Sampling::TopNc => "top_nc",
        })
    }
}

/// Which video feeds the skim branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CountMode {
    /// Skim the video's own contextual view.
    #[default]
    Standard,
    /// Skim an exemplar of the target action instead.
    Specified,
}

impl FromStr for CountMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CountMode::Standard),
            "specified" => Ok(CountMode::Specified),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (standard, specified)"
            ))),
        }
    }
}

impl std::fmt::Display for CountMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CountMode::Standard => "standard",
            CountMode::Specified => "specified",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablations {
    pub skim_enabled: bool,
    pub lsag_enabled: bool,
    pub feature_adaption_enabled: bool,
    pub long_short_enabled: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Ablations {
            skim_enabled: true,
            lsag_enabled: true,
            feature_adaption_enabled: true,
            long_short_enabled: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_in: usize,
    /// Embedding width `d`.
    pub d: usize,
    pub heads: usize,
    /// Temporal convolution kernel, odd.
    pub kernel: usize,
    /// Blocks in the focus encoder; the skim encoder uses one.
    pub encoder_blocks: usize,
    pub ffn_mult: usize,
    /// Feature-adaption bottleneck ratio `r`.
    pub bottleneck_ratio: usize,
    /// Long-short relation blocks `B`.
    pub lsag_blocks: usize,
    pub view: ViewConfig,
    /// `N_C`
    pub n_instructive: usize,
    pub sampling: Sampling,
    pub ablations: Ablations,
}

impl ModelConfig {
    /// Desk-scale defaults, sized to train on one CPU core in minutes.
    pub fn desk(d_in: usize) -> Self {
        ModelConfig {
            d_in,
            d: 64,
            heads: 4,
            kernel: 3,
            encoder_blocks: 3,
            ffn_mult: 2,
            bottleneck_ratio: 4,
            lsag_blocks: 2,
            view: ViewConfig {
                downsample_rate: 4,
                context_len: 64,
                view_len: 32,
            },
            n_instructive: 16,
            sampling: Sampling::TopNc,
            ablations: Ablations::default(),
        }
    }

    /// Reference sizes: `N_S = 256`, `N_C = 32`, `N_F = 64`, `R = 4`, `B = 3`.
    pub fn full(d_in: usize) -> Self {
        ModelConfig {
            d: 512,
            heads: 8,
            lsag_blocks: 3,
            view: ViewConfig {
                downsample_rate: 4,
                context_len: 256,
                view_len: 64,
            },
            n_instructive: 32,
            ..ModelConfig::desk(d_in)
        }
    }

    /// Width of the skim branch's tiny decoder.
    pub fn skim_decoder_width(&self) -> usize {
        (self.d / 2).max(self.heads)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_in", self.d_in),
            ("d", self.d),
            ("heads", self.heads),
            ("encoder_blocks", self.encoder_blocks),
            ("ffn_mult", self.ffn_mult),
            ("bottleneck_ratio", self.bottleneck_ratio),
            ("lsag_blocks", self.lsag_blocks),
            ("R", self.view.downsample_rate),
            ("N_S", self.view.context_len),
            ("N_F", self.view.view_len),
            ("N_C", self.n_instructive),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d.is_multiple_of(self.heads) || !self.skim_decoder_width().is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d = {} must split evenly over {} heads (and so must d/2)",
                self.d, self.heads
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if (2 * self.d) / self.bottleneck_ratio == 0 {
            return Err(Error::Config("bottleneck ratio too large for d".into()));
        }
        if self.n_instructive > self.view.context_len {
            return Err(Error::Config(format!(
                "N_C = {} exceeds N_S = {}",
                self.n_instructive, self.view.context_len
            )));
        }
        Ok(())
    }

    /// Stable text form; its SHA-256 is the checkpoint's config digest.
    pub fn canonical(&self) -> String {
        let a = &self.ablations;
        format!(
            "d_in={};d={};heads={};kernel={};encoder_blocks={};ffn_mult={};bottleneck_ratio={};B={};R={};N_S={};N_F={};skim={};lsag={};fa={};ls={}",
            self.d_in,
            self.d,
            self.heads,
            self.kernel,
            self.encoder_blocks,
            self.ffn_mult,
            self.bottleneck_ratio,
            self.lsag_blocks,
            self.view.downsample_rate,
            self.view.context_len,
            self.view.view_len,
            a.skim_enabled,
            a.lsag_enabled,
            a.feature_adaption_enabled,
            a.long_short_enabled
        )
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

impl FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(LrSchedule::Cosine),
            "constant" => Ok(LrSchedule::Constant),
            other => Err(Error::Config(format!(
                "unknown lr schedule {other:?} (cosine, constant)"
            ))),
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrSchedule::Cosine => "cosine",
            LrSchedule::Constant => "constant",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub mode: CountMode,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn desk(d_in: usize) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            mode: CountMode::Standard,
            model: ModelConfig::desk(d_in),
        }
    }

    /// Optimization settings for the reference sizes on pretrained features.
    pub fn full(d_in: usize) -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 8e-6,
            model: ModelConfig::full(d_in),
            ..TrainConfig::desk(d_in)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        let a = &self.model.ablations;
        if !a.lsag_enabled && (!a.feature_adaption_enabled || !a.long_short_enabled) {
            return Err(Error::Config(
                "LSAG sub-ablations require ablations.lsag_enabled = true".into(),
            ));
        }
        self.model.validate()
    }
}

/// Everything one command-line run can be configured with.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub split: SplitSpec,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key} expects `min,max`, got {value:?}")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl RunConfig {
    /// Every accepted key, in snapshot order.
    pub const KEYS: &'static [&'static str] = &[
        "preset",
        "epochs",
        "batch_size",
        "learning_rate",
        "lr_schedule",
        "seed",
        "mode",
        "ablations.skim_enabled",
        "ablations.lsag_enabled",
        "ablations.feature_adaption_enabled",
        "ablations.long_short_enabled",
        "hyperparams.R",
        "hyperparams.N_S",
        "hyperparams.N_C",
        "hyperparams.N_F",
        "hyperparams.B",
        "hyperparams.sampling",
        "hyperparams.d",
        "model.heads",
        "model.kernel",
        "model.encoder_blocks",
        "model.ffn_mult",
        "model.bottleneck_ratio",
        "synth.num_classes",
        "synth.d_in",
        "synth.cycle_len_range",
        "synth.cycles_range",
        "synth.noise_std",
        "synth.seed",
        "split.train",
        "split.val",
        "split.test",
        "split.kind",
        "split.exemplars_per_class",
        "split.distractors_per_class",
    ];

    pub fn preset(name: &str) -> Result<Self> {
        let synth = SynthConfig::default();
        let train = match name {
            "desk" => TrainConfig::desk(synth.d_in),
            "full" => TrainConfig::full(synth.d_in),
            other => return Err(Error::Config(format!("unknown preset {other:?} (desk, full)"))),
        };
        Ok(RunConfig {
            preset: name.to_string(),
            train,
            synth,
            split: SplitSpec::default(),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "preset" => {
                if value != self.preset {
                    return Err(Error::Config("preset must be chosen before other keys".into()));
                }
            }
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "lr_schedule" => t.lr_schedule = value.parse()?,
            "seed" => t.seed = parse(key, value)?,
            "mode" => t.mode = value.parse()?,
            "ablations.skim_enabled" => m.ablations.skim_enabled = parse(key, value)?,
            "ablations.lsag_enabled" => m.ablations.lsag_enabled = parse(key, value)?,
            "ablations.feature_adaption_enabled" => m.ablations.feature_adaption_enabled = parse(key, value)?,
            "ablations.long_short_enabled" => m.ablations.long_short_enabled = parse(key, value)?,
            "hyperparams.R" => m.view.downsample_rate = parse(key, value)?,
            "hyperparams.N_S" => m.view.context_len = parse(key, value)?,
            "hyperparams.N_C" => m.n_instructive = parse(key, value)?,
            "hyperparams.N_F" => m.view.view_len = parse(key, value)?,
            "hyperparams.B" => m.lsag_blocks = parse(key, value)?,
            "hyperparams.sampling" => m.sampling = value.parse()?,
            "hyperparams.d" => m.d = parse(key, value)?,
            "model.heads" => m.heads = parse(key, value)?,
            "model.kernel" => m.kernel = parse(key, value)?,
            "model.encoder_blocks" => m.encoder_blocks = parse(key, value)?,
            "model.ffn_mult" => m.ffn_mult = parse(key, value)?,
            "model.bottleneck_ratio" => m.bottleneck_ratio = parse(key, value)?,
            "synth.num_classes" => self.synth.num_classes = parse(key, value)?,
            "synth.d_in" => {
                self.synth.d_in = parse(key, value)?;
                m.d_in = self.synth.d_in;
            }
            "synth.cycle_len_range" => self.synth.cycle_len_range = parse_pair(key, value)?,
            "synth.cycles_range" => self.synth.cycles_range = parse_pair(key, value)?,
            "synth.noise_std" => self.synth.noise_std = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            "split.train" => self.split.train = parse(key, value)?,
            "split.val" => self.split.val = parse(key, value)?,
            "split.test" => self.split.test = parse(key, value)?,
            "split.kind" => {
                self.split.kind = match value {
                    "single" => DatasetKind::Single,
                    "multirep" => DatasetKind::MultiRep,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown split.kind {other:?} (single, multirep)"
                        )))
                    }
                }
            }
            "split.exemplars_per_class" => self.split.exemplars_per_class = parse(key, value)?,
            "split.distractors_per_class" => self.split.distractors_per_class = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let m = &t.model;
        let s = &self.synth;
        Some(match key {
            "preset" => self.preset.clone(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "lr_schedule" => t.lr_schedule.to_string(),
            "seed" => t.seed.to_string(),
            "mode" => t.mode.to_string(),
            "ablations.skim_enabled" => m.ablations.skim_enabled.to_string(),
            "ablations.lsag_enabled" => m.ablations.lsag_enabled.to_string(),
            "ablations.feature_adaption_enabled" => m.ablations.feature_adaption_enabled.to_string(),
            "ablations.long_short_enabled" => m.ablations.long_short_enabled.to_string(),
            "hyperparams.R" => m.view.downsample_rate.to_string(),
            "hyperparams.N_S" => m.view.context_len.to_string(),
            "hyperparams.N_C" => m.n_instructive.to_string(),
            "hyperparams.N_F" => m.view.view_len.to_string(),
            "hyperparams.B" => m.lsag_blocks.to_string(),
            "hyperparams.sampling" => m.sampling.to_string(),
            "hyperparams.d" => m.d.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.kernel" => m.kernel.to_string(),
            "model.encoder_blocks" => m.encoder_blocks.to_string(),
            "model.ffn_mult" => m.ffn_mult.to_string(),
            "model.bottleneck_ratio" => m.bottleneck_ratio.to_string(),
            "synth.num_classes" => s.num_classes.to_string(),
            "synth.d_in" => s.d_in.to_string(),
            "synth.cycle_len_range" => format!("{},{}", s.cycle_len_range.0, s.cycle_len_range.1),
            "synth.cycles_range" => format!("{},{}", s.cycles_range.0, s.cycles_range.1),
            "synth.noise_std" => s.noise_std.to_string(),
            "synth.seed" => s.seed.to_string(),
            "split.train" => self.split.train.to_string(),
            "split.val" => self.split.val.to_string(),
            "split.test" => self.split.test.to_string(),
            "split.kind" => match self.split.kind {
                DatasetKind::Single => "single".to_string(),
                DatasetKind::MultiRep => "multirep".to_string(),
            },
            "split.exemplars_per_class" => self.split.exemplars_per_class.to_string(),
            "split.distractors_per_class" => self.split.distractors_per_class.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    /// Resolves a configuration from an optional file body and overrides.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_pairs = match file {
            Some(text) => Self::parse_pairs(text)?,
            None => Vec::new(),
        };
        let preset = overrides
            .iter()
            .chain(file_pairs.iter())
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| "desk".to_string());
        let mut cfg = Self::preset(&preset)?;
        for (k, v) in file_pairs.iter().chain(overrides) {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value, one per line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}
