//! Run configuration and its text format.
//!
//! ```text
//! # comment
//! [data]
//! train_videos = 800
//! [pretrain]
//! transforms = 1x,2x,rev
//! ```
//! Keys outside a section, unknown sections and unknown keys are errors.
//! [`RunConfig::resolved`] prints every key with its effective value; parsing
//! that text back yields the same configuration.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, DEFAULT_MARGIN};
use crate::model::HeadKind;
use crate::numerics::DEFAULT_MILESTONES;
use crate::synthdata::GeneratorParams;
use crate::transforms::{
    format_transform_list, parse_transform_list, SpatialAugConfig, TemporalTransform,
    DEFAULT_BASE_INTERVAL, DEFAULT_CLIP_LEN,
};

pub const DEFAULT_LR_GRID: [f64; 5] = [0.01, 0.02, 0.04, 0.08, 0.16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Framework {
    /// Margin ranking among clips of one video.
    Rank,
    /// Hard-label classification of each clip.
    Cls,
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Framework::Rank => "rank",
            Framework::Cls => "cls",
        })
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rank" => Ok(Framework::Rank),
            "cls" => Ok(Framework::Cls),
            other => Err(Error::invalid(
                "framework",
                format!("expected rank or cls, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransferMode {
    Linear,
    Finetune,
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::Linear => "linear",
            TransferMode::Finetune => "finetune",
        })
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(TransferMode::Linear),
            "finetune" => Ok(TransferMode::Finetune),
            other => Err(Error::invalid(
                "mode",
                format!("expected linear or finetune, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub train_videos: usize,
    pub test_videos: usize,
    pub generator: GeneratorParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_videos: 800,
            test_videos: 200,
            generator: GeneratorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub seed: u64,
    pub transforms: Vec<TemporalTransform>,
    pub framework: Framework,
    pub head: HeadKind,
    pub aspect_task: bool,
    pub rotation_task: bool,
    pub weights: LossWeights,
    pub margin: f64,
    pub epochs: usize,
    /// Videos per SGD step; each video contributes one clip per transform.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_len: usize,
    pub clip_size: usize,
    pub jitter: bool,
    pub channels: Vec<usize>,
    pub crop_area_min: f64,
    pub aspect_range: (f64, f64),
    pub grayscale_prob: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            transforms: vec![TemporalTransform::speed(1.0), TemporalTransform::speed(2.0)],
            framework: Framework::Rank,
            head: HeadKind::Fc,
            aspect_task: false,
            rotation_task: false,
            weights: LossWeights::default(),
            margin: DEFAULT_MARGIN,
            epochs: 100,
            batch_size: 16,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_len: DEFAULT_CLIP_LEN,
            clip_size: 32,
            jitter: true,
            channels: vec![8, 16, 32],
            crop_area_min: 0.4,
            aspect_range: (0.5, 2.0),
            grayscale_prob: 0.2,
        }
    }
}

impl PretrainConfig {
    pub fn augmentation(&self) -> SpatialAugConfig {
        SpatialAugConfig {
            area: (self.crop_area_min, 1.0),
            aspect: self.aspect_range,
            grayscale_prob: self.grayscale_prob,
            rotate: self.rotation_task,
            output: (self.clip_size, self.clip_size),
            ..SpatialAugConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Config {
                line: 0,
                msg: format!("[pretrain] {msg}"),
            })
        };
        if self.transforms.len() < 2 {
            return bad("transform set needs at least two transformations");
        }
        for (i, a) in self.transforms.iter().enumerate() {
            if self.transforms[..i].contains(a) {
                return bad(&format!("transform {} listed twice", a.label()));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.margin >= 0.0 && self.margin.is_finite())
        {
            return bad("lr and margin must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if self.weights.aspect < 0.0 || self.weights.rotation < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.clip_len < 2
            || self.clip_size < 4
            || self.channels.len() != 3
            || self.channels.contains(&0)
        {
            return bad(
                "clip_len >= 2, clip_size >= 4 and three positive channel counts are required",
            );
        }
        if !(self.crop_area_min > 0.0 && self.crop_area_min <= 1.0) {
            return bad("crop_area_min must be in (0, 1]");
        }
        if !(self.aspect_range.0 > 0.0 && self.aspect_range.0 <= self.aspect_range.1) {
            return bad("aspect range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.grayscale_prob) {
            return bad("grayscale_prob must be in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub seed: u64,
    pub mode: TransferMode,
    pub epochs: usize,
    pub lr_grid: Vec<f64>,
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: TransferMode::Linear,
            epochs: 30,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            milestones: DEFAULT_MILESTONES.to_vec(),
            decay: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            dropout: 0.5,
            batch_size: 16,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::Config {
                line: 0,
                msg: format!("[transfer] {msg}"),
            })
        };
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("lr_grid needs at least one finite non-negative value");
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("milestones are fractions of training in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.momentum) {
            return bad("dropout and momentum must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub transfer: TransferConfig,
}

fn parse_value<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V>
where
    V::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Config {
        line,
        msg: format!("{key}: cannot parse {value:?}: {e}"),
    })
}

fn parse_list<V: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<V>>
where
    V::Err: fmt::Display,
{
    value
        .split(',')
        .map(|p| parse_value(key, p.trim(), line))
        .collect()
}

fn join<V: fmt::Display>(items: &[V]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut base_interval = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config {
                        line,
                        msg: format!("malformed section header {content:?}"),
                    })?
                    .trim();
                if !matches!(name, "data" | "pretrain" | "transfer") {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let sect = section.as_deref().ok_or_else(|| Error::Config {
                line,
                msg: format!("key {key:?} outside any section"),
            })?;
            let known = match sect {
                "data" => cfg.set_data(key, value, line)?,
                "pretrain" => {
                    if key == "base_interval" {
                        base_interval = Some(parse_value::<u32>(key, value, line)?);
                        true
                    } else {
                        cfg.set_pretrain(key, value, line)?
                    }
                }
                _ => cfg.set_transfer(key, value, line)?,
            };
            if !known {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {key:?} in [{sect}]"),
                });
            }
        }
        if let Some(b) = base_interval {
            if b == 0 {
                return Err(Error::Config {
                    line: 0,
                    msg: "base_interval must be positive".into(),
                });
            }
            cfg.pretrain.transforms = cfg
                .pretrain
                .transforms
                .iter()
                .map(|t| t.with_base_interval(b))
                .collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.data.generator;
        if self.data.train_videos == 0 || g.frames < 2 || g.size < 4 {
            return Err(Error::Config {
                line: 0,
                msg: "[data] needs train videos, at least 2 frames and size >= 4".into(),
            });
        }
        if !(g.speed.0 > 0.0 && g.speed.0 <= g.speed.1)
            || !(g.sprite_size.0 > 0.0 && g.sprite_size.0 <= g.sprite_size.1)
        {
            return Err(Error::Config {
                line: 0,
                msg: "[data] ranges must be positive and ordered".into(),
            });
        }
        self.pretrain.validate()?;
        self.transfer.validate()
    }

    fn set_data(&mut self, key: &str, v: &str, line: usize) -> Result<bool> {
        let d = &mut self.data;
        match key {
            "seed" => d.seed = parse_value(key, v, line)?,
            "train_videos" => d.train_videos = parse_value(key, v, line)?,
            "test_videos" => d.test_videos = parse_value(key, v, line)?,
            "frames" => d.generator.frames = parse_value(key, v, line)?,
            "size" => d.generator.size = parse_value(key, v, line)?,
            "speed_min" => d.generator.speed.0 = parse_value(key, v, line)?,
            "speed_max" => d.generator.speed.1 = parse_value(key, v, line)?,
            "sprite_min" => d.generator.sprite_size.0 = parse_value(key, v, line)?,
            "sprite_max" => d.generator.sprite_size.1 = parse_value(key, v, line)?,
            "noise_sigma" => d.generator.noise_sigma = parse_value(key, v, line)?,
            "oscillation_cycles" => d.generator.oscillation_cycles = parse_value(key, v, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_pretrain(&mut self, key: &str, v: &str, line: usize) -> Result<bool> {
        let p = &mut self.pretrain;
        let wrap = |e: Error| Error::Config {
            line,
            msg: format!("{key}: {e}"),
        };
        match key {
            "seed" => p.seed = parse_value(key, v, line)?,
            "transforms" => p.transforms = parse_transform_list(v).map_err(wrap)?,
            "framework" => p.framework = v.parse().map_err(wrap)?,
            "head" => p.head = v.parse().map_err(wrap)?,
            "aspect_task" => p.aspect_task = parse_value(key, v, line)?,
            "rotation_task" => p.rotation_task = parse_value(key, v, line)?,
            "aspect_weight" => p.weights.aspect = parse_value(key, v, line)?,
            "rotation_weight" => p.weights.rotation = parse_value(key, v, line)?,
            "margin" => p.margin = parse_value(key, v, line)?,
            "epochs" => p.epochs = parse_value(key, v, line)?,
            "batch_size" => p.batch_size = parse_value(key, v, line)?,
            "lr" => p.lr = parse_value(key, v, line)?,
            "momentum" => p.momentum = parse_value(key, v, line)?,
            "weight_decay" => p.weight_decay = parse_value(key, v, line)?,
            "clip_len" => p.clip_len = parse_value(key, v, line)?,
            "clip_size" => p.clip_size = parse_value(key, v, line)?,
            "jitter" => p.jitter = parse_value(key, v, line)?,
            "channels" => p.channels = parse_list(key, v, line)?,
            "crop_area_min" => p.crop_area_min = parse_value(key, v, line)?,
            "aspect_min" => p.aspect_range.0 = parse_value(key, v, line)?,
            "aspect_max" => p.aspect_range.1 = parse_value(key, v, line)?,
            "grayscale_prob" => p.grayscale_prob = parse_value(key, v, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_transfer(&mut self, key: &str, v: &str, line: usize) -> Result<bool> {
        let t = &mut self.transfer;
        match key {
            "seed" => t.seed = parse_value(key, v, line)?,
            "mode" => {
                t.mode = v.parse().map_err(|e: Error| Error::Config {
                    line,
                    msg: format!("{key}: {e}"),
                })?
            }
            "epochs" => t.epochs = parse_value(key, v, line)?,
            "lr_grid" => t.lr_grid = parse_list(key, v, line)?,
            "milestones" => t.milestones = parse_list(key, v, line)?,
            "decay" => t.decay = parse_value(key, v, line)?,
            "momentum" => t.momentum = parse_value(key, v, line)?,
            "weight_decay" => t.weight_decay = parse_value(key, v, line)?,
            "dropout" => t.dropout = parse_value(key, v, line)?,
            "batch_size" => t.batch_size = parse_value(key, v, line)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key with its effective value, in a fixed order.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let g = &d.generator;
        let p = &self.pretrain;
        let t = &self.transfer;
        let base = p
            .transforms
            .first()
            .map_or(DEFAULT_BASE_INTERVAL, |t| t.base_interval);
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "train_videos = {}", d.train_videos);
        let _ = writeln!(s, "test_videos = {}", d.test_videos);
        let _ = writeln!(s, "frames = {}", g.frames);
        let _ = writeln!(s, "size = {}", g.size);
        let _ = writeln!(s, "speed_min = {:?}", g.speed.0);
        let _ = writeln!(s, "speed_max = {:?}", g.speed.1);
        let _ = writeln!(s, "sprite_min = {:?}", g.sprite_size.0);
        let _ = writeln!(s, "sprite_max = {:?}", g.sprite_size.1);
        let _ = writeln!(s, "noise_sigma = {:?}", g.noise_sigma);
        let _ = writeln!(s, "oscillation_cycles = {}", g.oscillation_cycles);
        let _ = writeln!(s, "\n[pretrain]");
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "transforms = {}", format_transform_list(&p.transforms));
        let _ = writeln!(s, "base_interval = {base}");
        let _ = writeln!(s, "framework = {}", p.framework);
        let _ = writeln!(s, "head = {}", p.head);
        let _ = writeln!(s, "aspect_task = {}", p.aspect_task);
        let _ = writeln!(s, "rotation_task = {}", p.rotation_task);
        let _ = writeln!(s, "aspect_weight = {:?}", p.weights.aspect);
        let _ = writeln!(s, "rotation_weight = {:?}", p.weights.rotation);
        let _ = writeln!(s, "margin = {:?}", p.margin);
        let _ = writeln!(s, "epochs = {}", p.epochs);
        let _ = writeln!(s, "batch_size = {}", p.batch_size);
        let _ = writeln!(s, "lr = {:?}", p.lr);
        let _ = writeln!(s, "momentum = {:?}", p.momentum);
        let _ = writeln!(s, "weight_decay = {:?}", p.weight_decay);
        let _ = writeln!(s, "clip_len = {}", p.clip_len);
        let _ = writeln!(s, "clip_size = {}", p.clip_size);
        let _ = writeln!(s, "jitter = {}", p.jitter);
        let _ = writeln!(s, "channels = {}", join(&p.channels));
        let _ = writeln!(s, "crop_area_min = {:?}", p.crop_area_min);
        let _ = writeln!(s, "aspect_min = {:?}", p.aspect_range.0);
        let _ = writeln!(s, "aspect_max = {:?}", p.aspect_range.1);
        let _ = writeln!(s, "grayscale_prob = {:?}", p.grayscale_prob);
        let _ = writeln!(s, "\n[transfer]");
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "mode = {}", t.mode);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(
            s,
            "lr_grid = {}",
            join(
                &t.lr_grid
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
            )
        );
        let _ = writeln!(
            s,
            "milestones = {}",
            join(
                &t.milestones
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
            )
        );
        let _ = writeln!(s, "decay = {:?}", t.decay);
        let _ = writeln!(s, "momentum = {:?}", t.momentum);
        let _ = writeln!(s, "weight_decay = {:?}", t.weight_decay);
        let _ = writeln!(s, "dropout = {:?}", t.dropout);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        s
    }

    /// First eight bytes of the SHA-256 of [`RunConfig::resolved`].
    pub fn digest(&self) -> u64 {
        let h = Sha256::digest(self.resolved().as_bytes());
        u64::from_le_bytes(h[..8].try_into().unwrap())
    }

    /// Sets the seed of every section.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.pretrain.seed = seed;
        self.transfer.seed = seed;
    }
}
