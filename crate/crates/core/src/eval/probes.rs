//! Frozen-feature temporal probes.
//!
//! * Sync: two 1x clips of one video whose starts differ by
//!   `{-3/4, ..., +3/4}` of the clip length; a perceptron classifies the
//!   shift from `probe(a) - probe(b)` (7 classes).
//! * Order: a 1x window is split into two halves that are fed in their
//!   original order ("before", label 0) or swapped ("after", label 1); a
//!   perceptron classifies the probe feature of the concatenation.
//!
//! Every video yields one sample per class, so labels are exactly balanced.

use rand::Rng;

use super::classifier::{fit_classifier, ClassifierConfig, ClassifierScore};
use super::features::{par_map, Featurizer};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{mix, stream, Purpose};
use crate::synthdata::SyntheticVideo;
use crate::transforms::{center_intensity, center_view, DEFAULT_BASE_INTERVAL};

pub const SYNC_SHIFTS: [i64; 7] = [-3, -2, -1, 0, 1, 2, 3];
pub const SYNC_CLASSES: usize = SYNC_SHIFTS.len();
pub const ORDER_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 40,
            lr: 0.05,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden: Some(self.hidden),
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed: self.seed,
            ..ClassifierConfig::default()
        }
    }
}

type Samples = (Vec<Vec<f64>>, Vec<usize>);

fn view(f: &dyn Featurizer, video: &SyntheticVideo, idx: &[usize]) -> Tensor<f32> {
    let [_, _, h, w] = f.input_shape();
    center_intensity(center_view(&video.frames.clip(idx), (h, w)))
}

fn one_x(start: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|k| start + k * DEFAULT_BASE_INTERVAL as usize)
        .collect()
}

/// Sync samples of one video: one pair per shift class.
fn sync_samples(f: &dyn Featurizer, v: &SyntheticVideo, seed: u64) -> Result<Samples> {
    let len = f.input_shape()[1];
    let b = DEFAULT_BASE_INTERVAL as usize;
    let quarter = (len / 4) * b;
    let span = (len - 1) * b + 1;
    let margin = 3 * quarter;
    let frames = v.frames.len();
    if frames < span + 2 * margin {
        return Err(Error::VideoTooShort {
            len: frames,
            required: span + 2 * margin,
        });
    }
    let mut rng = stream(seed, Purpose::Probe, &[v.id as u64, 1]);
    let mut xs = Vec::with_capacity(SYNC_CLASSES);
    let mut ys = Vec::with_capacity(SYNC_CLASSES);
    for (class, &shift) in SYNC_SHIFTS.iter().enumerate() {
        let a = rng.random_range(margin..=frames - span - margin);
        let bstart = (a as i64 + shift * quarter as i64) as usize;
        let key = |slot: u64| mix(seed, &[1, v.id as u64, class as u64, slot]);
        let fa = f.probe(&view(f, v, &one_x(a, len)), key(0))?;
        let fb = f.probe(&view(f, v, &one_x(bstart, len)), key(1))?;
        xs.push(fa.iter().zip(&fb).map(|(x, y)| x - y).collect());
        ys.push(class);
    }
    Ok((xs, ys))
}

/// Order samples of one video: the same window in both orders.
fn order_samples(f: &dyn Featurizer, v: &SyntheticVideo, seed: u64) -> Result<Samples> {
    let len = f.input_shape()[1];
    let span = (len - 1) * DEFAULT_BASE_INTERVAL as usize + 1;
    let frames = v.frames.len();
    if frames < span {
        return Err(Error::VideoTooShort {
            len: frames,
            required: span,
        });
    }
    let mut rng = stream(seed, Purpose::Probe, &[v.id as u64, 2]);
    let start = rng.random_range(0..=frames - span);
    let idx = one_x(start, len);
    let half = len / 2;
    let swapped: Vec<usize> = idx[half..].iter().chain(&idx[..half]).copied().collect();
    let mut xs = Vec::with_capacity(2);
    for (label, order) in [&idx, &swapped].into_iter().enumerate() {
        xs.push(f.probe(
            &view(f, v, order),
            mix(seed, &[2, v.id as u64, label as u64]),
        )?);
    }
    Ok((xs, vec![0, 1]))
}

fn gather(
    f: &dyn Featurizer,
    videos: &[SyntheticVideo],
    seed: u64,
    per_video: fn(&dyn Featurizer, &SyntheticVideo, u64) -> Result<Samples>,
) -> Result<Samples> {
    let parts = par_map(videos, |v| per_video(f, v, seed))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in parts {
        xs.extend(x);
        ys.extend(y);
    }
    Ok((xs, ys))
}

pub fn sync_dataset(f: &dyn Featurizer, videos: &[SyntheticVideo], seed: u64) -> Result<Samples> {
    gather(f, videos, seed, sync_samples)
}

pub fn order_dataset(f: &dyn Featurizer, videos: &[SyntheticVideo], seed: u64) -> Result<Samples> {
    gather(f, videos, seed, order_samples)
}

pub fn temporal_probe_sync(
    f: &dyn Featurizer,
    train: &[SyntheticVideo],
    test: &[SyntheticVideo],
    cfg: &ProbeConfig,
) -> Result<ClassifierScore> {
    let tr = sync_dataset(f, train, cfg.seed)?;
    let te = sync_dataset(f, test, cfg.seed.wrapping_add(1))?;
    fit_classifier(
        (&tr.0, &tr.1),
        (&te.0, &te.1),
        SYNC_CLASSES,
        &cfg.classifier(),
    )
}

pub fn temporal_probe_order(
    f: &dyn Featurizer,
    train: &[SyntheticVideo],
    test: &[SyntheticVideo],
    cfg: &ProbeConfig,
) -> Result<ClassifierScore> {
    let tr = order_dataset(f, train, cfg.seed)?;
    let te = order_dataset(f, test, cfg.seed.wrapping_add(1))?;
    fit_classifier(
        (&tr.0, &tr.1),
        (&te.0, &te.1),
        ORDER_CLASSES,
        &cfg.classifier(),
    )
}
