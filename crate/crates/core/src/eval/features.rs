//! Frozen feature extraction and per-video feature banks.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::Model;
use crate::numerics::Tensor;
use crate::rng::{mix, stream, Purpose};
use crate::synthdata::SyntheticVideo;
use crate::transforms::{
    center_intensity, center_view, index_sequence, sample_offsets, ClipSpec, TemporalTransform,
};

/// Clips averaged per video in a feature bank.
pub const EVAL_CLIPS: usize = 10;

/// Maps clips to feature vectors. `key` uniquely identifies the clip within
/// an experiment; encoders ignore it, input-independent baselines use it.
pub trait Featurizer: Sync {
    /// `C x T x H x W` shape of the expected input clip.
    fn input_shape(&self) -> [usize; 4];
    fn pooled(&self, clip: &Tensor<f32>, key: u64) -> Result<Vec<f64>>;
    fn probe(&self, clip: &Tensor<f32>, key: u64) -> Result<Vec<f64>>;
}

impl Featurizer for Model<f32> {
    fn input_shape(&self) -> [usize; 4] {
        self.encoder.input
    }

    fn pooled(&self, clip: &Tensor<f32>, _key: u64) -> Result<Vec<f64>> {
        Ok(self
            .encode(clip)?
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect())
    }

    fn probe(&self, clip: &Tensor<f32>, _key: u64) -> Result<Vec<f64>> {
        Ok(self
            .probe_feature(clip)?
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect())
    }
}

/// Standard-normal features drawn independently for every clip key and
/// ignoring clip content: the "random guess" reference of every protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFeatures {
    pub seed: u64,
    pub input: [usize; 4],
    pub dim: usize,
    pub probe_dim: usize,
}

impl RandomFeatures {
    fn draw(&self, key: u64, which: u64, dim: usize) -> Vec<f64> {
        let mut rng = stream(self.seed, Purpose::Features, &[which, key]);
        (0..dim).map(|_| rng.sample(StandardNormal)).collect()
    }
}

impl Featurizer for RandomFeatures {
    fn input_shape(&self) -> [usize; 4] {
        self.input
    }

    fn pooled(&self, _clip: &Tensor<f32>, key: u64) -> Result<Vec<f64>> {
        Ok(self.draw(key, 0, self.dim))
    }

    fn probe(&self, _clip: &Tensor<f32>, key: u64) -> Result<Vec<f64>> {
        Ok(self.draw(key, 1, self.probe_dim))
    }
}

/// Maps `f` over `items` on all available cores, preserving order.
pub fn par_map<I: Sync, O: Send>(
    items: &[I],
    f: impl Fn(&I) -> Result<O> + Sync,
) -> Result<Vec<O>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<O>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("feature worker panicked")?);
        }
        Ok(out)
    })
}

/// `n` deterministic 1x evaluation clips of `video` at stratified offsets,
/// full-frame view resized to the encoder input.
pub fn eval_clips(
    video: &SyntheticVideo,
    input: [usize; 4],
    n: usize,
    seed: u64,
) -> Result<Vec<Tensor<f32>>> {
    let [_, len, h, w] = input;
    let one = [TemporalTransform::speed(1.0)];
    let mut rng = stream(seed, Purpose::EvalClips, &[video.id as u64]);
    let offsets = sample_offsets(video.frames.len(), len, &one, n, 1.0, &mut rng)?;
    offsets
        .into_iter()
        .map(|offset| {
            let spec = ClipSpec {
                video_len: video.frames.len(),
                clip_len: len,
                offset,
                jitter: 1.0,
                transform: one[0],
            };
            let raw = video.frames.clip(&index_sequence(&spec, &mut rng)?);
            Ok(center_intensity(center_view(&raw, (h, w))))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub ids: Vec<u32>,
    pub labels: Vec<usize>,
    pub features: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank {
    pub train: FeatureSet,
    pub test: FeatureSet,
}

/// Mean pooled feature of [`EVAL_CLIPS`] evaluation clips per video.
pub fn feature_set(f: &dyn Featurizer, videos: &[SyntheticVideo], seed: u64) -> Result<FeatureSet> {
    let input = f.input_shape();
    let features = par_map(videos, |v| {
        let clips = eval_clips(v, input, EVAL_CLIPS, seed)?;
        let mut mean: Vec<f64> = Vec::new();
        for (k, c) in clips.iter().enumerate() {
            let feat = f.pooled(c, mix(v.id as u64, &[k as u64]))?;
            if mean.is_empty() {
                mean = vec![0.0; feat.len()];
            }
            for (m, x) in mean.iter_mut().zip(feat) {
                *m += x / clips.len() as f64;
            }
        }
        Ok(mean)
    })?;
    Ok(FeatureSet {
        ids: videos.iter().map(|v| v.id).collect(),
        labels: videos.iter().map(|v| v.category.id()).collect(),
        features,
    })
}

pub fn build_feature_bank(
    f: &dyn Featurizer,
    train: &[SyntheticVideo],
    test: &[SyntheticVideo],
    seed: u64,
) -> Result<FeatureBank> {
    Ok(FeatureBank {
        train: feature_set(f, train, seed)?,
        test: feature_set(f, test, seed)?,
    })
}
