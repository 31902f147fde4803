//! The self-supervised pretraining loop.

use log::{debug, info};
use rand::seq::SliceRandom;

use super::config::{Framework, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::{
    class_accuracy_by_column, pair_accuracy_by_column, rotation_loss, spatial_rank_loss,
    transcls_loss, transrank_loss, Tally,
};
use crate::model::{Checkpoint, EncoderConfig, HeadSlot, Model, Restored};
use crate::numerics::{lr_cosine, Sgd, SgdConfig, Tape, Tensor, Var};
use crate::rng::{stream, Purpose};
use crate::synthdata::SyntheticVideo;
use crate::transforms::{
    center_intensity, center_view, index_sequence, jitter_factor, sample_offsets, spatial_augment,
    ClipSpec, JITTER_RANGE,
};

/// Epoch key used for held-out pretext evaluation clips.
const HELD_OUT_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pretext_acc: f64,
    pub lr: f64,
    /// Pretext accuracy per transformation, in transform-set order.
    pub column_acc: Vec<f64>,
}

/// The clips drawn from one video for one pretext step. Clip `k` carries
/// transformation `assignments[k]`.
#[derive(Debug, Clone)]
pub struct PretextSample {
    pub clips: Vec<Tensor<f32>>,
    pub assignments: Vec<usize>,
    pub aspect_ratios: Vec<f64>,
    pub rotations: Vec<usize>,
}

/// Draws one clip per transformation from `video`: stratified offsets, a
/// random transform-to-clip permutation and independent jitter per clip.
/// With `augment` false every clip is the deterministic full-frame view.
pub fn sample_pretext(
    video: &SyntheticVideo,
    cfg: &PretrainConfig,
    epoch: u64,
    augment: bool,
) -> Result<PretextSample> {
    let mut rng = stream(cfg.seed, Purpose::Clip, &[epoch, video.id as u64]);
    let m = cfg.transforms.len();
    let mut assignments: Vec<usize> = (0..m).collect();
    assignments.shuffle(&mut rng);
    let jitter_max = if cfg.jitter { JITTER_RANGE.1 } else { 1.0 };
    let offsets = sample_offsets(
        video.frames.len(),
        cfg.clip_len,
        &cfg.transforms,
        m,
        jitter_max,
        &mut rng,
    )?;
    let aug = cfg.augmentation();
    let mut out = PretextSample {
        clips: Vec::with_capacity(m),
        assignments: assignments.clone(),
        aspect_ratios: Vec::with_capacity(m),
        rotations: Vec::with_capacity(m),
    };
    for (k, &t) in assignments.iter().enumerate() {
        let jitter = if cfg.jitter {
            jitter_factor(&mut rng)
        } else {
            1.0
        };
        let spec = ClipSpec {
            video_len: video.frames.len(),
            clip_len: cfg.clip_len,
            offset: offsets[k],
            jitter,
            transform: cfg.transforms[t],
        };
        let raw = video.frames.clip(&index_sequence(&spec, &mut rng)?);
        if augment {
            let a = spatial_augment(&raw, &aug, &mut rng);
            out.clips.push(center_intensity(a.clip));
            out.aspect_ratios.push(a.aspect_ratio);
            out.rotations.push(a.rotation as usize);
        } else {
            out.clips
                .push(center_intensity(center_view(&raw, aug.output)));
            out.aspect_ratios.push(1.0);
            out.rotations.push(0);
        }
    }
    Ok(out)
}

fn encoder_config(cfg: &PretrainConfig, in_channels: usize) -> EncoderConfig {
    EncoderConfig {
        input: [in_channels, cfg.clip_len, cfg.clip_size, cfg.clip_size],
        channels: cfg.channels.clone(),
        ..EncoderConfig::default()
    }
}

/// Builds a fresh model with the heads required by `cfg`.
pub fn init_model(cfg: &PretrainConfig, in_channels: usize) -> Result<Model<f32>> {
    let mut rng = stream(cfg.seed, Purpose::Init, &[]);
    let mut model = Model::new(encoder_config(cfg, in_channels), &mut rng)?;
    model.attach_head(HeadSlot::Temporal, cfg.head, cfg.transforms.len(), &mut rng);
    if cfg.aspect_task {
        model.attach_head(HeadSlot::Aspect, cfg.head, 1, &mut rng);
    }
    if cfg.rotation_task {
        model.attach_head(HeadSlot::Rotation, cfg.head, 4, &mut rng);
    }
    Ok(model)
}

/// Records the full pretext objective for one video. Returns the loss node,
/// its value and the temporal score matrix.
fn video_objective(
    model: &Model<f32>,
    cfg: &PretrainConfig,
    tape: &mut Tape<f32>,
    sample: &PretextSample,
) -> Result<(Var, f64, Tensor<f32>)> {
    let mut feats = Vec::with_capacity(sample.clips.len());
    for clip in &sample.clips {
        let x = tape.constant(clip.clone())?;
        feats.push(model.encode_var(tape, x)?.pooled);
    }
    let f = tape.stack(&feats)?;
    let scores = model.head_var(HeadSlot::Temporal, tape, f)?;
    let s = tape.value(scores).clone();
    let lg = match cfg.framework {
        Framework::Rank => transrank_loss(&s, &sample.assignments, cfg.margin)?,
        Framework::Cls => transcls_loss(&s, &sample.assignments)?,
    };
    let mut value = lg.value as f64;
    let mut total = tape.custom_scalar(scores, lg.value, lg.grad)?;
    if cfg.aspect_task {
        let a = model.head_var(HeadSlot::Aspect, tape, f)?;
        let lg = spatial_rank_loss(tape.value(a).data(), &sample.aspect_ratios, cfg.margin)?;
        let grad = lg.grad.reshape(tape.value(a).shape())?;
        value += cfg.weights.aspect * lg.value as f64;
        let term = tape.custom_scalar(a, lg.value, grad)?;
        let term = tape.scale(term, cfg.weights.aspect as f32)?;
        total = tape.add(total, term)?;
    }
    if cfg.rotation_task {
        let r = model.head_var(HeadSlot::Rotation, tape, f)?;
        let lg = rotation_loss(tape.value(r), &sample.rotations)?;
        value += cfg.weights.rotation * lg.value as f64;
        let term = tape.custom_scalar(r, lg.value, lg.grad)?;
        let term = tape.scale(term, cfg.weights.rotation as f32)?;
        total = tape.add(total, term)?;
    }
    Ok((total, value, s))
}

fn tally_columns(
    cfg: &PretrainConfig,
    scores: &Tensor<f32>,
    t: &[usize],
    into: &mut [Tally],
) -> Result<()> {
    let per = match cfg.framework {
        Framework::Rank => pair_accuracy_by_column(scores, t)?,
        Framework::Cls => class_accuracy_by_column(scores, t)?,
    };
    for (acc, p) in into.iter_mut().zip(per) {
        acc.add(p);
    }
    Ok(())
}

fn summarize(columns: &[Tally]) -> (f64, Vec<f64>) {
    let mut all = Tally::default();
    for c in columns {
        all.add(*c);
    }
    (
        all.rate().unwrap_or(0.0),
        columns.iter().map(|c| c.rate().unwrap_or(0.0)).collect(),
    )
}

/// Pretext accuracy on `videos` without augmentation, overall and per column.
pub fn pretext_accuracy(
    model: &Model<f32>,
    cfg: &PretrainConfig,
    videos: &[SyntheticVideo],
) -> Result<(f64, Vec<f64>)> {
    let mut columns = vec![Tally::default(); cfg.transforms.len()];
    for v in videos {
        let sample = sample_pretext(v, cfg, HELD_OUT_EPOCH, false)?;
        let mut tape = Tape::new();
        let feats = sample
            .clips
            .iter()
            .map(|c| {
                let x = tape.constant(c.clone())?;
                Ok(model.encode_var(&mut tape, x)?.pooled)
            })
            .collect::<Result<Vec<_>>>()?;
        let f = tape.stack(&feats)?;
        let s = model.head_var(HeadSlot::Temporal, &mut tape, f)?;
        tally_columns(cfg, tape.value(s), &sample.assignments, &mut columns)?;
    }
    Ok(summarize(&columns))
}

/// Stateful pretraining run; one call to [`Pretrainer::run_epoch`] per epoch.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub cfg: PretrainConfig,
    pub model: Model<f32>,
    pub sgd: Sgd<f32>,
    /// Index of the next epoch to run.
    pub epoch: usize,
    /// SGD steps taken by this instance.
    step: usize,
    pub history: Vec<EpochRecord>,
}

impl Pretrainer {
    pub fn new(cfg: PretrainConfig, in_channels: usize) -> Result<Self> {
        cfg.validate()?;
        let model = init_model(&cfg, in_channels)?;
        Ok(Self::with_model(cfg, model))
    }

    fn with_model(cfg: PretrainConfig, model: Model<f32>) -> Self {
        let sgd = Sgd::new(SgdConfig {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        });
        Self {
            cfg,
            model,
            sgd,
            epoch: 0,
            step: 0,
            history: Vec::new(),
        }
    }

    /// Continues from a checkpoint written by [`Pretrainer::checkpoint`].
    pub fn resume(cfg: PretrainConfig, restored: Restored<f32>) -> Result<Self> {
        cfg.validate()?;
        let head = restored
            .model
            .head(HeadSlot::Temporal)
            .ok_or_else(|| Error::invalid("resume", "checkpoint has no temporal head"))?;
        if head.output != cfg.transforms.len() || head.kind != cfg.head {
            return Err(Error::invalid(
                "resume",
                "checkpoint heads do not match the configuration",
            ));
        }
        let mut p = Self::with_model(cfg, restored.model);
        for (name, buf) in restored.momentum {
            p.sgd.set_buffer(&name, buf);
        }
        p.epoch = restored.epoch;
        Ok(p)
    }

    pub fn checkpoint(&self, config_digest: u64) -> Checkpoint {
        self.model
            .to_checkpoint(self.sgd.buffers(), self.epoch, config_digest)
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self, videos: &[SyntheticVideo]) -> Result<EpochRecord> {
        if videos.is_empty() {
            return Err(Error::invalid("pretrain", "no training videos"));
        }
        let cfg = &self.cfg;
        let epoch = self.epoch;
        let lr = lr_cosine(cfg.lr, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Epoch, &[epoch as u64]));
        let mut columns = vec![Tally::default(); cfg.transforms.len()];
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f32;
            let step = self.step;
            let diverged = |loss: f64| Error::Diverged { step, loss };
            for &vi in batch {
                let sample = sample_pretext(&videos[vi], cfg, epoch as u64, true)?;
                let mut tape = Tape::new();
                let (total, value, scores) =
                    match video_objective(&self.model, cfg, &mut tape, &sample) {
                        Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                        other => other?,
                    };
                if !value.is_finite() {
                    return Err(diverged(value));
                }
                loss_sum += value;
                tally_columns(cfg, &scores, &sample.assignments, &mut columns)?;
                let grads = match tape.backward_seeded(total, weight) {
                    Err(Error::NonFinite { .. }) => return Err(diverged(value)),
                    other => other?,
                };
                grads.accumulate(&mut self.model.params)?;
            }
            match self.sgd.step(&mut self.model.params, lr) {
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                other => other?,
            }
            self.step += 1;
        }
        let (pretext_acc, column_acc) = summarize(&columns);
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / videos.len() as f64,
            pretext_acc,
            lr,
            column_acc,
        };
        debug!(
            "epoch {epoch}: loss {:.4} pretext acc {:.3} lr {:.4}",
            rec.loss, rec.pretext_acc, rec.lr
        );
        self.epoch += 1;
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, videos: &[SyntheticVideo]) -> Result<&[EpochRecord]> {
        while !self.done() {
            self.run_epoch(videos)?;
        }
        if let Some(last) = self.history.last() {
            info!(
                "pretraining done after {} epochs: loss {:.4}, pretext acc {:.3}",
                self.epoch, last.loss, last.pretext_acc
            );
        }
        Ok(&self.history)
    }
}

/// Pretrains a fresh model on `videos` for `cfg.epochs` epochs.
pub fn pretrain(videos: &[SyntheticVideo], cfg: &PretrainConfig) -> Result<Pretrainer> {
    let channels = videos.first().map_or(1, |v| v.frames.channels());
    let mut p = Pretrainer::new(cfg.clone(), channels)?;
    p.run(videos)?;
    Ok(p)
}

/// `epoch,loss,pretext_acc,lr` rows, one per epoch.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,pretext_acc,lr\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.loss, r.pretext_acc, r.lr
        ));
    }
    s
}

/// Per-transformation pretext accuracy, one row per epoch.
pub fn column_csv(history: &[EpochRecord], cfg: &PretrainConfig) -> String {
    let mut s = String::from("epoch");
    for t in &cfg.transforms {
        s.push(',');
        s.push_str(&t.label());
    }
    s.push('\n');
    for r in history {
        s.push_str(&r.epoch.to_string());
        for a in &r.column_acc {
            s.push_str(&format!(",{a}"));
        }
        s.push('\n');
    }
    s
}
