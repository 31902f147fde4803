//! Downstream motion-category classification: linear evaluation on frozen
//! features and end-to-end finetuning.
//!
//! Both protocols train one model per learning rate of the grid and report
//! every result; the best entry is selected on test accuracy.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{TransferConfig, TransferMode};
use crate::error::{Error, Result};
use crate::eval::{
    build_feature_bank, eval_clips, fit_classifier, par_map, ClassifierConfig, FeatureBank,
    EVAL_CLIPS,
};
use crate::losses::{argmax, transcls_loss};
use crate::model::{HeadKind, HeadSlot, Model};
use crate::numerics::{lr_multistep, Sgd, SgdConfig, Tape, Tensor};
use crate::rng::{stream, Purpose};
use crate::synthdata::{Dataset, MotionCategory, SyntheticVideo};
use crate::transforms::{
    center_intensity, index_sequence, sample_offsets, spatial_augment, ClipSpec, SpatialAugConfig,
    TemporalTransform,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferRun {
    pub lr: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub mode: TransferMode,
    pub runs: Vec<TransferRun>,
}

impl TransferReport {
    /// Highest test accuracy over the grid (first wins on ties).
    pub fn best(&self) -> TransferRun {
        let mut best = self.runs[0];
        for r in &self.runs[1..] {
            if r.test_acc > best.test_acc {
                best = *r;
            }
        }
        best
    }

    /// `metric,value` rows.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        for r in &self.runs {
            rows.push((format!("{}_test_acc@lr={}", self.mode, r.lr), r.test_acc));
            rows.push((format!("{}_train_acc@lr={}", self.mode, r.lr), r.train_acc));
        }
        let b = self.best();
        rows.push((format!("{}_best_test_acc", self.mode), b.test_acc));
        rows.push((format!("{}_best_lr", self.mode), b.lr));
        rows
    }
}

/// Affine classifier on a precomputed bank, one run per grid entry.
pub fn linear_eval_bank(bank: &FeatureBank, cfg: &TransferConfig) -> Result<TransferReport> {
    cfg.validate()?;
    let runs = cfg
        .lr_grid
        .iter()
        .enumerate()
        .map(|(i, &lr)| {
            let ccfg = ClassifierConfig {
                hidden: None,
                epochs: cfg.epochs,
                lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                batch_size: cfg.batch_size,
                milestones: cfg.milestones.clone(),
                decay: cfg.decay,
                seed: crate::rng::mix(cfg.seed, &[i as u64]),
            };
            let s = fit_classifier(
                (&bank.train.features, &bank.train.labels),
                (&bank.test.features, &bank.test.labels),
                MotionCategory::COUNT,
                &ccfg,
            )?;
            Ok(TransferRun {
                lr,
                train_acc: s.train_acc,
                test_acc: s.test_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferReport {
        mode: TransferMode::Linear,
        runs,
    })
}

/// Linear evaluation: the encoder is only read, never updated.
pub fn linear_eval(
    model: &Model<f32>,
    ds: &Dataset,
    cfg: &TransferConfig,
) -> Result<TransferReport> {
    let bank = build_feature_bank(model, &ds.train, &ds.test, cfg.seed)?;
    linear_eval_bank(&bank, cfg)
}

fn training_clip(
    model: &Model<f32>,
    v: &SyntheticVideo,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let [_, len, h, w] = model.encoder.input;
    let one = [TemporalTransform::speed(1.0)];
    let offset = sample_offsets(v.frames.len(), len, &one, 1, 1.0, rng)?[0];
    let spec = ClipSpec {
        video_len: v.frames.len(),
        clip_len: len,
        offset,
        jitter: 1.0,
        transform: one[0],
    };
    let raw = v.frames.clip(&index_sequence(&spec, rng)?);
    // Full-frame view as in evaluation: a small crop often loses the sprite
    // and with it the motion label. Photometric jitter is kept.
    let [fh, fw] = [v.frames.height() as f64, v.frames.width() as f64];
    let aug = SpatialAugConfig {
        area: (1.0, 1.0),
        aspect: (fw / fh, fw / fh),
        output: (h, w),
        ..SpatialAugConfig::default()
    };
    Ok(center_intensity(spatial_augment(&raw, &aug, rng).clip))
}

/// Mean classifier logits over the evaluation clips, no dropout.
fn predict_video(model: &Model<f32>, v: &SyntheticVideo, seed: u64) -> Result<usize> {
    let clips = eval_clips(v, model.encoder.input, EVAL_CLIPS, seed)?;
    let mut mean = vec![0.0f64; MotionCategory::COUNT];
    for c in &clips {
        let s = model.predict(HeadSlot::Classifier, c)?;
        for (m, &x) in mean.iter_mut().zip(s.data()) {
            *m += x as f64;
        }
    }
    Ok(argmax(&mean))
}

fn video_accuracy(model: &Model<f32>, videos: &[SyntheticVideo], seed: u64) -> Result<f64> {
    if videos.is_empty() {
        return Ok(0.0);
    }
    let preds = par_map(videos, |v| predict_video(model, v, seed))?;
    let correct = preds
        .iter()
        .zip(videos)
        .filter(|(p, v)| **p == v.category.id())
        .count();
    Ok(correct as f64 / videos.len() as f64)
}

fn finetune_one(
    base: &Model<f32>,
    ds: &Dataset,
    cfg: &TransferConfig,
    lr: f64,
    run: u64,
) -> Result<TransferRun> {
    let mut model = base.clone();
    for slot in [HeadSlot::Temporal, HeadSlot::Aspect, HeadSlot::Rotation] {
        model.detach_head(slot);
    }
    for p in model.params.iter_mut() {
        p.trainable = true;
    }
    model.attach_head(
        HeadSlot::Classifier,
        HeadKind::Fc,
        MotionCategory::COUNT,
        &mut stream(cfg.seed, Purpose::Transfer, &[run]),
    );
    let mut sgd = Sgd::new(SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    });
    let keep = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let step_lr = lr_multistep(lr, epoch, cfg.epochs, &cfg.milestones, cfg.decay);
        order.shuffle(&mut stream(
            cfg.seed,
            Purpose::Transfer,
            &[run, epoch as u64],
        ));
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f32;
            for &i in batch {
                let v = &ds.train[i];
                let mut rng = stream(
                    cfg.seed,
                    Purpose::Transfer,
                    &[run, epoch as u64, v.id as u64],
                );
                let clip = training_clip(&model, v, &mut rng)?;
                let mut tape = Tape::new();
                let x = tape.constant(clip)?;
                let pooled = model.encode_var(&mut tape, x)?.pooled;
                let d = tape.value(pooled).len();
                let mut f = tape.reshape(pooled, &[1, d])?;
                if cfg.dropout > 0.0 {
                    let mask = (0..d)
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                (1.0 / keep) as f32
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    f = tape.mul_const(f, Tensor::new(&[1, d], mask)?)?;
                }
                let s = model.head_var(HeadSlot::Classifier, &mut tape, f)?;
                let lg = transcls_loss(tape.value(s), &[v.category.id()])?;
                if !lg.value.is_finite() {
                    return Err(Error::Diverged {
                        step: epoch,
                        loss: lg.value as f64,
                    });
                }
                let root = tape.custom_scalar(s, lg.value, lg.grad)?;
                tape.backward_seeded(root, weight)?
                    .accumulate(&mut model.params)?;
            }
            sgd.step(&mut model.params, step_lr)?;
        }
    }
    let run = TransferRun {
        lr,
        train_acc: video_accuracy(&model, &ds.train, cfg.seed)?,
        test_acc: video_accuracy(&model, &ds.test, cfg.seed)?,
    };
    info!("finetune lr {lr}: test accuracy {:.3}", run.test_acc);
    Ok(run)
}

/// End-to-end finetuning with a fresh linear classifier and dropout on the
/// pooled feature, one run per grid entry.
pub fn finetune(model: &Model<f32>, ds: &Dataset, cfg: &TransferConfig) -> Result<TransferReport> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::invalid("finetune", "no training videos"));
    }
    let runs = cfg
        .lr_grid
        .iter()
        .enumerate()
        .map(|(i, &lr)| finetune_one(model, ds, cfg, lr, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferReport {
        mode: TransferMode::Finetune,
        runs,
    })
}
