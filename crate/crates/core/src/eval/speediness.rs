//! Speediness scores of a model pretrained on `{1x, 2x}`, probed with seen
//! and unseen playback rates.
//!
//! The raw score of a clip is `s_2x - s_1x`, the difference between its two
//! temporal head outputs. Scores are then mapped affinely so that the mean
//! over 1x clips is 0 and the mean over 2x clips is 1.

use std::fmt::Write as _;

use super::features::par_map;
use crate::error::{Error, Result};
use crate::model::{HeadSlot, Model};
use crate::rng::{stream, Purpose};
use crate::synthdata::SyntheticVideo;
use crate::transforms::{
    center_intensity, center_view, index_sequence, sample_offsets, ClipSpec, TemporalTransform,
    TransformKind,
};

pub const PROBE_RATES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedinessRecord {
    pub video_id: u32,
    pub rate: f64,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub rate: f64,
    /// 5, 25, 50, 75 and 95 % quantiles of the normalized score.
    pub quantiles: [f64; 5],
}

impl RateSummary {
    pub fn median(&self) -> f64 {
        self.quantiles[2]
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_at(
    records: &[SpeedinessRecord],
    rate: f64,
    value: impl Fn(&SpeedinessRecord) -> f64,
) -> Option<f64> {
    let xs: Vec<f64> = records
        .iter()
        .filter(|r| r.rate == rate)
        .map(value)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// The affine map `(a, b)` with `a * mean_1x + b = 0` and
/// `a * mean_2x + b = 1`, computed from raw scores.
pub fn affine_map(records: &[SpeedinessRecord]) -> Result<(f64, f64)> {
    let m1 = mean_at(records, 1.0, |r| r.raw);
    let m2 = mean_at(records, 2.0, |r| r.raw);
    let (Some(m1), Some(m2)) = (m1, m2) else {
        return Err(Error::invalid(
            "speediness",
            "need both 1x and 2x clips to normalize",
        ));
    };
    if m1 == m2 || !(m2 - m1).is_finite() {
        return Err(Error::invalid(
            "speediness",
            "1x and 2x mean scores coincide, normalization is degenerate",
        ));
    }
    let a = 1.0 / (m2 - m1);
    Ok((a, -m1 * a))
}

/// Fills `normalized` for every record.
pub fn normalize(records: &mut [SpeedinessRecord]) -> Result<()> {
    let (a, b) = affine_map(records)?;
    for r in records.iter_mut() {
        r.normalized = a * r.raw + b;
    }
    Ok(())
}

pub fn summarize(records: &[SpeedinessRecord], rates: &[f64]) -> Vec<RateSummary> {
    rates
        .iter()
        .filter_map(|&rate| {
            let mut xs: Vec<f64> = records
                .iter()
                .filter(|r| r.rate == rate)
                .map(|r| r.normalized)
                .collect();
            if xs.is_empty() {
                return None;
            }
            xs.sort_by(f64::total_cmp);
            Some(RateSummary {
                rate,
                quantiles: QUANTILES.map(|q| quantile(&xs, q)),
            })
        })
        .collect()
}

/// Column indices of 1x and 2x in the pretraining transform set.
fn speed_columns(set: &[TemporalTransform]) -> Result<(usize, usize)> {
    let find = |rate: f64| {
        set.iter()
            .position(|t| t.kind == TransformKind::Speed && t.rate == rate)
    };
    match (set.len(), find(1.0), find(2.0)) {
        (2, Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::invalid(
            "speediness",
            "the checkpoint must be pretrained on exactly {1x, 2x}",
        )),
    }
}

/// Scores `clips_per_video` clips of every video at every rate in `rates`.
/// All rates of one clip slot share its offset, chosen so that the fastest
/// rate still fits.
pub fn speediness(
    model: &Model<f32>,
    pretrain_set: &[TemporalTransform],
    videos: &[SyntheticVideo],
    rates: &[f64],
    clips_per_video: usize,
    seed: u64,
) -> Result<(Vec<SpeedinessRecord>, Vec<RateSummary>)> {
    let (c1, c2) = speed_columns(pretrain_set)?;
    match model.head(HeadSlot::Temporal) {
        Some(h) if h.output == 2 => {}
        _ => {
            return Err(Error::invalid(
                "speediness",
                "model needs a two-way temporal head",
            ))
        }
    }
    let base = pretrain_set[0].base_interval;
    let probes: Vec<TemporalTransform> = rates
        .iter()
        .map(|&r| TemporalTransform::speed(r).with_base_interval(base))
        .collect();
    let [_, len, h, w] = model.encoder.input;
    let per_video = par_map(videos, |v| {
        let mut rng = stream(seed, Purpose::EvalClips, &[v.id as u64, 1]);
        let offsets = sample_offsets(v.frames.len(), len, &probes, clips_per_video, 1.0, &mut rng)?;
        let mut out = Vec::new();
        for &offset in &offsets {
            for (t, &rate) in probes.iter().zip(rates) {
                let spec = ClipSpec {
                    video_len: v.frames.len(),
                    clip_len: len,
                    offset,
                    jitter: 1.0,
                    transform: *t,
                };
                let raw = v.frames.clip(&index_sequence(&spec, &mut rng)?);
                let clip = center_intensity(center_view(&raw, (h, w)));
                let s = model.predict(HeadSlot::Temporal, &clip)?;
                out.push(SpeedinessRecord {
                    video_id: v.id,
                    rate,
                    raw: (s.data()[c2] - s.data()[c1]) as f64,
                    normalized: f64::NAN,
                });
            }
        }
        Ok(out)
    })?;
    let mut records: Vec<SpeedinessRecord> = per_video.into_iter().flatten().collect();
    normalize(&mut records)?;
    let summary = summarize(&records, rates);
    Ok((records, summary))
}

/// True when the medians increase strictly with the rate.
pub fn medians_strictly_increasing(summary: &[RateSummary]) -> bool {
    let mut s = summary.to_vec();
    s.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    s.windows(2).all(|w| w[0].median() < w[1].median())
}

/// `rate,q05,q25,q50,q75,q95` table.
pub fn speediness_csv(summary: &[RateSummary]) -> String {
    let mut s = String::from("rate,q05,q25,q50,q75,q95\n");
    for r in summary {
        let _ = write!(s, "{}", r.rate);
        for q in r.quantiles {
            let _ = write!(s, ",{q}");
        }
        s.push('\n');
    }
    s
}
