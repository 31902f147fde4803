//! Temporal transformations as frame-index generators.
//!
//! A clip of `l` frames under rate `n` with base interval `b` and jitter `j`
//! takes frame `offset + round(k * b * n * j)` at position `k`. Reverse plays
//! the same indices backwards, palindrome visits even multipliers upwards and
//! odd multipliers downwards, shuffle permutes the 1x sequence.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BASE_INTERVAL: u32 = 2;
pub const DEFAULT_CLIP_LEN: usize = 16;
pub const JITTER_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Speed,
    Reverse,
    Palindrome,
    Shuffle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalTransform {
    pub kind: TransformKind,
    /// Playback rate multiplier; integer for the pretext set, 0.5 for the
    /// slow-motion speediness probe.
    pub rate: f64,
    pub base_interval: u32,
}

impl TemporalTransform {
    fn make(kind: TransformKind, rate: f64) -> Self {
        assert!(
            rate > 0.0 && rate.is_finite(),
            "rate must be positive, got {rate}"
        );
        Self {
            kind,
            rate,
            base_interval: DEFAULT_BASE_INTERVAL,
        }
    }

    pub fn speed(rate: f64) -> Self {
        Self::make(TransformKind::Speed, rate)
    }

    pub fn reverse(rate: f64) -> Self {
        Self::make(TransformKind::Reverse, rate)
    }

    pub fn palindrome(rate: f64) -> Self {
        Self::make(TransformKind::Palindrome, rate)
    }

    pub fn shuffle() -> Self {
        Self::make(TransformKind::Shuffle, 1.0)
    }

    pub fn with_base_interval(mut self, b: u32) -> Self {
        assert!(b >= 1);
        self.base_interval = b;
        self
    }

    /// Frame step between consecutive positions before jitter.
    pub fn step(&self) -> f64 {
        let rate = match self.kind {
            TransformKind::Shuffle => 1.0,
            _ => self.rate,
        };
        self.base_interval as f64 * rate
    }

    /// Largest multiplier of `step` used by a clip of `clip_len` frames.
    pub fn max_multiplier(&self, clip_len: usize) -> usize {
        clip_len - 1
    }

    /// Number of frames covered (max index + 1) at jitter `j`.
    pub fn span(&self, clip_len: usize, jitter: f64) -> usize {
        (self.max_multiplier(clip_len) as f64 * self.step() * jitter).round() as usize + 1
    }

    /// Multiplier applied at each clip position, before scaling by
    /// `step * jitter`.
    fn multipliers(&self, clip_len: usize) -> Vec<usize> {
        match self.kind {
            TransformKind::Speed | TransformKind::Shuffle => (0..clip_len).collect(),
            TransformKind::Reverse => (0..clip_len).rev().collect(),
            TransformKind::Palindrome => {
                let up = (0..clip_len).step_by(2);
                let down = (1..clip_len).step_by(2).rev();
                up.chain(down).collect()
            }
        }
    }

    pub fn label(&self) -> String {
        let rate = if self.rate.fract() == 0.0 {
            format!("{}", self.rate as u64)
        } else {
            format!("{}", self.rate)
        };
        match (self.kind, rate.as_str()) {
            (TransformKind::Speed, r) => format!("{r}x"),
            (TransformKind::Reverse, "1") => "rev".to_string(),
            (TransformKind::Reverse, r) => format!("rev{r}x"),
            (TransformKind::Palindrome, "1") => "palindrome".to_string(),
            (TransformKind::Palindrome, r) => format!("palindrome{r}x"),
            (TransformKind::Shuffle, _) => "shuffle".to_string(),
        }
    }
}

impl fmt::Display for TemporalTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for TemporalTransform {
    type Err = Error;

    /// Tokens `1x|2x|4x|0.5x|rev|rev2x|rev4x|palindrome|shuffle`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let rate_of = |r: &str| -> Result<f64> {
            let v: f64 = r
                .parse()
                .map_err(|_| Error::invalid("transform", format!("bad rate in {s:?}")))?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::invalid("transform", format!("bad rate in {s:?}")))
            }
        };
        if s == "rev" {
            return Ok(Self::reverse(1.0));
        }
        if s == "palindrome" {
            return Ok(Self::palindrome(1.0));
        }
        if s == "shuffle" {
            return Ok(Self::shuffle());
        }
        if let Some(r) = s.strip_prefix("rev").and_then(|r| r.strip_suffix('x')) {
            return Ok(Self::reverse(rate_of(r)?));
        }
        if let Some(r) = s
            .strip_prefix("palindrome")
            .and_then(|r| r.strip_suffix('x'))
        {
            return Ok(Self::palindrome(rate_of(r)?));
        }
        if let Some(r) = s.strip_suffix('x') {
            return Ok(Self::speed(rate_of(r)?));
        }
        Err(Error::invalid(
            "transform",
            format!("unknown transform {s:?}"),
        ))
    }
}

/// Parses a comma-separated transform list such as `1x,2x,rev`.
pub fn parse_transform_list(s: &str) -> Result<Vec<TemporalTransform>> {
    let list: Vec<TemporalTransform> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::invalid("transform", "empty transform list"));
    }
    Ok(list)
}

pub fn format_transform_list(list: &[TemporalTransform]) -> String {
    list.iter().map(|t| t.label()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub video_len: usize,
    pub clip_len: usize,
    pub offset: usize,
    pub jitter: f64,
    pub transform: TemporalTransform,
}

/// Frame indices of one clip. `rng` is only consumed by shuffle.
pub fn index_sequence(spec: &ClipSpec, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if spec.clip_len < 2 {
        return Err(Error::invalid(
            "index_sequence",
            "clip length must be at least 2",
        ));
    }
    if !(spec.jitter > 0.0 && spec.jitter.is_finite()) {
        return Err(Error::invalid("index_sequence", "jitter must be positive"));
    }
    let t = spec.transform;
    let last = spec.offset + t.span(spec.clip_len, spec.jitter) - 1;
    if last >= spec.video_len {
        return Err(Error::IndexOutOfRange {
            index: last,
            len: spec.video_len,
        });
    }
    let scale = t.step() * spec.jitter;
    let mut idx: Vec<usize> = t
        .multipliers(spec.clip_len)
        .into_iter()
        .map(|m| spec.offset + (m as f64 * scale).round() as usize)
        .collect();
    if t.kind == TransformKind::Shuffle {
        idx.shuffle(rng);
    }
    Ok(idx)
}

/// Uniform jitter factor in [0.8, 1.2].
pub fn jitter_factor(rng: &mut impl Rng) -> f64 {
    rng.random_range(JITTER_RANGE.0..=JITTER_RANGE.1)
}

/// Frames needed so that every transform in `set` fits at jitter `jitter_max`.
pub fn required_span(set: &[TemporalTransform], clip_len: usize, jitter_max: f64) -> usize {
    set.iter()
        .map(|t| t.span(clip_len, jitter_max))
        .max()
        .unwrap_or(clip_len)
}

/// Stratified clip offsets: clip `i` is drawn uniformly inside the `i`-th of
/// `n` equal segments of the valid offset range `[0, video_len - span]`.
pub fn sample_offsets(
    video_len: usize,
    clip_len: usize,
    set: &[TemporalTransform],
    n: usize,
    jitter_max: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let span = required_span(set, clip_len, jitter_max);
    if span > video_len {
        return Err(Error::VideoTooShort {
            len: video_len,
            required: span,
        });
    }
    let choices = (video_len - span + 1) as f64;
    Ok((0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let pos = ((i as f64 + u) / n as f64 * choices).floor() as usize;
            pos.min(video_len - span)
        })
        .collect())
}
