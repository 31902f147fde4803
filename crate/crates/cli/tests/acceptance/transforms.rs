//! Criterion 4: index-sequence properties over 10^4 random specs.

use std::time::Instant;

use rand::Rng;
use transrank_core::rng::{stream, Purpose};
use transrank_core::transforms::{
    index_sequence, ClipSpec, TemporalTransform, TransformKind, JITTER_RANGE,
};

use crate::Outcome;

/// Strict when `strict`, otherwise non-decreasing: consecutive multipliers
/// can round to one frame when the step times jitter is below 1.
fn increasing(x: &[usize], strict: bool) -> bool {
    x.windows(2)
        .all(|w| if strict { w[0] < w[1] } else { w[0] <= w[1] })
}

fn decreasing(x: &[usize], strict: bool) -> bool {
    x.windows(2)
        .all(|w| if strict { w[0] > w[1] } else { w[0] >= w[1] })
}

/// Positions where the sign of consecutive differences flips.
fn sign_changes(x: &[usize]) -> usize {
    let signs: Vec<bool> = x.windows(2).map(|w| w[1] > w[0]).collect();
    signs.windows(2).filter(|s| s[0] != s[1]).count()
}

fn mean_gap(x: &[usize]) -> f64 {
    x.windows(2).map(|w| w[1] as f64 - w[0] as f64).sum::<f64>() / (x.len() - 1) as f64
}

pub fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut r = stream(4, Purpose::Generate, &[]);
    let mut failures: Vec<String> = Vec::new();
    let mut checked = [0usize; 4];
    let specs = 10_000;
    for k in 0..specs {
        let clip_len = r.random_range(2..=24);
        let b = r.random_range(1..=3u32);
        let rate = [1.0, 2.0, 3.0, 4.0][r.random_range(0..4)];
        let jitter = r.random_range(JITTER_RANGE.0..=JITTER_RANGE.1);
        let kind = [
            TransformKind::Speed,
            TransformKind::Reverse,
            TransformKind::Palindrome,
            TransformKind::Shuffle,
        ][k % 4];
        let t = match kind {
            TransformKind::Speed => TemporalTransform::speed(rate),
            TransformKind::Reverse => TemporalTransform::reverse(rate),
            TransformKind::Palindrome => TemporalTransform::palindrome(rate),
            TransformKind::Shuffle => TemporalTransform::shuffle(),
        }
        .with_base_interval(b);
        let span = t.span(clip_len, jitter);
        let video_len = span + r.random_range(0..40);
        let spec = ClipSpec {
            video_len,
            clip_len,
            offset: r.random_range(0..=video_len - span),
            jitter,
            transform: t,
        };
        let strict = t.step() * jitter >= 1.0;
        let mut fail = |what: &str| failures.push(format!("{what} for {spec:?}"));
        let idx = match index_sequence(&spec, &mut r) {
            Ok(idx) => idx,
            Err(e) => {
                fail(&format!("unexpected error {e}"));
                continue;
            }
        };
        checked[k % 4] += 1;
        if idx.len() != clip_len {
            fail("wrong length");
        }
        if idx.iter().any(|&i| i >= video_len) {
            fail("index out of bounds");
        }
        let forward_t = TemporalTransform::speed(if kind == TransformKind::Shuffle {
            1.0
        } else {
            rate
        })
        .with_base_interval(b);
        let forward = index_sequence(
            &ClipSpec {
                transform: forward_t,
                ..spec
            },
            &mut r,
        )
        .unwrap();
        match kind {
            TransformKind::Speed => {
                if !increasing(&idx, strict) {
                    fail("speed not strictly increasing");
                }
            }
            TransformKind::Reverse => {
                if !decreasing(&idx, strict) {
                    fail("reverse not strictly decreasing");
                }
                let mut rev = forward.clone();
                rev.reverse();
                if rev != idx {
                    fail("reverse is not the reversed speed sequence");
                }
            }
            TransformKind::Shuffle => {
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                if sorted != forward {
                    fail("shuffle is not a permutation of the 1x sequence");
                }
            }
            TransformKind::Palindrome => {
                let half = clip_len.div_ceil(2);
                if !increasing(&idx[..half], strict) || !decreasing(&idx[half..], strict) {
                    fail("palindrome is not rise-then-fall");
                }
                if strict && clip_len >= 3 && sign_changes(&idx) != 1 {
                    fail("palindrome does not change direction exactly once");
                }
            }
        }
        // Adjacent integer rates stay apart under any jitter pair.
        if kind == TransformKind::Speed && rate < 4.0 && clip_len >= 2 {
            let j2 = r.random_range(JITTER_RANGE.0..=JITTER_RANGE.1);
            let faster = TemporalTransform::speed(rate * 2.0).with_base_interval(b);
            let long = ClipSpec {
                video_len: faster.span(clip_len, j2) + spec.offset,
                jitter: j2,
                transform: faster,
                ..spec
            };
            if let Ok(f) = index_sequence(&long, &mut r) {
                if mean_gap(&idx) >= mean_gap(&f) {
                    fail("rate n and 2n gaps overlap");
                }
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    let detail = if failures.is_empty() {
        format!(
            "{specs} specs (speed {}, reverse {}, palindrome {}, shuffle {}), {secs:.2}s (< 10s)",
            checked[0], checked[1], checked[2], checked[3]
        )
    } else {
        failures.join("; ")
    };
    Outcome::new(pass, detail)
}
