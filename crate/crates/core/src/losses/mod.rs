//! Pretext objectives with closed-form gradients.
//!
//! Score matrices are `N x M` tensors (one row per clip, one column per
//! transformation) and assignments are zero-based column indices. Every
//! loss returns its value together with the gradient with respect to its
//! score input, ready for [`Tape::custom_scalar`](crate::numerics::Tape::custom_scalar).

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_SPATIAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T: Scalar = f32> {
    pub value: T,
    pub grad: Tensor<T>,
}

/// Weights of the spatial terms added to the temporal loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub aspect: f64,
    pub rotation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            aspect: DEFAULT_SPATIAL_WEIGHT,
            rotation: DEFAULT_SPATIAL_WEIGHT,
        }
    }
}

fn check_scores<T: Scalar>(op: &'static str, s: &Tensor<T>, t: &[usize]) -> Result<(usize, usize)> {
    if s.rank() != 2 {
        return Err(Error::invalid(
            op,
            format!("scores must be N x M, got shape {:?}", s.shape()),
        ));
    }
    let (n, m) = (s.shape()[0], s.shape()[1]);
    if t.len() != n {
        return Err(Error::Shape {
            op,
            expected: vec![n],
            got: vec![t.len()],
        });
    }
    if let Some(&bad) = t.iter().find(|&&c| c >= m) {
        return Err(Error::IndexOutOfRange { index: bad, len: m });
    }
    Ok((n, m))
}

fn check_margin(op: &'static str, margin: f64) -> Result<()> {
    if margin.is_finite() && margin >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            op,
            format!("margin must be finite and non-negative, got {margin}"),
        ))
    }
}

/// Temporal margin ranking loss over all ordered pairs of clips carrying
/// different transformations: the clip that received transformation `t_i`
/// must out-score every other clip in column `t_i` by `margin`.
pub fn transrank_loss<T: Scalar>(s: &Tensor<T>, t: &[usize], margin: f64) -> Result<LossGrad<T>> {
    check_margin("transrank_loss", margin)?;
    let (n, m) = check_scores("transrank_loss", s, t)?;
    let sd = s.data();
    let mg = T::from_f64_lossy(margin);
    let mut grad = vec![T::zero(); n * m];
    let mut total = T::zero();
    let mut pairs = 0usize;
    for i in 0..n {
        let c = t[i];
        for j in 0..n {
            if t[j] == c {
                continue;
            }
            pairs += 1;
            let h = sd[j * m + c] - sd[i * m + c] + mg;
            if h > T::zero() {
                total = total + h;
                grad[j * m + c] = grad[j * m + c] + T::one();
                grad[i * m + c] = grad[i * m + c] - T::one();
            }
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateAssignments);
    }
    let inv = T::one() / T::from_usize(pairs).unwrap();
    Ok(LossGrad {
        value: total * inv,
        grad: Tensor::new(s.shape(), grad.into_iter().map(|g| g * inv).collect())?,
    })
}

/// Batched temporal ranking loss: rows are grouped by `video`, each group
/// gets its own loss, and the result is the mean over groups. No pair ever
/// spans two groups.
pub fn transrank_loss_batched<T: Scalar>(
    s: &Tensor<T>,
    t: &[usize],
    video: &[usize],
    margin: f64,
) -> Result<LossGrad<T>> {
    let (n, m) = check_scores("transrank_loss", s, t)?;
    if video.len() != n {
        return Err(Error::Shape {
            op: "transrank_loss",
            expected: vec![n],
            got: vec![video.len()],
        });
    }
    let mut groups: Vec<usize> = video.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let inv = T::one() / T::from_usize(groups.len().max(1)).unwrap();
    let mut grad = vec![T::zero(); n * m];
    let mut total = T::zero();
    for g in groups {
        let rows: Vec<usize> = (0..n).filter(|&i| video[i] == g).collect();
        let sub: Vec<T> = rows
            .iter()
            .flat_map(|&i| s.data()[i * m..(i + 1) * m].iter().copied())
            .collect();
        let sub_t: Vec<usize> = rows.iter().map(|&i| t[i]).collect();
        let lg = transrank_loss(&Tensor::new(&[rows.len(), m], sub)?, &sub_t, margin)?;
        total = total + lg.value * inv;
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..m {
                grad[i * m + c] = lg.grad.data()[r * m + c] * inv;
            }
        }
    }
    Ok(LossGrad {
        value: total,
        grad: Tensor::new(s.shape(), grad)?,
    })
}

/// Mean softmax cross-entropy of row `i` against column `t_i`.
pub fn transcls_loss<T: Scalar>(s: &Tensor<T>, t: &[usize]) -> Result<LossGrad<T>> {
    let (n, m) = check_scores("transcls_loss", s, t)?;
    if n == 0 {
        return Err(Error::invalid("transcls_loss", "empty score matrix"));
    }
    let inv = T::one() / T::from_usize(n).unwrap();
    let mut grad = vec![T::zero(); n * m];
    let mut total = T::zero();
    for (i, row) in s.data().chunks(m).enumerate() {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        total = total + (lse - row[t[i]]);
        for c in 0..m {
            let p = (row[c] - lse).exp();
            let target = if c == t[i] { T::one() } else { T::zero() };
            grad[i * m + c] = (p - target) * inv;
        }
    }
    Ok(LossGrad {
        value: total * inv,
        grad: Tensor::new(s.shape(), grad)?,
    })
}

/// Spatial ranking loss on predicted aspect scores `pred` against true
/// aspect ratios `ratio`: for every pair with `ratio_i < ratio_j`, `pred_j`
/// must exceed `pred_i` by `margin`. Tied ratios add no term but still count
/// in the `N(N-1)/2` normaliser.
pub fn spatial_rank_loss<T: Scalar>(pred: &[T], ratio: &[f64], margin: f64) -> Result<LossGrad<T>> {
    check_margin("spatial_rank_loss", margin)?;
    let n = pred.len();
    if ratio.len() != n {
        return Err(Error::Shape {
            op: "spatial_rank_loss",
            expected: vec![n],
            got: vec![ratio.len()],
        });
    }
    if n < 2 {
        return Err(Error::invalid(
            "spatial_rank_loss",
            "needs at least two clips",
        ));
    }
    let mg = T::from_f64_lossy(margin);
    let norm = T::from_f64_lossy(2.0 / (n * (n - 1)) as f64);
    let mut grad = vec![T::zero(); n];
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            if ratio[i] < ratio[j] {
                let h = pred[i] - pred[j] + mg;
                if h > T::zero() {
                    total = total + h;
                    grad[i] = grad[i] + norm;
                    grad[j] = grad[j] - norm;
                }
            }
        }
    }
    Ok(LossGrad {
        value: total * norm,
        grad: Tensor::from_vec(grad),
    })
}

/// Four-way rotation classification (0, 90, 180, 270 degrees).
pub fn rotation_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossGrad<T>> {
    if logits.rank() != 2 || logits.shape()[1] != 4 {
        return Err(Error::Shape {
            op: "rotation_loss",
            expected: vec![labels.len(), 4],
            got: logits.shape().to_vec(),
        });
    }
    transcls_loss(logits, labels)
}

/// `temporal + sum_k weights[k] * spatial[k]`.
pub fn combined_loss(temporal: f64, spatial: &[f64], weights: &[f64]) -> Result<f64> {
    if spatial.len() != weights.len() {
        return Err(Error::invalid(
            "combined_loss",
            "one weight per spatial term required",
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "combined_loss",
            "weights must be finite and non-negative",
        ));
    }
    Ok(temporal + spatial.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>())
}

/// Correct/total counts of a pretext judgement.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, other: Tally) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn record(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }

    /// `None` when nothing was counted.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Ranking accuracy per column: for every ordered pair with `t_i != t_j`,
/// the judgement is correct when `s[i][t_i] > s[j][t_i]` (margin zero).
/// Entry `c` tallies the pairs judged in column `c`.
pub fn pair_accuracy_by_column<T: Scalar>(s: &Tensor<T>, t: &[usize]) -> Result<Vec<Tally>> {
    let (n, m) = check_scores("pair_accuracy", s, t)?;
    let sd = s.data();
    let mut out = vec![Tally::default(); m];
    for i in 0..n {
        let c = t[i];
        for j in (0..n).filter(|&j| t[j] != c) {
            out[c].record(sd[i * m + c] > sd[j * m + c]);
        }
    }
    Ok(out)
}

/// Classification accuracy per true class (arg-max of each row, first
/// maximum wins).
pub fn class_accuracy_by_column<T: Scalar>(s: &Tensor<T>, t: &[usize]) -> Result<Vec<Tally>> {
    let (_, m) = check_scores("class_accuracy", s, t)?;
    let mut out = vec![Tally::default(); m];
    for (row, &c) in s.data().chunks(m).zip(t) {
        out[c].record(argmax(row) == c);
    }
    Ok(out)
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
