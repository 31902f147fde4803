//! Criteria 1 and 3: losses against brute-force enumeration, and the loss
//! invariances.

use std::time::Instant;

use rand::Rng;
use transrank_core::losses::{
    spatial_rank_loss, transcls_loss, transrank_loss, transrank_loss_batched, DEFAULT_MARGIN,
};
use transrank_core::rng::{stream, Purpose};
use transrank_core::Tensor;

use crate::Outcome;

type Rng8 = transrank_core::rng::StreamRng;

fn rng(tag: u64) -> Rng8 {
    stream(20_240_000 + tag, Purpose::Generate, &[])
}

struct Instance {
    n: usize,
    m: usize,
    s: Vec<f64>,
    t: Vec<usize>,
    margin: f64,
}

fn instance(r: &mut Rng8, distinct: bool) -> Instance {
    let n = r.random_range(2..=6);
    let m = r.random_range(2..=5);
    let s = (0..n * m).map(|_| r.random_range(-2.0..2.0)).collect();
    let margin = if r.random_bool(0.2) {
        0.0
    } else {
        r.random_range(0.0..1.5)
    };
    loop {
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
        if !distinct || t.iter().any(|&x| x != t[0]) {
            return Instance { n, m, s, t, margin };
        }
    }
}

/// Ranking loss term by term: every ordered pair whose assignments differ.
fn brute_rank(x: &Instance) -> f64 {
    let mut terms = Vec::new();
    for i in 0..x.n {
        for j in 0..x.n {
            if x.t[i] != x.t[j] {
                let col = x.t[i];
                terms.push((x.s[j * x.m + col] - x.s[i * x.m + col] + x.margin).max(0.0));
            }
        }
    }
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Classification loss with a plain softmax; scores are small enough not to overflow.
fn brute_cls(x: &Instance) -> f64 {
    let mut total = 0.0;
    for i in 0..x.n {
        let row = &x.s[i * x.m..(i + 1) * x.m];
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[x.t[i]].exp() / denom).ln();
    }
    total / x.n as f64
}

/// Spatial loss over unordered pairs, skipping ties, normalised by all pairs.
fn brute_spatial(pred: &[f64], ratio: &[f64], margin: f64) -> f64 {
    let n = pred.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (lo, hi) = match ratio[i].partial_cmp(&ratio[j]).unwrap() {
                std::cmp::Ordering::Less => (i, j),
                std::cmp::Ordering::Greater => (j, i),
                std::cmp::Ordering::Equal => continue,
            };
            total += (pred[lo] - pred[hi] + margin).max(0.0);
        }
    }
    total / (n * (n - 1) / 2) as f64
}

pub fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = [0.0f64; 3];
    const RATIOS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];
    for _ in 0..1000 {
        let x = instance(&mut r, true);
        let s = Tensor::new(&[x.n, x.m], x.s.clone()).unwrap();
        let rank = transrank_loss(&s, &x.t, x.margin).unwrap().value;
        let cls = transcls_loss(&s, &x.t).unwrap().value;
        let pred: Vec<f64> = (0..x.n).map(|i| x.s[i * x.m]).collect();
        // Drawing ratios from a small set makes ties common.
        let ratio: Vec<f64> = (0..x.n)
            .map(|_| RATIOS[r.random_range(0..RATIOS.len())])
            .collect();
        let spatial = spatial_rank_loss(&pred, &ratio, x.margin).unwrap().value;
        // Relative error with a tiny floor: exact zeros compare equal.
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        worst[0] = worst[0].max(rel(rank, brute_rank(&x)));
        worst[1] = worst[1].max(rel(cls, brute_cls(&x)));
        worst[2] = worst[2].max(rel(spatial, brute_spatial(&pred, &ratio, x.margin)));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&w| w <= 1e-6) && secs < 5.0;
    Outcome::new(
        pass,
        format!(
            "1000 instances, max rel err rank {:.1e} cls {:.1e} spatial {:.1e} (tol 1e-6), {secs:.2}s (< 5s)",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

fn loss_of(x: &Instance, s: &[f64], rank: bool) -> f64 {
    let s = Tensor::new(&[x.n, x.m], s.to_vec()).unwrap();
    if rank {
        transrank_loss(&s, &x.t, x.margin).unwrap().value
    } else {
        transcls_loss(&s, &x.t).unwrap().value
    }
}

pub fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut failures: Vec<String> = Vec::new();
    let mut row_shift_changes_rank = 0usize;
    let trials = 500;
    for trial in 0..trials {
        let x = instance(&mut r, true);
        let c = r.random_range(-3.0..3.0);

        // Column shift leaves the ranking loss unchanged.
        let col = r.random_range(0..x.m);
        let mut shifted = x.s.clone();
        for i in 0..x.n {
            shifted[i * x.m + col] += c;
        }
        if !close(loss_of(&x, &x.s, true), loss_of(&x, &shifted, true)) {
            failures.push(format!(
                "column shift changed the ranking loss (trial {trial})"
            ));
        }

        // Row shift leaves the classification loss unchanged; the ranking loss generally changes.
        let row = r.random_range(0..x.n);
        let mut shifted = x.s.clone();
        for v in &mut shifted[row * x.m..(row + 1) * x.m] {
            *v += c;
        }
        if !close(loss_of(&x, &x.s, false), loss_of(&x, &shifted, false)) {
            failures.push(format!(
                "row shift changed the classification loss (trial {trial})"
            ));
        }
        if !close(loss_of(&x, &x.s, true), loss_of(&x, &shifted, true)) {
            row_shift_changes_rank += 1;
        }

        // Joint permutation of rows and assignments.
        let mut perm: Vec<usize> = (0..x.n).collect();
        for i in (1..x.n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let ps: Vec<f64> = perm
            .iter()
            .flat_map(|&p| x.s[p * x.m..(p + 1) * x.m].to_vec())
            .collect();
        let px = Instance {
            t: perm.iter().map(|&p| x.t[p]).collect(),
            s: ps.clone(),
            ..x
        };
        for rank in [true, false] {
            if !close(loss_of(&x, &x.s, rank), loss_of(&px, &ps, rank)) {
                failures.push(format!(
                    "joint permutation changed the {} loss (trial {trial})",
                    if rank { "ranking" } else { "classification" }
                ));
            }
        }
    }
    // A row shift moves one clip's score in its own column against others
    // in the same column, so it must change the ranking loss whenever a hinge is
    // active on both sides; demand it in most random trials and in a fixed
    // case.
    let fixed = Tensor::new(&[2, 2], vec![0.3, 0.9, 0.6, 0.2]).unwrap();
    let fixed_base = transrank_loss(&fixed, &[0, 1], DEFAULT_MARGIN)
        .unwrap()
        .value;
    let fixed_shift = transrank_loss(
        &Tensor::new(&[2, 2], vec![1.3, 1.9, 0.6, 0.2]).unwrap(),
        &[0, 1],
        DEFAULT_MARGIN,
    )
    .unwrap()
    .value;
    if close(fixed_base, fixed_shift) || row_shift_changes_rank < trials / 2 {
        failures.push(format!(
            "row shift left the ranking loss unchanged too often ({row_shift_changes_rank}/{trials})"
        ));
    }

    // Spatial loss ties: no term, fixed normaliser; constant shift of predictions.
    let tie = spatial_rank_loss(&[0.9, 0.1, 0.5], &[1.0, 1.0, 1.0], 0.5).unwrap();
    if tie.value != 0.0 || tie.grad.data().iter().any(|&g| g != 0.0) {
        failures.push("all-tie spatial loss is not zero".into());
    }
    let partial = spatial_rank_loss(&[0.0, 0.0, 0.0], &[1.0, 1.0, 2.0], 0.5)
        .unwrap()
        .value;
    if !close(partial, 2.0 * 0.5 / 3.0) {
        failures.push(format!(
            "spatial loss with one tie is {partial}, expected 1/3"
        ));
    }
    for _ in 0..200 {
        let n = r.random_range(2..=6);
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let ratio: Vec<f64> = (0..n)
            .map(|_| [0.5, 1.0, 2.0][r.random_range(0..3)])
            .collect();
        let c = r.random_range(-5.0..5.0);
        let moved: Vec<f64> = pred.iter().map(|p| p + c).collect();
        let a = spatial_rank_loss(&pred, &ratio, 0.5).unwrap().value;
        let b = spatial_rank_loss(&moved, &ratio, 0.5).unwrap().value;
        if (a - b).abs() > 1e-12 {
            failures.push("constant shift changed the spatial loss".into());
            break;
        }
    }

    // The batched ranking loss is the mean of per-video losses, and perturbing one
    // video never changes another video's gradient.
    for _ in 0..200 {
        let videos = r.random_range(2..=4);
        let m = r.random_range(2..=4);
        let mut s = Vec::new();
        let mut t = Vec::new();
        let mut vid = Vec::new();
        let mut per_video = Vec::new();
        for v in 0..videos {
            let n = r.random_range(2..=4);
            let block: Vec<f64> = (0..n * m).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut tv: Vec<usize> = (0..n).map(|k| k % m).collect();
            tv.swap(0, r.random_range(0..n));
            per_video.push(
                transrank_loss(
                    &Tensor::new(&[n, m], block.clone()).unwrap(),
                    &tv,
                    DEFAULT_MARGIN,
                )
                .unwrap()
                .value,
            );
            s.extend(block);
            t.extend(tv);
            vid.extend(std::iter::repeat_n(v, n));
        }
        let rows = t.len();
        let batched = transrank_loss_batched(
            &Tensor::new(&[rows, m], s.clone()).unwrap(),
            &t,
            &vid,
            DEFAULT_MARGIN,
        )
        .unwrap();
        let mean = per_video.iter().sum::<f64>() / videos as f64;
        if !close(batched.value, mean) {
            failures.push(format!(
                "batched {} != mean of per-video {mean}",
                batched.value
            ));
            break;
        }
        let mut poked = s.clone();
        for (i, v) in poked.iter_mut().enumerate() {
            if vid[i / m] == 0 {
                *v += r.random_range(-2.0..2.0);
            }
        }
        let after = transrank_loss_batched(
            &Tensor::new(&[rows, m], poked).unwrap(),
            &t,
            &vid,
            DEFAULT_MARGIN,
        )
        .unwrap();
        let leaked = (0..rows * m)
            .any(|i| vid[i / m] != 0 && batched.grad.data()[i] != after.grad.data()[i]);
        if leaked {
            failures.push("perturbing one video changed another video's gradient".into());
            break;
        }
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!(
            "column/row shift, joint permutation, ties, locality hold; row shift changed the ranking loss in {row_shift_changes_rank}/{trials} trials (fixed case {fixed_base:.3} -> {fixed_shift:.3})"
        )
    } else {
        failures.join("; ")
    };
    Outcome::new(pass, detail)
}
