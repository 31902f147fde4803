//! Criterion 2: every differentiable op and every loss against central
//! finite differences in 64-bit arithmetic.

use std::time::Instant;

use rand::Rng;
use transrank_core::losses::{
    rotation_loss, spatial_rank_loss, transcls_loss, transrank_loss, transrank_loss_batched,
    LossGrad,
};
use transrank_core::model::{EncoderConfig, HeadKind, HeadSlot, Model};
use transrank_core::numerics::gradcheck::{check_tape, max_rel_error, numeric_gradient, FD_STEP};
use transrank_core::numerics::{Conv3dGeometry, Tape, Var};
use transrank_core::rng::{stream, Purpose, StreamRng};
use transrank_core::{Result, Tensor};

use crate::Outcome;

const TOL: f64 = 1e-3;
const TRIALS: usize = 5;

fn randn(shape: &[usize], r: &mut StreamRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `v` to a scalar with fixed random weights so that every output
/// element gets a distinct upstream gradient.
fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut r = stream(seed, Purpose::Generate, &[77]);
    let w = randn(t.value(v).shape(), &mut r);
    let m = t.mul_const(v, w)?;
    t.sum(m)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One randomized instance of an op: inputs and the scalar it builds.
fn op_case(name: &str, r: &mut StreamRng, seed: u64) -> (Vec<Tensor<f64>>, Build) {
    let d = |r: &mut StreamRng, lo: usize, hi: usize| r.random_range(lo..=hi);
    match name {
        "matmul" => {
            let (a, b, c) = (d(r, 1, 5), d(r, 1, 5), d(r, 1, 5));
            (
                vec![randn(&[a, b], r), randn(&[b, c], r)],
                Box::new(move |t, v| {
                    let p = t.matmul(v[0], v[1])?;
                    weighted_sum(t, p, seed)
                }),
            )
        }
        "conv3d" => {
            let c = d(r, 1, 2);
            let o = d(r, 1, 3);
            let k = [d(r, 1, 3), d(r, 1, 3), d(r, 1, 3)];
            let stride = [d(r, 1, 2), d(r, 1, 2), d(r, 1, 2)];
            let pad = [d(r, 0, 1), d(r, 0, 1), d(r, 0, 1)];
            let size = [d(r, 3, 5), d(r, 3, 5), d(r, 3, 5)];
            (
                vec![
                    randn(&[c, size[0], size[1], size[2]], r),
                    randn(&[o, c, k[0], k[1], k[2]], r),
                ],
                Box::new(move |t, v| {
                    let y = t.conv3d(v[0], v[1], Conv3dGeometry::new(stride, pad))?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "add_channel_bias" => {
            let c = d(r, 1, 4);
            (
                vec![
                    randn(&[c, d(r, 1, 3), d(r, 1, 3), d(r, 1, 3)], r),
                    randn(&[c], r),
                ],
                Box::new(move |t, v| {
                    let y = t.add_channel_bias(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "add_row_bias" => {
            let (n, m) = (d(r, 1, 5), d(r, 1, 5));
            (
                vec![randn(&[n, m], r), randn(&[m], r)],
                Box::new(move |t, v| {
                    let y = t.add_row_bias(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "relu" => (
            vec![randn(&[d(r, 2, 6), d(r, 2, 6)], r)],
            Box::new(move |t, v| {
                let y = t.relu(v[0])?;
                weighted_sum(t, y, seed)
            }),
        ),
        "scale" => {
            let c = r.random_range(-2.0..2.0);
            (
                vec![randn(&[d(r, 1, 8)], r)],
                Box::new(move |t, v| {
                    let y = t.scale(v[0], c)?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "add" => {
            let shape = [d(r, 1, 4), d(r, 1, 4)];
            (
                vec![randn(&shape, r), randn(&shape, r)],
                Box::new(move |t, v| {
                    let y = t.add(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "mul_const" => {
            let shape = [d(r, 1, 4), d(r, 1, 4)];
            let mask = randn(&shape, r);
            (
                vec![randn(&shape, r)],
                Box::new(move |t, v| {
                    let y = t.mul_const(v[0], mask.clone())?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "global_avg_pool" | "spatial_avg_pool" => {
            let global = name == "global_avg_pool";
            (
                vec![randn(&[d(r, 1, 3), d(r, 1, 3), d(r, 1, 4), d(r, 1, 4)], r)],
                Box::new(move |t, v| {
                    let y = if global {
                        t.global_avg_pool(v[0])?
                    } else {
                        t.spatial_avg_pool(v[0])?
                    };
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "stack" | "concat" => {
            let stack = name == "stack";
            let parts = d(r, 1, 4);
            let tail = d(r, 1, 4);
            let inputs = (0..parts)
                .map(|_| {
                    if stack {
                        randn(&[tail], r)
                    } else {
                        randn(&[d(r, 1, 3), tail], r)
                    }
                })
                .collect();
            (
                inputs,
                Box::new(move |t, v| {
                    let y = if stack { t.stack(v)? } else { t.concat(v)? };
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "reshape" => {
            let (a, b) = (d(r, 1, 4), d(r, 1, 4));
            (
                vec![randn(&[a, b], r)],
                Box::new(move |t, v| {
                    let y = t.reshape(v[0], &[b, a])?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        "sum" => (
            vec![randn(&[d(r, 1, 4), d(r, 1, 4)], r)],
            Box::new(|t, v| t.sum(v[0])),
        ),
        "custom_scalar" => {
            // Composition of a custom loss node with ordinary ops: the
            // pretext wiring used by training.
            let (n, m) = (d(r, 2, 4), d(r, 2, 4));
            let dim = d(r, 1, 4);
            let tv: Vec<usize> = (0..n).map(|i| i % m).collect();
            (
                vec![randn(&[n, dim], r), randn(&[dim, m], r)],
                Box::new(move |t, v| {
                    let s = t.matmul(v[0], v[1])?;
                    let lg = transcls_loss(t.value(s), &tv)?;
                    t.custom_scalar(s, lg.value, lg.grad)
                }),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

const OPS: [&str; 15] = [
    "matmul",
    "conv3d",
    "add_channel_bias",
    "add_row_bias",
    "relu",
    "scale",
    "add",
    "mul_const",
    "global_avg_pool",
    "spatial_avg_pool",
    "stack",
    "concat",
    "reshape",
    "sum",
    "custom_scalar",
];

fn check_loss(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Result<LossGrad<f64>>) -> Result<f64> {
    let analytic = f(x)?.grad;
    let numeric = numeric_gradient(x, FD_STEP, |p| Ok(f(p)?.value))?;
    max_rel_error(&analytic, &numeric)
}

fn loss_errors(r: &mut StreamRng) -> Result<Vec<(&'static str, f64)>> {
    let mut worst = vec![
        ("transrank_loss", 0.0f64),
        ("transrank_loss_batched", 0.0),
        ("transcls_loss", 0.0),
        ("spatial_rank_loss", 0.0),
        ("rotation_loss", 0.0),
        ("combined_loss", 0.0),
    ];
    for _ in 0..TRIALS * 4 {
        let (n, m) = (r.random_range(2..=6), r.random_range(2..=5));
        let t: Vec<usize> = (0..n).map(|i| (i + r.random_range(0..m)) % m).collect();
        let t: Vec<usize> = if t.iter().all(|&x| x == t[0]) {
            (0..n).map(|i| i % m).collect()
        } else {
            t
        };
        let s = randn(&[n, m], r);
        let margin = r.random_range(0.0..1.0);
        worst[0].1 = worst[0]
            .1
            .max(check_loss(&s, |x| transrank_loss(x, &t, margin))?);
        // Two videos of at least two clips each, both with mixed assignments.
        let nb = r.random_range(4..=7);
        let split = r.random_range(2..=nb - 2);
        let video: Vec<usize> = (0..nb).map(|i| usize::from(i >= split)).collect();
        let bt: Vec<usize> = (0..nb).map(|i| usize::from(i != 0 && i != split)).collect();
        let sb = randn(&[nb, m], r);
        worst[1].1 = worst[1].1.max(check_loss(&sb, |x| {
            transrank_loss_batched(x, &bt, &video, margin)
        })?);
        worst[2].1 = worst[2].1.max(check_loss(&s, |x| transcls_loss(x, &t))?);
        let ratio: Vec<f64> = (0..n)
            .map(|_| [0.5, 1.0, 1.5, 2.0][r.random_range(0..4)])
            .collect();
        let pred = randn(&[n], r);
        worst[3].1 = worst[3].1.max(check_loss(&pred, |x| {
            let lg = spatial_rank_loss(x.data(), &ratio, margin)?;
            Ok(lg)
        })?);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let logits = randn(&[n, 4], r);
        worst[4].1 = worst[4]
            .1
            .max(check_loss(&logits, |x| rotation_loss(x, &labels))?);

        // Temporal + weighted spatial terms, differentiated through the tape.
        let (la, lr) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let (t2, ratio2, labels2) = (t.clone(), ratio.clone(), labels.clone());
        let err = check_tape(
            &[s.clone(), pred.clone(), logits.clone()],
            move |tape, v| {
                let lt = transrank_loss(tape.value(v[0]), &t2, margin)?;
                let ls = spatial_rank_loss(tape.value(v[1]).data(), &ratio2, margin)?;
                let lrot = rotation_loss(tape.value(v[2]), &labels2)?;
                let a = tape.custom_scalar(v[0], lt.value, lt.grad)?;
                let b = tape.custom_scalar(v[1], ls.value, ls.grad)?;
                let c = tape.custom_scalar(v[2], lrot.value, lrot.grad)?;
                let b = tape.scale(b, la)?;
                let c = tape.scale(c, lr)?;
                let ab = tape.add(a, b)?;
                tape.add(ab, c)
            },
        )?;
        worst[5].1 = worst[5].1.max(err);
    }
    Ok(worst)
}

/// End-to-end encoder + head + ranking loss, gradients with respect to the
/// input clips and to every parameter.
fn model_errors(r: &mut StreamRng, head: HeadKind) -> Result<(f64, f64)> {
    let cfg = EncoderConfig {
        input: [1, 4, 8, 8],
        channels: vec![2, 3],
        strides: vec![[1, 2, 2], [2, 2, 2]],
        ..EncoderConfig::default()
    };
    let mut model = Model::<f64>::new(cfg, r)?;
    model.attach_head(HeadSlot::Temporal, head, 3, r);
    let clips: Vec<Tensor<f64>> = (0..3).map(|_| randn(&[1, 4, 8, 8], r)).collect();
    let t = [2usize, 0, 1];
    let objective = |model: &Model<f64>, tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let feats = vars
            .iter()
            .map(|&x| Ok(model.encode_var(tape, x)?.pooled))
            .collect::<Result<Vec<_>>>()?;
        let f = tape.stack(&feats)?;
        let s = model.head_var(HeadSlot::Temporal, tape, f)?;
        let lg = transrank_loss(tape.value(s), &t, 0.5)?;
        tape.custom_scalar(s, lg.value, lg.grad)
    };
    let input_err = check_tape(&clips, |tape, vars| objective(&model, tape, vars))?;

    let value = |model: &Model<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = clips
            .iter()
            .map(|c| tape.constant(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let root = objective(model, &mut tape, &vars)?;
        Ok(tape.value(root).item())
    };
    let mut tape = Tape::new();
    let vars = clips
        .iter()
        .map(|c| tape.constant(c.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = objective(&model, &mut tape, &vars)?;
    model.params.zero_grads();
    tape.backward(root)?.accumulate(&mut model.params)?;
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
    let mut param_err = 0.0f64;
    for name in names {
        let analytic = model.params.by_name(&name).unwrap().grad.clone();
        let x = model.params.by_name(&name).unwrap().value.clone();
        let mut probe_model = model.clone();
        let numeric = numeric_gradient(&x, FD_STEP, |p| {
            let id = probe_model.params.id(&name).unwrap();
            probe_model.params.get_mut(id).value = p.clone();
            value(&probe_model)
        })?;
        param_err = param_err.max(max_rel_error(&analytic, &numeric)?);
    }
    Ok((input_err, param_err))
}

pub fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut r = stream(2, Purpose::Generate, &[]);
    let mut run = || -> Result<Vec<(String, f64)>> {
        let mut out = Vec::new();
        for (k, op) in OPS.iter().enumerate() {
            let mut worst = 0.0f64;
            for trial in 0..TRIALS {
                let seed = (k * 100 + trial) as u64;
                let (inputs, build) = op_case(op, &mut r, seed);
                worst = worst.max(check_tape(&inputs, build)?);
            }
            out.push((op.to_string(), worst));
        }
        for (name, err) in loss_errors(&mut r)? {
            out.push((name.to_string(), err));
        }
        for head in [HeadKind::Fc, HeadKind::Mlp] {
            let (input, param) = model_errors(&mut r, head)?;
            out.push((format!("model[{head}] wrt input"), input));
            out.push((format!("model[{head}] wrt params"), param));
        }
        Ok(out)
    };
    let rows = match run() {
        Ok(out) => out,
        Err(e) => return Outcome::new(false, format!("error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let bad: Vec<String> = rows
        .iter()
        .filter(|(_, e)| !(*e <= TOL))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let worst = rows.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let pass = bad.is_empty() && secs < 60.0;
    let detail = if bad.is_empty() {
        format!(
            "{} checks (15 ops, 6 losses, 2 end-to-end models), worst rel err {worst:.1e} (tol 1e-3), {secs:.1}s (< 60s)",
            rows.len()
        )
    } else {
        format!("over tolerance: {}; {secs:.1}s", bad.join(", "))
    };
    Outcome::new(pass, detail)
}
