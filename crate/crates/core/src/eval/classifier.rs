//! Small classifiers trained on frozen feature vectors: the affine classifier
//! of linear evaluation and the one-hidden-layer perceptron of the temporal
//! probes.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::losses::{argmax, transcls_loss};
use crate::model::{Head, HeadKind};
use crate::numerics::{lr_multistep, ParamStore, Sgd, SgdConfig, Tape, Tensor, DEFAULT_MILESTONES};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// `None` for an affine classifier, otherwise the hidden width.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            epochs: 50,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            milestones: DEFAULT_MILESTONES.to_vec(),
            decay: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierScore {
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Per-dimension mean and inverse standard deviation of the training set;
/// constant dimensions keep unit scale.
fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let inv = var
        .into_iter()
        .map(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
        .collect();
    (mean, inv)
}

fn apply(x: &[Vec<f64>], mean: &[f64], inv: &[f64]) -> Vec<f64> {
    x.iter()
        .flat_map(|row| row.iter().zip(mean).zip(inv).map(|((v, m), s)| (v - m) * s))
        .collect()
}

fn accuracy(head: &Head, store: &ParamStore<f64>, x: &[f64], y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let f = tape.constant(Tensor::new(&[y.len(), head.input], x.to_vec())?)?;
    let s = head.forward(store, &mut tape, f)?;
    let correct = tape
        .value(s)
        .data()
        .chunks(head.output)
        .zip(y)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Trains a classifier on standardized `train` features and scores both
/// splits. Features of both splits are standardized with training
/// statistics.
pub fn fit_classifier(
    train: (&[Vec<f64>], &[usize]),
    test: (&[Vec<f64>], &[usize]),
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<ClassifierScore> {
    let (xtr, ytr) = train;
    let (xte, yte) = test;
    if xtr.is_empty() || xtr.len() != ytr.len() || xte.len() != yte.len() {
        return Err(Error::invalid(
            "classifier",
            "need matching, non-empty training features and labels",
        ));
    }
    if let Some(&bad) = ytr.iter().chain(yte).find(|&&c| c >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: classes,
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("classifier", "batch size must be positive"));
    }
    let d = xtr[0].len();
    if xtr.iter().chain(xte).any(|r| r.len() != d) {
        return Err(Error::invalid(
            "classifier",
            "feature vectors differ in length",
        ));
    }
    let (mean, inv) = standardizer(xtr);
    let xtr_s = apply(xtr, &mean, &inv);
    let xte_s = apply(xte, &mean, &inv);

    let mut head = Head::new("clf", HeadKind::Fc, d, classes);
    if let Some(h) = cfg.hidden {
        head.kind = HeadKind::Mlp;
        head.hidden = h;
    }
    let mut store = ParamStore::<f64>::new();
    head.init_params(&mut store, &mut stream(cfg.seed, Purpose::Probe, &[]));
    let mut sgd = Sgd::new(SgdConfig {
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    });
    let mut order: Vec<usize> = (0..ytr.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_multistep(cfg.lr, epoch, cfg.epochs, &cfg.milestones, cfg.decay);
        order.shuffle(&mut stream(cfg.seed, Purpose::Probe, &[epoch as u64 + 1]));
        for batch in order.chunks(cfg.batch_size) {
            let xb: Vec<f64> = batch
                .iter()
                .flat_map(|&i| xtr_s[i * d..(i + 1) * d].iter().copied())
                .collect();
            let yb: Vec<usize> = batch.iter().map(|&i| ytr[i]).collect();
            let mut tape = Tape::new();
            let f = tape.constant(Tensor::new(&[batch.len(), d], xb)?)?;
            let s = head.forward(&store, &mut tape, f)?;
            let lg = transcls_loss(tape.value(s), &yb)?;
            let root = tape.custom_scalar(s, lg.value, lg.grad)?;
            tape.backward(root)?.accumulate(&mut store)?;
            sgd.step(&mut store, lr)?;
        }
    }
    Ok(ClassifierScore {
        train_acc: accuracy(&head, &store, &xtr_s, ytr)?,
        test_acc: accuracy(&head, &store, &xte_s, yte)?,
    })
}
