//! Criteria 5 to 9 and the training checks T1 to T3: desk-scale pretraining
//! experiments over the seed grid {1, 2, 3}.
//!
//! Every (seed, run) pair is trained once and shared between criteria.
//! Each seed uses its own dataset of 200 training and 400 test videos;
//! retrieval uses the training split as gallery and the test split as
//! queries.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use transrank_core::eval::{
    build_feature_bank, medians_strictly_increasing, retrieve, speediness, temporal_probe_order,
    temporal_probe_sync, Featurizer, ProbeConfig, RandomFeatures, PROBE_RATES, SYNC_CLASSES,
};
use transrank_core::model::{HeadKind, Model};
use transrank_core::synthdata::{generate_dataset, Dataset, GeneratorParams};
use transrank_core::train::{
    finetune, init_model, linear_eval, pretext_accuracy, pretrain, EpochRecord, Framework,
    PretrainConfig, TransferConfig, TransferMode,
};
use transrank_core::transforms::parse_transform_list;
use transrank_core::Tensor;

use crate::{fmt_secs, Outcome};

const SEEDS: [u64; 3] = [1, 2, 3];
const TRAIN_VIDEOS: usize = 200;
const TEST_VIDEOS: usize = 400;
const EPOCHS: usize = 100;
/// Held-out videos scored for the pretext accuracy before and after training.
const HELD_OUT: usize = 100;
/// Clips per test video in the speediness experiment.
const SPEEDINESS_CLIPS: usize = 4;
/// Tolerance band of the retrieval comparisons.
const BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Run {
    SpeedRank,
    SpeedCls,
    RevRank,
    RevCls,
    RevMlp,
    Shuffle,
}

impl Run {
    fn setup(self) -> (&'static str, Framework, HeadKind) {
        match self {
            Run::SpeedRank => ("1x,2x", Framework::Rank, HeadKind::Fc),
            Run::SpeedCls => ("1x,2x", Framework::Cls, HeadKind::Fc),
            Run::RevRank => ("1x,2x,rev", Framework::Rank, HeadKind::Fc),
            Run::RevCls => ("1x,2x,rev", Framework::Cls, HeadKind::Fc),
            Run::RevMlp => ("1x,2x,rev", Framework::Rank, HeadKind::Mlp),
            Run::Shuffle => ("1x,2x,rev,shuffle", Framework::Rank, HeadKind::Fc),
        }
    }

    fn config(self, seed: u64) -> PretrainConfig {
        let (set, framework, head) = self.setup();
        PretrainConfig {
            seed,
            transforms: parse_transform_list(set).unwrap(),
            framework,
            head,
            epochs: EPOCHS,
            ..PretrainConfig::default()
        }
    }

    fn label(self) -> String {
        let (set, fw, head) = self.setup();
        format!("{{{set}}} {fw} {head}")
    }
}

struct RunResult {
    cfg: PretrainConfig,
    history: Vec<EpochRecord>,
    model: Model<f32>,
    r1: f64,
    held_out_before: f64,
    held_out_after: f64,
}

fn dataset(seed: u64) -> Arc<Dataset> {
    static DATA: OnceLock<Mutex<HashMap<u64, Arc<Dataset>>>> = OnceLock::new();
    let cache = DATA.get_or_init(Default::default);
    let mut map = cache.lock().unwrap();
    map.entry(seed)
        .or_insert_with(|| {
            Arc::new(generate_dataset(
                seed,
                TRAIN_VIDEOS,
                TEST_VIDEOS,
                &GeneratorParams::default(),
            ))
        })
        .clone()
}

fn run(seed: u64, which: Run) -> Arc<RunResult> {
    static RUNS: OnceLock<Mutex<HashMap<(u64, Run), Arc<RunResult>>>> = OnceLock::new();
    let cache = RUNS.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap().get(&(seed, which)) {
        return r.clone();
    }
    let t = Instant::now();
    let ds = dataset(seed);
    let cfg = which.config(seed);
    let held_out = &ds.test[..HELD_OUT];
    let untrained = init_model(&cfg, 1).unwrap();
    let held_out_before = pretext_accuracy(&untrained, &cfg, held_out).unwrap().0;
    let p = pretrain(&ds.train, &cfg).unwrap();
    let held_out_after = pretext_accuracy(&p.model, &cfg, held_out).unwrap().0;
    let bank = build_feature_bank(&p.model, &ds.train, &ds.test, seed).unwrap();
    let r1 = retrieve(&bank).unwrap().r1;
    eprintln!(
        "    seed {seed} {}: R@1 {r1:.4}, held-out pretext acc {held_out_before:.3} -> {held_out_after:.3} [{}]",
        which.label(),
        fmt_secs(t.elapsed())
    );
    let result = Arc::new(RunResult {
        cfg,
        history: p.history,
        model: p.model,
        r1,
        held_out_before,
        held_out_after,
    });
    cache.lock().unwrap().insert((seed, which), result.clone());
    result
}

fn mean_r1(which: Run) -> (f64, Vec<f64>) {
    let r: Vec<f64> = SEEDS.iter().map(|&s| run(s, which).r1).collect();
    (r.iter().sum::<f64>() / r.len() as f64, r)
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join("/")
}

pub fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut increasing = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let ds = dataset(seed);
        for which in [Run::SpeedRank, Run::SpeedCls] {
            let r = run(seed, which);
            let (_, summary) = speediness(
                &r.model,
                &r.cfg.transforms,
                &ds.test,
                &PROBE_RATES,
                SPEEDINESS_CLIPS,
                seed,
            )
            .unwrap();
            let ok = medians_strictly_increasing(&summary);
            if which == Run::SpeedRank && ok {
                increasing += 1;
            }
            let medians: Vec<f64> = summary.iter().map(|s| s.median()).collect();
            lines.push(format!(
                "seed {seed} {} medians(0.5x,1x,2x,4x) {} {}",
                r.cfg.framework,
                fmt_list(&medians),
                if ok { "increasing" } else { "not increasing" }
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        increasing >= 2 && secs < 1800.0,
        format!(
            "TransRank increasing in {increasing}/3 seeds (need 2), TransCls recorded only; {}; {secs:.0}s (< 1800s)",
            lines.join("; ")
        ),
    )
}

pub fn criterion_6() -> Outcome {
    let (rank, rr) = mean_r1(Run::RevRank);
    let (cls, cr) = mean_r1(Run::RevCls);
    let (base, br) = mean_r1(Run::SpeedRank);
    let a = rank >= cls - BAND;
    let b = rank >= base - BAND;
    Outcome::new(
        a && b,
        format!(
            "mean R@1 {{1x,2x,rev}} rank {rank:.4} ({}) vs cls {cls:.4} ({}): {}; rank {{1x,2x,rev}} {rank:.4} vs {{1x,2x}} {base:.4} ({}): {}",
            fmt_list(&rr),
            fmt_list(&cr),
            if a { "holds" } else { "fails" },
            fmt_list(&br),
            if b { "holds" } else { "fails" },
        ),
    )
}

pub fn criterion_7() -> Outcome {
    let mut per_seed = Vec::new();
    let mut saturated = 0;
    for seed in SEEDS {
        let r = run(seed, Run::Shuffle);
        let col = |name: &str| {
            r.cfg
                .transforms
                .iter()
                .position(|t| t.label() == name)
                .unwrap()
        };
        let (c1, c2, cs) = (col("1x"), col("2x"), col("shuffle"));
        let hit = r.history.iter().take(10).find(|h| h.column_acc[cs] > 0.95);
        match hit {
            Some(h) if h.column_acc[c1] < 0.95 && h.column_acc[c2] < 0.95 => {
                saturated += 1;
                per_seed.push(format!(
                    "seed {seed}: shuffle {:.3} at epoch {} with 1x {:.3}, 2x {:.3}",
                    h.column_acc[cs],
                    h.epoch + 1,
                    h.column_acc[c1],
                    h.column_acc[c2]
                ));
            }
            Some(h) => per_seed.push(format!(
                "seed {seed}: shuffle {:.3} at epoch {} but speed columns already {:.3}/{:.3}",
                h.column_acc[cs],
                h.epoch + 1,
                h.column_acc[c1],
                h.column_acc[c2]
            )),
            None => per_seed.push(format!(
                "seed {seed}: shuffle column never above 0.95 in 10 epochs"
            )),
        }
    }
    let (shuffle, sr) = mean_r1(Run::Shuffle);
    let (base, _) = mean_r1(Run::RevRank);
    let no_gain = shuffle <= base + BAND;
    Outcome::new(
        saturated == SEEDS.len() && no_gain,
        format!(
            "{}; mean R@1 with shuffle {shuffle:.4} ({}) vs {{1x,2x,rev}} {base:.4}: gain {:+.4} (must be <= +0.01)",
            per_seed.join("; "),
            fmt_list(&sr),
            shuffle - base
        ),
    )
}

pub fn criterion_8() -> Outcome {
    let (mlp, mr) = mean_r1(Run::RevMlp);
    let (fc, fr) = mean_r1(Run::RevRank);
    Outcome::new(
        mlp - fc > 0.0,
        format!(
            "mean R@1 MLP {mlp:.4} ({}) vs FC {fc:.4} ({}): margin {:+.4} (must be > 0)",
            fmt_list(&mr),
            fmt_list(&fr),
            mlp - fc
        ),
    )
}

const CHANCE_SEED: u64 = 9;
const CHANCE_TRAIN: usize = 400;
const CHANCE_TEST: usize = 1000;

fn chance_scores(f: &dyn Featurizer, ds: &Dataset) -> (f64, f64, f64) {
    let bank = build_feature_bank(f, &ds.train, &ds.test, CHANCE_SEED).unwrap();
    let r1 = retrieve(&bank).unwrap().r1;
    let pcfg = ProbeConfig {
        seed: CHANCE_SEED,
        ..ProbeConfig::default()
    };
    let sync = temporal_probe_sync(f, &ds.train, &ds.test, &pcfg)
        .unwrap()
        .test_acc;
    let order = temporal_probe_order(f, &ds.train, &ds.test, &pcfg)
        .unwrap()
        .test_acc;
    (r1, sync, order)
}

pub fn criterion_9() -> Outcome {
    let ds = generate_dataset(
        CHANCE_SEED,
        CHANCE_TRAIN,
        CHANCE_TEST,
        &GeneratorParams::default(),
    );
    let cfg = PretrainConfig {
        seed: CHANCE_SEED,
        ..PretrainConfig::default()
    };
    let untrained = init_model(&cfg, 1).unwrap();
    let blank = Tensor::zeros(&untrained.encoder.input);
    let random = RandomFeatures {
        seed: CHANCE_SEED,
        input: untrained.encoder.input,
        dim: untrained.pooled(&blank, 0).unwrap().len(),
        probe_dim: untrained.probe(&blank, 0).unwrap().len(),
    };
    let (r1, sync, order) = chance_scores(&random, &ds);
    let chance_sync = 1.0 / SYNC_CLASSES as f64;
    let ok = (r1 - 0.25).abs() <= 0.05
        && (sync - chance_sync).abs() <= 0.03
        && (order - 0.5).abs() <= 0.03;
    let (ur1, usync, uorder) = chance_scores(&untrained, &ds);
    Outcome::new(
        ok,
        format!(
            "random features: R@1 {r1:.4} (0.25 +- 0.05), Sync {sync:.4} ({chance_sync:.4} +- 0.03), Order {order:.4} (0.5 +- 0.03); untrained encoder (info): R@1 {ur1:.4}, Sync {usync:.4}, Order {uorder:.4}"
        ),
    )
}

pub fn trainability() -> Outcome {
    let mut best = Vec::new();
    for seed in SEEDS {
        let r = run(seed, Run::SpeedRank);
        best.push(
            r.history
                .iter()
                .take(30)
                .map(|h| h.pretext_acc)
                .fold(0.0, f64::max),
        );
    }
    Outcome::new(
        best.iter().all(|&b| b > 0.9),
        format!(
            "best pretext accuracy in the first 30 epochs per seed: {}",
            fmt_list(&best)
        ),
    )
}

pub fn held_out_gain() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for which in [Run::SpeedRank, Run::RevRank] {
        for seed in SEEDS {
            let r = run(seed, which);
            ok &= r.held_out_after >= r.held_out_before + 0.10;
            parts.push(format!(
                "{} seed {seed}: {:.3} -> {:.3}",
                which.label(),
                r.held_out_before,
                r.held_out_after
            ));
        }
    }
    Outcome::new(ok, parts.join("; "))
}

pub fn finetune_lr() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let ds = dataset(seed);
        let r = run(seed, Run::RevRank);
        let cfg = TransferConfig {
            seed,
            mode: TransferMode::Finetune,
            lr_grid: vec![0.01, 0.16],
            ..TransferConfig::default()
        };
        let report = finetune(&r.model, &ds, &cfg).unwrap();
        let (low, high) = (report.runs[0].test_acc, report.runs[1].test_acc);
        if high >= low {
            wins += 1;
        }
        let lin = linear_eval(
            &r.model,
            &ds,
            &TransferConfig {
                mode: TransferMode::Linear,
                ..cfg.clone()
            },
        )
        .unwrap()
        .best()
        .test_acc;
        let fresh = init_model(&r.cfg, 1).unwrap();
        let lin0 = linear_eval(
            &fresh,
            &ds,
            &TransferConfig {
                mode: TransferMode::Linear,
                ..cfg
            },
        )
        .unwrap()
        .best()
        .test_acc;
        parts.push(format!(
            "seed {seed}: finetune lr0.16 {high:.3} vs lr0.01 {low:.3}; linear eval pretrained {lin:.3} vs untrained {lin0:.3} (info)"
        ));
    }
    Outcome::new(
        wins >= 2,
        format!("lr 0.16 >= 0.01 in {wins}/3 seeds; {}", parts.join("; ")),
    )
}
