//! One function per subcommand. Every command writes `config.resolved`
//! into its output directory before doing any work.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use transrank_core::eval::{
    build_feature_bank, medians_strictly_increasing, metric_csv, retrieve, speediness_csv,
    temporal_probe_order, temporal_probe_sync, ProbeConfig, PROBE_RATES,
};
use transrank_core::model::{Model, Restored};
use transrank_core::synthdata::{generate_dataset, read_dataset, write_dataset, Dataset};
use transrank_core::train::{
    column_csv, finetune, linear_eval, metrics_csv, pretrain as run_pretrain, Framework, RunConfig,
    TransferMode,
};
use transrank_core::transforms::{format_transform_list, parse_transform_list};
use walkdir::WalkDir;

use crate::svg::box_plot;
use crate::Common;

/// Clips per test video scored by the speediness command.
const SPEEDINESS_CLIPS: usize = 4;

/// Transform sets of the `paper-ablation` preset.
const ABLATION_SETS: [&str; 4] = ["1x,2x", "1x,2x,rev", "1x,2x,rev,4x", "1x,2x,rev,rev2x"];

/// A command line that is well formed for clap but unusable, such as a
/// missing `--ckpt`. Reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Configuration file plus command-line overrides, validated.
fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(fw) = c.framework {
        cfg.pretrain.framework = fw;
    }
    if let Some(head) = c.head {
        cfg.pretrain.head = head;
    }
    if let Some(list) = &c.transforms {
        let base = cfg.pretrain.transforms[0].base_interval;
        cfg.pretrain.transforms = parse_transform_list(list)
            .map_err(|e| usage(format!("--transforms: {e}")))?
            .into_iter()
            .map(|t| t.with_base_interval(base))
            .collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("config.resolved"), &cfg.resolved())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dataset(c: &Common, cfg: &RunConfig) -> Result<Dataset> {
    match &c.data {
        Some(dir) => Ok(read_dataset(dir)?),
        None => {
            let d = &cfg.data;
            Ok(generate_dataset(
                d.seed,
                d.train_videos,
                d.test_videos,
                &d.generator,
            ))
        }
    }
}

fn load_checkpoint(c: &Common, cfg: &RunConfig) -> Result<Restored> {
    let path = c.ckpt.as_ref().ok_or_else(|| usage("--ckpt is required"))?;
    let restored = Model::load(path)?;
    if restored.config_digest != cfg.digest() {
        warn!(
            "{} was written under a different configuration",
            path.display()
        );
    }
    Ok(restored)
}

pub fn gen_data(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&c.out, &cfg)?;
    let ds = dataset(
        &Common {
            data: None,
            ..c.clone()
        },
        &cfg,
    )?;
    let (train, test) = write_dataset(&ds, &c.out)?;
    info!(
        "wrote {} train and {} test videos",
        train.records.len(),
        test.records.len()
    );
    Ok(())
}

struct PretrainOutcome {
    final_loss: f64,
    final_acc: f64,
    r1: f64,
    r5: f64,
    r10: f64,
}

fn pretrain_into(
    out: &Path,
    cfg: &RunConfig,
    ds: &Dataset,
    with_retrieval: bool,
) -> Result<PretrainOutcome> {
    prepare_out(out, cfg)?;
    let p = run_pretrain(&ds.train, &cfg.pretrain)?;
    write(&out.join("metrics.csv"), &metrics_csv(&p.history))?;
    write(
        &out.join("columns.csv"),
        &column_csv(&p.history, &cfg.pretrain),
    )?;
    p.checkpoint(cfg.digest())
        .save(&out.join("checkpoint.trkc"))?;
    let last = p.history.last().expect("at least one epoch");
    let mut outcome = PretrainOutcome {
        final_loss: last.loss,
        final_acc: last.pretext_acc,
        r1: f64::NAN,
        r5: f64::NAN,
        r10: f64::NAN,
    };
    if with_retrieval {
        let bank = build_feature_bank(&p.model, &ds.train, &ds.test, cfg.transfer.seed)?;
        let r = retrieve(&bank)?;
        write(&out.join("retrieval.csv"), &metric_csv(&r.rows()))?;
        (outcome.r1, outcome.r5, outcome.r10) = (r.r1, r.r5, r.r10);
    }
    Ok(outcome)
}

pub fn pretrain(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let ds = dataset(c, &cfg)?;
    let o = pretrain_into(&c.out, &cfg, &ds, false)?;
    info!(
        "final loss {:.4}, pretext accuracy {:.3}",
        o.final_loss, o.final_acc
    );
    Ok(())
}

/// Both frameworks on each set of [`ABLATION_SETS`], one subdirectory per
/// run, and a combined `ablation.csv`.
pub fn paper_ablation(c: &Common) -> Result<()> {
    if c.transforms.is_some() || c.framework.is_some() {
        return Err(usage(
            "--preset paper-ablation sets --transforms and --framework itself",
        ));
    }
    let base = load_config(c)?;
    prepare_out(&c.out, &base)?;
    let ds = dataset(c, &base)?;
    let mut table =
        String::from("transforms,framework,head,final_loss,final_pretext_acc,r1,r5,r10\n");
    for set in ABLATION_SETS {
        for fw in [Framework::Rank, Framework::Cls] {
            let mut cfg = base.clone();
            let b = cfg.pretrain.transforms[0].base_interval;
            cfg.pretrain.transforms = parse_transform_list(set)?
                .into_iter()
                .map(|t| t.with_base_interval(b))
                .collect();
            cfg.pretrain.framework = fw;
            let label = set.replace(',', "+");
            info!("paper-ablation: {label} {fw}");
            let o = pretrain_into(&c.out.join(format!("{label}-{fw}")), &cfg, &ds, true)?;
            table.push_str(&format!(
                "{label},{fw},{},{},{},{},{},{}\n",
                cfg.pretrain.head, o.final_loss, o.final_acc, o.r1, o.r5, o.r10
            ));
        }
    }
    write(&c.out.join("ablation.csv"), &table)
}

pub fn transfer(c: &Common, mode: TransferMode) -> Result<()> {
    let mut cfg = load_config(c)?;
    let restored = load_checkpoint(c, &cfg)?;
    cfg.transfer.mode = mode;
    prepare_out(&c.out, &cfg)?;
    let ds = dataset(c, &cfg)?;
    let report = match mode {
        TransferMode::Linear => linear_eval(&restored.model, &ds, &cfg.transfer)?,
        TransferMode::Finetune => finetune(&restored.model, &ds, &cfg.transfer)?,
    };
    let best = report.best();
    info!(
        "{mode}: best test accuracy {:.3} at lr {}",
        best.test_acc, best.lr
    );
    write(
        &c.out.join(format!("{mode}.csv")),
        &metric_csv(&report.rows()),
    )
}

pub fn eval_retrieval(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&c.out, &cfg)?;
    let restored = load_checkpoint(c, &cfg)?;
    let ds = dataset(c, &cfg)?;
    let bank = build_feature_bank(&restored.model, &ds.train, &ds.test, cfg.transfer.seed)?;
    let r = retrieve(&bank)?;
    info!(
        "retrieval: R@1 {:.3}, R@5 {:.3}, R@10 {:.3}",
        r.r1, r.r5, r.r10
    );
    write(&c.out.join("retrieval.csv"), &metric_csv(&r.rows()))
}

pub fn speediness(c: &Common, svg: bool) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&c.out, &cfg)?;
    let restored = load_checkpoint(c, &cfg)?;
    let ds = dataset(c, &cfg)?;
    let (_, summary) = transrank_core::eval::speediness(
        &restored.model,
        &cfg.pretrain.transforms,
        &ds.test,
        &PROBE_RATES,
        SPEEDINESS_CLIPS,
        cfg.transfer.seed,
    )
    .with_context(|| {
        format!(
            "pretraining set {}",
            format_transform_list(&cfg.pretrain.transforms)
        )
    })?;
    let medians: Vec<String> = summary
        .iter()
        .map(|s| format!("{}x: {:.3}", s.rate, s.median()))
        .collect();
    info!(
        "speediness medians {}; strictly increasing: {}",
        medians.join(", "),
        medians_strictly_increasing(&summary)
    );
    write(&c.out.join("speediness.csv"), &speediness_csv(&summary))?;
    if svg {
        write(&c.out.join("speediness.svg"), &box_plot(&summary))?;
    }
    Ok(())
}

pub fn eval_temporal(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    prepare_out(&c.out, &cfg)?;
    let restored = load_checkpoint(c, &cfg)?;
    let ds = dataset(c, &cfg)?;
    let pcfg = ProbeConfig {
        seed: cfg.transfer.seed,
        ..ProbeConfig::default()
    };
    let sync = temporal_probe_sync(&restored.model, &ds.train, &ds.test, &pcfg)?;
    let order = temporal_probe_order(&restored.model, &ds.train, &ds.test, &pcfg)?;
    info!(
        "sync test accuracy {:.3}, order test accuracy {:.3}",
        sync.test_acc, order.test_acc
    );
    let rows = vec![
        ("sync_train_acc".to_string(), sync.train_acc),
        ("sync_test_acc".to_string(), sync.test_acc),
        ("order_train_acc".to_string(), order.train_acc),
        ("order_test_acc".to_string(), order.test_acc),
    ];
    write(&c.out.join("temporal.csv"), &metric_csv(&rows))
}

/// Rows `source,metric,value` gathered from one CSV file, if it is a known
/// layout.
fn report_rows(path: &Path, source: &str, text: &str) -> Result<Vec<String>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let rows: Vec<Vec<&str>> = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    let malformed = || anyhow::anyhow!("{}: malformed row", path.display());
    let mut out = Vec::new();
    match header {
        "metric,value" => {
            for r in &rows {
                let [k, v] = r.as_slice() else {
                    return Err(malformed());
                };
                out.push(format!("{source},{k},{v}"));
            }
        }
        "epoch,loss,pretext_acc,lr" => {
            if let Some(r) = rows.last() {
                let [epoch, loss, acc, _] = r.as_slice() else {
                    return Err(malformed());
                };
                out.push(format!(
                    "{source},epochs,{}",
                    epoch.parse::<usize>().map_err(|_| malformed())? + 1
                ));
                out.push(format!("{source},final_loss,{loss}"));
                out.push(format!("{source},final_pretext_acc,{acc}"));
            }
        }
        "rate,q05,q25,q50,q75,q95" => {
            for r in &rows {
                let [rate, _, _, median, _, _] = r.as_slice() else {
                    return Err(malformed());
                };
                out.push(format!("{source},median@{rate}x,{median}"));
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Reads every CSV below `--out` (sorted by path) and writes
/// `report.csv`; nothing is recomputed.
pub fn report(c: &Common) -> Result<()> {
    let mut out = String::from("source,metric,value\n");
    let report_path: PathBuf = c.out.join("report.csv");
    for entry in WalkDir::new(&c.out).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", c.out.display()))?;
        let path = entry.path();
        if !entry.file_type().is_file()
            || path.extension().is_none_or(|e| e != "csv")
            || path == report_path
        {
            continue;
        }
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let source = path
            .strip_prefix(&c.out)
            .unwrap_or(path)
            .display()
            .to_string();
        for row in report_rows(path, &source, &text)? {
            out.push_str(&row);
            out.push('\n');
        }
    }
    print!("{out}");
    write(&report_path, &out)
}
