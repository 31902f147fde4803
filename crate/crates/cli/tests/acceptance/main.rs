//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,3,10` restricts the run to the listed criteria (the
//! `T*` lines belong to the experiment criteria and always run with them).

mod experiments;
mod gradients;
mod oracles;
mod repro;
mod transforms;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Result of one criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

const CRITERIA: &[(&str, &str, Check)] = &[
    ("1", "loss oracle equivalence", oracles::criterion_1),
    ("2", "gradient suite", gradients::criterion_2),
    ("3", "loss invariances", oracles::criterion_3),
    ("4", "transform correctness", transforms::criterion_4),
    ("5", "speediness generalisation", experiments::criterion_5),
    (
        "6",
        "TransRank vs TransCls and {1x,2x,rev} vs {1x,2x} retrieval",
        experiments::criterion_6,
    ),
    ("7", "shuffle negative ablation", experiments::criterion_7),
    (
        "8",
        "MLP head vs FC head retrieval",
        experiments::criterion_8,
    ),
    (
        "9",
        "random-feature chance levels",
        experiments::criterion_9,
    ),
    ("10", "CLI reproducibility", repro::criterion_10),
    (
        "T1",
        "pretext accuracy > 90% within 30 epochs on {1x,2x}",
        experiments::trainability,
    ),
    (
        "T2",
        "held-out pretext accuracy gains at least 10 points",
        experiments::held_out_gain,
    ),
    (
        "T3",
        "finetune lr 0.16 >= lr 0.01 in a seed majority",
        experiments::finetune_lr,
    ),
];

fn selected(id: &str, only: &Option<Vec<String>>) -> bool {
    match only {
        None => true,
        Some(list) => {
            let owner = match id {
                "T1" | "T2" => "5",
                "T3" => "6",
                other => other,
            };
            list.iter().any(|x| x == id || x == owner)
        }
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !selected(id, &only) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id}: {name} [{}] {}",
            fmt_secs(t.elapsed()),
            outcome.detail
        );
        if !outcome.pass {
            failed.push(*id);
        }
    }
    println!(
        "acceptance: {} of {ran} passed in {}{}",
        ran - failed.len(),
        fmt_secs(start.elapsed()),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

pub fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
