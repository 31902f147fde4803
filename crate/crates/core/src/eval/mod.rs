//! Representation-quality evaluation: retrieval, speediness generalisation
//! and the Sync and Order temporal probes.

pub mod classifier;
pub mod features;
pub mod probes;
pub mod retrieval;
pub mod speediness;

use std::fmt::Write as _;

pub use classifier::{fit_classifier, ClassifierConfig, ClassifierScore};
pub use features::{
    build_feature_bank, eval_clips, feature_set, par_map, FeatureBank, FeatureSet, Featurizer,
    RandomFeatures, EVAL_CLIPS,
};
pub use probes::{
    temporal_probe_order, temporal_probe_sync, ProbeConfig, ORDER_CLASSES, SYNC_CLASSES,
    SYNC_SHIFTS,
};
pub use retrieval::{cosine, retrieve, RetrievalReport};
pub use speediness::{
    medians_strictly_increasing, speediness, speediness_csv, RateSummary, SpeedinessRecord,
    PROBE_RATES, QUANTILES,
};

/// `metric,value` report.
pub fn metric_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}
