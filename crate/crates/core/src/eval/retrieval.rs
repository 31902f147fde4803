//! Nearest-neighbour retrieval by cosine similarity.

use log::warn;

use super::features::FeatureBank;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Test videos used as queries.
    pub queries: usize,
    /// Videos (train or test) dropped for a zero-norm feature.
    pub excluded: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (d / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// For every test video, ranks the training videos by cosine similarity
/// (ties keep training order) and checks whether a same-category video is
/// among the top `k`.
pub fn retrieve(bank: &FeatureBank) -> Result<RetrievalReport> {
    let usable = |f: &Vec<f64>| {
        let n = norm(f);
        n > 0.0 && n.is_finite()
    };
    let gallery: Vec<(Vec<f64>, usize)> = bank
        .train
        .features
        .iter()
        .zip(&bank.train.labels)
        .filter(|(f, _)| usable(f))
        .map(|(f, &l)| {
            let n = norm(f);
            (f.iter().map(|x| x / n).collect(), l)
        })
        .collect();
    let queries: Vec<(&Vec<f64>, usize)> = bank
        .test
        .features
        .iter()
        .zip(&bank.test.labels)
        .filter(|(f, _)| usable(f))
        .map(|(f, &l)| (f, l))
        .collect();
    let excluded = bank.train.len() - gallery.len() + bank.test.len() - queries.len();
    if excluded > 0 {
        warn!("retrieval: {excluded} videos with zero-norm features excluded");
    }
    if gallery.is_empty() || queries.is_empty() {
        return Err(Error::invalid("retrieve", "empty gallery or query set"));
    }
    let ks = [1usize, 5, 10];
    let mut hits = [0usize; 3];
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(gallery.len());
    for (q, label) in &queries {
        let n = norm(q);
        sims.clear();
        sims.extend(gallery.iter().enumerate().map(|(i, (g, _))| {
            (
                g.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>() / n,
                i,
            )
        }));
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let first_hit = sims.iter().position(|&(_, i)| gallery[i].1 == *label);
        for (h, &k) in hits.iter_mut().zip(&ks) {
            if first_hit.is_some_and(|p| p < k) {
                *h += 1;
            }
        }
    }
    let q = queries.len() as f64;
    Ok(RetrievalReport {
        r1: hits[0] as f64 / q,
        r5: hits[1] as f64 / q,
        r10: hits[2] as f64 / q,
        queries: queries.len(),
        excluded,
    })
}

impl RetrievalReport {
    pub fn rows(&self) -> Vec<(String, f64)> {
        vec![
            ("r@1".into(), self.r1),
            ("r@5".into(), self.r5),
            ("r@10".into(), self.r10),
            ("queries".into(), self.queries as f64),
            ("excluded".into(), self.excluded as f64),
        ]
    }
}
