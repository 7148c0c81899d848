//! Passage-prototype similarity.
//!
//! The default metric is hub-corrected cosine: the cosine to a prototype
//! minus the mean of the passage's `k` largest cosines to all fine
//! prototypes. The correction depends only on the passage, so it never
//! changes the ordering of candidates for one passage; it does change how
//! passages compare to each other, which is what confident-set selection
//! ranks on.
//!
//! `Manhattan` and `Euclidean` swap the base similarity for a negated
//! distance and keep the same neighbourhood correction built from that
//! distance.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::FineId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Csls,
    Cosine,
    Manhattan,
    Euclidean,
}

impl Metric {
    pub fn hub_corrected(self) -> bool {
        !matches!(self, Metric::Cosine)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Csls => "csls",
            Metric::Cosine => "cosine",
            Metric::Manhattan => "manhattan",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csls" => Ok(Metric::Csls),
            "cosine" => Ok(Metric::Cosine),
            "manhattan" => Ok(Metric::Manhattan),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub metric: Metric,
    /// Neighbourhood size of the hub correction.
    pub k: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            metric: Metric::Csls,
            k: 3,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self, n_fine: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Similarity("k must be at least 1".into()));
        }
        if self.metric.hub_corrected() && self.k > n_fine {
            return Err(Error::Similarity(format!(
                "k = {} exceeds the number of fine prototypes ({n_fine})",
                self.k
            )));
        }
        Ok(())
    }
}

fn check_dims(p: ArrayView1<f64>, l: ArrayView1<f64>) -> Result<()> {
    if p.len() != l.len() {
        return Err(Error::Similarity(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            l.len()
        )));
    }
    Ok(())
}

pub fn cosine(p: ArrayView1<f64>, l: ArrayView1<f64>) -> Result<f64> {
    check_dims(p, l)?;
    let np = p.dot(&p).sqrt();
    let nl = l.dot(&l).sqrt();
    if np == 0.0 || nl == 0.0 {
        return Err(Error::Similarity("cosine of a zero vector".into()));
    }
    Ok((p.dot(&l) / (np * nl)).clamp(-1.0, 1.0))
}

/// The metric's similarity before the neighbourhood correction.
pub fn base_similarity(metric: Metric, p: ArrayView1<f64>, l: ArrayView1<f64>) -> Result<f64> {
    match metric {
        Metric::Csls | Metric::Cosine => cosine(p, l),
        Metric::Manhattan => {
            check_dims(p, l)?;
            Ok(-p.iter().zip(l.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        }
        Metric::Euclidean => {
            check_dims(p, l)?;
            Ok(-p
                .iter()
                .zip(l.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt())
        }
    }
}

/// Indices of the `k` largest scores, largest first; ties go to the smaller index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| desc_then_index(scores[a], a, scores[b], b));
    idx.truncate(k);
    idx
}

pub(crate) fn desc_then_index(sa: f64, a: usize, sb: f64, b: usize) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Mean of the `k` largest values in `scores`.
pub fn mean_top_k(scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(Error::Similarity(format!(
            "k = {k} is outside 1..={}",
            scores.len()
        )));
    }
    let idx = top_k_indices(scores, k);
    Ok(idx.iter().map(|&i| scores[i]).sum::<f64>() / k as f64)
}

/// Mean of the `k` largest cosines from `p` to the rows of `prototypes`.
pub fn knn_mean(p: ArrayView1<f64>, prototypes: ArrayView2<f64>, k: usize) -> Result<f64> {
    let cos = prototypes
        .rows()
        .into_iter()
        .map(|l| cosine(p, l))
        .collect::<Result<Vec<_>>>()?;
    mean_top_k(&cos, k)
}

/// Base similarities from `p` to every prototype row.
pub fn base_scores(
    metric: Metric,
    p: ArrayView1<f64>,
    prototypes: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    prototypes
        .rows()
        .into_iter()
        .map(|l| base_similarity(metric, p, l))
        .collect()
}

/// Applies the metric's neighbourhood correction to a row of base scores.
pub fn correct_scores(base: &[f64], config: &SimilarityConfig) -> Result<Vec<f64>> {
    if !config.metric.hub_corrected() {
        return Ok(base.to_vec());
    }
    let knn = mean_top_k(base, config.k)?;
    Ok(base.iter().map(|s| s - knn).collect())
}

/// Similarity of `p` to every prototype under `config`.
pub fn score_all(
    p: ArrayView1<f64>,
    prototypes: ArrayView2<f64>,
    config: &SimilarityConfig,
) -> Result<Vec<f64>> {
    config.validate(prototypes.nrows())?;
    correct_scores(&base_scores(config.metric, p, prototypes)?, config)
}

/// Similarity of `p` to prototype row `l` under `config`.
pub fn c_similarity(
    p: ArrayView1<f64>,
    l: usize,
    prototypes: ArrayView2<f64>,
    config: &SimilarityConfig,
) -> Result<f64> {
    if l >= prototypes.nrows() {
        return Err(Error::Similarity(format!("prototype {l} out of range")));
    }
    Ok(score_all(p, prototypes, config)?[l])
}

/// Candidates sorted by similarity, best first, ties to the smaller id.
pub fn rank_candidates(
    p: ArrayView1<f64>,
    candidates: &[FineId],
    prototypes: ArrayView2<f64>,
    config: &SimilarityConfig,
) -> Result<Vec<(FineId, f64)>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let scores = score_all(p, prototypes, config)?;
    Ok(rank_by_scores(candidates, &scores))
}

pub(crate) fn rank_by_scores(candidates: &[FineId], scores: &[f64]) -> Vec<(FineId, f64)> {
    let mut ranked: Vec<(FineId, f64)> = candidates.iter().map(|&f| (f, scores[f.0])).collect();
    ranked.sort_by(|a, b| desc_then_index(a.1, a.0 .0, b.1, b.0 .0));
    ranked
}
