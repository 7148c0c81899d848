//! Prediction and scoring against gold fine labels.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GoldLabels};
use crate::error::{Error, Result};
use crate::taxonomy::{CoarseId, FineId, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub passage: usize,
    pub fine: FineId,
    /// Cosine between the projected passage and the chosen prototype.
    pub score: f64,
}

/// Best candidate by cosine; ties go to the smaller id.
pub fn best_candidate(scores: impl Fn(FineId) -> f64, candidates: &[FineId]) -> (FineId, f64) {
    let mut best = (candidates[0], scores(candidates[0]));
    for &f in &candidates[1..] {
        let s = scores(f);
        if s > best.1 || (s == best.1 && f.0 < best.0 .0) {
            best = (f, s);
        }
    }
    best
}

/// Predicts every passage from unit-norm projected passages and prototypes.
pub fn predict_all(
    passages: &Array2<f64>,
    fine: &Array2<f64>,
    corpus: &Corpus,
    taxonomy: &Taxonomy,
) -> Vec<Prediction> {
    let cos = passages.dot(&fine.t());
    corpus
        .passages()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (fine, score) =
                best_candidate(|f| cos[[i, f.0]], taxonomy.candidates(p.coarse));
            Prediction {
                passage: i,
                fine,
                score,
            }
        })
        .collect()
}

/// Micro and macro F1 over class indices.
///
/// Macro averages over classes that occur in `gold`; a class never predicted
/// has precision 0.
pub fn f1_scores(gold: &[usize], predicted: &[usize], n_classes: usize) -> Result<(f64, f64)> {
    let confusion = confusion_matrix(gold, predicted, n_classes)?;
    let per_class = class_metrics(&confusion);
    Ok((micro_f1(&confusion), macro_f1(&per_class)))
}

fn confusion_matrix(gold: &[usize], predicted: &[usize], n: usize) -> Result<Array2<u64>> {
    if gold.len() != predicted.len() {
        return Err(Error::Evaluation(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Evaluation("no labeled passages to evaluate".into()));
    }
    let mut m = Array2::zeros((n, n));
    for (&g, &p) in gold.iter().zip(predicted) {
        if g >= n || p >= n {
            return Err(Error::Evaluation(format!("label index out of range: {g}, {p}")));
        }
        m[[g, p]] += 1;
    }
    Ok(m)
}

fn micro_f1(confusion: &Array2<u64>) -> f64 {
    let total: u64 = confusion.sum();
    let correct: u64 = confusion.diag().sum();
    correct as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

fn class_metrics(confusion: &Array2<u64>) -> Vec<(f64, f64, f64, u64, u64)> {
    (0..confusion.nrows())
        .map(|c| {
            let tp = confusion[[c, c]];
            let support: u64 = confusion.row(c).sum();
            let predicted: u64 = confusion.column(c).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (precision, recall, f1, support, predicted)
        })
        .collect()
}

fn macro_f1(per_class: &[(f64, f64, f64, u64, u64)]) -> f64 {
    let present: Vec<f64> = per_class
        .iter()
        .filter(|c| c.3 > 0)
        .map(|c| c.2)
        .collect();
    present.iter().sum::<f64>() / present.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseConfusion {
    pub coarse: String,
    pub labels: Vec<String>,
    /// Rows are gold labels, columns predictions, both in `labels` order.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub n_evaluated: usize,
    pub n_unlabeled: usize,
    pub per_class: Vec<ClassMetrics>,
    pub labels: Vec<String>,
    /// Rows are gold labels, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub per_coarse: Vec<CoarseConfusion>,
}

/// Scores predictions against gold labels; passages without gold are skipped.
pub fn evaluate(
    predictions: &[FineId],
    gold: &GoldLabels,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    if predictions.len() != gold.labels.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions but {} gold entries",
            predictions.len(),
            gold.labels.len()
        )));
    }
    let (g, p): (Vec<usize>, Vec<usize>) = gold
        .labels
        .iter()
        .zip(predictions)
        .filter_map(|(g, p)| g.map(|g| (g.0, p.0)))
        .unzip();
    let n = taxonomy.n_fine();
    let confusion = confusion_matrix(&g, &p, n)?;
    let metrics = class_metrics(&confusion);
    let labels: Vec<String> = taxonomy
        .fine_labels()
        .iter()
        .map(|f| f.surface_name.clone())
        .collect();
    let per_class = metrics
        .iter()
        .zip(&labels)
        .map(|(&(precision, recall, f1, support, predicted), label)| ClassMetrics {
            label: label.clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
        })
        .collect();
    let per_coarse = taxonomy
        .coarse_labels()
        .iter()
        .map(|c| coarse_block(&confusion, taxonomy, c.id))
        .collect();
    Ok(EvalReport {
        micro_f1: micro_f1(&confusion),
        macro_f1: macro_f1(&metrics),
        n_evaluated: g.len(),
        n_unlabeled: gold.labels.len() - g.len(),
        per_class,
        labels,
        confusion: confusion.rows().into_iter().map(|r| r.to_vec()).collect(),
        per_coarse,
    })
}

fn coarse_block(confusion: &Array2<u64>, taxonomy: &Taxonomy, coarse: CoarseId) -> CoarseConfusion {
    let children = taxonomy.candidates(coarse);
    CoarseConfusion {
        coarse: taxonomy.coarse(coarse).surface_name.clone(),
        labels: children
            .iter()
            .map(|&f| taxonomy.fine(f).surface_name.clone())
            .collect(),
        counts: children
            .iter()
            .map(|&g| children.iter().map(|&p| confusion[[g.0, p.0]]).collect())
            .collect(),
    }
}

/// Tab-separated matrix with a header row and a gold label per row.
pub fn confusion_tsv(labels: &[String], counts: &[Vec<u64>]) -> String {
    let mut out = String::from("gold\\predicted");
    for l in labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(counts) {
        out.push_str(l);
        for c in row {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
    }
    out
}
