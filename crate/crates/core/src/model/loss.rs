//! Margin ranking losses over passage-prototype similarities.
//!
//! * global: each fine candidate of the passage paired with one sampled
//!   non-candidate, hinge with margin `gamma`, averaged over candidates;
//! * local: the assigned label against the best other candidate, margin `sigma`;
//! * coarse global: gold coarse prototype against one sampled other coarse
//!   prototype, margin `gamma` (used when the coarse-to-fine mapping is not
//!   given to the trainer).
//!
//! Every hinge is counted active only when its argument is strictly positive.
//! Gradients are derived by hand through hinge, similarity, the
//! neighbourhood correction (with the top-k set held fixed) and the
//! projection head.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::head::ProjectionHead;
use crate::similarity::{desc_then_index, top_k_indices, Metric, SimilarityConfig};
use crate::taxonomy::{CoarseId, FineId};

/// Orientation of the two global hinges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `max{c(p, neg) - c(p, pos) + margin, 0}`: positives must win by the margin.
    #[default]
    IntentConsistent,
    /// `max{c(p, pos) - c(p, neg) + margin, 0}`, selected by `paper_literal_sign`.
    PositiveFirst,
}

impl SignConvention {
    fn argument(self, pos: f64, neg: f64, margin: f64) -> f64 {
        match self {
            SignConvention::IntentConsistent => neg - pos + margin,
            SignConvention::PositiveFirst => pos - neg + margin,
        }
    }

    /// d(argument)/d(pos); d/d(neg) is the negation.
    fn pos_slope(self) -> f64 {
        match self {
            SignConvention::IntentConsistent => -1.0,
            SignConvention::PositiveFirst => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub sigma: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.05,
            sigma: 0.05,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config("margins gamma and sigma must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

pub fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Global loss from scores of paired positives and negatives.
pub fn loss_global(positives: &[f64], negatives: &[f64], gamma: f64, sign: SignConvention) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return 0.0;
    }
    positives
        .iter()
        .zip(negatives)
        .map(|(&p, &n)| hinge(sign.argument(p, n, gamma)))
        .sum::<f64>()
        / positives.len() as f64
}

/// Local loss: the assigned label against the best of `others`.
pub fn loss_local(assigned: f64, others: &[f64], sigma: f64) -> f64 {
    match others.iter().copied().reduce(f64::max) {
        Some(sec_max) => hinge(sec_max - assigned + sigma),
        None => 0.0,
    }
}

pub fn loss_coarse_global(positive: f64, negative: f64, gamma: f64, sign: SignConvention) -> f64 {
    hinge(sign.argument(positive, negative, gamma))
}

#[derive(Clone, Debug, PartialEq)]
pub enum GlobalTerm<'a> {
    None,
    Fine {
        positives: &'a [FineId],
        /// One sampled non-candidate per positive, in the same order.
        negatives: Vec<FineId>,
    },
    Coarse {
        positive: CoarseId,
        negative: CoarseId,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm<'a> {
    pub assigned: FineId,
    pub candidates: &'a [FineId],
}

/// One passage's contribution to a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem<'a> {
    /// Row of the passage in the base embedding matrix.
    pub row: usize,
    pub global: GlobalTerm<'a>,
    pub local: Option<LocalTerm<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub gamma: f64,
    pub sigma: f64,
    pub similarity: SimilarityConfig,
    pub sign: SignConvention,
}

/// Base embeddings of the prototypes: fine rows, plus coarse rows when the
/// coarse global loss is in use.
#[derive(Clone, Copy, Debug)]
pub struct PrototypeBank<'a> {
    pub fine: ArrayView2<'a, f64>,
    pub coarse: Option<ArrayView2<'a, f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    /// Sum over items of the global (or coarse global) loss.
    pub global: f64,
    /// Sum over items of the local loss.
    pub local: f64,
    pub items: usize,
}

impl BatchLoss {
    /// The optimized objective: total loss averaged over batch items.
    pub fn mean(&self) -> f64 {
        if self.items == 0 {
            0.0
        } else {
            (self.global + self.local) / self.items as f64
        }
    }
}

fn unit_similarity(metric: Metric, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    match metric {
        Metric::Csls | Metric::Cosine => u.dot(&v),
        Metric::Manhattan => -u.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        Metric::Euclidean => -u
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Adds `coef * d sim(u, v)` to the gradients of `u` and `v`.
fn add_similarity_grad(
    metric: Metric,
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
    coef: f64,
    mut gu: ArrayViewMut1<f64>,
    mut gv: ArrayViewMut1<f64>,
) {
    match metric {
        Metric::Csls | Metric::Cosine => {
            gu.scaled_add(coef, &v);
            gv.scaled_add(coef, &u);
        }
        Metric::Manhattan => {
            for i in 0..u.len() {
                let d = u[i] - v[i];
                let s = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gu[i] -= coef * s;
                gv[i] += coef * s;
            }
        }
        Metric::Euclidean => {
            let dist = unit_similarity(Metric::Euclidean, u, v).abs();
            if dist < 1e-12 {
                return;
            }
            for i in 0..u.len() {
                let d = (u[i] - v[i]) / dist;
                gu[i] -= coef * d;
                gv[i] += coef * d;
            }
        }
    }
}

fn base_matrix(metric: Metric, a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    match metric {
        Metric::Csls | Metric::Cosine => a.dot(&b.t()),
        _ => Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
            unit_similarity(metric, a.row(i), b.row(j))
        }),
    }
}

/// Scores of every passage row against every prototype row, after the
/// metric's neighbourhood correction over the fine prototypes.
///
/// Inputs are projected (unit-norm) representations.
pub fn corrected_scores(
    passages: &Array2<f64>,
    fine: &Array2<f64>,
    config: &SimilarityConfig,
) -> Result<Array2<f64>> {
    config.validate(fine.nrows())?;
    let mut s = base_matrix(config.metric, passages, fine);
    if config.metric.hub_corrected() {
        for mut row in s.rows_mut() {
            let r = row.to_vec();
            let knn = top_k_indices(&r, config.k)
                .iter()
                .map(|&j| r[j])
                .sum::<f64>()
                / config.k as f64;
            row -= knn;
        }
    }
    Ok(s)
}

/// Loss of a batch and, when `grads` is given, its gradient w.r.t. the head
/// parameters (accumulated into `grads`). The objective is the mean over
/// items of each item's global plus local loss.
pub fn batch_loss(
    head: &ProjectionHead,
    passages: ArrayView2<f64>,
    bank: PrototypeBank<'_>,
    items: &[TrainItem<'_>],
    objective: &Objective,
    grads: Option<&mut ProjectionHead>,
) -> Result<BatchLoss> {
    let metric = objective.similarity.metric;
    let k = objective.similarity.k;
    let n_fine = bank.fine.nrows();
    objective.similarity.validate(n_fine)?;
    if items.is_empty() {
        return Ok(BatchLoss::default());
    }
    let uses_coarse = items
        .iter()
        .any(|it| matches!(it.global, GlobalTerm::Coarse { .. }));
    let coarse_bank = match (uses_coarse, bank.coarse) {
        (true, None) => {
            return Err(Error::Training(
                "coarse global loss requested without coarse prototypes".into(),
            ))
        }
        (true, Some(c)) => Some(c),
        (false, _) => None,
    };

    let rows: Vec<usize> = items.iter().map(|it| it.row).collect();
    let x = passages.select(Axis(0), &rows);
    let p_cache = head.forward(x.view());
    let f_cache = head.forward(bank.fine);
    let c_cache = coarse_bank.map(|c| head.forward(c));
    let p = &p_cache.out;
    let lf = &f_cache.out;

    let base_fine = base_matrix(metric, p, lf);
    let base_coarse = c_cache.as_ref().map(|c| base_matrix(metric, p, &c.out));

    let scale = 1.0 / items.len() as f64;
    let mut loss = BatchLoss {
        items: items.len(),
        ..Default::default()
    };
    // dL/d(base similarity), per item
    let mut d_fine = Array2::<f64>::zeros((items.len(), n_fine));
    let mut d_coarse = base_coarse.as_ref().map(|b| Array2::<f64>::zeros(b.raw_dim()));

    for (i, item) in items.iter().enumerate() {
        let base = base_fine.row(i).to_vec();
        let (knn, top) = if metric.hub_corrected() {
            let top = top_k_indices(&base, k);
            (top.iter().map(|&j| base[j]).sum::<f64>() / k as f64, top)
        } else {
            (0.0, Vec::new())
        };
        let c = |j: usize| base[j] - knn;

        // dL/dc for fine and coarse scores of this item
        let mut w_fine = vec![0.0; n_fine];
        let mut w_coarse = vec![0.0; base_coarse.as_ref().map_or(0, |b| b.ncols())];

        match &item.global {
            GlobalTerm::None => {}
            GlobalTerm::Fine {
                positives,
                negatives,
            } => {
                if positives.len() != negatives.len() {
                    return Err(Error::Training(format!(
                        "{} positives paired with {} negatives",
                        positives.len(),
                        negatives.len()
                    )));
                }
                let norm = 1.0 / positives.len().max(1) as f64;
                for (&pos, &neg) in positives.iter().zip(negatives) {
                    let arg = objective.sign.argument(c(pos.0), c(neg.0), objective.gamma);
                    if arg > 0.0 {
                        loss.global += arg * norm;
                        let slope = objective.sign.pos_slope() * norm;
                        w_fine[pos.0] += slope;
                        w_fine[neg.0] -= slope;
                    }
                }
            }
            GlobalTerm::Coarse { positive, negative } => {
                let bc = base_coarse.as_ref().unwrap().row(i);
                let cp = bc[positive.0] - knn;
                let cn = bc[negative.0] - knn;
                let arg = objective.sign.argument(cp, cn, objective.gamma);
                if arg > 0.0 {
                    loss.global += arg;
                    let slope = objective.sign.pos_slope();
                    w_coarse[positive.0] += slope;
                    w_coarse[negative.0] -= slope;
                }
            }
        }

        if let Some(local) = &item.local {
            let second = local
                .candidates
                .iter()
                .copied()
                .filter(|&f| f != local.assigned)
                .min_by(|a, b| desc_then_index(c(a.0), a.0, c(b.0), b.0));
            if let Some(sec) = second {
                let arg = c(sec.0) - c(local.assigned.0) + objective.sigma;
                if arg > 0.0 {
                    loss.local += arg;
                    w_fine[sec.0] += 1.0;
                    w_fine[local.assigned.0] -= 1.0;
                }
            }
        }

        // through c = base - mean(top-k base)
        let total: f64 = w_fine.iter().sum::<f64>() + w_coarse.iter().sum::<f64>();
        let mut row = d_fine.row_mut(i);
        for j in 0..n_fine {
            row[j] = w_fine[j] * scale;
        }
        if total != 0.0 {
            for &j in &top {
                row[j] -= total / k as f64 * scale;
            }
        }
        if let Some(dc) = d_coarse.as_mut() {
            let mut row = dc.row_mut(i);
            for (m, w) in w_coarse.iter().enumerate() {
                row[m] = w * scale;
            }
        }
    }

    let Some(grads) = grads else {
        return Ok(loss);
    };

    let mut g_p = Array2::<f64>::zeros(p.raw_dim());
    let mut g_f = Array2::<f64>::zeros(lf.raw_dim());
    for i in 0..items.len() {
        for j in 0..n_fine {
            let coef = d_fine[[i, j]];
            if coef != 0.0 {
                add_similarity_grad(metric, p.row(i), lf.row(j), coef, g_p.row_mut(i), g_f.row_mut(j));
            }
        }
    }
    head.backward(&f_cache, g_f.view(), grads);

    if let (Some(cc), Some(dc)) = (c_cache.as_ref(), d_coarse.as_ref()) {
        let mut g_c = Array2::<f64>::zeros(cc.out.raw_dim());
        for i in 0..items.len() {
            for m in 0..cc.out.nrows() {
                let coef = dc[[i, m]];
                if coef != 0.0 {
                    add_similarity_grad(metric, p.row(i), cc.out.row(m), coef, g_p.row_mut(i), g_c.row_mut(m));
                }
            }
        }
        head.backward(cc, g_c.view(), grads);
    }
    head.backward(&p_cache, g_p.view(), grads);

    if !grads.is_finite() {
        return Err(Error::Training("non-finite gradient".into()));
    }
    Ok(loss)
}
