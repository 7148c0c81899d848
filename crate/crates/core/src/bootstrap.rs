//! Training schedule: warm-up on weak seeds, then alternating confident-set
//! selection and finetuning.
//!
//! Selection assigns every passage its best-scoring candidate, keeps those
//! whose lead over the runner-up exceeds the threshold `beta`, and takes the
//! top `r%` of the corpus by score. `beta` then becomes the lowest score in
//! the selected set. Selected passages get the local loss on top of the
//! global loss; everything else gets the global loss only.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabelState};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, Prediction};
use crate::model::{
    batch_loss, corrected_scores, AdamW, GlobalTerm, LocalTerm, LossConfig, ModelState, Objective,
    PrototypeBank, SignConvention, TrainItem,
};
use crate::similarity::{desc_then_index, SimilarityConfig};
use crate::taxonomy::{CoarseId, FineId, Taxonomy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_epochs: usize,
    pub bootstrap_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            warmup_epochs: 1,
            bootstrap_epochs: 4,
        }
    }
}

/// Losses applied to confident-set passages during bootstrapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsLosses {
    /// Local and global, as in warm-up.
    #[default]
    Both,
    LocalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub loss: LossConfig,
    pub similarity: SimilarityConfig,
    pub schedule: Schedule,
    pub r_percent: u32,
    pub seed: u64,
    /// Train with the coarse global loss instead of the fine one.
    pub mapping_free: bool,
    /// Reuse the weak seeds as the labeled set in every bootstrap epoch.
    pub no_select: bool,
    pub cs_losses: CsLosses,
    pub sign: SignConvention,
    /// Fail the run, rather than warn, when `beta` decreases.
    pub strict_beta: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss: LossConfig::default(),
            similarity: SimilarityConfig::default(),
            schedule: Schedule::default(),
            r_percent: 5,
            seed: 0,
            mapping_free: false,
            no_select: false,
            cs_losses: CsLosses::Both,
            sign: SignConvention::IntentConsistent,
            strict_beta: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidentEntry {
    /// Index of the passage in the corpus.
    pub passage: usize,
    pub fine: FineId,
    pub score: f64,
    /// Lead of `fine` over the best other candidate.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidentSet {
    /// Sorted by score, best first.
    pub entries: Vec<ConfidentEntry>,
    /// Threshold the entries had to beat.
    pub threshold: f64,
    /// Threshold for the next selection.
    pub beta: f64,
    pub r_percent: u32,
}

impl ConfidentSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Number of passages a top-`r%` selection keeps from `population`.
pub fn selection_quota(r_percent: u32, population: usize) -> usize {
    (r_percent as usize * population).div_ceil(100)
}

/// Confident-set selection over precomputed candidate scores.
///
/// `rows[i]` holds `(label, score)` for the candidates of passage `i`.
/// Passages with fewer than two candidates have no runner-up and are never
/// selected. Entries tied with the score at the quota cutoff are all kept.
pub fn select_from_scores(
    rows: &[Vec<(FineId, f64)>],
    beta: f64,
    r_percent: u32,
    population: usize,
) -> ConfidentSet {
    let mut qualifying = Vec::new();
    for (passage, row) in rows.iter().enumerate() {
        if row.len() < 2 {
            continue;
        }
        let mut ranked = row.clone();
        ranked.sort_by(|a, b| desc_then_index(a.1, a.0 .0, b.1, b.0 .0));
        let (fine, score) = ranked[0];
        let gap = score - ranked[1].1;
        if gap > beta {
            qualifying.push(ConfidentEntry {
                passage,
                fine,
                score,
                gap,
            });
        }
    }
    qualifying.sort_by(|a, b| desc_then_index(a.score, a.passage, b.score, b.passage));

    let quota = selection_quota(r_percent, population);
    if quota == 0 {
        qualifying.clear();
    } else if qualifying.len() > quota {
        let cutoff = qualifying[quota - 1].score;
        let keep = quota
            + qualifying[quota..]
                .iter()
                .take_while(|e| e.score == cutoff)
                .count();
        qualifying.truncate(keep);
    }
    let next_beta = qualifying.last().map_or(beta, |e| e.score);
    ConfidentSet {
        entries: qualifying,
        threshold: beta,
        beta: next_beta,
        r_percent,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Bootstrap,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Bootstrap => "bootstrap",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub global: f64,
    pub local: f64,
    pub steps: usize,
    /// Passages that received the local loss.
    pub labeled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseCount {
    pub coarse: String,
    pub count: usize,
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_global: f64,
    pub loss_local: f64,
    pub steps: usize,
    pub labeled: usize,
    /// Size of the confident set; absent for warm-up and `no_select`.
    pub confident: Option<usize>,
    /// Threshold after this epoch's selection; `null` stands for -inf.
    pub beta: Option<f64>,
    pub beta_monotone: bool,
    pub confident_by_coarse: Vec<CoarseCount>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub predictions: Vec<Prediction>,
    pub log: Vec<EpochRecord>,
    /// Threshold after every selection, starting from -inf.
    pub betas: Vec<f64>,
}

pub struct Bootstrapper<'a> {
    taxonomy: &'a Taxonomy,
    passages: Array2<f64>,
    fine: Array2<f64>,
    coarse: Option<Array2<f64>>,
    config: TrainingConfig,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl<'a> Bootstrapper<'a> {
    /// `prototypes` holds one row per fine label in id order, optionally
    /// followed by one row per coarse label.
    pub fn new(
        taxonomy: &'a Taxonomy,
        passages: &EmbeddingMatrix,
        prototypes: &EmbeddingMatrix,
        config: TrainingConfig,
    ) -> Result<Self> {
        config.loss.validate()?;
        let n_fine = taxonomy.n_fine();
        let n_coarse = taxonomy.n_coarse();
        config.similarity.validate(n_fine)?;
        if config.r_percent == 0 || config.r_percent > 100 {
            return Err(Error::Config(format!(
                "r must be in 1..=100, got {}",
                config.r_percent
            )));
        }
        if passages.dim() != prototypes.dim() {
            return Err(Error::Config(format!(
                "passage dim {} differs from prototype dim {}",
                passages.dim(),
                prototypes.dim()
            )));
        }
        let has_coarse = match prototypes.n_rows() {
            n if n == n_fine => false,
            n if n == n_fine + n_coarse => true,
            n => {
                return Err(Error::Config(format!(
                    "prototype file has {n} rows; expected {n_fine} (fine) or {} (fine + coarse)",
                    n_fine + n_coarse
                )))
            }
        };
        if config.mapping_free && !has_coarse {
            return Err(Error::Config(
                "mapping-free training needs coarse prototype rows after the fine rows".into(),
            ));
        }
        let all = prototypes.to_array();
        let fine = all.slice(ndarray::s![..n_fine, ..]).to_owned();
        let coarse = has_coarse.then(|| all.slice(ndarray::s![n_fine.., ..]).to_owned());
        Ok(Bootstrapper {
            taxonomy,
            passages: passages.to_array(),
            fine,
            coarse,
            config,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn init_model(&self) -> ModelState {
        ModelState::init(self.passages.ncols(), self.config.seed)
    }

    pub fn base_passages(&self) -> ArrayView2<'_, f64> {
        self.passages.view()
    }

    pub fn base_fine(&self) -> ArrayView2<'_, f64> {
        self.fine.view()
    }

    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.len() != self.passages.nrows() {
            return Err(Error::Config(format!(
                "corpus has {} passages but the embedding file has {} rows",
                corpus.len(),
                self.passages.nrows()
            )));
        }
        Ok(())
    }

    fn objective(&self) -> Objective {
        Objective {
            gamma: self.config.loss.gamma,
            sigma: self.config.loss.sigma,
            similarity: self.config.similarity,
            sign: self.config.sign,
        }
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    fn sample_global<R: Rng>(&self, coarse: CoarseId, rng: &mut R) -> GlobalTerm<'a> {
        if self.config.mapping_free {
            let others = self.taxonomy.other_coarse(coarse);
            return match others.choose(rng) {
                Some(&negative) => GlobalTerm::Coarse {
                    positive: coarse,
                    negative,
                },
                None => GlobalTerm::None,
            };
        }
        let positives = self.taxonomy.candidates(coarse);
        let pool = self.taxonomy.negatives(coarse);
        if pool.is_empty() {
            return GlobalTerm::None;
        }
        let negatives = if pool.len() >= positives.len() {
            index::sample(rng, pool.len(), positives.len())
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            (0..positives.len())
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        };
        GlobalTerm::Fine {
            positives,
            negatives,
        }
    }

    /// One shuffled pass over the corpus. Passages with a label in `labels`
    /// get the local loss; `global_for_labeled` decides whether they also
    /// keep the global loss.
    fn train_epoch(
        &self,
        corpus: &Corpus,
        model: &mut ModelState,
        epoch: usize,
        labels: &[Option<FineId>],
        global_for_labeled: bool,
    ) -> Result<(EpochLoss, Vec<String>)> {
        self.check_corpus(corpus)?;
        let mut warnings = Vec::new();
        let mut rng = self.epoch_rng(epoch);
        let mut items: Vec<TrainItem<'a>> = Vec::with_capacity(corpus.len());
        let mut missing_negatives = false;
        let mut labeled = 0;
        for (i, p) in corpus.passages().iter().enumerate() {
            let mut global = self.sample_global(p.coarse, &mut rng);
            if matches!(global, GlobalTerm::None) {
                missing_negatives = true;
            }
            let candidates = self.taxonomy.candidates(p.coarse);
            let local = match labels[i] {
                Some(assigned) if candidates.len() >= 2 => {
                    labeled += 1;
                    if !global_for_labeled {
                        global = GlobalTerm::None;
                    }
                    Some(LocalTerm {
                        assigned,
                        candidates,
                    })
                }
                _ => None,
            };
            items.push(TrainItem {
                row: i,
                global,
                local,
            });
        }
        if missing_negatives {
            let msg = "no negative prototypes available for some passages; their global loss is 0"
                .to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        items.shuffle(&mut rng);

        let objective = self.objective();
        let opt = AdamW::new(self.config.loss.lr, self.config.loss.weight_decay);
        let bank = PrototypeBank {
            fine: self.fine.view(),
            coarse: self.coarse.as_ref().map(|c| c.view()),
        };
        let mut loss = EpochLoss {
            labeled,
            ..Default::default()
        };
        for batch in items.chunks(self.config.loss.batch_size) {
            let mut grads = model.head.zeros_like();
            let b = batch_loss(
                &model.head,
                self.passages.view(),
                bank,
                batch,
                &objective,
                Some(&mut grads),
            )?;
            model.apply(&grads, &opt)?;
            loss.global += b.global;
            loss.local += b.local;
            loss.steps += 1;
        }
        Ok((loss, warnings))
    }

    /// Warm-up: weak seeds get global and local losses, the rest global only.
    pub fn warmup_epoch(
        &self,
        corpus: &Corpus,
        model: &mut ModelState,
        epoch: usize,
    ) -> Result<(EpochLoss, Vec<String>)> {
        let labels: Vec<Option<FineId>> = corpus
            .passages()
            .iter()
            .map(|p| match p.state() {
                LabelState::WeakSeed { fine } => Some(fine),
                _ => None,
            })
            .collect();
        let (loss, mut warnings) = self.train_epoch(corpus, model, epoch, &labels, true)?;
        if loss.labeled == 0 {
            let msg = "warm-up has no weak seeds; training with the global loss only".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok((loss, warnings))
    }

    /// Bootstrap finetuning on the current confident set (or on the weak
    /// seeds when `no_select` is set).
    pub fn bootstrap_epoch(
        &self,
        corpus: &Corpus,
        model: &mut ModelState,
        epoch: usize,
    ) -> Result<(EpochLoss, Vec<String>)> {
        let labels: Vec<Option<FineId>> = corpus
            .passages()
            .iter()
            .map(|p| {
                if self.config.no_select {
                    p.seed()
                } else {
                    match p.state() {
                        LabelState::Confident { fine, .. } => Some(fine),
                        _ => None,
                    }
                }
            })
            .collect();
        let global_for_labeled = self.config.cs_losses == CsLosses::Both;
        self.train_epoch(corpus, model, epoch, &labels, global_for_labeled)
    }

    pub fn project_passages(&self, model: &ModelState) -> Array2<f64> {
        model.head.project(self.passages.view())
    }

    pub fn project_fine(&self, model: &ModelState) -> Array2<f64> {
        model.head.project(self.fine.view())
    }

    /// Candidate scores of every passage under the configured metric.
    pub fn candidate_scores(
        &self,
        corpus: &Corpus,
        model: &ModelState,
    ) -> Result<Vec<Vec<(FineId, f64)>>> {
        self.check_corpus(corpus)?;
        let scores = corrected_scores(
            &self.project_passages(model),
            &self.project_fine(model),
            &self.config.similarity,
        )?;
        Ok(corpus
            .passages()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.taxonomy
                    .candidates(p.coarse)
                    .iter()
                    .map(|&f| (f, scores[[i, f.0]]))
                    .collect()
            })
            .collect())
    }

    /// Builds the confident set and moves label states accordingly: selected
    /// passages become `Confident`, previously confident ones that were not
    /// reselected fall back to `Unlabeled`.
    pub fn select_confident(
        &self,
        corpus: &mut Corpus,
        model: &ModelState,
        beta: f64,
        r_percent: u32,
    ) -> Result<ConfidentSet> {
        let rows = self.candidate_scores(corpus, model)?;
        let cs = select_from_scores(&rows, beta, r_percent, corpus.len());
        for i in 0..corpus.len() {
            if matches!(corpus.passage(i).state(), LabelState::Confident { .. }) {
                corpus.set_state(i, LabelState::Unlabeled, self.taxonomy);
            }
        }
        for e in &cs.entries {
            corpus.set_state(
                e.passage,
                LabelState::Confident {
                    fine: e.fine,
                    score: e.score,
                },
                self.taxonomy,
            );
        }
        Ok(cs)
    }

    pub fn predict(&self, model: &ModelState, corpus: &Corpus) -> Result<Vec<Prediction>> {
        self.check_corpus(corpus)?;
        Ok(eval::predict_all(
            &self.project_passages(model),
            &self.project_fine(model),
            corpus,
            self.taxonomy,
        ))
    }

    fn by_coarse(&self, corpus: &Corpus, cs: &ConfidentSet) -> Vec<CoarseCount> {
        let mut counts = vec![0usize; self.taxonomy.n_coarse()];
        for e in &cs.entries {
            counts[corpus.passage(e.passage).coarse.0] += 1;
        }
        self.taxonomy
            .coarse_labels()
            .iter()
            .zip(counts)
            .map(|(c, count)| CoarseCount {
                coarse: c.surface_name.clone(),
                count,
            })
            .collect()
    }

    pub fn run(&self, corpus: &mut Corpus, model: &mut ModelState) -> Result<RunOutcome> {
        self.run_with(corpus, model, |_, _| {})
    }

    /// Full schedule; `on_epoch` sees each log record and the model after that epoch.
    pub fn run_with(
        &self,
        corpus: &mut Corpus,
        model: &mut ModelState,
        mut on_epoch: impl FnMut(&EpochRecord, &ModelState),
    ) -> Result<RunOutcome> {
        self.check_corpus(corpus)?;
        let schedule = self.config.schedule;
        let mut log = Vec::new();
        let mut epoch = 0;

        for _ in 0..schedule.warmup_epochs {
            let (loss, warnings) = self.warmup_epoch(corpus, model, epoch)?;
            let rec = EpochRecord {
                epoch,
                phase: Phase::Warmup,
                loss_global: loss.global,
                loss_local: loss.local,
                steps: loss.steps,
                labeled: loss.labeled,
                confident: None,
                beta: None,
                beta_monotone: true,
                confident_by_coarse: Vec::new(),
                warnings,
            };
            on_epoch(&rec, model);
            log.push(rec);
            epoch += 1;
        }

        let mut beta = f64::NEG_INFINITY;
        let mut betas = vec![beta];
        for _ in 0..schedule.bootstrap_epochs {
            let mut warnings = Vec::new();
            let mut confident = None;
            let mut by_coarse = Vec::new();
            let mut monotone = true;
            if !self.config.no_select {
                let cs = self.select_confident(corpus, model, beta, self.config.r_percent)?;
                if cs.is_empty() {
                    let msg = format!(
                        "epoch {epoch}: no passage cleared beta = {beta:.6}; confident set is empty"
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                } else if cs.beta < beta {
                    monotone = false;
                    let msg = format!("epoch {epoch}: beta decreased from {beta:.6} to {:.6}", cs.beta);
                    if self.config.strict_beta {
                        return Err(Error::Training(msg));
                    }
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                beta = cs.beta;
                betas.push(beta);
                confident = Some(cs.len());
                by_coarse = self.by_coarse(corpus, &cs);
            }
            let (loss, more) = self.bootstrap_epoch(corpus, model, epoch)?;
            warnings.extend(more);
            let rec = EpochRecord {
                epoch,
                phase: Phase::Bootstrap,
                loss_global: loss.global,
                loss_local: loss.local,
                steps: loss.steps,
                labeled: loss.labeled,
                confident,
                beta: finite_or_none(beta),
                beta_monotone: monotone,
                confident_by_coarse: by_coarse,
                warnings,
            };
            on_epoch(&rec, model);
            log.push(rec);
            epoch += 1;
        }

        let predictions = self.predict(model, corpus)?;
        for p in &predictions {
            corpus.set_state(p.passage, LabelState::Predicted { fine: p.fine }, self.taxonomy);
        }
        Ok(RunOutcome {
            predictions,
            log,
            betas,
        })
    }
}
