//! Passage corpus, label-state bookkeeping and initial weak supervision.
//!
//! Corpus files are JSON lines, one passage per line, in embedding-row order:
//!
//! ```text
//! {"id": 7, "coarse": "sports", "text": "...", "gold": "hockey"}
//! ```
//!
//! `gold` is optional. Gold labels are split off into [`GoldLabels`] at load
//! time, so nothing that holds only a [`Corpus`] can read them.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{CoarseId, FineId, Taxonomy};
use crate::text::{contains_phrase, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LabelState {
    Unlabeled,
    WeakSeed { fine: FineId },
    Confident { fine: FineId, score: f64 },
    Predicted { fine: FineId },
}

impl LabelState {
    pub fn fine(&self) -> Option<FineId> {
        match *self {
            LabelState::Unlabeled => None,
            LabelState::WeakSeed { fine }
            | LabelState::Confident { fine, .. }
            | LabelState::Predicted { fine } => Some(fine),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Passage {
    pub id: u64,
    pub text: String,
    pub coarse: CoarseId,
    state: LabelState,
    seed: Option<FineId>,
}

impl Passage {
    pub fn new(id: u64, text: impl Into<String>, coarse: CoarseId) -> Self {
        Passage {
            id,
            text: text.into(),
            coarse,
            state: LabelState::Unlabeled,
            seed: None,
        }
    }

    pub fn state(&self) -> LabelState {
        self.state
    }

    /// Fine label found by weak seeding, kept even after the state moves on.
    pub fn seed(&self) -> Option<FineId> {
        self.seed
    }
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
}

/// Evaluation-only gold fine labels, aligned with corpus order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldLabels {
    pub labels: Vec<Option<FineId>>,
}

#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    id: u64,
    coarse: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Self {
        Corpus { passages }
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<(Corpus, GoldLabels)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, taxonomy)
    }

    pub fn parse(text: &str, taxonomy: &Taxonomy) -> Result<(Corpus, GoldLabels)> {
        let mut passages = Vec::new();
        let mut gold = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusRecord = serde_json::from_str(line)
                .map_err(|e| Error::Corpus(format!("line {}: {e}", lineno + 1)))?;
            if !ids.insert(rec.id) {
                return Err(Error::Corpus(format!("duplicate passage id {}", rec.id)));
            }
            let coarse = taxonomy.coarse_by_name(&rec.coarse).ok_or_else(|| {
                Error::Corpus(format!(
                    "line {}: unknown coarse label '{}'",
                    lineno + 1,
                    rec.coarse
                ))
            })?;
            let g = match rec.gold.as_deref() {
                None | Some("") => None,
                Some(name) => {
                    let f = taxonomy.fine_by_name(name).ok_or_else(|| {
                        Error::Corpus(format!(
                            "line {}: unknown fine label '{name}'",
                            lineno + 1
                        ))
                    })?;
                    if taxonomy.parent(f) != coarse {
                        return Err(Error::Corpus(format!(
                            "line {}: gold label '{name}' is not a child of '{}'",
                            lineno + 1,
                            rec.coarse
                        )));
                    }
                    Some(f)
                }
            };
            passages.push(Passage::new(rec.id, rec.text, coarse));
            gold.push(g);
        }
        Ok((Corpus { passages }, GoldLabels { labels: gold }))
    }

    pub fn write_jsonl(
        &self,
        gold: Option<&GoldLabels>,
        taxonomy: &Taxonomy,
        path: impl AsRef<Path>,
    ) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (i, p) in self.passages.iter().enumerate() {
            let rec = CorpusRecord {
                id: p.id,
                coarse: taxonomy.coarse(p.coarse).surface_name.clone(),
                text: p.text.clone(),
                gold: gold
                    .and_then(|g| g.labels.get(i).copied().flatten())
                    .map(|f| taxonomy.fine(f).surface_name.clone()),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, idx: usize) -> &Passage {
        &self.passages[idx]
    }

    pub fn ids(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.id.to_string()).collect()
    }

    /// Sets the label state of the passage at `idx`.
    ///
    /// # Panics
    ///
    /// If the state carries a fine label outside the passage's candidates.
    pub fn set_state(&mut self, idx: usize, state: LabelState, taxonomy: &Taxonomy) {
        let p = &mut self.passages[idx];
        if let Some(f) = state.fine() {
            assert_eq!(
                taxonomy.parent(f),
                p.coarse,
                "label {f} is not a candidate of passage {}",
                p.id
            );
        }
        p.state = state;
    }

    pub fn count_state(&self, pred: impl Fn(&LabelState) -> bool) -> usize {
        self.passages.iter().filter(|p| pred(&p.state)).count()
    }
}

/// Which fine labels must be absent for a surface-name match to count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusiveScope {
    /// Only the passage's own candidate set.
    #[default]
    Candidates,
    /// Every fine label in the taxonomy.
    All,
}

/// Marks passages whose text mentions exactly one candidate surface name.
///
/// Recomputes from text every call, so repeated calls leave identical states.
/// Returns the number of weak seeds.
pub fn seed_weak_supervision(
    corpus: &mut Corpus,
    taxonomy: &Taxonomy,
    scope: ExclusiveScope,
) -> usize {
    let names: Vec<Vec<String>> = taxonomy
        .fine_labels()
        .iter()
        .map(|f| tokenize(&f.surface_name))
        .collect();
    let all: Vec<FineId> = taxonomy.fine_labels().iter().map(|f| f.id).collect();

    let mut count = 0;
    for p in &mut corpus.passages {
        let tokens = tokenize(&p.text);
        let pool: &[FineId] = match scope {
            ExclusiveScope::Candidates => taxonomy.candidates(p.coarse),
            ExclusiveScope::All => &all,
        };
        let mut hits = pool
            .iter()
            .copied()
            .filter(|f| contains_phrase(&tokens, &names[f.0]));
        let seed = match (hits.next(), hits.next()) {
            (Some(f), None) if taxonomy.parent(f) == p.coarse => Some(f),
            _ => None,
        };
        p.seed = seed;
        p.state = match seed {
            Some(fine) => {
                count += 1;
                LabelState::WeakSeed { fine }
            }
            None => LabelState::Unlabeled,
        };
    }
    count
}

/// Weak-seed count over passage count for one coarse label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRatio {
    pub coarse: CoarseId,
    pub seeds: usize,
    pub total: usize,
}

impl SeedRatio {
    pub fn value(&self) -> f64 {
        self.seeds as f64 / self.total as f64
    }
}

pub fn seed_ratios(corpus: &Corpus, taxonomy: &Taxonomy) -> Result<Vec<SeedRatio>> {
    let mut ratios: Vec<SeedRatio> = taxonomy
        .coarse_labels()
        .iter()
        .map(|c| SeedRatio {
            coarse: c.id,
            seeds: 0,
            total: 0,
        })
        .collect();
    for p in &corpus.passages {
        let r = &mut ratios[p.coarse.0];
        r.total += 1;
        if p.seed.is_some() {
            r.seeds += 1;
        }
    }
    if let Some(empty) = ratios.iter().find(|r| r.total == 0) {
        return Err(Error::Corpus(format!(
            "coarse label '{}' has no passages; seed ratio undefined",
            taxonomy.coarse(empty.coarse).surface_name
        )));
    }
    Ok(ratios)
}

pub const R_CANDIDATES: [u32; 5] = [1, 5, 10, 15, 20];

/// Picks the candidate percentage closest to the smallest seed ratio.
///
/// Comparisons are done on exact integer cross-products, so a ratio of
/// exactly 3% is a true tie between 1 and 5; ties go to the smaller candidate.
pub fn select_r(ratios: &[SeedRatio], candidates: &[u32]) -> Result<u32> {
    if candidates.is_empty() {
        return Err(Error::Config("empty r candidate set".into()));
    }
    let min = ratios
        .iter()
        .filter(|r| r.total > 0)
        .min_by(|a, b| {
            let lhs = a.seeds as u128 * b.total as u128;
            let rhs = b.seeds as u128 * a.total as u128;
            lhs.cmp(&rhs)
        })
        .ok_or_else(|| Error::Config("no seed ratios to select r from".into()))?;

    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let distance =
        |c: u32| (c as i128 * min.total as i128 - 100 * min.seeds as i128).unsigned_abs();
    let mut best = sorted[0];
    for &c in &sorted[1..] {
        if distance(c) < distance(best) {
            best = c;
        }
    }
    Ok(best)
}
