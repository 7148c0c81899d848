//! End-to-end runs: load inputs, seed, train, predict, evaluate and write
//! artifacts; plus the ablation driver that compares variants of one base
//! configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{Bootstrapper, EpochRecord};
use crate::config::{RSetting, RunConfig};
use crate::corpus::{seed_ratios, seed_weak_supervision, select_r, Corpus, GoldLabels, R_CANDIDATES};
use crate::embedding::{EmbeddingKind, EmbeddingManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{confusion_tsv, evaluate, EvalReport, Prediction};
use crate::model::checkpoint;
use crate::similarity::Metric;
use crate::taxonomy::{FineId, Taxonomy};

/// Everything a run reads, loaded and checked once.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub taxonomy: Taxonomy,
    pub corpus: Corpus,
    pub gold: GoldLabels,
    pub passages: EmbeddingMatrix,
    pub prototypes: EmbeddingMatrix,
    pub plain_prototypes: Option<EmbeddingMatrix>,
}

fn read_embeddings(path: &Path, kind: EmbeddingKind, ids: Option<&[String]>) -> Result<EmbeddingMatrix> {
    let m = EmbeddingMatrix::read(path, kind)?;
    if let Some(manifest) = EmbeddingManifest::load_for(path)? {
        if manifest.n_rows != m.n_rows() {
            return Err(Error::Format(format!(
                "{}: manifest records {} rows, file has {}",
                path.display(),
                manifest.n_rows,
                m.n_rows()
            )));
        }
        if let Some(ids) = ids {
            manifest.verify(ids)?;
        }
    }
    Ok(m)
}

impl Inputs {
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let taxonomy = Taxonomy::load(&config.taxonomy)?;
        let (corpus, gold) = Corpus::load(&config.corpus, &taxonomy)?;
        let ids = corpus.ids();
        let passages = read_embeddings(&config.passages, EmbeddingKind::Passage, Some(&ids))?;
        let prototypes = if config.no_gloss {
            read_embeddings(config.prototype_path()?, EmbeddingKind::Prototype, None)?
        } else {
            read_embeddings(&config.prototypes, EmbeddingKind::Prototype, None)?
        };
        let plain_prototypes = match &config.plain_prototypes {
            Some(p) if !config.no_gloss && p.is_file() => {
                Some(read_embeddings(p, EmbeddingKind::Prototype, None)?)
            }
            _ => None,
        };
        Ok(Inputs {
            taxonomy,
            corpus,
            gold,
            passages,
            prototypes,
            plain_prototypes,
        })
    }

    pub fn has_gold(&self) -> bool {
        self.gold.labels.iter().any(Option::is_some)
    }
}

/// Result of one in-memory run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub r_percent: u32,
    pub n_seeds: usize,
    pub predictions: Vec<Prediction>,
    pub log: Vec<EpochRecord>,
    pub betas: Vec<f64>,
    pub report: Option<EvalReport>,
    pub checkpoint: Vec<u8>,
}

/// Resolves `r` for a seeded corpus.
pub fn resolve_r(setting: RSetting, corpus: &Corpus, taxonomy: &Taxonomy) -> Result<u32> {
    match setting {
        RSetting::Fixed(n) => Ok(n),
        RSetting::Auto => select_r(&seed_ratios(corpus, taxonomy)?, &R_CANDIDATES),
    }
}

/// Runs training and evaluation on loaded inputs.
///
/// With `no_gloss` set, the surface-name-only prototypes in `inputs` are used
/// when present; otherwise `inputs.prototypes` is assumed to be the right file.
pub fn execute(inputs: &Inputs, config: &RunConfig) -> Result<RunResult> {
    let mut corpus = inputs.corpus.clone();
    let n_seeds = seed_weak_supervision(&mut corpus, &inputs.taxonomy, config.exclusive_scope);
    let r_percent = resolve_r(config.r, &corpus, &inputs.taxonomy)?;
    let prototypes = match (&inputs.plain_prototypes, config.no_gloss) {
        (Some(plain), true) => plain,
        _ => &inputs.prototypes,
    };
    let passages = inputs.passages.l2_normalize()?;
    let prototypes = prototypes.l2_normalize()?;
    let engine = Bootstrapper::new(
        &inputs.taxonomy,
        &passages,
        &prototypes,
        config.training(r_percent)?,
    )?;
    let mut model = engine.init_model();
    let outcome = engine.run(&mut corpus, &mut model)?;
    let report = if inputs.has_gold() {
        let fine: Vec<FineId> = outcome.predictions.iter().map(|p| p.fine).collect();
        Some(evaluate(&fine, &inputs.gold, &inputs.taxonomy)?)
    } else {
        None
    };
    Ok(RunResult {
        r_percent,
        n_seeds,
        predictions: outcome.predictions,
        log: outcome.log,
        betas: outcome.betas,
        report,
        checkpoint: checkpoint::to_bytes(&model.head, model.step()),
    })
}

/// `id \t predicted_fine \t score`, one line per passage after a header.
pub fn predictions_tsv(predictions: &[Prediction], corpus: &Corpus, taxonomy: &Taxonomy) -> String {
    let mut out = String::from("id\tpredicted_fine\tscore\n");
    for p in predictions {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}",
            corpus.passage(p.passage).id,
            taxonomy.fine(p.fine).surface_name,
            p.score
        );
    }
    out
}

/// Reads a predictions file back into corpus order.
pub fn read_predictions(path: impl AsRef<Path>, corpus: &Corpus, taxonomy: &Taxonomy) -> Result<Vec<FineId>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut by_id = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("id\t") || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(name)) = (fields.next(), fields.next()) else {
            return Err(Error::Format(format!("{}:{}: expected id and label", path.display(), lineno + 1)));
        };
        let id: u64 = id
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad id '{id}'", path.display(), lineno + 1)))?;
        let fine = taxonomy
            .fine_by_name(name)
            .ok_or_else(|| Error::Format(format!("{}:{}: unknown label '{name}'", path.display(), lineno + 1)))?;
        by_id.insert(id, fine);
    }
    corpus
        .passages()
        .iter()
        .map(|p| {
            by_id
                .get(&p.id)
                .copied()
                .ok_or_else(|| Error::Evaluation(format!("no prediction for passage {}", p.id)))
        })
        .collect()
}

/// Stable per-run summary written as `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub r_percent: u32,
    pub n_passages: usize,
    pub n_seeds: usize,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub final_beta: Option<f64>,
    pub warnings: usize,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes the artifacts of a finished run into `config.output`.
pub fn write_artifacts(inputs: &Inputs, config: &RunConfig, result: &RunResult) -> Result<RunSummary> {
    let dir = &config.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("run_config.toml"), config.to_toml()?)?;

    let mut log = String::new();
    for rec in &result.log {
        log.push_str(&serde_json::to_string(rec)?);
        log.push('\n');
    }
    write(&dir.join("run_log.jsonl"), log)?;
    write(&dir.join("checkpoint.c2fm"), &result.checkpoint)?;
    write(
        &dir.join("predictions.tsv"),
        predictions_tsv(&result.predictions, &inputs.corpus, &inputs.taxonomy),
    )?;
    if let Some(report) = &result.report {
        write(&dir.join("eval_report.json"), serde_json::to_string_pretty(report)? + "\n")?;
        write(&dir.join("confusion.tsv"), confusion_tsv(&report.labels, &report.confusion))?;
        if config.emit_confusion {
            for block in &report.per_coarse {
                let name = format!("confusion_{}.tsv", file_safe(&block.coarse));
                write(&dir.join(name), confusion_tsv(&block.labels, &block.counts))?;
            }
        }
    }
    let summary = RunSummary {
        output: dir.clone(),
        r_percent: result.r_percent,
        n_passages: inputs.corpus.len(),
        n_seeds: result.n_seeds,
        micro_f1: result.report.as_ref().map(|r| r.micro_f1),
        macro_f1: result.report.as_ref().map(|r| r.macro_f1),
        final_beta: result.betas.last().copied().filter(|b| b.is_finite()),
        warnings: result.log.iter().map(|r| r.warnings.len()).sum(),
    };
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary> {
    let inputs = Inputs::load(config)?;
    let result = execute(&inputs, config)?;
    write_artifacts(&inputs, config, &result)
}

/// Single-change variants of a base run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fine,
    Bootstrap,
    Gloss,
    Select,
    Similarity,
    Manhattan,
    Euclidean,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Fine,
        Variant::Bootstrap,
        Variant::Gloss,
        Variant::Select,
        Variant::Similarity,
        Variant::Manhattan,
        Variant::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fine => "fine",
            Variant::Bootstrap => "bootstrap",
            Variant::Gloss => "gloss",
            Variant::Select => "select",
            Variant::Similarity => "similarity",
            Variant::Manhattan => "manhattan",
            Variant::Euclidean => "euclidean",
        }
    }

    /// Row label in the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Fine => "w/o fine",
            Variant::Bootstrap => "w/o bootstrap",
            Variant::Gloss => "w/o gloss",
            Variant::Select => "w/o select",
            Variant::Similarity => "w/o similarity",
            Variant::Manhattan => "w/ Manhattan similarity",
            Variant::Euclidean => "w/ Euclidean similarity",
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            Variant::Fine => c.mapping_free = true,
            Variant::Bootstrap => c.no_bootstrap = true,
            Variant::Gloss => c.no_gloss = true,
            Variant::Select => c.no_select = true,
            Variant::Similarity => c.metric = Metric::Cosine,
            Variant::Manhattan => c.metric = Metric::Manhattan,
            Variant::Euclidean => c.metric = Metric::Euclidean,
        }
        c.output = base.output.join(self.name());
        c
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation variant '{s}'; expected one of fine, bootstrap, gloss, select, similarity, manhattan, euclidean"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub delta_micro: f64,
    pub delta_macro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Percentages with two decimals, the base run first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tmicro_f1\tmacro_f1\tdelta_micro\tdelta_macro\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.2}\t{:.2}\t{:+.2}\t{:+.2}",
                r.label,
                100.0 * r.micro_f1,
                100.0 * r.macro_f1,
                100.0 * r.delta_micro,
                100.0 * r.delta_macro
            );
        }
        out
    }
}

/// Runs the base configuration and every variant with the same seed, writing
/// each run under its own subdirectory and the table next to them.
pub fn ablate(base: &RunConfig, variants: &[Variant]) -> Result<AblationTable> {
    let inputs = Inputs::load(base)?;
    if !inputs.has_gold() {
        return Err(Error::Evaluation("ablation needs gold labels in the corpus".into()));
    }
    let mut base_run = base.clone();
    base_run.output = base.output.join("base");
    let result = execute(&inputs, &base_run)?;
    write_artifacts(&inputs, &base_run, &result)?;
    let base_report = result.report.expect("gold labels checked above");
    let mut rows = vec![AblationRow {
        label: "full".into(),
        micro_f1: base_report.micro_f1,
        macro_f1: base_report.macro_f1,
        delta_micro: 0.0,
        delta_macro: 0.0,
    }];
    for &v in variants {
        let config = v.apply(base);
        let variant_inputs;
        let inputs_ref = if v == Variant::Gloss && inputs.plain_prototypes.is_none() {
            variant_inputs = Inputs::load(&config)?;
            &variant_inputs
        } else {
            &inputs
        };
        let result = execute(inputs_ref, &config)?;
        write_artifacts(inputs_ref, &config, &result)?;
        let report = result.report.expect("gold labels checked above");
        rows.push(AblationRow {
            label: v.label().into(),
            micro_f1: report.micro_f1,
            macro_f1: report.macro_f1,
            delta_micro: report.micro_f1 - base_report.micro_f1,
            delta_macro: report.macro_f1 - base_report.macro_f1,
        });
    }
    let table = AblationTable { rows };
    let dir = &base.output;
    write(&dir.join("ablation.tsv"), table.to_tsv())?;
    write(&dir.join("ablation.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(table)
}
