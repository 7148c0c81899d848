use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use c2f_core::bootstrap::CsLosses;
use c2f_core::config::{RSetting, RunConfig};
use c2f_core::corpus::{Corpus, ExclusiveScope};
use c2f_core::embedding::{EmbeddingKind, EmbeddingManifest, EmbeddingMatrix};
use c2f_core::eval::{confusion_tsv, evaluate};
use c2f_core::pipeline::{ablate, read_predictions, run_pipeline, Variant};
use c2f_core::similarity::Metric;
use c2f_core::synthetic::{generate, write_to_dir, GenSpec};
use c2f_core::taxonomy::Taxonomy;
use c2f_core::{Error, Result};

/// Refine coarse labels into fine labels with prototype contrastive training.
#[derive(Parser)]
#[command(name = "c2f", version)]
struct Cli {
    /// Directory that receives outputs when no explicit output is given.
    #[arg(long, global = true, env = "C2F_OUTPUT_ROOT", default_value = "c2f-output")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run(RunArgs),
    /// Run a base configuration and single-change variants of it.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated: fine, bootstrap, gloss, select, similarity, manhattan, euclidean.
        /// Defaults to all of them.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Write a synthetic hierarchical corpus with embeddings and gold labels.
    GenSynthetic(GenArgs),
    /// Score a predictions file against the gold labels of a corpus.
    Evaluate {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Directory for eval_report.json and confusion tables.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        emit_confusion: bool,
    },
    /// Print the shape and row norms of an embedding file with its sidecar manifest.
    InspectEmbeddings {
        file: PathBuf,
        #[arg(long, default_value = "passage")]
        kind: String,
        /// Corpus whose ids are checked against the sidecar hash.
        #[arg(long, requires = "taxonomy")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    prototypes: Option<PathBuf>,
    #[arg(long)]
    plain_prototypes: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Confident-set percentage or `auto`.
    #[arg(long)]
    r: Option<RSetting>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    bootstrap_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mapping_free: bool,
    #[arg(long)]
    no_select: bool,
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    no_gloss: bool,
    /// `both` or `local-only`.
    #[arg(long, value_parser = parse_cs_losses)]
    cs_losses: Option<CsLosses>,
    #[arg(long)]
    paper_literal_sign: bool,
    /// `candidates` or `all`.
    #[arg(long, value_parser = parse_scope)]
    exclusive_scope: Option<ExclusiveScope>,
    #[arg(long)]
    strict_beta: bool,
    #[arg(long)]
    emit_confusion: bool,
}

fn parse_cs_losses(s: &str) -> std::result::Result<CsLosses, String> {
    match s {
        "both" => Ok(CsLosses::Both),
        "local-only" => Ok(CsLosses::LocalOnly),
        _ => Err(format!("expected 'both' or 'local-only', got '{s}'")),
    }
}

fn parse_scope(s: &str) -> std::result::Result<ExclusiveScope, String> {
    match s {
        "candidates" => Ok(ExclusiveScope::Candidates),
        "all" => Ok(ExclusiveScope::All),
        _ => Err(format!("expected 'candidates' or 'all', got '{s}'")),
    }
}

impl RunArgs {
    fn into_config(self, default_output: PathBuf) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(taxonomy, corpus, passages, prototypes, output, metric, k, gamma, sigma, lr);
        set!(weight_decay, batch_size, r, warmup_epochs, bootstrap_epochs, seed, cs_losses, exclusive_scope);
        if self.plain_prototypes.is_some() {
            c.plain_prototypes = self.plain_prototypes;
        }
        c.mapping_free |= self.mapping_free;
        c.no_select |= self.no_select;
        c.no_bootstrap |= self.no_bootstrap;
        c.no_gloss |= self.no_gloss;
        c.paper_literal_sign |= self.paper_literal_sign;
        c.strict_beta |= self.strict_beta;
        c.emit_confusion |= self.emit_confusion;
        if c.output.as_os_str().is_empty() {
            c.output = default_output;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct GenArgs {
    /// JSON generator spec; flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    n_coarse: Option<usize>,
    #[arg(long)]
    fine_per_coarse: Option<usize>,
    #[arg(long)]
    per_fine: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Sibling centroid distance in cluster radii.
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    coarse_separation: Option<f64>,
    /// Fraction of passages under the first coarse label.
    #[arg(long)]
    skew: Option<f64>,
    #[arg(long)]
    seed_fraction: Option<f64>,
    #[arg(long)]
    seed_spread: Option<f64>,
    #[arg(long)]
    prototype_offset: Option<f64>,
    #[arg(long)]
    prototype_noise: Option<f64>,
    #[arg(long)]
    hub_strength: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl GenArgs {
    fn spec(&self) -> Result<GenSpec> {
        let mut s = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text)?
            }
            None => GenSpec::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { s.$field = v; })*
            };
        }
        set!(n_coarse, fine_per_coarse, per_fine, dim, separation, coarse_separation, seed_fraction);
        set!(seed_spread, prototype_offset, prototype_noise, hub_strength, seed);
        if self.skew.is_some() {
            s.skew = self.skew;
        }
        Ok(s)
    }
}

fn inspect(file: &Path, kind: &str, corpus: Option<&Path>, taxonomy: Option<&Path>) -> Result<serde_json::Value> {
    let kind = match kind {
        "passage" => EmbeddingKind::Passage,
        "prototype" => EmbeddingKind::Prototype,
        other => return Err(Error::Config(format!("kind must be passage or prototype, got '{other}'"))),
    };
    let m = EmbeddingMatrix::read(file, kind)?;
    let norms = m.row_norms();
    let (min, max) = norms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| (lo.min(n), hi.max(n)));
    let mean = norms.iter().sum::<f64>() / norms.len().max(1) as f64;
    let manifest = EmbeddingManifest::load_for(file)?;
    let id_check = match (corpus, taxonomy, &manifest) {
        (Some(c), Some(t), Some(man)) => {
            let tax = Taxonomy::load(t)?;
            let (corpus, _) = Corpus::load(c, &tax)?;
            man.verify(&corpus.ids())?;
            Some(man.id_hash.is_some())
        }
        (Some(_), Some(_), None) => {
            return Err(Error::Format(format!("{} has no manifest sidecar to check ids against", file.display())))
        }
        _ => None,
    };
    Ok(json!({
        "file": file,
        "n_rows": m.n_rows(),
        "dim": m.dim(),
        "norm_min": min,
        "norm_mean": mean,
        "norm_max": max,
        "manifest": manifest,
        "id_hash_verified": id_check,
    }))
}

fn dispatch(cli: Cli) -> Result<serde_json::Value> {
    let root = cli.output_root;
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config(root.join("run"))?;
            Ok(serde_json::to_value(run_pipeline(&config)?)?)
        }
        Command::Ablate { run, variants } => {
            let config = run.into_config(root.join("ablate"))?;
            let variants = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| v.parse())
                    .collect::<Result<Vec<Variant>>>()?
            };
            Ok(serde_json::to_value(ablate(&config, &variants)?)?)
        }
        Command::GenSynthetic(args) => {
            let spec = args.spec()?;
            let out = args.output.clone().unwrap_or_else(|| root.join("synthetic"));
            let data = generate(&spec)?;
            let paths = write_to_dir(&data, &out)?;
            Ok(json!({
                "output": out,
                "n_passages": data.corpus.len(),
                "n_fine": data.taxonomy.n_fine(),
                "taxonomy": paths.taxonomy,
                "corpus": paths.corpus,
                "passages": paths.passages,
                "prototypes": paths.prototypes,
                "plain_prototypes": paths.plain_prototypes,
            }))
        }
        Command::Evaluate {
            taxonomy,
            corpus,
            predictions,
            output,
            emit_confusion,
        } => {
            let tax = Taxonomy::load(&taxonomy)?;
            let (corpus, gold) = Corpus::load(&corpus, &tax)?;
            let preds = read_predictions(&predictions, &corpus, &tax)?;
            let report = evaluate(&preds, &gold, &tax)?;
            if let Some(dir) = output {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                let write = |name: &str, text: String| {
                    let p = dir.join(name);
                    std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
                };
                write("eval_report.json", serde_json::to_string_pretty(&report)? + "\n")?;
                write("confusion.tsv", confusion_tsv(&report.labels, &report.confusion))?;
                if emit_confusion {
                    for b in &report.per_coarse {
                        write(&format!("confusion_{}.tsv", b.coarse), confusion_tsv(&b.labels, &b.counts))?;
                    }
                }
            }
            Ok(json!({
                "micro_f1": report.micro_f1,
                "macro_f1": report.macro_f1,
                "n_evaluated": report.n_evaluated,
            }))
        }
        Command::InspectEmbeddings {
            file,
            kind,
            corpus,
            taxonomy,
        } => inspect(&file, &kind, corpus.as_deref(), taxonomy.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(value) => {
            let text = serde_json::to_string_pretty(&value).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
