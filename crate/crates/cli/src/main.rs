//! `kgeu`: train and evaluate knowledge graph embeddings from the shell.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kgeu::model::{ModelConfig, ModelKind, Norm, ShareMode};
use kgeu::toy::ToySpec;
use kgeu::train::default_learning_rate;
use kgeu::{CandidatePolicy, Direction, EvalConfig, TrainConfig, TripleFormat};

use commands::{EvalSettings, ToySettings, TrainSettings, UsageError};

#[derive(Parser)]
#[command(name = "kgeu", version, about = "Knowledge graph embeddings with a unified entity/property vocabulary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse triple files, print dataset statistics, optionally dump the vocabulary.
    Ingest(IngestArgs),
    /// Train one model and write an archive, training log and manifest.
    Train(TrainArgs),
    /// Evaluate link prediction on held-out triples.
    Eval(EvalArgs),
    /// Print the best completions of a head or tail query.
    Predict(PredictArgs),
    /// Generate the bilingual translation toy dataset.
    GenToy(GenToyArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct VocabFlags {
    /// Give a term occurring as both node and predicate a single id.
    #[arg(long, overrides_with = "no_unify")]
    unify: bool,
    /// Separate ids for the entity and property roles (default).
    #[arg(long)]
    no_unify: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<TripleFormat>,
    #[command(flatten)]
    vocab: VocabFlags,
    /// Keep triples with literal objects as ordinary terms.
    #[arg(long)]
    keep_literals: bool,
    /// Write the vocabulary dump here.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    train: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "transe")]
    model: ModelKind,
    #[command(flatten)]
    vocab: VocabFlags,
    #[arg(long, default_value = "always")]
    share: ShareMode,
    /// Do not unit-normalize shared rows (TransE only).
    #[arg(long)]
    no_renorm_shared: bool,
    /// Vector size; complex components for ComplEx [default: 200, ComplEx 100]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dim: Option<u64>,
    /// [default: 0.001, ComplEx 0.01]
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// L2 weight for ComplEx.
    #[arg(long, default_value_t = 1e-3)]
    regularization: f64,
    #[arg(long, default_value = "l2")]
    norm: Norm,
    /// Triples per batch [default: all below 10000 triples, else 512]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    negatives: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    format: Option<TripleFormat>,
    #[arg(long)]
    keep_literals: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainSettings> {
        let dim = match self.dim {
            Some(d) => d as usize,
            None if self.model == ModelKind::ComplEx => 100,
            None => 200,
        };
        let model = ModelConfig {
            norm: self.norm,
            margin: self.margin,
            regularization: self.regularization,
            share: self.share,
            renorm_shared: !self.no_renorm_shared,
            ..ModelConfig::new(self.model, dim)
        };
        let config = TrainConfig {
            learning_rate: self.lr.unwrap_or_else(|| default_learning_rate(self.model)),
            epochs: self.epochs as usize,
            batch_size: self.batch.map(|b| b as usize),
            negatives_per_positive: self.negatives as usize,
            seed: self.seed,
            ..TrainConfig::new(model)
        };
        config.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(TrainSettings {
            format: self.format.unwrap_or_else(|| TripleFormat::from_path(&self.train)),
            train: self.train.clone(),
            keep_literals: self.keep_literals,
            unify: self.vocab.unify,
            config,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    archive: PathBuf,
    test: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Training triples: filtered out of rankings, retrained on with --seeds.
    #[arg(long)]
    train: Option<PathBuf>,
    /// More known triples to filter (e.g. a validation split).
    #[arg(long)]
    known: Vec<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    hits_k: u64,
    /// Retrain for this many consecutive seeds and report Avg and Best rows.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Also rank the property-role ids of shared terms (non-unified archives).
    #[arg(long)]
    include_shared_properties: bool,
    /// Add relation prediction `(s, ?, o)` to the report.
    #[arg(long)]
    relation_prediction: bool,
    /// Row label [default: TransE, TransU(TransE), ...]
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    format: Option<TripleFormat>,
    #[arg(long)]
    keep_literals: bool,
}

impl EvalArgs {
    fn resolve(&self) -> Result<EvalSettings> {
        let label = match &self.label {
            Some(l) => l.clone(),
            None => {
                let (_, vocab, config) = kgeu::store::load(&self.archive)?;
                commands::model_label(config.model.kind, vocab.unify())
            }
        };
        let candidate_policy = if self.include_shared_properties {
            CandidatePolicy::EntitiesPlusSharedProperties
        } else {
            CandidatePolicy::EntitiesOnly
        };
        Ok(EvalSettings {
            archive: self.archive.clone(),
            format: self.format.unwrap_or_else(|| TripleFormat::from_path(&self.test)),
            test: self.test.clone(),
            keep_literals: self.keep_literals,
            train: self.train.clone(),
            known: self.known.clone(),
            seeds: self.seeds as usize,
            label,
            eval: EvalConfig { candidate_policy, hits_k: self.hits_k as usize, ..EvalConfig::default() },
            relation_prediction: self.relation_prediction,
        })
    }
}

#[derive(Args)]
struct PredictArgs {
    archive: PathBuf,
    /// The known end of the query: subject for tail queries, object for head queries.
    term: String,
    relation: String,
    #[arg(long, default_value = "tail", value_parser = parse_direction)]
    direction: Direction,
    #[arg(short, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Leave out candidates that complete a triple listed in these files.
    #[arg(long)]
    filter: Vec<PathBuf>,
    #[arg(long)]
    format: Option<TripleFormat>,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "head" => Ok(Direction::Head),
        "tail" => Ok(Direction::Tail),
        other => Err(format!("unknown direction `{other}` (expected head or tail)")),
    }
}

#[derive(Args)]
struct GenToyArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    n_facts: usize,
    /// Entities per language.
    #[arg(long, default_value_t = 40)]
    n_entities: usize,
    /// Relations per language.
    #[arg(long, default_value_t = 4)]
    n_relations: usize,
    #[arg(long, default_value_t = 1.0)]
    translation_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    holdout_fraction: f64,
    /// Link relations only, not entities.
    #[arg(long)]
    no_entity_translations: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory for the rerun.
    #[arg(short, long)]
    out: PathBuf,
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("KGEU_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("KGEU_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => {
            let stats = commands::run_ingest(&a.inputs, a.format, a.vocab.unify, a.keep_literals, a.vocab_out.as_deref())?;
            println!("{stats}");
        }
        Command::Train(a) => {
            let settings = a.resolve()?;
            let summary = commands::run_train(&settings, &a.out)?;
            println!(
                "{}: {} triples, {} epochs, final mean loss {:.6}, archive {}",
                summary.label,
                summary.triples,
                settings.config.epochs,
                summary.final_loss,
                a.out.join(commands::ARCHIVE_FILE).display()
            );
            if summary.exhausted_negatives > 0 {
                log::warn!("{} negatives fell back to a known triple", summary.exhausted_negatives);
            }
        }
        Command::Eval(a) => {
            let settings = a.resolve()?;
            let output = commands::run_eval(&settings, &a.out)?;
            print!("{}", output.table());
        }
        Command::Predict(a) => {
            let predictions =
                commands::run_predict(&a.archive, &a.term, &a.relation, a.direction, a.k as usize, &a.filter, a.format)?;
            for (i, p) in predictions.iter().enumerate() {
                println!("{}\t{}\t{:.6}", i + 1, p.term, p.score);
            }
        }
        Command::GenToy(a) => {
            let spec = ToySpec {
                n_facts: a.n_facts,
                n_entities: a.n_entities,
                n_relations: a.n_relations,
                translation_fraction: a.translation_fraction,
                holdout_fraction: a.holdout_fraction,
                entity_translations: !a.no_entity_translations,
                seed: a.seed,
            };
            let (train, test) = commands::run_gen_toy(&ToySettings { spec }, &a.out)?;
            println!("train={train} test={test} in {}", a.out.display());
        }
        Command::Replay(a) => {
            commands::run_replay(&a.manifest, &a.out)?;
            println!("replayed {} into {}", a.manifest.display(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
