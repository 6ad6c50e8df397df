//! Command implementations. Each command runs from a resolved settings
//! struct so that a manifest can replay it.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgeu::eval::{evaluate_relations, format_table, Metrics};
use kgeu::model::ModelKind;
use kgeu::rdf::{drop_literals, read_triples_file, to_tsv};
use kgeu::store;
use kgeu::toy::{generate_toy, ToySpec};
use kgeu::vocab::{dataset_stats, intern, DatasetStats};
use kgeu::{evaluate, train, Direction, EvalConfig, EvalReport, RawTriple, TrainConfig, Triple, TripleFormat, TripleIndex, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{self, RunManifest, Settings};

pub const ARCHIVE_FILE: &str = "model.kgeu";
pub const LOG_FILE: &str = "train.log";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const TOY_TRAIN: &str = "train.tsv";
pub const TOY_TEST: &str = "test.tsv";

/// Bad flag combination found after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Report label: `TransE` for a baseline, `TransU(TransE)` for a unified run.
pub fn model_label(kind: ModelKind, unify: bool) -> String {
    if unify {
        format!("TransU({})", kind.label())
    } else {
        kind.label().to_string()
    }
}

/// Reads and concatenates triple files. Literal-object triples are
/// dropped unless `keep_literals`.
pub fn load_raw(paths: &[PathBuf], format: Option<TripleFormat>, keep_literals: bool) -> Result<Vec<RawTriple>> {
    let mut all = Vec::new();
    for path in paths {
        let fmt = format.unwrap_or_else(|| TripleFormat::from_path(path));
        let triples = read_triples_file(path, fmt).with_context(|| format!("reading {}", path.display()))?;
        if keep_literals {
            all.extend(triples);
        } else {
            let (kept, dropped) = drop_literals(triples);
            if dropped > 0 {
                log::info!("{}: dropped {dropped} literal-object triples", path.display());
            }
            all.extend(kept);
        }
    }
    Ok(all)
}

/// Interns what it can; triples with terms outside `vocab` are skipped.
fn intern_known(raw: &[RawTriple], vocab: &Vocabulary) -> Vec<Triple> {
    let resolvable: Vec<RawTriple> = raw
        .iter()
        .filter(|t| {
            vocab.entity_id(&t.subject).is_some()
                && vocab.property_id(&t.predicate).is_some()
                && vocab.entity_id(&t.object_term()).is_some()
        })
        .cloned()
        .collect();
    if resolvable.len() < raw.len() {
        log::info!("{} known triples mention terms outside the model and are ignored", raw.len() - resolvable.len());
    }
    intern(&resolvable, vocab).map(|i| i.triples).unwrap_or_default()
}

pub fn run_ingest(
    inputs: &[PathBuf],
    format: Option<TripleFormat>,
    unify: bool,
    keep_literals: bool,
    vocab_out: Option<&Path>,
) -> Result<DatasetStats> {
    let raw = load_raw(inputs, format, keep_literals)?;
    let vocab = Vocabulary::build(&raw, unify)?;
    let triples = intern(&raw, &vocab)?.triples;
    if let Some(path) = vocab_out {
        fs::write(path, vocab.dump()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(dataset_stats(&vocab, &triples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub train: PathBuf,
    pub format: TripleFormat,
    pub keep_literals: bool,
    pub unify: bool,
    pub config: TrainConfig,
}

pub struct TrainSummary {
    pub label: String,
    pub triples: usize,
    pub final_loss: f64,
    pub exhausted_negatives: usize,
}

fn load_training_set(s: &TrainSettings) -> Result<(Vocabulary, Vec<Triple>)> {
    let raw = load_raw(std::slice::from_ref(&s.train), Some(s.format), s.keep_literals)?;
    let vocab = Vocabulary::build(&raw, s.unify)?;
    let triples = intern(&raw, &vocab)?.triples;
    Ok((vocab, triples))
}

/// Trains one model; writes the archive, training log and manifest to `out`.
pub fn run_train(s: &TrainSettings, out: &Path) -> Result<TrainSummary> {
    let (vocab, triples) = load_training_set(s)?;
    let label = model_label(s.config.model.kind, s.unify);
    log::info!("training {label} on {} triples, {} ids", triples.len(), vocab.len());
    let outcome = kgeu::train::train_with(&triples, &vocab, &s.config, |rec, _| {
        if rec.epoch % 100 == 0 {
            log::debug!("{}", rec.log_line());
        }
    })?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    store::save(&outcome.table, &vocab, &s.config, &out.join(ARCHIVE_FILE))?;
    let log_path = out.join(LOG_FILE);
    fs::write(&log_path, outcome.log_text()).with_context(|| format!("writing {}", log_path.display()))?;
    RunManifest::new(s.config.seed, Settings::Train(s.clone()), &[&s.train])?.write(out)?;

    Ok(TrainSummary {
        label,
        triples: triples.len(),
        final_loss: outcome.log.last().map_or(0.0, |r| r.mean_loss),
        exhausted_negatives: outcome.exhausted_negatives,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub archive: PathBuf,
    pub test: PathBuf,
    pub format: TripleFormat,
    pub keep_literals: bool,
    /// Training triples: part of the filter set, and the data retrained on
    /// when `seeds > 1`.
    pub train: Option<PathBuf>,
    /// Further known triples for the filtered setting.
    pub known: Vec<PathBuf>,
    pub seeds: usize,
    pub label: String,
    pub eval: EvalConfig,
    pub relation_prediction: bool,
}

impl EvalSettings {
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.archive, &self.test];
        v.extend(self.train.as_deref());
        v.extend(self.known.iter().map(PathBuf::as_path));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: EvalReport,
    pub relation_prediction: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: Metrics,
    pub best: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub toolkit_version: String,
    pub label: String,
    pub archive_sha256: String,
    pub test_sha256: String,
    pub unify: bool,
    pub model: TrainConfig,
    pub eval: EvalConfig,
    pub runs: Vec<SeedRun>,
    /// Present for multi-seed runs.
    pub summary: Option<Summary>,
}

impl EvalOutput {
    pub fn rows(&self) -> Vec<(String, Metrics)> {
        let mut rows = match &self.summary {
            Some(s) => vec![(format!("{}:Avg", self.label), s.avg), (format!("{}:Best", self.label), s.best)],
            None => self.runs.iter().map(|r| (self.label.clone(), r.report.overall)).collect(),
        };
        if self.runs.len() == 1 {
            if let Some(m) = self.runs[0].relation_prediction {
                rows.push((format!("{} relation", self.label), m));
            }
        }
        rows
    }

    pub fn table(&self) -> String {
        format_table(&self.rows(), self.eval.hits_k)
    }
}

/// Field-wise mean over runs.
pub fn average(metrics: &[Metrics]) -> Metrics {
    let n = metrics.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    Metrics {
        queries: metrics.first().map_or(0, |m| m.queries),
        mean_rank_raw: mean(|m| m.mean_rank_raw),
        mean_rank_filtered: mean(|m| m.mean_rank_filtered),
        hits_raw: mean(|m| m.hits_raw),
        hits_filtered: mean(|m| m.hits_filtered),
    }
}

/// Field-wise best over runs: lowest mean ranks, highest hit rates. The
/// columns may come from different seeds.
pub fn best(metrics: &[Metrics]) -> Metrics {
    let min = |f: fn(&Metrics) -> f64| metrics.iter().map(f).fold(f64::INFINITY, f64::min);
    let max = |f: fn(&Metrics) -> f64| metrics.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Metrics {
        queries: metrics.first().map_or(0, |m| m.queries),
        mean_rank_raw: min(|m| m.mean_rank_raw),
        mean_rank_filtered: min(|m| m.mean_rank_filtered),
        hits_raw: max(|m| m.hits_raw),
        hits_filtered: max(|m| m.hits_filtered),
    }
}

/// Evaluates an archive, or with `seeds > 1` retrains its configuration on
/// `train` for consecutive seeds starting at the archive's seed. Writes the
/// text table, JSON report and manifest to `out`.
pub fn run_eval(s: &EvalSettings, out: &Path) -> Result<EvalOutput> {
    if s.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    if s.seeds > 1 && s.train.is_none() {
        return Err(UsageError("--seeds above 1 needs --train to retrain on".into()).into());
    }
    let (table, vocab, config) = store::load(&s.archive)?;
    let test_raw = load_raw(std::slice::from_ref(&s.test), Some(s.format), s.keep_literals)?;
    let test = intern(&test_raw, &vocab).with_context(|| format!("test triples in {}", s.test.display()))?.triples;

    let mut index = TripleIndex::new(&test);
    let mut train_triples = Vec::new();
    if let Some(path) = &s.train {
        let raw = load_raw(std::slice::from_ref(path), Some(s.format), s.keep_literals)?;
        train_triples = intern_known(&raw, &vocab);
        index.extend(&train_triples);
    }
    if !s.known.is_empty() {
        let raw = load_raw(&s.known, Some(s.format), s.keep_literals)?;
        index.extend(&intern_known(&raw, &vocab));
    }

    let evaluate_one = |table: &kgeu::EmbeddingTable, seed: u64| -> Result<SeedRun> {
        let report = evaluate(table, &test, &vocab, &index, &s.eval)?;
        let relation_prediction = if s.relation_prediction {
            Some(evaluate_relations(table, &test, &vocab, &index, s.eval.hits_k)?)
        } else {
            None
        };
        Ok(SeedRun { seed, report, relation_prediction })
    };

    let runs: Vec<SeedRun> = if s.seeds == 1 {
        vec![evaluate_one(&table, config.seed)?]
    } else {
        let train_path = s.train.as_ref().expect("checked above");
        let raw = load_raw(std::slice::from_ref(train_path), Some(s.format), s.keep_literals)?;
        let rebuilt = Vocabulary::build(&raw, vocab.unify())?;
        if rebuilt.dump() != vocab.dump() {
            bail!("{} does not match the vocabulary the archive was trained on", train_path.display());
        }
        let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| config.seed + i).collect();
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, ..config };
                let outcome = train(&train_triples, &vocab, &cfg)?;
                evaluate_one(&outcome.table, seed)
            })
            .collect::<Result<_>>()?
    };

    let summary = (runs.len() > 1).then(|| {
        let overall: Vec<Metrics> = runs.iter().map(|r| r.report.overall).collect();
        Summary { avg: average(&overall), best: best(&overall) }
    });
    let output = EvalOutput {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        label: s.label.clone(),
        archive_sha256: manifest::sha256_file(&s.archive)?,
        test_sha256: manifest::sha256_file(&s.test)?,
        unify: vocab.unify(),
        model: config,
        eval: s.eval.clone(),
        runs,
        summary,
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text_path = out.join(REPORT_TEXT);
    fs::write(&text_path, output.table()).with_context(|| format!("writing {}", text_path.display()))?;
    let json_path = out.join(REPORT_JSON);
    let mut json = serde_json::to_string_pretty(&output)?;
    json.push('\n');
    fs::write(&json_path, json).with_context(|| format!("writing {}", json_path.display()))?;
    RunManifest::new(config.seed, Settings::Eval(s.clone()), &s.inputs())?.write(out)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub term: String,
    pub score: f64,
}

/// Top-`k` completions of `(term, relation, ?)` (tail) or
/// `(?, relation, term)` (head), best first, ties by id. With `known`
/// triples, candidates completing a known triple are left out.
pub fn run_predict(
    archive: &Path,
    term: &str,
    relation: &str,
    direction: Direction,
    k: usize,
    known: &[PathBuf],
    format: Option<TripleFormat>,
) -> Result<Vec<Prediction>> {
    let (table, vocab, _) = store::load(archive)?;
    let fixed = vocab.entity_id(term);
    let p = vocab.property_id(relation);
    let mut unknown = Vec::new();
    if fixed.is_none() {
        unknown.push(format!("entity `{term}`"));
    }
    if p.is_none() {
        unknown.push(format!("relation `{relation}`"));
    }
    let (Some(fixed), Some(p)) = (fixed, p) else {
        bail!("unknown {}", unknown.join(" and "));
    };
    let index = if known.is_empty() {
        None
    } else {
        let raw = load_raw(known, format, true)?;
        Some(TripleIndex::new(&intern_known(&raw, &vocab)))
    };

    let mut scored: Vec<(f64, kgeu::TermId)> = vocab
        .entity_ids()
        .iter()
        .filter_map(|&c| {
            let t = match direction {
                Direction::Tail => Triple::new(fixed, p, c),
                Direction::Head => Triple::new(c, p, fixed),
            };
            if index.as_ref().is_some_and(|i| i.contains(&t)) {
                return None;
            }
            Some((table.score(t), c))
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(score, c)| Prediction { term: vocab.term(c).to_string(), score })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySettings {
    pub spec: ToySpec,
}

/// Writes `train.tsv`, `test.tsv` and the manifest to `out`.
pub fn run_gen_toy(s: &ToySettings, out: &Path) -> Result<(usize, usize)> {
    let data = generate_toy(&s.spec).map_err(|e| UsageError(e.to_string()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, triples) in [(TOY_TRAIN, &data.train), (TOY_TEST, &data.test)] {
        let path = out.join(name);
        fs::write(&path, to_tsv(triples)).with_context(|| format!("writing {}", path.display()))?;
    }
    RunManifest::new(s.spec.seed, Settings::GenToy(s.clone()), &[])?.write(out)?;
    Ok((data.train.len(), data.test.len()))
}

/// Reruns the command recorded in a manifest, writing to `out`.
pub fn run_replay(manifest_path: &Path, out: &Path) -> Result<Settings> {
    let m = RunManifest::read(manifest_path)?;
    m.verify_inputs()?;
    if m.toolkit_version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest written by version {}, replaying with {}", m.toolkit_version, env!("CARGO_PKG_VERSION"));
    }
    match &m.settings {
        Settings::Train(s) => {
            run_train(s, out)?;
        }
        Settings::Eval(s) => {
            run_eval(s, out)?;
        }
        Settings::GenToy(s) => {
            run_gen_toy(s, out)?;
        }
    }
    Ok(m.settings)
}
