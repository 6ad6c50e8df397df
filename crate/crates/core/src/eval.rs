//! Link-prediction evaluation: raw and filtered head/tail ranks, MeanRank
//! and Hits@k.
//!
//! Ties are broken pessimistically: every other candidate scoring exactly
//! the same as the true answer is ranked ahead of it, so a constant scorer
//! gets the worst possible rank rather than a lucky one.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EmbeddingTable;
use crate::vocab::{TermId, Triple, TripleIndex, Vocabulary};

pub const TIE_POLICY: &str = "pessimistic";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("true answer {answer} of triple ({}, {}, {}) is not a ranking candidate", .triple.s, .triple.p, .triple.o)]
    TrueAnswerNotCandidate { triple: Triple, answer: TermId },
    #[error("hits@k needs k >= 1")]
    InvalidHitsK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePolicy {
    /// E1: every id with the entity role.
    EntitiesOnly,
    /// E1 plus the property-role ids of terms that also occur as entities.
    /// Differs from `EntitiesOnly` only for non-unified vocabularies.
    EntitiesPlusSharedProperties,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Predict the subject of `(?, p, o)`.
    Head,
    /// Predict the object of `(s, p, ?)`.
    Tail,
}

impl Direction {
    fn answer(self, t: Triple) -> TermId {
        match self {
            Direction::Head => t.s,
            Direction::Tail => t.o,
        }
    }

    fn substitute(self, t: Triple, c: TermId) -> Triple {
        match self {
            Direction::Head => Triple { s: c, ..t },
            Direction::Tail => Triple { o: c, ..t },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub candidate_policy: CandidatePolicy,
    pub hits_k: usize,
    pub directions: Vec<Direction>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            candidate_policy: CandidatePolicy::EntitiesOnly,
            hits_k: 10,
            directions: vec![Direction::Head, Direction::Tail],
        }
    }
}

/// Candidate ids for head/tail prediction, ascending.
pub fn candidate_set(vocab: &Vocabulary, policy: CandidatePolicy) -> Vec<TermId> {
    let mut ids = vocab.entity_ids().to_vec();
    if policy == CandidatePolicy::EntitiesPlusSharedProperties && !vocab.unify() {
        ids.extend(
            vocab
                .property_ids()
                .iter()
                .copied()
                .filter(|&p| vocab.entity_id(vocab.term(p)).is_some()),
        );
        ids.sort_unstable();
    }
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRank {
    pub triple: Triple,
    pub direction: Direction,
    pub raw: usize,
    pub filtered: usize,
}

/// Raw and filtered rank of the true answer of `t` in `direction`.
///
/// Candidates whose substituted triple is in `index` are removed in the
/// filtered setting, except the true answer itself.
pub fn rank_both(
    table: &EmbeddingTable,
    t: Triple,
    direction: Direction,
    candidates: &[TermId],
    index: &TripleIndex,
) -> Result<(usize, usize), EvalError> {
    let answer = direction.answer(t);
    if candidates.binary_search(&answer).is_err() {
        return Err(EvalError::TrueAnswerNotCandidate { triple: t, answer });
    }
    let target = table.score(t);
    let mut raw = 1;
    let mut filtered = 1;
    for &c in candidates {
        if c == answer {
            continue;
        }
        let candidate = direction.substitute(t, c);
        if table.score(candidate) >= target {
            raw += 1;
            if !index.contains(&candidate) {
                filtered += 1;
            }
        }
    }
    Ok((raw, filtered))
}

pub fn rank(
    table: &EmbeddingTable,
    t: Triple,
    direction: Direction,
    candidates: &[TermId],
    index: &TripleIndex,
    filtered: bool,
) -> Result<usize, EvalError> {
    rank_both(table, t, direction, candidates, index).map(|(r, f)| if filtered { f } else { r })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub mean_rank_raw: f64,
    pub mean_rank_filtered: f64,
    /// Percentages in [0, 100].
    pub hits_raw: f64,
    pub hits_filtered: f64,
}

impl Metrics {
    fn from_ranks<'a>(ranks: impl Iterator<Item = &'a QueryRank> + Clone, k: usize) -> Self {
        let n = ranks.clone().count();
        if n == 0 {
            return Metrics {
                queries: 0,
                mean_rank_raw: 0.0,
                mean_rank_filtered: 0.0,
                hits_raw: 0.0,
                hits_filtered: 0.0,
            };
        }
        let mean = |f: fn(&QueryRank) -> usize| ranks.clone().map(|q| f(q) as f64).sum::<f64>() / n as f64;
        let hits = |f: fn(&QueryRank) -> usize| 100.0 * ranks.clone().filter(|q| f(q) <= k).count() as f64 / n as f64;
        Metrics {
            queries: n,
            mean_rank_raw: mean(|q| q.raw),
            mean_rank_filtered: mean(|q| q.filtered),
            hits_raw: hits(|q| q.raw),
            hits_filtered: hits(|q| q.filtered),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub triples: usize,
    pub candidates: usize,
    pub hits_k: usize,
    pub tie_policy: String,
    pub candidate_policy: CandidatePolicy,
    /// Averaged over triples × directions.
    pub overall: Metrics,
    pub head: Option<Metrics>,
    pub tail: Option<Metrics>,
    #[serde(skip)]
    pub ranks: Vec<QueryRank>,
}

impl EvalReport {
    pub fn mean_rank_raw(&self) -> f64 {
        self.overall.mean_rank_raw
    }

    pub fn mean_rank_filtered(&self) -> f64 {
        self.overall.mean_rank_filtered
    }

    pub fn hits_raw(&self) -> f64 {
        self.overall.hits_raw
    }

    pub fn hits_filtered(&self) -> f64 {
        self.overall.hits_filtered
    }
}

/// Ranks every test triple in every configured direction. Work is spread
/// over the current rayon pool; results are reduced in test-triple order,
/// so the report does not depend on the thread count.
pub fn evaluate(
    table: &EmbeddingTable,
    test: &[Triple],
    vocab: &Vocabulary,
    index: &TripleIndex,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if config.hits_k == 0 {
        return Err(EvalError::InvalidHitsK);
    }
    let candidates = candidate_set(vocab, config.candidate_policy);
    let per_triple: Vec<Result<Vec<QueryRank>, EvalError>> = test
        .par_iter()
        .map(|&t| {
            config
                .directions
                .iter()
                .map(|&direction| {
                    let (raw, filtered) = rank_both(table, t, direction, &candidates, index)?;
                    Ok(QueryRank { triple: t, direction, raw, filtered })
                })
                .collect()
        })
        .collect();
    let mut ranks = Vec::with_capacity(test.len() * config.directions.len());
    for r in per_triple {
        ranks.extend(r?);
    }
    let k = config.hits_k;
    let by_direction = |d: Direction| {
        config
            .directions
            .contains(&d)
            .then(|| Metrics::from_ranks(ranks.iter().filter(move |q| q.direction == d), k))
    };
    Ok(EvalReport {
        triples: test.len(),
        candidates: candidates.len(),
        hits_k: k,
        tie_policy: TIE_POLICY.to_string(),
        candidate_policy: config.candidate_policy,
        overall: Metrics::from_ranks(ranks.iter(), k),
        head: by_direction(Direction::Head),
        tail: by_direction(Direction::Tail),
        ranks,
    })
}

/// Relation prediction `(s, ?, o)` over E2. Not part of the headline
/// metrics; exposed for exploration.
pub fn evaluate_relations(
    table: &EmbeddingTable,
    test: &[Triple],
    vocab: &Vocabulary,
    index: &TripleIndex,
    hits_k: usize,
) -> Result<Metrics, EvalError> {
    if hits_k == 0 {
        return Err(EvalError::InvalidHitsK);
    }
    let properties = vocab.property_ids();
    let ranks: Vec<QueryRank> = test
        .par_iter()
        .map(|&t| {
            let target = table.score(t);
            let (mut raw, mut filtered) = (1, 1);
            for &p in properties {
                if p == t.p {
                    continue;
                }
                let candidate = Triple { p, ..t };
                if table.score(candidate) >= target {
                    raw += 1;
                    if !index.contains(&candidate) {
                        filtered += 1;
                    }
                }
            }
            // direction is nominal here
            QueryRank { triple: t, direction: Direction::Tail, raw, filtered }
        })
        .collect();
    Ok(Metrics::from_ranks(ranks.iter(), hits_k))
}

/// Text table in the layout `Model  MeanRank(Raw)  MeanRank(Filter)
/// Hit@k(Raw)  Hit@k(Filter)`, one decimal place.
pub fn format_table(rows: &[(String, Metrics)], hits_k: usize) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let hr = format!("Hit@{hits_k}(Raw)");
    let hf = format!("Hit@{hits_k}(Filter)");
    let (wr, wf) = (hr.len(), hf.len());
    let _ = writeln!(out, "{:<width$}  MeanRank(Raw)  MeanRank(Filter)  {hr}  {hf}", "Model");
    for (label, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>13.1}  {:>16.1}  {:>wr$.1}  {:>wf$.1}",
            label, m.mean_rank_raw, m.mean_rank_filtered, m.hits_raw, m.hits_filtered
        );
    }
    out
}
