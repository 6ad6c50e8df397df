//! Bilingual translation toy data.
//!
//! Language 1 facts `(e_i, r_k, e_j)` are mirrored into language 2 as
//! `(e_i', r_k', e_j')`. A `translation` property links a fraction of the
//! relation pairs `(r_k, translation, r_k')` (property-as-node triples) and,
//! optionally, every used entity pair `(e, translation, e')`. Part of the
//! mirrored facts is held out for testing while their language-1 originals
//! stay in training, so predicting them requires carrying knowledge across
//! the translation link.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdf::RawTriple;
use crate::train::stream_rng;

pub const TRANSLATION: &str = "honyaku";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid toy spec: {0}")]
pub struct InvalidSpec(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Facts per language.
    pub n_facts: usize,
    /// Entities per language.
    pub n_entities: usize,
    /// Relations per language.
    pub n_relations: usize,
    pub translation_fraction: f64,
    pub holdout_fraction: f64,
    pub entity_translations: bool,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            n_facts: 120,
            n_entities: 40,
            n_relations: 4,
            translation_fraction: 1.0,
            holdout_fraction: 0.5,
            entity_translations: true,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<(), InvalidSpec> {
        let bad = |m: &str| Err(InvalidSpec(m.to_string()));
        if self.n_relations == 0 {
            return bad("n_relations must be at least 1");
        }
        if self.n_entities < 2 {
            return bad("n_entities must be at least 2");
        }
        if self.n_facts == 0 {
            return bad("n_facts must be at least 1");
        }
        for (name, f) in [("translation_fraction", self.translation_fraction), ("holdout_fraction", self.holdout_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(InvalidSpec(format!("{name} must lie in [0, 1]")));
            }
        }
        let capacity = self.n_entities * (self.n_entities - 1) * self.n_relations;
        if self.n_facts > capacity {
            return Err(InvalidSpec(format!("n_facts exceeds the {capacity} distinct facts available")));
        }
        Ok(())
    }
}

fn entity(i: usize, mirror: bool) -> String {
    if mirror {
        format!("ent{i}_l2")
    } else {
        format!("ent{i}")
    }
}

fn relation(k: usize, mirror: bool) -> String {
    if mirror {
        format!("rel{k}_l2")
    } else {
        format!("rel{k}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyData {
    pub train: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

/// Generates the train/test split. Deterministic per `spec.seed`.
///
/// Held-out mirrored facts are taken relation by relation (linked
/// relations first, in a seeded order), skipping any fact whose removal
/// would leave one of its terms without that role (node or predicate) in training.
pub fn generate_toy(spec: &ToySpec) -> Result<ToyData, InvalidSpec> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);

    let mut seen = BTreeSet::new();
    let mut facts = Vec::with_capacity(spec.n_facts);
    while facts.len() < spec.n_facts {
        let i = rng.gen_range(0..spec.n_entities);
        let j = rng.gen_range(0..spec.n_entities);
        let k = rng.gen_range(0..spec.n_relations);
        if i != j && seen.insert((i, k, j)) {
            facts.push((i, k, j));
        }
    }

    let mut relations: Vec<usize> = (0..spec.n_relations).collect();
    relations.shuffle(&mut rng);
    let n_linked = (spec.translation_fraction * spec.n_relations as f64).round() as usize;
    let linked: Vec<usize> = relations[..n_linked].to_vec();

    let mut train: Vec<RawTriple> = facts
        .iter()
        .map(|&(i, k, j)| RawTriple::new(&entity(i, false), &relation(k, false), &entity(j, false)))
        .collect();
    for &k in &linked {
        train.push(RawTriple::new(&relation(k, false), TRANSLATION, &relation(k, true)));
    }
    if spec.entity_translations {
        let used: BTreeSet<usize> = facts.iter().flat_map(|&(i, _, j)| [i, j]).collect();
        for &e in &used {
            train.push(RawTriple::new(&entity(e, false), TRANSLATION, &entity(e, true)));
        }
    }

    let mut mirrors: Vec<(usize, usize, usize)> = facts.clone();
    mirrors.shuffle(&mut rng);
    // linked relations first (in their seeded order), then the rest
    let priority: HashMap<usize, usize> = relations.iter().enumerate().map(|(pos, &k)| (k, pos)).collect();
    mirrors.sort_by_key(|&(_, k, _)| priority[&k]);

    // occurrences per (term, is_predicate): a held-out term must keep its
    // role somewhere in training
    let mut counts: HashMap<(String, bool), usize> = HashMap::new();
    let bump = |t: &RawTriple, counts: &mut HashMap<(String, bool), usize>, delta: isize| {
        for (term, role) in [(&t.subject, false), (&t.predicate, true), (&t.object, false)] {
            let c = counts.entry((term.clone(), role)).or_insert(0);
            *c = (*c as isize + delta) as usize;
        }
    };
    let mirror_triples: Vec<RawTriple> = mirrors
        .iter()
        .map(|&(i, k, j)| RawTriple::new(&entity(i, true), &relation(k, true), &entity(j, true)))
        .collect();
    for t in train.iter().chain(&mirror_triples) {
        bump(t, &mut counts, 1);
    }

    let target = (spec.holdout_fraction * spec.n_facts as f64).round() as usize;
    let mut held = vec![false; mirror_triples.len()];
    let mut n_held = 0;
    for (idx, t) in mirror_triples.iter().enumerate() {
        if n_held == target {
            break;
        }
        let covered = [(&t.subject, false), (&t.predicate, true), (&t.object, false)]
            .into_iter()
            .all(|(term, role)| counts[&(term.clone(), role)] > 1);
        if covered {
            bump(t, &mut counts, -1);
            held[idx] = true;
            n_held += 1;
        }
    }
    if n_held < target {
        log::info!("held out {n_held} of {target} requested mirrored facts (coverage limit)");
    }

    let mut test = Vec::with_capacity(n_held);
    for (t, h) in mirror_triples.into_iter().zip(held) {
        if h {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    Ok(ToyData { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{dataset_stats, intern, Vocabulary};
    use std::collections::HashSet;

    /// Two facts over one relation, one mirror held out.
    fn small_spec() -> ToySpec {
        ToySpec {
            n_facts: 2,
            n_entities: 4,
            n_relations: 1,
            translation_fraction: 1.0,
            holdout_fraction: 0.5,
            entity_translations: true,
            seed: 3,
        }
    }

    #[test]
    fn small_structure() {
        let data = generate_toy(&small_spec()).unwrap();
        assert_eq!(data.test.len(), 1);
        let test = &data.test[0];
        assert_eq!(test.predicate, "rel0_l2");
        assert!(data.train.contains(&RawTriple::new("rel0", TRANSLATION, "rel0_l2")));
        for term in [&test.subject, &test.object] {
            let original = term.trim_end_matches("_l2");
            assert!(data.train.contains(&RawTriple::new(original, TRANSLATION, term)));
        }
        // the other mirror keeps rel0_l2 in use as a predicate
        assert_eq!(data.train.iter().filter(|t| t.predicate == "rel0_l2").count(), 1);
        let links = data.train.iter().filter(|t| t.predicate == TRANSLATION).count();
        assert_eq!(data.train.len(), 2 + links + 1);
    }

    #[test]
    fn no_translation_means_no_overlap() {
        let spec = ToySpec { translation_fraction: 0.0, ..ToySpec::default() };
        let data = generate_toy(&spec).unwrap();
        assert!(data.train.iter().all(|t| !t.subject.starts_with("rel") && !t.object.starts_with("rel")));
        let vocab = Vocabulary::build(&data.train, true).unwrap();
        let triples = intern(&data.train, &vocab).unwrap().triples;
        assert_eq!(dataset_stats(&vocab, &triples).overlap, 0);
    }

    #[test]
    fn translation_creates_overlap() {
        let data = generate_toy(&ToySpec::default()).unwrap();
        let vocab = Vocabulary::build(&data.train, true).unwrap();
        assert!(vocab.overlap_terms() > 0);
    }

    #[test]
    fn held_out_terms_keep_their_role_in_training() {
        for seed in 0..20 {
            for (tf, hf) in [(1.0, 0.5), (0.5, 0.8), (0.0, 0.3), (1.0, 1.0)] {
                let spec = ToySpec { seed, translation_fraction: tf, holdout_fraction: hf, ..ToySpec::default() };
                let data = generate_toy(&spec).unwrap();
                let vocab = Vocabulary::build(&data.train, true).unwrap();
                intern(&data.test, &vocab).unwrap_or_else(|e| panic!("seed {seed}, {tf}/{hf}: {e}"));
            }
        }
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let data = generate_toy(&ToySpec::default()).unwrap();
        let train: HashSet<_> = data.train.iter().collect();
        assert!(data.test.iter().all(|t| !train.contains(t)));
        assert_eq!(data.test.len(), 60);
        assert!(data.test.iter().all(|t| t.subject.ends_with("_l2")));
        for t in &data.test {
            let original = RawTriple::new(
                t.subject.trim_end_matches("_l2"),
                t.predicate.trim_end_matches("_l2"),
                t.object.trim_end_matches("_l2"),
            );
            assert!(train.contains(&original));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_toy(&ToySpec::default()).unwrap();
        assert_eq!(a, generate_toy(&ToySpec::default()).unwrap());
        assert_ne!(a, generate_toy(&ToySpec { seed: 1, ..ToySpec::default() }).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_toy(&ToySpec { n_relations: 0, ..ToySpec::default() }).is_err());
        assert!(generate_toy(&ToySpec { holdout_fraction: 1.5, ..ToySpec::default() }).is_err());
        assert!(generate_toy(&ToySpec { translation_fraction: -0.1, ..ToySpec::default() }).is_err());
        assert!(generate_toy(&ToySpec { n_facts: 13, n_entities: 2, n_relations: 6, ..ToySpec::default() }).is_err());
    }
}
