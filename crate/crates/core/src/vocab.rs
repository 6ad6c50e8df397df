//! Vocabulary interning and the known-triple index.
//!
//! A term seen in subject/object position has the entity role (E1); a term
//! seen in predicate position has the property role (E2). With `unify` on, a
//! term holding both roles gets a single id, so every model keeps exactly
//! one parameter row for it. With `unify` off each role gets its own id.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdf::RawTriple;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("dataset contains no triples")]
    EmptyDataset,
    #[error("terms not in the vocabulary: {}", .terms.join(", "))]
    UnknownTerm { terms: Vec<String> },
    #[error("vocabulary dump line {line}: {reason}")]
    BadDump { line: usize, reason: String },
}

/// Dense vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermId(pub u32);

impl TermId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub s: TermId,
    pub p: TermId,
    pub o: TermId,
}

impl Triple {
    pub fn new(s: TermId, p: TermId, o: TermId) -> Self {
        Triple { s, p, o }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Roles {
    pub entity: bool,
    pub property: bool,
}

impl Roles {
    pub fn code(self) -> &'static str {
        match (self.entity, self.property) {
            (true, true) => "EP",
            (true, false) => "E",
            (false, true) => "P",
            (false, false) => "-",
        }
    }

    fn parse(code: &str) -> Option<Roles> {
        match code {
            "EP" => Some(Roles { entity: true, property: true }),
            "E" => Some(Roles { entity: true, property: false }),
            "P" => Some(Roles { entity: false, property: true }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    unify: bool,
    terms: Vec<String>,
    roles: Vec<Roles>,
    entity_lookup: HashMap<String, TermId>,
    property_lookup: HashMap<String, TermId>,
    entity_ids: Vec<TermId>,
    property_ids: Vec<TermId>,
    /// Position of each id inside `property_ids`.
    property_slots: Vec<Option<u32>>,
}

impl Vocabulary {
    /// Builds the vocabulary in first-occurrence order (subject, predicate,
    /// object of each triple in turn).
    pub fn build(triples: &[RawTriple], unify: bool) -> Result<Self, VocabError> {
        if triples.is_empty() {
            return Err(VocabError::EmptyDataset);
        }
        let mut builder = Builder::new(unify);
        for t in triples {
            builder.add(&t.subject, Role::Entity);
            builder.add(&t.predicate, Role::Property);
            builder.add(&t.object_term(), Role::Entity);
        }
        Ok(builder.finish())
    }

    pub fn unify(&self) -> bool {
        self.unify
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.terms[id.index()]
    }

    pub fn roles(&self, id: TermId) -> Roles {
        self.roles[id.index()]
    }

    pub fn entity_id(&self, term: &str) -> Option<TermId> {
        self.entity_lookup.get(term).copied()
    }

    pub fn property_id(&self, term: &str) -> Option<TermId> {
        self.property_lookup.get(term).copied()
    }

    /// E1, ascending.
    pub fn entity_ids(&self) -> &[TermId] {
        &self.entity_ids
    }

    /// E2, ascending.
    pub fn property_ids(&self) -> &[TermId] {
        &self.property_ids
    }

    pub fn property_slot(&self, id: TermId) -> Option<usize> {
        self.property_slots[id.index()].map(|s| s as usize)
    }

    pub fn is_entity(&self, id: TermId) -> bool {
        self.roles[id.index()].entity
    }

    pub fn is_property(&self, id: TermId) -> bool {
        self.roles[id.index()].property
    }

    /// Whether the term behind `id` is used as a predicate anywhere,
    /// regardless of which role `id` itself denotes.
    pub fn term_is_property(&self, id: TermId) -> bool {
        self.property_lookup.contains_key(self.term(id))
    }

    /// Terms occurring in both roles (|E1 ∩ E2| by term).
    pub fn overlap_terms(&self) -> usize {
        self.property_lookup
            .keys()
            .filter(|t| self.entity_lookup.contains_key(*t))
            .count()
    }

    /// Ids whose term holds both roles. Under `unify` these are the shared
    /// ids; otherwise the entity-role id of each such term.
    pub fn shared_entity_ids(&self) -> Vec<TermId> {
        self.entity_ids
            .iter()
            .copied()
            .filter(|&id| self.term_is_property(id))
            .collect()
    }

    /// One line per id: `<id>\t<term>\t<roles>`, LF-terminated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, term) in self.terms.iter().enumerate() {
            out.push_str(&format!("{i}\t{term}\t{}\n", self.roles[i].code()));
        }
        out
    }

    pub fn from_dump(text: &str, unify: bool) -> Result<Self, VocabError> {
        let mut builder = Builder::new(unify);
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| VocabError::BadDump {
                line: n + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("id is not an integer"))?;
            if id != n {
                return Err(bad("ids must be dense and ascending"));
            }
            let roles = Roles::parse(fields[2]).ok_or_else(|| bad("roles must be E, P or EP"))?;
            if roles.entity && roles.property && !unify {
                return Err(bad("EP role in a non-unified vocabulary"));
            }
            let before = builder.terms.len();
            if roles.entity {
                builder.add(fields[1], Role::Entity);
            }
            if roles.property {
                builder.add(fields[1], Role::Property);
            }
            if builder.terms.len() != before + 1 {
                return Err(bad("duplicate term for this role"));
            }
        }
        if builder.terms.is_empty() {
            return Err(VocabError::EmptyDataset);
        }
        Ok(builder.finish())
    }
}

#[derive(Clone, Copy)]
enum Role {
    Entity,
    Property,
}

struct Builder {
    unify: bool,
    terms: Vec<String>,
    roles: Vec<Roles>,
    entity_lookup: HashMap<String, TermId>,
    property_lookup: HashMap<String, TermId>,
}

impl Builder {
    fn new(unify: bool) -> Self {
        Builder {
            unify,
            terms: Vec::new(),
            roles: Vec::new(),
            entity_lookup: HashMap::new(),
            property_lookup: HashMap::new(),
        }
    }

    fn add(&mut self, term: &str, role: Role) {
        let (own, other) = match role {
            Role::Entity => (&self.entity_lookup, &self.property_lookup),
            Role::Property => (&self.property_lookup, &self.entity_lookup),
        };
        if own.contains_key(term) {
            return;
        }
        let shared = if self.unify { other.get(term).copied() } else { None };
        let id = shared.unwrap_or_else(|| {
            self.terms.push(term.to_string());
            self.roles.push(Roles::default());
            TermId((self.terms.len() - 1) as u32)
        });
        let roles = &mut self.roles[id.index()];
        match role {
            Role::Entity => {
                roles.entity = true;
                self.entity_lookup.insert(term.to_string(), id);
            }
            Role::Property => {
                roles.property = true;
                self.property_lookup.insert(term.to_string(), id);
            }
        }
    }

    fn finish(self) -> Vocabulary {
        let entity_ids: Vec<TermId> = (0..self.terms.len() as u32)
            .map(TermId)
            .filter(|id| self.roles[id.index()].entity)
            .collect();
        let property_ids: Vec<TermId> = (0..self.terms.len() as u32)
            .map(TermId)
            .filter(|id| self.roles[id.index()].property)
            .collect();
        let mut property_slots = vec![None; self.terms.len()];
        for (slot, id) in property_ids.iter().enumerate() {
            property_slots[id.index()] = Some(slot as u32);
        }
        Vocabulary {
            unify: self.unify,
            terms: self.terms,
            roles: self.roles,
            entity_lookup: self.entity_lookup,
            property_lookup: self.property_lookup,
            entity_ids,
            property_ids,
            property_slots,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interned {
    pub triples: Vec<Triple>,
    pub duplicates: usize,
}

/// Maps raw triples to ids, dropping exact duplicates (first occurrence
/// wins). All unknown terms are collected before failing.
pub fn intern(triples: &[RawTriple], vocab: &Vocabulary) -> Result<Interned, VocabError> {
    let mut seen = HashSet::with_capacity(triples.len());
    let mut out = Vec::with_capacity(triples.len());
    let mut unknown: Vec<String> = Vec::new();
    let mut duplicates = 0;
    for t in triples {
        let object = t.object_term();
        let s = vocab.entity_id(&t.subject);
        let p = vocab.property_id(&t.predicate);
        let o = vocab.entity_id(&object);
        match (s, p, o) {
            (Some(s), Some(p), Some(o)) => {
                let triple = Triple::new(s, p, o);
                if seen.insert(triple) {
                    out.push(triple);
                } else {
                    duplicates += 1;
                }
            }
            _ => {
                for (found, term) in [(s.is_some(), &t.subject), (p.is_some(), &t.predicate), (o.is_some(), &object)] {
                    if !found && !unknown.contains(term) {
                        unknown.push(term.clone());
                    }
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(VocabError::UnknownTerm { terms: unknown });
    }
    if duplicates > 0 {
        log::info!("removed {duplicates} duplicate triples");
    }
    Ok(Interned {
        triples: out,
        duplicates,
    })
}

/// Set of known triples with (s,p)→objects and (p,o)→subjects projections.
#[derive(Debug, Clone, Default)]
pub struct TripleIndex {
    set: HashSet<Triple>,
    by_sp: HashMap<(TermId, TermId), Vec<TermId>>,
    by_po: HashMap<(TermId, TermId), Vec<TermId>>,
}

impl TripleIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut index = TripleIndex::default();
        index.extend(triples);
        index
    }

    pub fn extend<'a>(&mut self, triples: impl IntoIterator<Item = &'a Triple>) {
        for &t in triples {
            if self.set.insert(t) {
                self.by_sp.entry((t.s, t.p)).or_default().push(t.o);
                self.by_po.entry((t.p, t.o)).or_default().push(t.s);
            }
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.set.contains(t)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    /// Objects `o` with `(s, p, o)` known, in insertion order.
    pub fn objects(&self, s: TermId, p: TermId) -> &[TermId] {
        self.by_sp.get(&(s, p)).map_or(&[], Vec::as_slice)
    }

    /// Subjects `s` with `(s, p, o)` known, in insertion order.
    pub fn subjects(&self, p: TermId, o: TermId) -> &[TermId] {
        self.by_po.get(&(p, o)).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub triples: usize,
    pub entities: usize,
    pub properties: usize,
    pub overlap: usize,
    pub property_as_node_triples: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "triples={}, entities={}, properties={}, overlap={}, property_as_node_triples={}",
            self.triples, self.entities, self.properties, self.overlap, self.property_as_node_triples
        )
    }
}

/// |E1| and |E2| count terms, so they agree between unified and
/// non-unified builds of the same data.
pub fn dataset_stats(vocab: &Vocabulary, triples: &[Triple]) -> DatasetStats {
    DatasetStats {
        triples: triples.len(),
        entities: vocab.entity_ids().len(),
        properties: vocab.property_ids().len(),
        overlap: vocab.overlap_terms(),
        property_as_node_triples: triples
            .iter()
            .filter(|t| vocab.term_is_property(t.s) || vocab.term_is_property(t.o))
            .count(),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn birthplace() -> Vec<RawTriple> {
        vec![
            RawTriple::new("A", "birthplace", "Spain"),
            RawTriple::new("B", "shusshin", "Supein"),
            RawTriple::new("birthplace", "honyaku", "shusshin"),
        ]
    }

    fn ids(vocab: &Vocabulary, list: &[TermId]) -> Vec<String> {
        list.iter().map(|&id| vocab.term(id).to_string()).collect()
    }

    #[test]
    fn birthplace_unified() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(
            ids(&v, v.entity_ids()),
            ["A", "birthplace", "Spain", "B", "shusshin", "Supein"]
        );
        assert_eq!(ids(&v, v.property_ids()), ["birthplace", "shusshin", "honyaku"]);
        assert_eq!(v.entity_id("birthplace"), v.property_id("birthplace"));
        assert_eq!(v.roles(v.entity_id("shusshin").unwrap()).code(), "EP");
        assert_eq!(v.overlap_terms(), 2);
    }

    #[test]
    fn birthplace_not_unified() {
        let v = Vocabulary::build(&birthplace(), false).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v.entity_ids().len(), 6);
        assert_eq!(v.property_ids().len(), 3);
        assert_ne!(v.entity_id("birthplace"), v.property_id("birthplace"));
        let e: HashSet<_> = v.entity_ids().iter().collect();
        assert!(v.property_ids().iter().all(|p| !e.contains(p)));
    }

    #[test]
    fn single_triple_no_overlap() {
        let v = Vocabulary::build(&[RawTriple::new("a", "p", "b")], true).unwrap();
        assert_eq!((v.entity_ids().len(), v.property_ids().len(), v.len()), (2, 1, 3));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(Vocabulary::build(&[], true), Err(VocabError::EmptyDataset)));
    }

    #[test]
    fn literal_objects_are_distinct_terms() {
        let triples = vec![
            RawTriple::new("a", "p", "Spain"),
            RawTriple::with_literal("a", "name", "Spain"),
        ];
        let v = Vocabulary::build(&triples, true).unwrap();
        assert_eq!(v.entity_ids().len(), 3);
        assert!(v.entity_id("\"Spain\"").is_some());
    }

    #[test]
    fn intern_birthplace() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        let i = intern(&birthplace(), &v).unwrap();
        assert_eq!(i.triples.len(), 3);
        assert_eq!(i.duplicates, 0);
    }

    #[test]
    fn intern_unknown_terms_listed() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        let err = intern(
            &[RawTriple::new("C", "birthplace", "France"), RawTriple::new("A", "honyaku", "C")],
            &v,
        )
        .unwrap_err();
        match err {
            VocabError::UnknownTerm { terms } => assert_eq!(terms, ["C", "France"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn intern_role_mismatch_is_unknown() {
        // honyaku is only ever a predicate
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        assert!(intern(&[RawTriple::new("honyaku", "birthplace", "A")], &v).is_err());
    }

    #[test]
    fn intern_drops_duplicates() {
        let mut raw = birthplace();
        raw.push(raw[0].clone());
        let v = Vocabulary::build(&raw, true).unwrap();
        let i = intern(&raw, &v).unwrap();
        assert_eq!(i.triples.len(), raw.len() - 1);
        assert_eq!(i.duplicates, 1);
    }

    #[test]
    fn index_birthplace() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        let triples = intern(&birthplace(), &v).unwrap().triples;
        let index = TripleIndex::new(&triples);
        let t = |s: &str, p: &str, o: &str| {
            Triple::new(v.entity_id(s).unwrap(), v.property_id(p).unwrap(), v.entity_id(o).unwrap())
        };
        assert!(index.contains(&t("A", "birthplace", "Spain")));
        assert!(!index.contains(&t("B", "birthplace", "Spain")));
    }

    #[test]
    fn index_projections_match_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let triples: Vec<Triple> = (0..20)
                .map(|_| Triple::new(TermId(rng.gen_range(0..6)), TermId(rng.gen_range(6..8)), TermId(rng.gen_range(0..6))))
                .collect();
            let index = TripleIndex::new(&triples);
            for s in 0..6 {
                for p in 6..8 {
                    let (s, p) = (TermId(s), TermId(p));
                    let mut scan: Vec<TermId> = triples.iter().filter(|t| t.s == s && t.p == p).map(|t| t.o).collect();
                    scan.sort();
                    scan.dedup();
                    let mut got = index.objects(s, p).to_vec();
                    got.sort();
                    assert_eq!(got, scan);
                    let mut scan: Vec<TermId> = triples.iter().filter(|t| t.o == s && t.p == p).map(|t| t.s).collect();
                    scan.sort();
                    scan.dedup();
                    let mut got = index.subjects(p, s).to_vec();
                    got.sort();
                    assert_eq!(got, scan);
                }
            }
        }
    }

    #[test]
    fn stats_birthplace() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        let triples = intern(&birthplace(), &v).unwrap().triples;
        let stats = dataset_stats(&v, &triples);
        assert_eq!(
            stats,
            DatasetStats { triples: 3, entities: 6, properties: 3, overlap: 2, property_as_node_triples: 1 }
        );
        let v = Vocabulary::build(&birthplace(), false).unwrap();
        let triples = intern(&birthplace(), &v).unwrap().triples;
        assert_eq!(dataset_stats(&v, &triples), stats);
    }

    #[test]
    fn stats_without_overlap() {
        let raw = vec![RawTriple::new("a", "p", "b"), RawTriple::new("b", "q", "c")];
        let v = Vocabulary::build(&raw, true).unwrap();
        let triples = intern(&raw, &v).unwrap().triples;
        let stats = dataset_stats(&v, &triples);
        assert_eq!(stats.overlap, 0);
        assert_eq!(stats.property_as_node_triples, 0);
    }

    #[test]
    fn dump_format_and_reload() {
        let v = Vocabulary::build(&birthplace(), true).unwrap();
        assert_eq!(
            v.dump(),
            "0\tA\tE\n1\tbirthplace\tEP\n2\tSpain\tE\n3\tB\tE\n4\tshusshin\tEP\n5\tSupein\tE\n6\thonyaku\tP\n"
        );
        assert_eq!(Vocabulary::from_dump(&v.dump(), true).unwrap(), v);
        let v = Vocabulary::build(&birthplace(), false).unwrap();
        assert_eq!(Vocabulary::from_dump(&v.dump(), false).unwrap(), v);
    }

    #[test]
    fn dump_rejects_gaps_and_duplicates() {
        assert!(Vocabulary::from_dump("0\ta\tE\n2\tb\tE\n", true).is_err());
        assert!(Vocabulary::from_dump("0\ta\tE\n1\ta\tE\n", false).is_err());
        assert!(Vocabulary::from_dump("0\ta\tE\n1\ta\tP\n", true).is_err());
        assert!(Vocabulary::from_dump("0\ta\tX\n", true).is_err());
    }

    fn raw_graph() -> impl Strategy<Value = Vec<RawTriple>> {
        let term = prop::sample::select(vec!["a", "b", "c", "d", "p", "q", "r"]);
        prop::collection::vec((term.clone(), term.clone(), term), 1..30)
            .prop_map(|v| v.into_iter().map(|(s, p, o)| RawTriple::new(s, p, o)).collect())
    }

    proptest! {
        #[test]
        fn unification_removes_exactly_the_overlap(raw in raw_graph()) {
            let u = Vocabulary::build(&raw, true).unwrap();
            let n = Vocabulary::build(&raw, false).unwrap();
            prop_assert_eq!(u.len(), n.len() - u.overlap_terms());
            prop_assert_eq!(u.overlap_terms(), n.overlap_terms());
        }

        #[test]
        fn vocabulary_invariants(raw in raw_graph(), unify in any::<bool>()) {
            let v = Vocabulary::build(&raw, unify).unwrap();
            prop_assert_eq!(&v, &Vocabulary::build(&raw, unify).unwrap());
            for i in 0..v.len() as u32 {
                let id = TermId(i);
                let r = v.roles(id);
                prop_assert!(r.entity || r.property);
                if r.entity { prop_assert_eq!(v.entity_id(v.term(id)), Some(id)); }
                if r.property { prop_assert_eq!(v.property_id(v.term(id)), Some(id)); }
                if !unify { prop_assert!(!(r.entity && r.property)); }
            }
            let interned = intern(&raw, &v).unwrap();
            for t in &interned.triples {
                let again = RawTriple::new(v.term(t.s), v.term(t.p), v.term(t.o));
                prop_assert_eq!(intern(&[again], &v).unwrap().triples, vec![*t]);
            }
        }
    }
}
