//! Knowledge graph embeddings with an optional unified entity/property
//! vocabulary.
//!
//! The pipeline is: [`rdf`] parses triples, [`vocab`] interns them (sharing
//! one id between a term's entity and property roles when unified),
//! [`model`] defines TransE, TransH and ComplEx over an [`EmbeddingTable`],
//! [`train`] fits the table with negative sampling and Adam, and [`eval`]
//! computes raw and filtered MeanRank / Hits@k. [`toy`] generates the
//! bilingual translation scenario and [`store`] persists trained models.

pub mod eval;
pub mod model;
pub mod rdf;
pub mod store;
pub mod toy;
pub mod train;
pub mod vocab;

pub use eval::{evaluate, CandidatePolicy, Direction, EvalConfig, EvalReport};
pub use model::{EmbeddingTable, ModelConfig, ModelKind, Norm, ShareMode};
pub use rdf::{RawTriple, TripleFormat};
pub use train::{train, TrainConfig, TrainOutcome};
pub use vocab::{TermId, Triple, TripleIndex, Vocabulary};
