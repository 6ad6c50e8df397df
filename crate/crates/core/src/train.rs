//! Negative sampling, sparse Adam and the epoch loop.
//!
//! A run is a pure function of its inputs and `TrainConfig::seed`: the seed
//! drives three independent ChaCha streams (initialization, epoch shuffling,
//! negative sampling), so changing how many negatives are drawn never
//! changes the initial table or the shuffle order.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{accumulate_pair_gradient, EmbeddingTable, ModelConfig, ModelError, ModelKind, SparseGrad};
use crate::vocab::{Triple, TripleIndex, Vocabulary};

/// Datasets smaller than this train full-batch when no batch size is set.
pub const FULL_BATCH_BELOW: usize = 10_000;
pub const DEFAULT_BATCH: usize = 512;
/// Rejection-sampling attempts before a colliding negative is accepted.
pub const MAX_REJECTIONS: usize = 100;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite parameter update at epoch {epoch}, batch {batch}")]
    NonFiniteUpdate { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    /// Head or tail with probability 1/2, replacement uniform over E1.
    UniformHeadOrTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` selects full-batch below [`FULL_BATCH_BELOW`] triples and
    /// [`DEFAULT_BATCH`] otherwise.
    pub batch_size: Option<usize>,
    pub negatives_per_positive: usize,
    pub corruption: Corruption,
    pub adam: AdamParams,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults per model: learning rate 0.001 (TransE, TransH) or 0.01
    /// (ComplEx), 1000 epochs, one negative per positive.
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(model.kind),
            model,
            epochs: 1000,
            batch_size: None,
            negatives_per_positive: 1,
            corruption: Corruption::UniformHeadOrTail,
            adam: AdamParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(TrainError::InvalidConfig("negatives per positive must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_batch(&self, n_triples: usize) -> usize {
        match self.batch_size {
            Some(b) => b,
            None if n_triples < FULL_BATCH_BELOW => n_triples.max(1),
            None => DEFAULT_BATCH,
        }
    }
}

pub fn default_learning_rate(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::ComplEx => 0.01,
        _ => 0.001,
    }
}

/// A generator for one of the run's independent streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSample {
    pub triple: Triple,
    pub side: Side,
    /// Every attempt hit a known triple; the last draw was kept anyway.
    pub exhausted: bool,
}

/// Corrupts head or tail (probability 1/2 each) with a uniform draw from
/// E1, redrawing the replacement while the result is a known triple.
pub fn negative_sample<R: Rng + ?Sized>(t: Triple, vocab: &Vocabulary, index: &TripleIndex, rng: &mut R) -> NegativeSample {
    let entities = vocab.entity_ids();
    let side = if rng.gen_bool(0.5) { Side::Head } else { Side::Tail };
    let mut candidate = t;
    for _ in 0..MAX_REJECTIONS {
        let e = entities[rng.gen_range(0..entities.len())];
        candidate = match side {
            Side::Head => Triple { s: e, ..t },
            Side::Tail => Triple { o: e, ..t },
        };
        if !index.contains(&candidate) {
            return NegativeSample {
                triple: candidate,
                side,
                exhausted: false,
            };
        }
    }
    NegativeSample {
        triple: candidate,
        side,
        exhausted: true,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("Adam update produced a non-finite parameter")]
pub struct NonFiniteUpdate;

/// Moment estimates shaped like the table's node and normal storage.
/// New parameters and moments of one row, written only once every row of
/// the step is known to be finite.
struct StagedRow {
    is_node: bool,
    row: usize,
    theta: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    params: AdamParams,
    step: u64,
    m_nodes: Vec<f64>,
    v_nodes: Vec<f64>,
    m_normals: Vec<f64>,
    v_normals: Vec<f64>,
}

impl AdamState {
    pub fn new(table: &EmbeddingTable, params: AdamParams) -> Self {
        AdamState {
            params,
            step: 0,
            m_nodes: vec![0.0; table.node_data().len()],
            v_nodes: vec![0.0; table.node_data().len()],
            m_normals: vec![0.0; table.normal_data().len()],
            v_normals: vec![0.0; table.normal_data().len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m_nodes
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v_nodes
    }

    /// One bias-corrected Adam step on the rows present in `grad`. Rows not
    /// in `grad` keep their parameters and moments. Nothing is written if
    /// any updated value would be non-finite.
    pub fn step(&mut self, table: &mut EmbeddingTable, grad: &SparseGrad, learning_rate: f64) -> Result<(), NonFiniteUpdate> {
        self.step += 1;
        let AdamParams { beta1, beta2, epsilon } = self.params;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let width = table.width();

        let mut staged: Vec<StagedRow> = Vec::new();
        for (is_node, rows) in [(true, &grad.nodes), (false, &grad.normals)] {
            let (params, m, v) = if is_node {
                (table.node_data(), &self.m_nodes, &self.v_nodes)
            } else {
                (table.normal_data(), &self.m_normals, &self.v_normals)
            };
            for (&row, g) in rows {
                let range = row * width..(row + 1) * width;
                let mut theta = params[range.clone()].to_vec();
                let mut m_new = m[range.clone()].to_vec();
                let mut v_new = v[range].to_vec();
                for k in 0..width {
                    m_new[k] = beta1 * m_new[k] + (1.0 - beta1) * g[k];
                    v_new[k] = beta2 * v_new[k] + (1.0 - beta2) * g[k] * g[k];
                    theta[k] -= learning_rate * (m_new[k] / c1) / ((v_new[k] / c2).sqrt() + epsilon);
                }
                if theta.iter().chain(&m_new).chain(&v_new).any(|x| !x.is_finite()) {
                    return Err(NonFiniteUpdate);
                }
                staged.push(StagedRow { is_node, row, theta, m: m_new, v: v_new });
            }
        }
        for StagedRow { is_node, row, theta, m: m_new, v: v_new } in staged {
            let range = row * width..(row + 1) * width;
            if is_node {
                table.node_data_mut()[range.clone()].copy_from_slice(&theta);
                self.m_nodes[range.clone()].copy_from_slice(&m_new);
                self.v_nodes[range].copy_from_slice(&v_new);
            } else {
                table.normal_data_mut()[range.clone()].copy_from_slice(&theta);
                self.m_normals[range.clone()].copy_from_slice(&m_new);
                self.v_normals[range].copy_from_slice(&v_new);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u128,
    /// Negatives accepted after exhausting the rejection cap.
    pub exhausted_negatives: usize,
}

impl EpochRecord {
    /// `epoch<TAB>mean_loss<TAB>wall_ms`
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}", self.epoch, self.mean_loss, self.wall_ms)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    pub log: Vec<EpochRecord>,
    pub exhausted_negatives: usize,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.log_line() + "\n").collect()
    }
}

pub fn train(triples: &[Triple], vocab: &Vocabulary, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(triples, vocab, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch's constraint step.
pub fn train_with<F>(triples: &[Triple], vocab: &Vocabulary, config: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&EpochRecord, &EmbeddingTable),
{
    config.validate()?;
    if triples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut init_rng = stream_rng(config.seed, STREAM_INIT);
    let mut shuffle_rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut negative_rng = stream_rng(config.seed, STREAM_NEGATIVES);

    let mut table = EmbeddingTable::init(&config.model, vocab, &mut init_rng)?;
    let mut adam = AdamState::new(&table, config.adam);
    let index = TripleIndex::new(triples);
    let batch = config.effective_batch(triples.len());
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut grad = SparseGrad::new();
    let mut log = Vec::with_capacity(config.epochs);
    let mut exhausted_total = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        let mut exhausted = 0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            grad.clear();
            for &i in chunk {
                let pos = triples[i];
                for _ in 0..config.negatives_per_positive {
                    let neg = negative_sample(pos, vocab, &index, &mut negative_rng);
                    exhausted += neg.exhausted as usize;
                    loss_sum += accumulate_pair_gradient(&table, pos, neg.triple, &config.model, &mut grad);
                    pairs += 1;
                }
            }
            adam.step(&mut table, &grad, config.learning_rate)
                .map_err(|_| TrainError::NonFiniteUpdate { epoch, batch: b + 1 })?;
            if config.model.kind == ModelKind::TransH {
                table.renormalize_normals();
            }
        }
        if config.model.kind == ModelKind::TransE {
            table.renormalize();
        }
        if exhausted > 0 {
            log::warn!("epoch {epoch}: {exhausted} negatives hit the rejection cap");
        }
        exhausted_total += exhausted;
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / pairs as f64,
            wall_ms: started.elapsed().as_millis(),
            exhausted_negatives: exhausted,
        };
        log::debug!("epoch {epoch} loss {:.6}", record.mean_loss);
        on_epoch(&record, &table);
        log.push(record);
    }
    Ok(TrainOutcome {
        table,
        log,
        exhausted_negatives: exhausted_total,
    })
}
