//! Parameter layout, initialization, scoring and analytic gradients for
//! TransE, TransH and ComplEx.
//!
//! Every vocabulary id owns one row of `nodes`. A unified id (a term used as
//! both entity and property) therefore has a single row that serves as its
//! entity vector and its relation vector; sharing is structural rather than
//! enforced by copying. With [`ShareMode::InitOnly`] the relation role of a
//! unified id gets an extra row appended after the vocabulary rows, copied
//! from the entity row at initialization and trained independently after.
//!
//! Scores are "higher is more plausible". TransE/TransH score
//! `-‖s⊥ + r − o⊥‖`, ComplEx scores `Re(Σ s·r·conj(o))` with each row laid
//! out as `[re_0..re_{d-1}, im_0..im_{d-1}]`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{TermId, Triple, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    TransH,
    ComplEx,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::TransE => "TransE",
            ModelKind::TransH => "TransH",
            ModelKind::ComplEx => "ComplEx",
        }
    }

    /// Reals stored per row for a model dimension `dim`.
    pub fn row_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * dim,
            _ => dim,
        }
    }

    pub fn uses_margin(self) -> bool {
        !matches!(self, ModelKind::ComplEx)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "transh" => Ok(ModelKind::TransH),
            "complex" => Ok(ModelKind::ComplEx),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(format!("unknown norm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareMode {
    /// Unified ids keep one row for both roles for the whole run.
    Always,
    /// Relation role starts as a copy of the entity row, then trains apart.
    InitOnly,
}

impl FromStr for ShareMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "always" => Ok(ShareMode::Always),
            "init-only" => Ok(ShareMode::InitOnly),
            other => Err(format!("unknown share mode `{other}`")),
        }
    }
}

impl fmt::Display for ShareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShareMode::Always => "always",
            ShareMode::InitOnly => "init-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Vector size; for ComplEx the number of complex components.
    pub dim: usize,
    pub norm: Norm,
    /// Hinge margin γ (TransE, TransH).
    pub margin: f64,
    /// L2 weight λ on touched rows (ComplEx).
    pub regularization: f64,
    pub share: ShareMode,
    /// TransE: also renormalize unified property/entity rows.
    pub renorm_shared: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        ModelConfig {
            kind,
            dim,
            norm: Norm::L2,
            margin: 1.0,
            regularization: 1e-3,
            share: ShareMode::Always,
            renorm_shared: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::InvalidConfig("dimension must be positive".into()));
        }
        if self.kind.uses_margin() && !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(ModelError::InvalidConfig("margin must be positive".into()));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(ModelError::InvalidConfig("regularization must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RelationRows {
    row: u32,
    normal: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    kind: ModelKind,
    dim: usize,
    width: usize,
    norm: Norm,
    nodes: Vec<f64>,
    normals: Vec<f64>,
    /// Indexed by id; `Some` for property ids.
    relations: Vec<Option<RelationRows>>,
    /// Rows kept at unit L2 norm under TransE.
    unit_rows: Vec<u32>,
    /// (entity row, relation row) pairs created by `ShareMode::InitOnly`.
    split_rows: Vec<(u32, u32)>,
}

impl EmbeddingTable {
    /// Zero-filled table with the row layout implied by `vocab` and `config`.
    pub fn zeros(config: &ModelConfig, vocab: &Vocabulary) -> Result<Self, ModelError> {
        config.validate()?;
        let width = config.kind.row_width(config.dim);
        let mut relations = vec![None; vocab.len()];
        let mut split_rows = Vec::new();
        let mut next_row = vocab.len() as u32;
        for (slot, &id) in vocab.property_ids().iter().enumerate() {
            let row = if vocab.is_entity(id) && config.share == ShareMode::InitOnly {
                split_rows.push((id.0, next_row));
                next_row += 1;
                next_row - 1
            } else {
                id.0
            };
            relations[id.index()] = Some(RelationRows { row, normal: slot as u32 });
        }
        let unit_rows = match config.kind {
            ModelKind::TransE => vocab
                .entity_ids()
                .iter()
                .filter(|&&id| config.renorm_shared || !(vocab.unify() && vocab.is_property(id)))
                .map(|id| id.0)
                .collect(),
            _ => Vec::new(),
        };
        let normal_rows = if config.kind == ModelKind::TransH { vocab.property_ids().len() } else { 0 };
        Ok(EmbeddingTable {
            kind: config.kind,
            dim: config.dim,
            width,
            norm: config.norm,
            nodes: vec![0.0; next_row as usize * width],
            normals: vec![0.0; normal_rows * width],
            relations,
            unit_rows,
            split_rows,
        })
    }

    /// Uniform draws on `[-6/√d, 6/√d]`, row by row, then TransE entity rows
    /// and TransH normals scaled to unit L2 norm.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, vocab: &Vocabulary, rng: &mut R) -> Result<Self, ModelError> {
        let mut table = Self::zeros(config, vocab)?;
        let bound = 6.0 / (config.dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for x in table.nodes.iter_mut() {
            *x = dist.sample(rng);
        }
        for x in table.normals.iter_mut() {
            *x = dist.sample(rng);
        }
        table.renormalize();
        for &(entity, relation) in &table.split_rows.clone() {
            let src = table.row(entity as usize).to_vec();
            table.row_mut(relation as usize).copy_from_slice(&src);
        }
        Ok(table)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn rows(&self) -> usize {
        self.nodes.len() / self.width
    }

    pub fn normal_rows(&self) -> usize {
        self.normals.len() / self.width
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.nodes[row * self.width..(row + 1) * self.width]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.nodes[row * self.width..(row + 1) * self.width]
    }

    pub fn normal_row(&self, slot: usize) -> &[f64] {
        &self.normals[slot * self.width..(slot + 1) * self.width]
    }

    pub fn normal_row_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.normals[slot * self.width..(slot + 1) * self.width]
    }

    pub fn node_data(&self) -> &[f64] {
        &self.nodes
    }

    pub fn normal_data(&self) -> &[f64] {
        &self.normals
    }

    pub fn node_data_mut(&mut self) -> &mut [f64] {
        &mut self.nodes
    }

    pub fn normal_data_mut(&mut self) -> &mut [f64] {
        &mut self.normals
    }

    /// Node row holding the relation vector of property `p`.
    pub fn relation_row(&self, p: TermId) -> usize {
        self.relation(p).row as usize
    }

    /// TransH normal slot of property `p`.
    pub fn normal_slot(&self, p: TermId) -> usize {
        self.relation(p).normal as usize
    }

    fn relation(&self, p: TermId) -> RelationRows {
        self.relations[p.index()].unwrap_or_else(|| panic!("id {p} has no property role"))
    }

    pub fn entity_vector(&self, id: TermId) -> &[f64] {
        self.row(id.index())
    }

    pub fn relation_vector(&self, p: TermId) -> &[f64] {
        self.row(self.relation_row(p))
    }

    pub fn normal_vector(&self, p: TermId) -> &[f64] {
        self.normal_row(self.normal_slot(p))
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().chain(&self.normals).all(|x| x.is_finite())
    }

    /// Rows held at unit norm (TransE entity rows).
    pub fn unit_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.unit_rows.iter().map(|&r| r as usize)
    }

    /// Re-applies the per-model constraints: unit TransE entity rows and
    /// unit TransH normals.
    pub fn renormalize(&mut self) {
        for i in 0..self.unit_rows.len() {
            let row = self.unit_rows[i] as usize;
            normalize(self.row_mut(row));
        }
        self.renormalize_normals();
    }

    pub fn renormalize_normals(&mut self) {
        for chunk in self.normals.chunks_mut(self.width) {
            normalize(chunk);
        }
    }

    pub fn score(&self, t: Triple) -> f64 {
        let s = self.row(t.s.index());
        let o = self.row(t.o.index());
        let rel = self.relation(t.p);
        let r = self.row(rel.row as usize);
        match self.kind {
            ModelKind::TransE => translation_score(s, r, o, self.norm),
            ModelKind::TransH => transh_score(s, r, self.normal_row(rel.normal as usize), o, self.norm),
            ModelKind::ComplEx => complex_score(s, r, o),
        }
    }

    /// Adds `coef · ∂score(t)/∂θ` into `grad`.
    pub fn add_score_gradient(&self, t: Triple, coef: f64, grad: &mut SparseGrad) {
        if coef == 0.0 {
            return;
        }
        let rel = self.relation(t.p);
        let (si, ri, oi) = (t.s.index(), rel.row as usize, t.o.index());
        let (s, r, o) = (self.row(si), self.row(ri), self.row(oi));
        let w = self.width;
        match self.kind {
            ModelKind::TransE => {
                let x: Vec<f64> = (0..w).map(|k| s[k] + r[k] - o[k]).collect();
                let g = distance_gradient(&x, self.norm);
                grad.add_node(si, coef, &g);
                grad.add_node(ri, coef, &g);
                grad.add_node(oi, -coef, &g);
            }
            ModelKind::TransH => {
                let ni = rel.normal as usize;
                let n = self.normal_row(ni);
                let diff: Vec<f64> = (0..w).map(|k| s[k] - o[k]).collect();
                let c = dot(n, s) - dot(n, o);
                let x = transh_residual(s, r, n, o);
                let g = distance_gradient(&x, self.norm);
                let ng = dot(n, &g);
                let gs: Vec<f64> = (0..w).map(|k| g[k] - n[k] * ng).collect();
                let gn: Vec<f64> = (0..w).map(|k| -(c * g[k] + diff[k] * ng)).collect();
                grad.add_node(si, coef, &gs);
                grad.add_node(ri, coef, &g);
                grad.add_node(oi, -coef, &gs);
                grad.add_normal(ni, coef, &gn);
            }
            ModelKind::ComplEx => {
                let d = self.dim;
                let mut gs = vec![0.0; w];
                let mut gr = vec![0.0; w];
                let mut go = vec![0.0; w];
                for k in 0..d {
                    let (s_re, s_im) = (s[k], s[d + k]);
                    let (r_re, r_im) = (r[k], r[d + k]);
                    let (o_re, o_im) = (o[k], o[d + k]);
                    gs[k] = r_re * o_re + r_im * o_im;
                    gs[d + k] = r_re * o_im - r_im * o_re;
                    gr[k] = s_re * o_re + s_im * o_im;
                    gr[d + k] = s_re * o_im - s_im * o_re;
                    go[k] = s_re * r_re - s_im * r_im;
                    go[d + k] = s_re * r_im + s_im * r_re;
                }
                grad.add_node(si, coef, &gs);
                grad.add_node(ri, coef, &gr);
                grad.add_node(oi, coef, &go);
            }
        }
    }

    /// Distinct node rows read when scoring `triples`, ascending.
    fn touched_rows(&self, triples: &[Triple]) -> Vec<usize> {
        let mut rows: Vec<usize> = triples
            .iter()
            .flat_map(|t| [t.s.index(), self.relation_row(t.p), t.o.index()])
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn distance(x: impl Iterator<Item = f64>, norm: Norm) -> f64 {
    match norm {
        Norm::L1 => x.map(f64::abs).sum(),
        Norm::L2 => x.map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// `∂(−‖x‖)/∂x`; zero at the origin.
fn distance_gradient(x: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L1 => x
            .iter()
            .map(|&v| if v > 0.0 { -1.0 } else if v < 0.0 { 1.0 } else { 0.0 })
            .collect(),
        Norm::L2 => {
            let n = distance(x.iter().copied(), Norm::L2);
            if n == 0.0 {
                vec![0.0; x.len()]
            } else {
                x.iter().map(|v| -v / n).collect()
            }
        }
    }
}

pub fn translation_score(s: &[f64], r: &[f64], o: &[f64], norm: Norm) -> f64 {
    -distance(s.iter().zip(r).zip(o).map(|((s, r), o)| s + r - o), norm)
}

fn transh_residual(s: &[f64], r: &[f64], n: &[f64], o: &[f64]) -> Vec<f64> {
    let ps = dot(n, s);
    let po = dot(n, o);
    (0..s.len())
        .map(|k| (s[k] - ps * n[k]) + r[k] - (o[k] - po * n[k]))
        .collect()
}

/// `−‖s⊥ + r − o⊥‖` with `x⊥ = x − (n·x)n`.
pub fn transh_score(s: &[f64], r: &[f64], n: &[f64], o: &[f64], norm: Norm) -> f64 {
    -distance(transh_residual(s, r, n, o).into_iter(), norm)
}

/// `Re(Σ_k s_k r_k conj(o_k))` over rows laid out `[re.., im..]`.
pub fn complex_score(s: &[f64], r: &[f64], o: &[f64]) -> f64 {
    let d = s.len() / 2;
    (0..d)
        .map(|k| {
            let (s_re, s_im) = (s[k], s[d + k]);
            let (r_re, r_im) = (r[k], r[d + k]);
            let (o_re, o_im) = (o[k], o[d + k]);
            // Re((s·r)·conj(o))
            (s_re * r_re - s_im * r_im) * o_re + (s_re * r_im + s_im * r_re) * o_im
        })
        .sum()
}

/// Gradient rows keyed by row index; BTreeMap keeps reduction order fixed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub nodes: BTreeMap<usize, Vec<f64>>,
    pub normals: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, row: usize, coef: f64, g: &[f64]) {
        add_into(self.nodes.entry(row).or_insert_with(|| vec![0.0; g.len()]), coef, g);
    }

    pub fn add_normal(&mut self, slot: usize, coef: f64, g: &[f64]) {
        add_into(self.normals.entry(slot).or_insert_with(|| vec![0.0; g.len()]), coef, g);
    }

    pub fn is_zero(&self) -> bool {
        self.nodes.values().chain(self.normals.values()).flatten().all(|&x| x == 0.0)
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.normals.clear();
    }
}

fn add_into(dst: &mut [f64], coef: f64, g: &[f64]) {
    for (d, x) in dst.iter_mut().zip(g) {
        *d += coef * x;
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pair training loss.
///
/// TransE/TransH: `max(0, γ − f(pos) + f(neg))`.
/// ComplEx: `softplus(−f(pos)) + softplus(f(neg)) + λ Σ‖row‖²` over the
/// distinct node rows the two triples read.
pub fn pair_loss(table: &EmbeddingTable, pos: Triple, neg: Triple, config: &ModelConfig) -> f64 {
    match table.kind {
        ModelKind::TransE | ModelKind::TransH => (config.margin - table.score(pos) + table.score(neg)).max(0.0),
        ModelKind::ComplEx => {
            let reg: f64 = table
                .touched_rows(&[pos, neg])
                .into_iter()
                .map(|r| dot(table.row(r), table.row(r)))
                .sum();
            softplus(-table.score(pos)) + softplus(table.score(neg)) + config.regularization * reg
        }
    }
}

/// Adds the gradient of [`pair_loss`] into `grad` and returns the loss.
pub fn accumulate_pair_gradient(
    table: &EmbeddingTable,
    pos: Triple,
    neg: Triple,
    config: &ModelConfig,
    grad: &mut SparseGrad,
) -> f64 {
    match table.kind {
        ModelKind::TransE | ModelKind::TransH => {
            let loss = config.margin - table.score(pos) + table.score(neg);
            if loss <= 0.0 {
                return 0.0;
            }
            table.add_score_gradient(pos, -1.0, grad);
            table.add_score_gradient(neg, 1.0, grad);
            loss
        }
        ModelKind::ComplEx => {
            let fp = table.score(pos);
            let fn_ = table.score(neg);
            table.add_score_gradient(pos, -sigmoid(-fp), grad);
            table.add_score_gradient(neg, sigmoid(fn_), grad);
            let mut reg = 0.0;
            for r in table.touched_rows(&[pos, neg]) {
                let row = table.row(r);
                reg += dot(row, row);
                if config.regularization != 0.0 {
                    grad.add_node(r, 2.0 * config.regularization, row);
                }
            }
            softplus(-fp) + softplus(fn_) + config.regularization * reg
        }
    }
}

/// Gradient of the per-pair loss for exactly the rows the pair touches.
pub fn pair_gradient(table: &EmbeddingTable, pos: Triple, neg: Triple, config: &ModelConfig) -> (f64, SparseGrad) {
    let mut grad = SparseGrad::new();
    let loss = accumulate_pair_gradient(table, pos, neg, config, &mut grad);
    (loss, grad)
}
