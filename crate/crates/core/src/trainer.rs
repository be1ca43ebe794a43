//! Per-snapshot training: margin loss on the new triples plus a weighted pull of
//! old elements toward their expanded starting point.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{link_prediction_metrics, CandidateSet, FilterIndex};
use crate::kg::{EntityId, Triple};
use crate::model::{corrupt_within, residual_grad_in_place, AdamConfig, AdamState, EmbeddingTable, KgeModel, RowGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DwtScope {
    /// Only old elements appearing in the current batch.
    #[default]
    Batch,
    /// Every old element, once per epoch.
    Full,
}

impl FromStr for DwtScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "batch" => Ok(Self::Batch),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown dwt scope '{s}' (batch|full)"))),
        }
    }
}

impl fmt::Display for DwtScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Batch => "batch",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub margin: f64,
    pub alpha: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_interval: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub filter_negatives: bool,
    pub dwt_scope: DwtScope,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            margin: 8.0,
            alpha: 0.01,
            max_epochs: 200,
            patience: 3,
            eval_interval: 5,
            batch_size: 1024,
            negatives: 1,
            filter_negatives: false,
            dwt_scope: DwtScope::Batch,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be > 0");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("train.margin must be > 0");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("train.alpha must be >= 0");
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs must be >= 1");
        }
        if self.eval_interval == 0 || self.batch_size == 0 || self.negatives == 0 || self.patience == 0 {
            return bad("train.eval_interval, train.batch_size, train.negatives and train.patience must be >= 1");
        }
        Ok(())
    }
}

/// Frozen targets for old elements and their per-element weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillAnchors {
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
    pub entity_weights: Vec<f64>,
    pub relation_weights: Vec<f64>,
}

impl DistillAnchors {
    pub fn new(model: &KgeModel, entity_weights: Vec<f64>, relation_weights: Vec<f64>) -> Result<Self> {
        if entity_weights.len() != model.num_entities() || relation_weights.len() != model.num_relations() {
            return Err(Error::InvalidArgument(format!(
                "anchor weights ({}, {}) do not match table rows ({}, {})",
                entity_weights.len(),
                relation_weights.len(),
                model.num_entities(),
                model.num_relations()
            )));
        }
        if let Some(w) = entity_weights.iter().chain(&relation_weights).find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("distillation weight {w} is not finite and >= 0")));
        }
        Ok(Self {
            entities: model.entities.clone(),
            relations: model.relations.clone(),
            entity_weights,
            relation_weights,
        })
    }
}

/// Sum of hinge losses over `(positive, negative)` pairs; gradients of active
/// pairs are added to `ent`/`rel`.
pub fn integration_loss(
    model: &KgeModel,
    pairs: &[(Triple, Triple)],
    margin: f64,
    ent: &mut RowGrads,
    rel: &mut RowGrads,
) -> f64 {
    let dim = model.dim();
    let mut gp = vec![0.0; dim];
    let mut gn = vec![0.0; dim];
    let mut total = 0.0;
    for (pos, neg) in pairs {
        let dp = residual(model, pos, &mut gp);
        let dn = residual(model, neg, &mut gn);
        let loss = margin + dp - dn;
        if loss > 0.0 {
            total += loss;
            ent.add_scaled(pos.head, &gp, 1.0);
            rel.add_scaled(pos.relation, &gp, 1.0);
            ent.add_scaled(pos.tail, &gp, -1.0);
            ent.add_scaled(neg.head, &gn, -1.0);
            rel.add_scaled(neg.relation, &gn, -1.0);
            ent.add_scaled(neg.tail, &gn, 1.0);
        }
    }
    total
}

fn residual(model: &KgeModel, t: &Triple, out: &mut [f64]) -> f64 {
    let h = model.entities.row(t.head as usize);
    let r = model.relations.row(t.relation as usize);
    let tl = model.entities.row(t.tail as usize);
    for (o, ((h, r), t)) in out.iter_mut().zip(h.iter().zip(r).zip(tl)) {
        *o = h + r - t;
    }
    residual_grad_in_place(out, model.norm)
}

fn dwt_rows(
    table: &EmbeddingTable,
    anchors: &EmbeddingTable,
    weights: &[f64],
    rows: &[u32],
    grad_scale: f64,
    grads: &mut RowGrads,
) -> f64 {
    let mut total = 0.0;
    for &j in rows {
        let j_us = j as usize;
        if j_us >= anchors.rows() {
            continue;
        }
        let w = weights[j_us];
        if w == 0.0 {
            continue;
        }
        let (h, a) = (table.row(j_us), anchors.row(j_us));
        total += w * h.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let coef = 2.0 * w * grad_scale;
        if coef != 0.0 {
            let g = grads.entry(j);
            for ((g, x), y) in g.iter_mut().zip(h).zip(a) {
                *g += coef * (x - y);
            }
        }
    }
    total
}

/// `sum_j w_j ||h_j - h'_j||^2` over the given old rows. Gradients scaled by
/// `grad_scale` are added for rows whose scaled coefficient is nonzero.
pub fn dwt_loss(
    model: &KgeModel,
    anchors: &DistillAnchors,
    entity_rows: &[u32],
    relation_rows: &[u32],
    grad_scale: f64,
    ent: &mut RowGrads,
    rel: &mut RowGrads,
) -> f64 {
    dwt_rows(&model.entities, &anchors.entities, &anchors.entity_weights, entity_rows, grad_scale, ent)
        + dwt_rows(&model.relations, &anchors.relations, &anchors.relation_weights, relation_rows, grad_scale, rel)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub integration: f64,
    pub dwt: f64,
    pub total: f64,
}

/// Entities and relations appearing anywhere in the batch, in first-seen order.
pub fn touched_rows(pairs: &[(Triple, Triple)]) -> (Vec<u32>, Vec<u32>) {
    let mut es = Vec::new();
    let mut rs = Vec::new();
    let mut seen_e = HashSet::new();
    let mut seen_r = HashSet::new();
    for (p, n) in pairs {
        for t in [p, n] {
            for e in [t.head, t.tail] {
                if seen_e.insert(e) {
                    es.push(e);
                }
            }
            if seen_r.insert(t.relation) {
                rs.push(t.relation);
            }
        }
    }
    (es, rs)
}

/// Integration loss plus `alpha` times the distillation term over the rows
/// touched by the batch.
pub fn batch_loss(
    model: &KgeModel,
    pairs: &[(Triple, Triple)],
    anchors: Option<&DistillAnchors>,
    alpha: f64,
    margin: f64,
    ent: &mut RowGrads,
    rel: &mut RowGrads,
) -> LossParts {
    let integration = integration_loss(model, pairs, margin, ent, rel);
    let dwt = match anchors {
        Some(a) => {
            let (es, rs) = touched_rows(pairs);
            dwt_loss(model, a, &es, &rs, alpha, ent, rel)
        }
        None => 0.0,
    };
    LossParts {
        integration,
        dwt,
        total: integration + alpha * dwt,
    }
}

/// Model plus the optimizer moments that travel with it across snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: KgeModel,
    pub entity_opt: AdamState,
    pub relation_opt: AdamState,
}

impl TrainState {
    pub fn new(model: KgeModel) -> Self {
        let entity_opt = AdamState::new(model.entities.values().len(), AdamConfig::default());
        let relation_opt = AdamState::new(model.relations.values().len(), AdamConfig::default());
        Self {
            model,
            entity_opt,
            relation_opt,
        }
    }

    /// Apply accumulated gradients and renormalise the updated entity rows.
    pub fn apply(&mut self, ent: &RowGrads, rel: &RowGrads, lr: f64) -> Result<()> {
        let dim = self.model.dim();
        self.entity_opt.step_rows(self.model.entities.values_mut(), dim, ent, lr)?;
        self.relation_opt.step_rows(self.model.relations.values_mut(), dim, rel, lr)?;
        for &row in ent.rows() {
            self.model.entities.normalize_row(row as usize);
        }
        Ok(())
    }
}

/// Everything besides the model that training consults.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    /// Sorted entity ids eligible as corruption replacements.
    pub pool: &'a [EntityId],
    pub valid: &'a [Triple],
    pub filter: &'a FilterIndex,
    pub candidates: &'a CandidateSet,
    pub known: Option<&'a HashSet<Triple>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

const MAX_FILTER_TRIES: usize = 10;

/// One or more corruptions per positive.
pub fn corrupt_batch<R: Rng + ?Sized>(
    batch: &[Triple],
    negatives: usize,
    pool: &[EntityId],
    known: Option<&HashSet<Triple>>,
    rng: &mut R,
) -> Vec<(Triple, Triple)> {
    let mut pairs = Vec::with_capacity(batch.len() * negatives);
    for &pos in batch {
        for _ in 0..negatives {
            let mut neg = corrupt_within(pos, pool, rng).0;
            if let Some(k) = known {
                for _ in 1..MAX_FILTER_TRIES {
                    if !k.contains(&neg) {
                        break;
                    }
                    neg = corrupt_within(pos, pool, rng).0;
                }
            }
            pairs.push((pos, neg));
        }
    }
    pairs
}

fn old_rows(weights: &[f64]) -> Vec<u32> {
    (0..weights.len() as u32).filter(|&j| weights[j as usize] != 0.0).collect()
}

fn valid_mrr(model: &KgeModel, ctx: &TrainContext<'_>) -> Result<Option<f64>> {
    if ctx.valid.is_empty() {
        return Ok(None);
    }
    match link_prediction_metrics(model, ctx.valid, ctx.filter, ctx.candidates) {
        Ok(m) => Ok(Some(m.mrr)),
        Err(Error::EmptyTestSet) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mini-batch training over `triples` with early stopping on validation MRR.
/// The best evaluated checkpoint is restored at the end.
pub fn train_snapshot<R: Rng + ?Sized>(
    state: &mut TrainState,
    triples: &[Triple],
    anchors: Option<&DistillAnchors>,
    cfg: &TrainConfig,
    ctx: &TrainContext<'_>,
    rng: &mut R,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if triples.is_empty() {
        return Ok(report);
    }
    if ctx.pool.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two entities".into()));
    }
    let dim = state.model.dim();
    let mut ent = RowGrads::new(dim);
    let mut rel = RowGrads::new(dim);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut best: Option<(f64, TrainState)> = None;
    let mut since_best = 0usize;
    let full_rows = match (anchors, cfg.dwt_scope) {
        (Some(a), DwtScope::Full) if cfg.alpha > 0.0 => Some((old_rows(&a.entity_weights), old_rows(&a.relation_weights))),
        _ => None,
    };
    let batch_anchors = match cfg.dwt_scope {
        DwtScope::Batch => anchors,
        DwtScope::Full => None,
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| triples[i]));
            let pairs = corrupt_batch(&batch, cfg.negatives, ctx.pool, ctx.known, rng);
            ent.clear();
            rel.clear();
            let parts = batch_loss(&state.model, &pairs, batch_anchors, cfg.alpha, cfg.margin, &mut ent, &mut rel);
            epoch_loss += parts.total;
            state.apply(&ent, &rel, cfg.lr)?;
        }
        if let (Some((es, rs)), Some(a)) = (&full_rows, anchors) {
            ent.clear();
            rel.clear();
            let d = dwt_loss(&state.model, a, es, rs, cfg.alpha, &mut ent, &mut rel);
            epoch_loss += cfg.alpha * d;
            state.apply(&ent, &rel, cfg.lr)?;
        }
        report.epoch_losses.push(epoch_loss);
        report.epochs = epoch;

        if epoch % cfg.eval_interval == 0 || epoch == cfg.max_epochs {
            let Some(mrr) = valid_mrr(&state.model, ctx)? else {
                if cfg.verbose {
                    println!("epoch {epoch:4}  loss {epoch_loss:.6}");
                }
                continue;
            };
            if cfg.verbose {
                println!("epoch {epoch:4}  loss {epoch_loss:.6}  valid_mrr {mrr:.4}");
            }
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, state.clone()));
                report.best_epoch = epoch;
                report.best_valid_mrr = Some(mrr);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    match best {
        Some((_, s)) => *state = s,
        None => {
            report.best_epoch = report.epochs;
        }
    }
    Ok(report)
}

/// Ids of entities and relations used by a triple list.
pub fn elements_of(triples: &[Triple]) -> (BTreeSet<EntityId>, BTreeSet<u32>) {
    let mut es = BTreeSet::new();
    let mut rs = BTreeSet::new();
    for t in triples {
        es.insert(t.head);
        es.insert(t.tail);
        rs.insert(t.relation);
    }
    (es, rs)
}
