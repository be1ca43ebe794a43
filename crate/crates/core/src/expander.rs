//! Dimension growth. Old rows keep their coordinates verbatim and gain a
//! suffix produced by a small learned map of the old row.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Triple};
use crate::model::{residual_grad_in_place, AdamConfig, AdamState, EmbeddingTable, KgeModel, RowGrads};
use crate::sampler::ReplaySet;
use crate::trainer::{corrupt_batch, integration_loss};

/// `f: R^d_in -> R^d_out`, either affine or affine-tanh-affine. Parameters
/// live in one flat vector so a single optimizer state drives them.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionNet {
    d_in: usize,
    d_out: usize,
    hidden: Option<usize>,
    theta: Vec<f64>,
}

impl ExpansionNet {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, hidden: Option<usize>, rng: &mut R) -> Result<Self> {
        if d_in == 0 || d_out == 0 || hidden == Some(0) {
            return Err(Error::InvalidArgument(format!(
                "expansion net needs positive sizes (d_in {d_in}, d_out {d_out}, hidden {hidden:?})"
            )));
        }
        let mut net = Self {
            d_in,
            d_out,
            hidden,
            theta: Vec::new(),
        };
        let mut layer = |fan_in: usize, fan_out: usize, theta: &mut Vec<f64>| {
            let b = 1.0 / (fan_in as f64).sqrt();
            theta.extend((0..fan_in * fan_out).map(|_| rng.random_range(-b..=b)));
            theta.extend(std::iter::repeat_n(0.0, fan_out));
        };
        match hidden {
            None => layer(d_in, d_out, &mut net.theta),
            Some(h) => {
                layer(d_in, h, &mut net.theta);
                layer(h, d_out, &mut net.theta);
            }
        }
        Ok(net)
    }

    /// Single affine layer from explicit weights (`d_out x d_in`, row-major) and bias.
    pub fn affine(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 || weights.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::InvalidArgument("affine net shape mismatch".into()));
        }
        let mut theta = weights;
        theta.extend(bias);
        Ok(Self {
            d_in,
            d_out,
            hidden: None,
            theta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn hidden(&self) -> Option<usize> {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn affine_forward(theta: &[f64], fan_in: usize, x: &[f64], out: &mut [f64]) {
        let (w, b) = theta.split_at(fan_in * out.len());
        for (o, (wr, bi)) in out.iter_mut().zip(w.chunks_exact(fan_in).zip(b)) {
            *o = bi + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn hidden_activations(&self, h: usize, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; h];
        Self::affine_forward(&self.theta[..h * self.d_in + h], self.d_in, x, &mut z);
        for v in &mut z {
            *v = v.tanh();
        }
        z
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d_in);
        debug_assert_eq!(out.len(), self.d_out);
        match self.hidden {
            None => Self::affine_forward(&self.theta, self.d_in, x, out),
            Some(h) => {
                let z = self.hidden_activations(h, x);
                Self::affine_forward(&self.theta[h * self.d_in + h..], h, &z, out);
            }
        }
    }

    /// Add `d(g_out . f(x)) / d theta` into `grad`.
    pub fn backward(&self, x: &[f64], g_out: &[f64], grad: &mut [f64]) {
        fn affine_backward(fan_in: usize, input: &[f64], g: &[f64], grad: &mut [f64]) {
            let (gw, gb) = grad.split_at_mut(fan_in * g.len());
            for ((row, gbi), &gi) in gw.chunks_exact_mut(fan_in).zip(gb).zip(g) {
                *gbi += gi;
                for (w, xi) in row.iter_mut().zip(input) {
                    *w += gi * xi;
                }
            }
        }
        match self.hidden {
            None => affine_backward(self.d_in, x, g_out, grad),
            Some(h) => {
                let split = h * self.d_in + h;
                let z = self.hidden_activations(h, x);
                let (g1, g2) = grad.split_at_mut(split);
                affine_backward(h, &z, g_out, g2);
                let w2 = &self.theta[split..split + self.d_out * h];
                let mut ga = vec![0.0; h];
                for (gi, w_row) in g_out.iter().zip(w2.chunks_exact(h)) {
                    for (a, w) in ga.iter_mut().zip(w_row) {
                        *a += gi * w;
                    }
                }
                for (a, zi) in ga.iter_mut().zip(&z) {
                    *a *= 1.0 - zi * zi;
                }
                affine_backward(self.d_in, x, &ga, g1);
            }
        }
    }
}

/// Build an expansion net mapping `d_in` coordinates to `delta` new ones.
pub fn build_net<R: Rng + ?Sized>(d_in: usize, delta: usize, hidden: Option<usize>, rng: &mut R) -> Result<ExpansionNet> {
    ExpansionNet::new(d_in, delta, hidden, rng)
}

/// Every row becomes `row ++ f(row)`; the prefix is copied.
pub fn expand_table(table: &EmbeddingTable, net: &ExpansionNet) -> Result<EmbeddingTable> {
    let d = table.dim();
    if net.input_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: net.input_dim(),
        });
    }
    let new_dim = d + net.output_dim();
    let mut values = vec![0.0; table.rows() * new_dim];
    values
        .par_chunks_exact_mut(new_dim)
        .zip(table.values().par_chunks_exact(d))
        .for_each(|(dst, src)| {
            let (prefix, suffix) = dst.split_at_mut(d);
            prefix.copy_from_slice(src);
            net.forward(src, suffix);
        });
    Ok(EmbeddingTable::from_values(table.rows(), new_dim, table.role(), values).expect("shape computed above"))
}

/// Expand entity and relation tables through one shared net.
pub fn expand_all(model: &KgeModel, net: &ExpansionNet) -> Result<KgeModel> {
    KgeModel::new(expand_table(&model.entities, net)?, expand_table(&model.relations, net)?, model.norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig {
    pub margin: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub negatives: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            margin: 8.0,
            epochs: 1,
            lr: 1e-4,
            batch_size: 1024,
            negatives: 1,
        }
    }
}

fn expanded_row(table: &EmbeddingTable, id: u32, net: &ExpansionNet, out: &mut [f64]) {
    let src = table.row(id as usize);
    let (prefix, suffix) = out.split_at_mut(src.len());
    prefix.copy_from_slice(src);
    net.forward(src, suffix);
}

/// Margin loss of `(positive, negative)` pairs scored in the expanded space of
/// the (unexpanded) `model`. When `grad` is given, `d loss / d theta` is added to it.
pub fn expansion_loss(
    net: &ExpansionNet,
    model: &KgeModel,
    pairs: &[(Triple, Triple)],
    margin: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = model.dim();
    if net.input_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: net.input_dim(),
        });
    }
    if let Some(g) = grad.as_deref() {
        if g.len() != net.param_count() {
            return Err(Error::ShapeMismatch {
                params: net.param_count(),
                grads: g.len(),
            });
        }
    }
    let nd = d + net.output_dim();
    let (mut h, mut r, mut t) = (vec![0.0; nd], vec![0.0; nd], vec![0.0; nd]);
    let mut gp = vec![0.0; nd];
    let mut gn = vec![0.0; nd];
    let mut scaled = vec![0.0; net.output_dim()];
    let dist = |tr: &Triple, g: &mut [f64], h: &mut [f64], r: &mut [f64], t: &mut [f64]| {
        expanded_row(&model.entities, tr.head, net, h);
        expanded_row(&model.relations, tr.relation, net, r);
        expanded_row(&model.entities, tr.tail, net, t);
        for (o, ((a, b), c)) in g.iter_mut().zip(h.iter().zip(r.iter()).zip(t.iter())) {
            *o = a + b - c;
        }
        residual_grad_in_place(g, model.norm)
    };
    let mut total = 0.0;
    for (pos, neg) in pairs {
        let dp = dist(pos, &mut gp, &mut h, &mut r, &mut t);
        let dn = dist(neg, &mut gn, &mut h, &mut r, &mut t);
        let loss = margin + dp - dn;
        if loss <= 0.0 {
            continue;
        }
        total += loss;
        let Some(g) = grad.as_deref_mut() else { continue };
        for (tr, gr, sign) in [(pos, &gp, 1.0), (neg, &gn, -1.0)] {
            let gs = &gr[d..];
            for (side, s) in [
                (model.entities.row(tr.head as usize), sign),
                (model.relations.row(tr.relation as usize), sign),
                (model.entities.row(tr.tail as usize), -sign),
            ] {
                for (o, v) in scaled.iter_mut().zip(gs) {
                    *o = s * v;
                }
                net.backward(side, &scaled, g);
            }
        }
    }
    Ok(total)
}

/// Fit the net on the replay set with the model frozen. Returns the loss of
/// each epoch.
pub fn train_expansion<R: Rng + ?Sized>(
    net: &mut ExpansionNet,
    replay: &ReplaySet,
    model: &KgeModel,
    cfg: &ExpansionConfig,
    pool: &[EntityId],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if replay.is_empty() {
        return Err(Error::EmptyReplaySet);
    }
    if !(cfg.margin > 0.0) {
        return Err(Error::InvalidArgument("expansion margin must be > 0".into()));
    }
    let mut opt = AdamState::new(net.param_count(), AdamConfig::default());
    let mut grad = vec![0.0; net.param_count()];
    let mut order = replay.triples.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let pairs = corrupt_batch(chunk, cfg.negatives.max(1), pool, None, rng);
            grad.fill(0.0);
            epoch += expansion_loss(net, model, &pairs, cfg.margin, Some(&mut grad))?;
            opt.step(&mut net.theta, &grad, cfg.lr)?;
        }
        losses.push(epoch);
    }
    Ok(losses)
}

/// Widen both tables with suffix coordinates drawn uniformly from
/// `±6/sqrt(new_dim)`.
pub fn expand_random<R: Rng + ?Sized>(model: &KgeModel, new_dim: usize, rng: &mut R) -> Result<KgeModel> {
    let bound = EmbeddingTable::init_bound(new_dim);
    let mut fill = |_: usize, _: &[f64], out: &mut [f64]| {
        for x in out {
            *x = rng.random_range(-bound..=bound);
        }
    };
    let entities = model.entities.widen(new_dim, &mut fill);
    let relations = model.relations.widen(new_dim, &mut fill);
    KgeModel::new(entities, relations, model.norm)
}

/// Train only coordinates `old_dim..` of a widened model on the replay set.
pub fn train_suffix<R: Rng + ?Sized>(
    model: &mut KgeModel,
    old_dim: usize,
    replay: &ReplaySet,
    cfg: &ExpansionConfig,
    pool: &[EntityId],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if replay.is_empty() {
        return Err(Error::EmptyReplaySet);
    }
    let dim = model.dim();
    let mut ent_opt = AdamState::new(model.entities.values().len(), AdamConfig::default());
    let mut rel_opt = AdamState::new(model.relations.values().len(), AdamConfig::default());
    let mut ent = RowGrads::new(dim);
    let mut rel = RowGrads::new(dim);
    let mut order = replay.triples.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let pairs = corrupt_batch(chunk, cfg.negatives.max(1), pool, None, rng);
            ent.clear();
            rel.clear();
            epoch += integration_loss(model, &pairs, cfg.margin, &mut ent, &mut rel);
            for g in [&mut ent, &mut rel] {
                let rows = g.rows().to_vec();
                for row in rows {
                    g.entry(row)[..old_dim].fill(0.0);
                }
            }
            ent_opt.step_rows(model.entities.values_mut(), dim, &ent, cfg.lr)?;
            rel_opt.step_rows(model.relations.values_mut(), dim, &rel, cfg.lr)?;
        }
        losses.push(epoch);
    }
    Ok(losses)
}

/// Rows re-initialised by [`init_new_elements`] (placeholders that now have
/// training data).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reinitialised {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

/// Grow the tables to the given row counts with fresh rows, and re-draw any
/// already-present row listed as new.
pub fn init_new_elements<R: Rng + ?Sized>(
    model: &mut KgeModel,
    num_entities: usize,
    num_relations: usize,
    new_entities: &[EntityId],
    new_relations: &[RelationId],
    rng: &mut R,
) -> Reinitialised {
    let (old_e, old_r) = (model.num_entities(), model.num_relations());
    model.entities.push_random_rows(num_entities.saturating_sub(old_e), rng);
    model.relations.push_random_rows(num_relations.saturating_sub(old_r), rng);
    let mut re = Reinitialised::default();
    for &e in new_entities.iter().filter(|&&e| (e as usize) < old_e) {
        model.entities.reinit_row(e as usize, rng);
        re.entities.push(e);
    }
    for &r in new_relations.iter().filter(|&&r| (r as usize) < old_r) {
        model.relations.reinit_row(r as usize, rng);
        re.relations.push(r);
    }
    re
}
