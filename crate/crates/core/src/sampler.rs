//! Difficulty-driven replay: triples whose head/tail predictions the current
//! model is least sure about are replayed more often.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Triple};
use crate::model::KgeModel;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySet {
    pub triples: Vec<Triple>,
    /// Entropy of each selected triple; empty when sampled from a bare distribution.
    pub entropies: Vec<f64>,
    /// Positions of the selected triples in the source list.
    pub indices: Vec<usize>,
}

impl ReplaySet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Shannon entropy (nats) of `softmax(scores)`.
pub fn softmax_entropy(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let expected_shift: f64 = scores.iter().map(|s| (s - max).exp() * (s - max)).sum::<f64>() / z;
    let h = z.ln() - expected_shift;
    h.clamp(0.0, (scores.len() as f64).ln())
}

/// Mean of the tail-replacement and head-replacement softmax entropies of a
/// triple over the candidate entities.
pub fn triple_entropy(model: &KgeModel, triple: &Triple, candidates: &[EntityId]) -> Result<f64> {
    if candidates.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "entropy needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    if model.entities.dim() != model.relations.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.entities.dim(),
            found: model.relations.dim(),
        });
    }
    let n = model.num_entities();
    if let Some(&bad) = candidates
        .iter()
        .chain([&triple.head, &triple.tail])
        .find(|&&e| e as usize >= n)
    {
        return Err(Error::UnknownEntity(bad));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    scores.extend(candidates.iter().map(|&e| model.score(&Triple { tail: e, ..*triple })));
    let tail = softmax_entropy(&scores);
    scores.clear();
    scores.extend(candidates.iter().map(|&e| model.score(&Triple { head: e, ..*triple })));
    let head = softmax_entropy(&scores);
    Ok(0.5 * (tail + head))
}

pub fn triple_entropies(model: &KgeModel, triples: &[Triple], candidates: &[EntityId]) -> Result<Vec<f64>> {
    triples
        .par_iter()
        .map(|t| triple_entropy(model, t, candidates))
        .collect()
}

/// `P(s) = exp(H(s)) / sum exp(H(s'))`, max-shifted.
pub fn replay_distribution(entropies: &[f64]) -> Result<Vec<f64>> {
    if entropies.is_empty() {
        return Err(Error::EmptyInput("entropies"));
    }
    if let Some(h) = entropies.iter().find(|h| !h.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite entropy {h}")));
    }
    let max = entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = entropies.iter().map(|h| (h - max).exp()).collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    Ok(p)
}

/// Draw `min(k, n)` distinct indices one at a time, each with probability
/// proportional to its weight among those not yet drawn.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if k >= n {
        return (0..n).collect();
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut mass: f64 = weights.iter().sum();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let pos = if mass > 0.0 && mass.is_finite() {
            let mut u = rng.random::<f64>() * mass;
            let mut chosen = remaining.len() - 1;
            for (j, &i) in remaining.iter().enumerate() {
                u -= weights[i];
                if u < 0.0 {
                    chosen = j;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..remaining.len())
        };
        let i = remaining.swap_remove(pos);
        mass -= weights[i];
        picked.push(i);
    }
    picked
}

pub fn sample_replay<R: Rng + ?Sized>(dist: &[f64], triples: &[Triple], k: usize, rng: &mut R) -> ReplaySet {
    assert_eq!(dist.len(), triples.len(), "distribution and triple list differ in length");
    let indices = weighted_sample_without_replacement(dist, k, rng);
    ReplaySet {
        triples: indices.iter().map(|&i| triples[i]).collect(),
        entropies: Vec::new(),
        indices,
    }
}

/// Candidate entities for the entropy estimate: every trained entity, or a
/// uniform subsample of `limit` of them.
pub fn entropy_candidates<R: Rng + ?Sized>(trained: &[EntityId], limit: Option<usize>, rng: &mut R) -> Vec<EntityId> {
    match limit {
        Some(m) if m < trained.len() => {
            let mut picked: Vec<EntityId> = index::sample(rng, trained.len(), m)
                .into_iter()
                .map(|i| trained[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => trained.to_vec(),
    }
}

/// Entropy-weighted replay set from `triples` (or a uniform one when
/// `uniform` is set).
pub fn select_replay<R: Rng + ?Sized>(
    model: &KgeModel,
    triples: &[Triple],
    candidates: &[EntityId],
    k: usize,
    uniform: bool,
    rng: &mut R,
) -> Result<ReplaySet> {
    if triples.is_empty() || k == 0 {
        return Ok(ReplaySet::default());
    }
    let (entropies, dist) = if uniform {
        (Vec::new(), vec![1.0 / triples.len() as f64; triples.len()])
    } else {
        let h = triple_entropies(model, triples, candidates)?;
        let p = replay_distribution(&h)?;
        (h, p)
    };
    let mut set = sample_replay(&dist, triples, k, rng);
    if !entropies.is_empty() {
        set.entropies = set.indices.iter().map(|&i| entropies[i]).collect();
    }
    Ok(set)
}
