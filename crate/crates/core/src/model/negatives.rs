use std::collections::HashSet;

use rand::Rng;

use crate::kg::{EntityId, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

/// Corrupted copies of one positive triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positive: Triple,
    pub negatives: Vec<(Triple, Side)>,
}

fn other_entity<R: Rng + ?Sized>(original: EntityId, num_entities: usize, rng: &mut R) -> EntityId {
    let x = rng.random_range(0..num_entities as u32 - 1);
    if x >= original {
        x + 1
    } else {
        x
    }
}

/// Replace head or tail (fair coin) with a uniform entity different from the
/// original.
pub fn corrupt<R: Rng + ?Sized>(triple: Triple, num_entities: usize, rng: &mut R) -> (Triple, Side) {
    assert!(num_entities >= 2, "corruption needs at least two entities");
    if rng.random_bool(0.5) {
        let head = other_entity(triple.head, num_entities, rng);
        (Triple { head, ..triple }, Side::Head)
    } else {
        let tail = other_entity(triple.tail, num_entities, rng);
        (Triple { tail, ..triple }, Side::Tail)
    }
}

/// Like [`corrupt`] but the replacement is drawn uniformly from a sorted pool
/// of entity ids, excluding the original.
pub fn corrupt_within<R: Rng + ?Sized>(triple: Triple, pool: &[EntityId], rng: &mut R) -> (Triple, Side) {
    assert!(pool.len() >= 2, "corruption needs at least two entities");
    let pick = |original: EntityId, rng: &mut R| match pool.binary_search(&original) {
        Ok(pos) => {
            let x = rng.random_range(0..pool.len() - 1);
            pool[if x >= pos { x + 1 } else { x }]
        }
        Err(_) => pool[rng.random_range(0..pool.len())],
    };
    if rng.random_bool(0.5) {
        let head = pick(triple.head, rng);
        (Triple { head, ..triple }, Side::Head)
    } else {
        let tail = pick(triple.tail, rng);
        (Triple { tail, ..triple }, Side::Tail)
    }
}

pub fn sample_negatives<R: Rng + ?Sized>(
    triple: Triple,
    num_entities: usize,
    n: usize,
    rng: &mut R,
) -> NegativeBatch {
    NegativeBatch {
        positive: triple,
        negatives: (0..n).map(|_| corrupt(triple, num_entities, rng)).collect(),
    }
}

/// Like [`sample_negatives`] but redraws corruptions that hit a known-true
/// triple, giving up after `max_tries` draws per negative.
pub fn sample_negatives_filtered<R: Rng + ?Sized>(
    triple: Triple,
    num_entities: usize,
    n: usize,
    known: &HashSet<Triple>,
    max_tries: usize,
    rng: &mut R,
) -> NegativeBatch {
    let negatives = (0..n)
        .map(|_| {
            let mut neg = corrupt(triple, num_entities, rng);
            for _ in 1..max_tries.max(1) {
                if !known.contains(&neg.0) {
                    break;
                }
                neg = corrupt(triple, num_entities, rng);
            }
            neg
        })
        .collect();
    NegativeBatch {
        positive: triple,
        negatives,
    }
}
