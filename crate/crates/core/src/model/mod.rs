//! TransE embedding tables, scoring, corruption sampling and the optimizer.

mod adam;
mod grads;
mod negatives;
mod score;
mod table;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use grads::RowGrads;
pub use negatives::{corrupt, corrupt_within, sample_negatives, sample_negatives_filtered, NegativeBatch, Side};
pub use score::{distance, distance_grad, margin_loss, score, Norm};
pub(crate) use score::residual_grad_in_place;
pub use table::{init_table, EmbeddingTable, TableRole};

use crate::error::{Error, Result};
use crate::kg::Triple;

/// Entity and relation tables sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
    pub norm: Norm,
}

impl KgeModel {
    pub fn new(entities: EmbeddingTable, relations: EmbeddingTable, norm: Norm) -> Result<Self> {
        if entities.dim() != relations.dim() {
            return Err(Error::DimensionMismatch {
                expected: entities.dim(),
                found: relations.dim(),
            });
        }
        Ok(Self {
            entities,
            relations,
            norm,
        })
    }

    /// Fresh model; entity and relation tables draw from separate seed streams.
    pub fn init(num_entities: usize, num_relations: usize, dim: usize, norm: Norm, seed: u64) -> Self {
        let entities = init_table(num_entities, dim, TableRole::Entity, crate::rng::derive_seed(seed, &[0]));
        let relations = init_table(num_relations, dim, TableRole::Relation, crate::rng::derive_seed(seed, &[1]));
        Self {
            entities,
            relations,
            norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.dim()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows()
    }

    /// Translation distance of a triple. Panics on out-of-range ids.
    pub fn distance(&self, t: &Triple) -> f64 {
        score::distance_unchecked(
            self.entities.row(t.head as usize),
            self.relations.row(t.relation as usize),
            self.entities.row(t.tail as usize),
            self.norm,
        )
    }

    pub fn score(&self, t: &Triple) -> f64 {
        -self.distance(t)
    }
}
