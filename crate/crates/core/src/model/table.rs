use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StageRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableRole {
    Entity,
    Relation,
}

/// Row-major `rows x dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
    role: TableRole,
}

/// Uniform init in `[-6/sqrt(dim), 6/sqrt(dim)]`; entity rows are then scaled to
/// unit L2 norm.
pub fn init_table(rows: usize, dim: usize, role: TableRole, seed: u64) -> EmbeddingTable {
    let mut rng = <StageRng as rand::SeedableRng>::seed_from_u64(seed);
    EmbeddingTable::random(rows, dim, role, &mut rng)
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize, role: TableRole) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        Self {
            rows,
            dim,
            values: vec![0.0; rows * dim],
            role,
        }
    }

    pub fn from_values(rows: usize, dim: usize, role: TableRole, values: Vec<f64>) -> Option<Self> {
        (dim >= 1 && values.len() == rows * dim).then_some(Self {
            rows,
            dim,
            values,
            role,
        })
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, dim: usize, role: TableRole, rng: &mut R) -> Self {
        let mut table = Self::zeros(0, dim, role);
        table.push_random_rows(rows, rng);
        table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> TableRole {
        self.role
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn init_bound(dim: usize) -> f64 {
        6.0 / (dim as f64).sqrt()
    }

    pub(crate) fn fill_random_row<R: Rng + ?Sized>(row: &mut [f64], role: TableRole, rng: &mut R) {
        let bound = Self::init_bound(row.len());
        for x in row.iter_mut() {
            *x = rng.random_range(-bound..=bound);
        }
        if role == TableRole::Entity {
            normalize_slice(row);
        }
    }

    pub fn push_random_rows<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) {
        let start = self.values.len();
        self.values.resize(start + n * self.dim, 0.0);
        for row in self.values[start..].chunks_exact_mut(self.dim) {
            Self::fill_random_row(row, self.role, rng);
        }
        self.rows += n;
    }

    pub fn reinit_row<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) {
        let role = self.role;
        Self::fill_random_row(self.row_mut(i), role, rng);
    }

    /// Scale every row to unit L2 norm; zero rows stay zero.
    pub fn normalize_entities(&mut self) {
        for row in self.values.chunks_exact_mut(self.dim) {
            normalize_slice(row);
        }
    }

    pub fn normalize_row(&mut self, i: usize) {
        normalize_slice(self.row_mut(i));
    }

    /// Same rows, wider: each row becomes `row ++ suffix(row_index, row)`.
    pub fn widen(&self, new_dim: usize, mut suffix: impl FnMut(usize, &[f64], &mut [f64])) -> Self {
        assert!(new_dim >= self.dim);
        let mut values = vec![0.0; self.rows * new_dim];
        for (i, (src, dst)) in self
            .values
            .chunks_exact(self.dim)
            .zip(values.chunks_exact_mut(new_dim))
            .enumerate()
        {
            let (prefix, rest) = dst.split_at_mut(self.dim);
            prefix.copy_from_slice(src);
            suffix(i, src, rest);
        }
        Self {
            rows: self.rows,
            dim: new_dim,
            values,
            role: self.role,
        }
    }

    pub fn truncate_rows(&mut self, rows: usize) {
        self.rows = self.rows.min(rows);
        self.values.truncate(self.rows * self.dim);
    }
}

pub(crate) fn normalize_slice(row: &mut [f64]) {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
}
