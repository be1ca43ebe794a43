use std::collections::HashMap;

/// Sparse per-row gradient accumulator. Rows keep first-touch order so that
/// iteration (and therefore every update) is deterministic.
#[derive(Debug, Clone)]
pub struct RowGrads {
    dim: usize,
    rows: Vec<u32>,
    slot: HashMap<u32, usize>,
    data: Vec<f64>,
}

impl RowGrads {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            slot: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.slot.clear();
        self.data.clear();
    }

    pub fn reset_dim(&mut self, dim: usize) {
        self.clear();
        self.dim = dim;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn contains(&self, row: u32) -> bool {
        self.slot.contains_key(&row)
    }

    /// Mutable gradient slot for `row`, created zeroed on first touch.
    pub fn entry(&mut self, row: u32) -> &mut [f64] {
        let dim = self.dim;
        let idx = match self.slot.get(&row) {
            Some(&i) => i,
            None => {
                let i = self.rows.len();
                self.rows.push(row);
                self.slot.insert(row, i);
                self.data.resize(self.data.len() + dim, 0.0);
                i
            }
        };
        &mut self.data[idx * dim..(idx + 1) * dim]
    }

    pub fn add_scaled(&mut self, row: u32, grad: &[f64], scale: f64) {
        debug_assert_eq!(grad.len(), self.dim);
        for (a, g) in self.entry(row).iter_mut().zip(grad) {
            *a += scale * g;
        }
    }

    pub fn get(&self, row: u32) -> Option<&[f64]> {
        self.slot
            .get(&row)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows
            .iter()
            .copied()
            .zip(self.data.chunks_exact(self.dim.max(1)))
    }
}
