use serde::{Deserialize, Serialize};

use super::grads::RowGrads;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators shaped like the parameters they drive.
///
/// Bias correction is per coordinate: each coordinate counts its own updates,
/// so rows skipped by a lazy step, coordinates added by `grow` and rows cleared
/// by `reset_rows` all behave like freshly started Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<u32>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: vec![0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Number of `step`/`step_rows` calls.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Per-coordinate update counts used for bias correction.
    pub fn update_counts(&self) -> &[u32] {
        &self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    fn update_one(&mut self, i: usize, p: &mut f64, g: f64, lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t[i].saturating_add(1);
        self.t[i] = t;
        let t = t.min(i32::MAX as u32) as i32;
        let m = beta1 * self.m[i] + (1.0 - beta1) * g;
        let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
        self.m[i] = m;
        self.v[i] = v;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
    }

    /// Dense bias-corrected update over every coordinate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                params: params.len().max(self.m.len()),
                grads: grads.len(),
            });
        }
        self.step += 1;
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_one(i, p, g, lr);
        }
        Ok(())
    }

    /// Lazy update of a row-major table: only rows present in `grads` move, and
    /// their moments and counts alone are advanced.
    pub fn step_rows(&mut self, values: &mut [f64], dim: usize, grads: &RowGrads, lr: f64) -> Result<()> {
        if values.len() != self.m.len() || grads.dim() != dim {
            return Err(Error::ShapeMismatch {
                params: values.len(),
                grads: self.m.len(),
            });
        }
        self.step += 1;
        for (row, g) in grads.iter() {
            let base = row as usize * dim;
            if base + dim > values.len() {
                return Err(Error::ShapeMismatch {
                    params: values.len(),
                    grads: base + dim,
                });
            }
            for (k, &gk) in g.iter().enumerate() {
                self.update_one(base + k, &mut values[base + k], gk, lr);
            }
        }
        Ok(())
    }

    /// Re-layout moments for a table that went from `old_rows x old_dim` to
    /// `new_rows x new_dim`. Existing coordinates keep their moments; new ones
    /// start at zero.
    pub fn grow(&mut self, old_rows: usize, old_dim: usize, new_rows: usize, new_dim: usize) {
        assert!(new_rows >= old_rows && new_dim >= old_dim);
        assert_eq!(self.m.len(), old_rows * old_dim);
        fn relayout<T: Copy + Default>(src: &[T], old_rows: usize, old_dim: usize, new_rows: usize, new_dim: usize) -> Vec<T> {
            let mut dst = vec![T::default(); new_rows * new_dim];
            for r in 0..old_rows {
                dst[r * new_dim..r * new_dim + old_dim].copy_from_slice(&src[r * old_dim..(r + 1) * old_dim]);
            }
            dst
        }
        self.m = relayout(&self.m, old_rows, old_dim, new_rows, new_dim);
        self.v = relayout(&self.v, old_rows, old_dim, new_rows, new_dim);
        self.t = relayout(&self.t, old_rows, old_dim, new_rows, new_dim);
    }

    /// Zero the moments of the given rows (used when a placeholder row is
    /// re-initialised).
    pub fn reset_rows(&mut self, dim: usize, rows: impl IntoIterator<Item = usize>) {
        for r in rows {
            self.m[r * dim..(r + 1) * dim].fill(0.0);
            self.v[r * dim..(r + 1) * dim].fill(0.0);
            self.t[r * dim..(r + 1) * dim].fill(0);
        }
    }
}

/// One Adam step over a flat parameter vector.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}
