//! Synthetic snapshot sequences with a planted translational structure.
//!
//! Entities get latent unit vectors and relations latent translations; a triple `(h, r, t)` picks `t` as
//! the active entity nearest to `x_h + x_r + noise`, so the data are learnable
//! by a translation model. Entities are introduced progressively.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kg::{Dataset, Snapshot, Triple, Vocabulary};
use crate::rng::derive_rng;

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Cumulative number of entities active at each snapshot.
    pub entities: Vec<usize>,
    /// Triples generated at each snapshot (before the split).
    pub triples: Vec<usize>,
    pub relations: usize,
    pub latent_dim: usize,
    /// Norm of the relation translations (entities lie on the unit sphere).
    pub relation_scale: f64,
    /// Per-coordinate standard deviation of the query noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Shrinking deltas: most triples and entities arrive early.
    pub fn decelerating(seed: u64) -> Self {
        Self {
            entities: [0.52, 0.77, 0.90, 0.97, 1.0].iter().map(|f| (f * 400.0f64).round() as usize).collect(),
            triples: vec![4800, 2400, 1200, 600, 300],
            relations: 20,
            latent_dim: 8,
            relation_scale: 0.8,
            noise: 0.1,
            seed,
        }
    }

    /// Steady entity growth with equal-sized deltas.
    pub fn entity_growth(seed: u64) -> Self {
        Self {
            entities: vec![100, 200, 300, 400, 500],
            triples: vec![2400; 5],
            relations: 20,
            latent_dim: 8,
            relation_scale: 0.8,
            noise: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entities.is_empty() || self.entities.len() != self.triples.len() {
            return Err(Error::InvalidArgument("entity and triple schedules must be nonempty and equally long".into()));
        }
        if self.entities.windows(2).any(|w| w[0] > w[1]) || self.entities[0] < 2 {
            return Err(Error::InvalidArgument("entity schedule must be nondecreasing and start at >= 2".into()));
        }
        if self.relations == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidArgument("need at least one relation and latent dimension".into()));
        }
        Ok(())
    }
}

fn nearest(target: &[f64], latent: &[Vec<f64>], active: usize, exclude: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (e, x) in latent[..active].iter().enumerate() {
        if e == exclude {
            continue;
        }
        let d: f64 = x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, e);
        }
    }
    best.1
}

/// Generate a dataset. Each snapshot's triples are split 3:1:1 into
/// train/valid/test; valid/test triples whose entities have not appeared in
/// any train split so far are moved to train.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, &[0x5EED]);
    let total = *spec.entities.last().expect("validated");
    let k = spec.latent_dim;
    let unit = |rng: &mut _| {
        let mut v: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let latent_e: Vec<Vec<f64>> = (0..total).map(|_| unit(&mut rng)).collect();
    let latent_r: Vec<Vec<f64>> = (0..spec.relations)
        .map(|_| unit(&mut rng).into_iter().map(|x| x * spec.relation_scale).collect())
        .collect();

    let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut trained: BTreeSet<usize> = BTreeSet::new();
    let mut raw_snapshots: Vec<[Vec<(usize, usize, usize)>; 3]> = Vec::new();
    let mut prev_active = 0usize;
    let mut target = vec![0.0; k];
    for (&active, &n) in spec.entities.iter().zip(&spec.triples) {
        let mut triples = Vec::with_capacity(n);
        let mut attempts = 0usize;
        let mut make = |head: usize, rng: &mut _, seen: &mut HashSet<_>| -> Option<(usize, usize, usize)> {
            let r = Rng::random_range(rng, 0..spec.relations);
            for ((t, x), y) in target.iter_mut().zip(&latent_e[head]).zip(&latent_r[r]) {
                *t = x + y + spec.noise * standard_normal(rng);
            }
            let tail = nearest(&target, &latent_e, active, head);
            seen.insert((head, r, tail)).then_some((head, r, tail))
        };
        // Every newly active entity heads at least one triple.
        for e in prev_active..active {
            for _ in 0..20 {
                if let Some(t) = make(e, &mut rng, &mut seen) {
                    triples.push(t);
                    break;
                }
            }
        }
        while triples.len() < n && attempts < n * 50 {
            attempts += 1;
            // Bias heads toward newly active entities so deltas are about them.
            let head = if active > prev_active && rng.random_bool(0.5) {
                rng.random_range(prev_active..active)
            } else {
                rng.random_range(0..active)
            };
            if let Some(t) = make(head, &mut rng, &mut seen) {
                triples.push(t);
            }
        }
        triples.shuffle(&mut rng);
        let n_valid = triples.len() / 5;
        let n_test = triples.len() / 5;
        let test = triples.split_off(triples.len() - n_test);
        let valid = triples.split_off(triples.len() - n_valid);
        let mut train = triples;
        trained.extend(train.iter().flat_map(|&(h, _, t)| [h, t]));
        let keep = |split: Vec<(usize, usize, usize)>, train: &mut Vec<_>, trained: &mut BTreeSet<usize>| {
            let mut kept = Vec::new();
            for t in split {
                if trained.contains(&t.0) && trained.contains(&t.2) {
                    kept.push(t);
                } else {
                    trained.insert(t.0);
                    trained.insert(t.2);
                    train.push(t);
                }
            }
            kept
        };
        let valid = keep(valid, &mut train, &mut trained);
        let test = keep(test, &mut train, &mut trained);
        raw_snapshots.push([train, valid, test]);
        prev_active = active;
    }

    let mut vocab = Vocabulary::new();
    let mut snapshots = Vec::with_capacity(raw_snapshots.len());
    for (i, splits) in raw_snapshots.iter().enumerate() {
        let mut conv = |xs: &[(usize, usize, usize)]| -> Vec<Triple> {
            xs.iter()
                .map(|&(h, r, t)| vocab.intern_triple(&format!("e{h}"), &format!("r{r}"), &format!("e{t}")))
                .collect()
        };
        let train = conv(&splits[0]);
        let valid = conv(&splits[1]);
        let test = conv(&splits[2]);
        snapshots.push(Snapshot::new(i, train, valid, test));
    }
    Dataset::from_parts(vocab, snapshots)
}
