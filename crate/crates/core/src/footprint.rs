//! Per-element footprints.
//!
//! * novelty `f_n(x)`: occurrences of `x` in the upcoming delta;
//! * reliance `f_r(x)`: occurrences in the existing graph, damped by
//!   `exp(-(1 - R(x)))` where `R(x)` is the element's validation MRR;
//! * the distillation weight `f_r / (f_n + 1)`.
//!
//! Occurrences are multiset counts: a self-loop `(a, r, a)` counts twice for `a`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eval::RankedQuery;
use crate::kg::{Triple, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementKey {
    Entity(u32),
    Relation(u32),
}

/// Dense occurrence counts over entity and relation ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Occurrences {
    pub entity: Vec<u32>,
    pub relation: Vec<u32>,
}

impl Occurrences {
    pub fn zeros(num_entities: usize, num_relations: usize) -> Self {
        Self {
            entity: vec![0; num_entities],
            relation: vec![0; num_relations],
        }
    }

    /// Count over `triples`; ids outside the domain are ignored.
    pub fn count(triples: &[Triple], num_entities: usize, num_relations: usize) -> Self {
        let mut occ = Self::zeros(num_entities, num_relations);
        occ.add(triples);
        occ
    }

    pub fn add(&mut self, triples: &[Triple]) {
        for t in triples {
            for e in [t.head, t.tail] {
                if let Some(c) = self.entity.get_mut(e as usize) {
                    *c += 1;
                }
            }
            if let Some(c) = self.relation.get_mut(t.relation as usize) {
                *c += 1;
            }
        }
    }

    pub fn get(&self, key: ElementKey) -> u32 {
        match key {
            ElementKey::Entity(e) => self.entity.get(e as usize).copied().unwrap_or(0),
            ElementKey::Relation(r) => self.relation.get(r as usize).copied().unwrap_or(0),
        }
    }
}

/// `f_n` over the old elements.
pub fn novelty_footprint(new_triples: &[Triple], num_entities: usize, num_relations: usize) -> Occurrences {
    Occurrences::count(new_triples, num_entities, num_relations)
}

/// Validation-MRR quality per element, with a global fallback for elements no
/// validation query touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub entity: HashMap<u32, f64>,
    pub relation: HashMap<u32, f64>,
    pub fallback: f64,
}

impl Default for QualityScores {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl QualityScores {
    pub fn uniform(fallback: f64) -> Self {
        Self {
            entity: HashMap::new(),
            relation: HashMap::new(),
            fallback: fallback.clamp(0.0, 1.0),
        }
    }

    pub fn get(&self, key: ElementKey) -> f64 {
        match key {
            ElementKey::Entity(e) => self.entity.get(&e),
            ElementKey::Relation(r) => self.relation.get(&r),
        }
        .copied()
        .unwrap_or(self.fallback)
    }
}

/// `R(x)` = mean reciprocal rank over the queries whose triple contains `x`.
/// With no queries at all the fallback is 1 (no damping).
pub fn element_quality(ranks: &[RankedQuery]) -> QualityScores {
    if ranks.is_empty() {
        return QualityScores::uniform(1.0);
    }
    let mut ent: HashMap<u32, (f64, usize)> = HashMap::new();
    let mut rel: HashMap<u32, (f64, usize)> = HashMap::new();
    let mut total = 0.0;
    for q in ranks {
        let rr = 1.0 / q.rank as f64;
        total += rr;
        let t = q.triple;
        let bump = |map: &mut HashMap<u32, (f64, usize)>, id| {
            let e = map.entry(id).or_insert((0.0, 0));
            e.0 += rr;
            e.1 += 1;
        };
        bump(&mut ent, t.head);
        if t.tail != t.head {
            bump(&mut ent, t.tail);
        }
        bump(&mut rel, t.relation);
    }
    let mean = |m: HashMap<u32, (f64, usize)>| -> HashMap<u32, f64> {
        m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    };
    QualityScores {
        entity: mean(ent),
        relation: mean(rel),
        fallback: total / ranks.len() as f64,
    }
}

/// Dense `f_r` values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reliance {
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
}

impl Reliance {
    pub fn get(&self, key: ElementKey) -> f64 {
        match key {
            ElementKey::Entity(e) => self.entity.get(e as usize).copied().unwrap_or(0.0),
            ElementKey::Relation(r) => self.relation.get(r as usize).copied().unwrap_or(0.0),
        }
    }
}

/// `f_r(x) = count(x in existing triples) * exp(-(1 - R(x)))`.
pub fn reliance_footprint(
    existing: &[Triple],
    quality: &QualityScores,
    num_entities: usize,
    num_relations: usize,
) -> Reliance {
    let occ = Occurrences::count(existing, num_entities, num_relations);
    reliance_from_counts(&occ, quality)
}

pub fn reliance_from_counts(occ: &Occurrences, quality: &QualityScores) -> Reliance {
    let damp = |count: u32, key| {
        if count == 0 {
            0.0
        } else {
            count as f64 * (-(1.0 - quality.get(key))).exp()
        }
    };
    Reliance {
        entity: occ
            .entity
            .iter()
            .enumerate()
            .map(|(i, &c)| damp(c, ElementKey::Entity(i as u32)))
            .collect(),
        relation: occ
            .relation
            .iter()
            .enumerate()
            .map(|(i, &c)| damp(c, ElementKey::Relation(i as u32)))
            .collect(),
    }
}

/// Footprints of every old element for one expansion step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Footprints {
    pub novelty: Occurrences,
    pub reliance: Reliance,
    pub quality: QualityScores,
}

impl Footprints {
    /// Compute both footprints for the old element universe
    /// `0..num_entities` / `0..num_relations`.
    pub fn compute(
        existing: &[Triple],
        upcoming: &[Triple],
        quality: QualityScores,
        num_entities: usize,
        num_relations: usize,
    ) -> Self {
        Self {
            novelty: novelty_footprint(upcoming, num_entities, num_relations),
            reliance: reliance_footprint(existing, &quality, num_entities, num_relations),
            quality,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.novelty.entity.len()
    }

    pub fn num_relations(&self) -> usize {
        self.novelty.relation.len()
    }

    pub fn weight(&self, key: ElementKey) -> f64 {
        dwt_weight(key, self)
    }

    pub fn entity_weights(&self) -> Vec<f64> {
        (0..self.num_entities() as u32)
            .map(|e| self.weight(ElementKey::Entity(e)))
            .collect()
    }

    pub fn relation_weights(&self) -> Vec<f64> {
        (0..self.num_relations() as u32)
            .map(|r| self.weight(ElementKey::Relation(r)))
            .collect()
    }

    pub const TSV_HEADER: &'static str = "snapshot\tkind\tname\tf_n\tf_r\tR";

    /// Diagnostic dump: `snapshot, kind, name, f_n, f_r, R` per old element.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, snapshot: usize, out: &mut W) -> std::io::Result<()> {
        for e in 0..self.num_entities() as u32 {
            let key = ElementKey::Entity(e);
            let name = vocab.entity_name(e).unwrap_or("?");
            writeln!(out, "{snapshot}\tentity\t{name}\t{}\t{}\t{}", self.novelty.get(key), self.reliance.get(key), self.quality.get(key))?;
        }
        for r in 0..self.num_relations() as u32 {
            let key = ElementKey::Relation(r);
            let name = vocab.relation_name(r).unwrap_or("?");
            writeln!(out, "{snapshot}\trelation\t{name}\t{}\t{}\t{}", self.novelty.get(key), self.reliance.get(key), self.quality.get(key))?;
        }
        Ok(())
    }
}

/// Smoothed distillation weight `f_r / (f_n + 1)`.
pub fn dwt_weight(key: ElementKey, fp: &Footprints) -> f64 {
    fp.reliance.get(key) / (fp.novelty.get(key) as f64 + 1.0)
}
