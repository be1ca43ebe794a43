//! Filtered link-prediction evaluation and forgetting metrics.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Triple};
use crate::model::KgeModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuerySide {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub triple: Triple,
    pub side: QuerySide,
    pub rank: usize,
}

/// Known-true answers per `(h, r, ?)` and `(?, r, t)` query.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(EntityId, u32), Vec<EntityId>>,
    heads: HashMap<(u32, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        idx.extend(triples);
        idx
    }

    pub fn extend<'a>(&mut self, triples: impl IntoIterator<Item = &'a Triple>) {
        for t in triples {
            self.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            self.heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for v in self.tails.values_mut().chain(self.heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
    }

    /// Entities that complete the query's masked side into a known triple.
    pub fn answers(&self, triple: &Triple, side: QuerySide) -> &[EntityId] {
        let found = match side {
            QuerySide::Tail => self.tails.get(&(triple.head, triple.relation)),
            QuerySide::Head => self.heads.get(&(triple.relation, triple.tail)),
        };
        found.map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.answers(t, QuerySide::Tail).binary_search(&t.tail).is_ok()
    }
}

/// Which entity rows are eligible ranking candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    mask: Vec<bool>,
    ids: Vec<EntityId>,
}

impl CandidateSet {
    pub fn all(n: usize) -> Self {
        Self {
            mask: vec![true; n],
            ids: (0..n as EntityId).collect(),
        }
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = EntityId>) -> Self {
        let mut mask = vec![false; n];
        for id in ids {
            if let Some(m) = mask.get_mut(id as usize) {
                *m = true;
            }
        }
        let ids = (0..n as EntityId).filter(|&i| mask[i as usize]).collect();
        Self { mask, ids }
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn candidate_score(model: &KgeModel, triple: &Triple, side: QuerySide, e: EntityId) -> f64 {
    let t = match side {
        QuerySide::Head => Triple { head: e, ..*triple },
        QuerySide::Tail => Triple { tail: e, ..*triple },
    };
    model.score(&t)
}

/// Filtered rank of the true entity: `1 + #{candidates scoring strictly higher
/// that do not form another known triple}`. Tied candidates rank below the
/// true entity.
pub fn rank_query(
    model: &KgeModel,
    triple: &Triple,
    side: QuerySide,
    filter: &FilterIndex,
    candidates: &CandidateSet,
) -> Result<usize> {
    for e in [triple.head, triple.tail] {
        if !candidates.contains(e) || e as usize >= model.num_entities() {
            return Err(Error::UnknownEntity(e));
        }
    }
    if triple.relation as usize >= model.num_relations() {
        return Err(Error::InvalidArgument(format!("unknown relation {}", triple.relation)));
    }
    let truth = match side {
        QuerySide::Head => triple.head,
        QuerySide::Tail => triple.tail,
    };
    let true_score = model.score(triple);
    let better = candidates
        .ids()
        .iter()
        .filter(|&&e| e != truth && candidate_score(model, triple, side, e) > true_score)
        .count();
    let filtered_better = filter
        .answers(triple, side)
        .iter()
        .filter(|&&e| e != truth && candidates.contains(e) && candidate_score(model, triple, side, e) > true_score)
        .count();
    Ok(1 + better - filtered_better)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub h1: f64,
    pub h10: f64,
    /// Ranked queries (two per triple).
    pub queries: usize,
    /// Triples skipped because an entity had no embedding yet.
    pub skipped: usize,
}

impl LinkMetrics {
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let (mut n, mut rr, mut h1, mut h10) = (0usize, 0.0, 0usize, 0usize);
        for r in ranks {
            n += 1;
            rr += 1.0 / r as f64;
            h1 += usize::from(r <= 1);
            h10 += usize::from(r <= 10);
        }
        if n == 0 {
            return Self::default();
        }
        Self {
            mrr: rr / n as f64,
            h1: h1 as f64 / n as f64,
            h10: h10 as f64 / n as f64,
            queries: n,
            skipped: 0,
        }
    }
}

/// Head and tail ranks for every test triple whose entities are embedded.
/// Returns the ranks and the number of skipped triples.
pub fn rank_all(
    model: &KgeModel,
    test: &[Triple],
    filter: &FilterIndex,
    candidates: &CandidateSet,
) -> Result<(Vec<RankedQuery>, usize)> {
    let per_triple: Vec<Result<Option<[RankedQuery; 2]>>> = test
        .par_iter()
        .map(|t| {
            let mut out = [RankedQuery {
                triple: *t,
                side: QuerySide::Head,
                rank: 0,
            }; 2];
            for (slot, side) in out.iter_mut().zip([QuerySide::Head, QuerySide::Tail]) {
                match rank_query(model, t, side, filter, candidates) {
                    Ok(rank) => {
                        slot.side = side;
                        slot.rank = rank;
                    }
                    Err(Error::UnknownEntity(_)) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(out))
        })
        .collect();
    let mut ranks = Vec::with_capacity(test.len() * 2);
    let mut skipped = 0;
    for r in per_triple {
        match r? {
            Some(pair) => ranks.extend(pair),
            None => skipped += 1,
        }
    }
    Ok((ranks, skipped))
}

/// MRR, Hits@1 and Hits@10 over head and tail queries of every test triple.
pub fn link_prediction_metrics(
    model: &KgeModel,
    test: &[Triple],
    filter: &FilterIndex,
    candidates: &CandidateSet,
) -> Result<LinkMetrics> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (ranks, skipped) = rank_all(model, test, filter, candidates)?;
    if skipped > 0 {
        log::info!("skipped {skipped} test triples with unembedded entities");
    }
    if ranks.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut m = LinkMetrics::from_ranks(ranks.iter().map(|q| q.rank));
    m.skipped = skipped;
    Ok(m)
}

/// Unweighted mean of per-test-set metrics.
pub fn cumulative_metrics(per_set: &[LinkMetrics]) -> LinkMetrics {
    if per_set.is_empty() {
        return LinkMetrics::default();
    }
    let n = per_set.len() as f64;
    LinkMetrics {
        mrr: per_set.iter().map(|m| m.mrr).sum::<f64>() / n,
        h1: per_set.iter().map(|m| m.h1).sum::<f64>() / n,
        h10: per_set.iter().map(|m| m.h10).sum::<f64>() / n,
        queries: per_set.iter().map(|m| m.queries).sum(),
        skipped: per_set.iter().map(|m| m.skipped).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub value: f64,
    /// Earlier snapshots whose term was skipped because `h[i][i] + h[n][i] = 0`.
    pub skipped: Vec<usize>,
}

/// Resistance to forgetting: mean over `i < n` of `h[n][i] / (h[i][i] + h[n][i])`,
/// where `h[i][j]` is the MRR on test set `j` after training snapshot `i`.
/// Perfect retention gives 0.5.
pub fn rtf(h: &[Vec<f64>]) -> Result<RtfReport> {
    let n = h.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("RtF needs at least 2 snapshots, got {n}")));
    }
    let last = &h[n - 1];
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for (i, row) in h.iter().enumerate().take(n - 1) {
        let (Some(&diag), Some(&fin)) = (row.get(i), last.get(i)) else {
            return Err(Error::InvalidArgument(format!("h matrix is missing entries for snapshot {i}")));
        };
        let denom = diag + fin;
        if denom == 0.0 {
            log::warn!("RtF: h[{i}][{i}] + h[{}][{i}] = 0; term skipped", n - 1);
            skipped.push(i);
            continue;
        }
        sum += fin / denom;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateInput("every RtF term has a zero denominator".into()));
    }
    Ok(RtfReport {
        value: sum / used as f64,
        skipped,
    })
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub snapshot: usize,
    pub mrr: f64,
    pub h1: f64,
    pub h10: f64,
    pub cum_mrr: f64,
    pub cum_h1: f64,
    pub cum_h10: f64,
    pub dim: usize,
    /// MRR on test sets `0..=snapshot` after training this snapshot.
    pub h_row: Vec<f64>,
    pub epochs: usize,
    pub best_valid_mrr: Option<f64>,
    pub skipped: usize,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "snapshot,dim,mrr,h1,h10,cum_mrr,cum_h1,cum_h10,epochs,best_valid_mrr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.snapshot,
            self.dim,
            self.mrr,
            self.h1,
            self.h10,
            self.cum_mrr,
            self.cum_h1,
            self.cum_h10,
            self.epochs,
            self.best_valid_mrr.map(|m| format!("{m:.6}")).unwrap_or_default()
        )
    }
}

/// Final line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub rtf: Option<f64>,
    pub h_matrix: Vec<Vec<f64>>,
    pub dims: Vec<usize>,
}

/// Unfiltered rank of the true entity among the candidates.
pub fn raw_rank(model: &KgeModel, triple: &Triple, side: QuerySide, candidates: &CandidateSet) -> usize {
    let truth = match side {
        QuerySide::Head => triple.head,
        QuerySide::Tail => triple.tail,
    };
    let s = model.score(triple);
    1 + candidates
        .ids()
        .iter()
        .filter(|&&e| e != truth && candidate_score(model, triple, side, e) > s)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingTable, Norm, TableRole};

    /// 1-d model: entity e sits at coordinate `pos[e]`, relation 0 at 0.
    fn line_model(pos: &[f64]) -> KgeModel {
        KgeModel::new(
            EmbeddingTable::from_values(pos.len(), 1, TableRole::Entity, pos.to_vec()).unwrap(),
            EmbeddingTable::from_values(1, 1, TableRole::Relation, vec![0.0]).unwrap(),
            Norm::L2,
        )
        .unwrap()
    }

    #[test]
    fn unique_best_is_rank_one() {
        let m = line_model(&[0.0, 0.0, 5.0, 6.0]);
        let t = Triple::new(0, 0, 1);
        let c = CandidateSet::all(4);
        assert_eq!(rank_query(&m, &t, QuerySide::Tail, &FilterIndex::default(), &c).unwrap(), 1);
    }

    #[test]
    fn worst_of_five_unfiltered() {
        let m = line_model(&[0.0, 1.0, 2.0, 3.0, 9.0]);
        let t = Triple::new(0, 0, 4);
        let c = CandidateSet::all(5);
        // entity 0 itself is also a candidate tail, distance 0
        assert_eq!(rank_query(&m, &t, QuerySide::Tail, &FilterIndex::default(), &c).unwrap(), 5);
    }

    #[test]
    fn filter_and_ties() {
        let m = line_model(&[0.0, 1.0, 1.0, 0.5, 3.0]);
        let t = Triple::new(0, 0, 1);
        let c = CandidateSet::all(5);
        // better: 0 (d=0), 3 (d=0.5); tie: 2 (counts as worse)
        assert_eq!(rank_query(&m, &t, QuerySide::Tail, &FilterIndex::default(), &c).unwrap(), 3);
        let known = [t, Triple::new(0, 0, 3)];
        let f = FilterIndex::new(&known);
        assert_eq!(rank_query(&m, &t, QuerySide::Tail, &f, &c).unwrap(), 2);
    }

    #[test]
    fn unembedded_entity_is_unknown() {
        let m = line_model(&[0.0, 1.0, 2.0]);
        let c = CandidateSet::from_ids(3, [0, 1]);
        assert!(matches!(
            rank_query(&m, &Triple::new(0, 0, 2), QuerySide::Tail, &FilterIndex::default(), &c),
            Err(Error::UnknownEntity(2))
        ));
        let (ranks, skipped) = rank_all(&m, &[Triple::new(0, 0, 2), Triple::new(0, 0, 1)], &FilterIndex::default(), &c).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(ranks.len(), 2);
    }

    #[test]
    fn metrics_from_ranks() {
        let m = LinkMetrics::from_ranks([1, 1, 1]);
        assert_eq!((m.mrr, m.h1, m.h10), (1.0, 1.0, 1.0));
        let m = LinkMetrics::from_ranks([1, 4]);
        assert_eq!((m.mrr, m.h1, m.h10), (0.625, 0.5, 1.0));
    }

    #[test]
    fn empty_test_set_rejected() {
        let m = line_model(&[0.0, 1.0]);
        assert!(matches!(
            link_prediction_metrics(&m, &[], &FilterIndex::default(), &CandidateSet::all(2)),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn cumulative_is_plain_mean() {
        let a = LinkMetrics { mrr: 0.2, h1: 0.1, h10: 0.5, queries: 10, skipped: 0 };
        let b = LinkMetrics { mrr: 0.4, h1: 0.3, h10: 0.7, queries: 1000, skipped: 0 };
        let c = cumulative_metrics(&[a, b]);
        assert!((c.mrr - 0.3).abs() < 1e-15);
        assert_eq!(cumulative_metrics(&[a]).mrr, a.mrr);
    }

    #[test]
    fn rtf_extremes() {
        let perfect = vec![vec![0.3], vec![0.2, 0.4], vec![0.3, 0.4, 0.5]];
        // h[2][0] = 0.3 = h[0][0], h[2][1] = 0.4 = h[1][1]
        assert_eq!(rtf(&perfect).unwrap().value, 0.5);
        let zero = vec![vec![0.3], vec![0.2, 0.4], vec![0.0, 0.0, 0.5]];
        assert_eq!(rtf(&zero).unwrap().value, 0.0);
        assert!(rtf(&[vec![0.5]]).is_err());
    }

    #[test]
    fn rtf_skips_degenerate_terms() {
        let h = vec![vec![0.0], vec![0.2, 0.4], vec![0.0, 0.2, 0.5]];
        let r = rtf(&h).unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert!((r.value - 0.2 / 0.6).abs() < 1e-15);
    }
}
