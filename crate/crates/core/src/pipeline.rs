//! Snapshot-by-snapshot orchestration of estimation, expansion and training.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{cumulative_metrics, link_prediction_metrics, rank_all, rtf, CandidateSet, FilterIndex, LinkMetrics, MetricsRecord, RtfReport};
use crate::expander::{build_net, expand_all, expand_random, init_new_elements, train_expansion, train_suffix};
use crate::footprint::{element_quality, Footprints, QualityScores};
use crate::kg::{CumulativeGraph, Dataset, EntityId, Triple};
use crate::model::KgeModel;
use crate::rng::{derive_rng, derive_seed, stream};
use crate::sampler::{entropy_candidates, select_replay, ReplaySet};
use crate::scale::{predict_bounds, update_dimension_traced, DimBounds, DimBranch};
use crate::trainer::{train_snapshot, DistillAnchors, TrainContext, TrainReport, TrainState};

/// How the dimension for a snapshot was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimDecision {
    Initial,
    Fixed,
    ConstantStep,
    Rule { bounds: DimBounds, branch: DimBranch },
}

/// Everything an observer may want to persist after a snapshot.
pub struct SnapshotOutcome<'a> {
    pub record: &'a MetricsRecord,
    pub model: &'a KgeModel,
    pub dataset: &'a Dataset,
    pub footprints: Option<&'a Footprints>,
    pub replay: &'a ReplaySet,
    pub decision: DimDecision,
    pub train: &'a TrainReport,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub records: Vec<MetricsRecord>,
    /// `h[i][j]`: MRR on test set `j` after training snapshot `i` (`j <= i`).
    pub h_matrix: Vec<Vec<f64>>,
    pub rtf: Option<RtfReport>,
    pub dims: Vec<usize>,
    pub model: KgeModel,
}

impl PipelineResult {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("pipeline runs at least one snapshot")
    }
}

fn initial_dim(cfg: &RunConfig, graph: &CumulativeGraph) -> (usize, DimDecision) {
    if cfg.mode != Mode::Sage || cfg.ablate.se {
        return (cfg.dim_initial, DimDecision::Fixed);
    }
    let c = graph.element_counts();
    let bounds = predict_bounds(&cfg.scale, c.triples, c.entities + c.relations);
    (bounds.target.clamp(1, cfg.dim_initial), DimDecision::Initial)
}

fn next_dim(cfg: &RunConfig, graph: &CumulativeGraph, d: usize) -> (usize, DimDecision) {
    match cfg.mode {
        Mode::Finetune | Mode::FixedDim => (d, DimDecision::Fixed),
        Mode::Sage if cfg.ablate.se => (d + cfg.policy.step, DimDecision::ConstantStep),
        Mode::Sage => {
            let c = graph.element_counts();
            let bounds = predict_bounds(&cfg.scale, c.triples, c.entities + c.relations);
            let (nd, branch) = update_dimension_traced(d, &bounds, &cfg.policy);
            (nd.max(d), DimDecision::Rule { bounds, branch })
        }
    }
}

fn quality_scores(model: &KgeModel, dataset: &Dataset, upto: usize, filter: &FilterIndex, cands: &CandidateSet) -> Result<QualityScores> {
    let valid: Vec<Triple> = dataset.snapshots[..upto].iter().flat_map(|s| s.valid.iter().copied()).collect();
    if valid.is_empty() {
        return Ok(QualityScores::uniform(1.0));
    }
    let (ranks, _) = rank_all(model, &valid, filter, cands)?;
    Ok(element_quality(&ranks))
}

/// Widen `state` to `d_new` for snapshot `snapshot`: learned expansion (trained
/// on `replay` in SAGE mode), or a random suffix fitted on `replay` under the LE
/// ablation. Optimizer moments grow with the tables. Returns whether anything
/// changed; `d_new == dim` leaves the state untouched.
pub fn grow_dimension(
    state: &mut TrainState,
    d_new: usize,
    cfg: &RunConfig,
    replay: &ReplaySet,
    pool: &[EntityId],
    snapshot: usize,
) -> Result<bool> {
    let d_old = state.model.dim();
    if d_new < d_old {
        return Err(Error::InvalidArgument(format!("dimension cannot shrink from {d_old} to {d_new}")));
    }
    if d_new == d_old {
        return Ok(false);
    }
    let sage = cfg.mode == Mode::Sage;
    let fit = sage && !replay.is_empty() && pool.len() >= 2;
    let expand_cfg = cfg.expansion();
    let (rows_e, rows_r) = (state.model.num_entities(), state.model.num_relations());
    let mut net_rng = derive_rng(cfg.seed, &[stream::EXPAND_NET, snapshot as u64]);
    let mut fit_rng = derive_rng(cfg.seed, &[stream::EXPAND_TRAIN, snapshot as u64]);
    let expanded = if sage && cfg.ablate.le {
        let mut m = expand_random(&state.model, d_new, &mut net_rng)?;
        if fit {
            train_suffix(&mut m, d_old, replay, &expand_cfg, pool, &mut fit_rng)?;
        }
        m
    } else {
        let mut net = build_net(d_old, d_new - d_old, cfg.expand_hidden, &mut net_rng)?;
        if fit {
            train_expansion(&mut net, replay, &state.model, &expand_cfg, pool, &mut fit_rng)?;
        }
        expand_all(&state.model, &net)?
    };
    state.model = expanded;
    state.entity_opt.grow(rows_e, d_old, rows_e, d_new);
    state.relation_opt.grow(rows_r, d_old, rows_r, d_new);
    Ok(true)
}

/// Run every snapshot of `dataset` under `cfg`, calling `observer` after each.
pub fn run_pipeline(
    dataset: &Dataset,
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&SnapshotOutcome<'_>) -> Result<()>,
) -> Result<PipelineResult> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("snapshot sequence"));
    }
    let seed = cfg.seed;
    let sage = cfg.mode == Mode::Sage;
    let mut train_cfg = cfg.train.clone();
    if !sage || cfg.ablate.di {
        train_cfg.alpha = 0.0;
    }

    let mut graph = CumulativeGraph::new();
    let mut filter = FilterIndex::default();
    let mut state: Option<TrainState> = None;
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut h_matrix: Vec<Vec<f64>> = Vec::new();
    let mut dims = Vec::new();

    for (i, snap) in dataset.snapshots.iter().enumerate() {
        let at = |e: Error| e.at_snapshot(i);
        let (ne, nr) = dataset.vocab_sizes[i];
        let mut footprints = None;
        let mut replay = ReplaySet::default();

        let prev_trained: Vec<EntityId> = graph.trained_entities().iter().copied().collect();
        let prev_train_len = graph.train_triples().len();

        // Stage 1 needs the pre-ingest view of the graph.
        if let Some(st) = state.as_ref().filter(|_| sage) {
            let cands = CandidateSet::from_ids(st.model.num_entities(), prev_trained.iter().copied());
            let quality = quality_scores(&st.model, dataset, i, &filter, &cands).map_err(at)?;
            footprints = Some(Footprints::compute(graph.train_triples(), &snap.train, quality, ne, nr));
            if prev_trained.len() >= 2 {
                let mut crng = derive_rng(seed, &[stream::CANDIDATES, i as u64]);
                let entropy_cands = entropy_candidates(&prev_trained, cfg.replay_candidates, &mut crng);
                let mut rrng = derive_rng(seed, &[stream::REPLAY, i as u64]);
                replay = select_replay(&st.model, graph.train_triples(), &entropy_cands, cfg.replay_k, cfg.ablate.ds, &mut rrng)
                    .map_err(at)?;
            }
        }

        let delta = graph.ingest(snap);
        filter.extend(snap.all_triples());
        debug_assert_eq!(graph.train_triples().len(), prev_train_len + snap.train.len());
        let trained: Vec<EntityId> = graph.trained_entities().iter().copied().collect();

        let (mut st, decision) = match state.take() {
            None => {
                let (d, decision) = initial_dim(cfg, &graph);
                let model = KgeModel::init(ne, nr, d, cfg.norm, derive_seed(seed, &[stream::INIT]));
                (TrainState::new(model), decision)
            }
            Some(mut st) => {
                let d_old = st.model.dim();
                let (d_new, decision) = next_dim(cfg, &graph, d_old);
                grow_dimension(&mut st, d_new, cfg, &replay, &prev_trained, i).map_err(at)?;
                (st, decision)
            }
        };

        // New rows (and placeholder rows that now have training data).
        let d = st.model.dim();
        let (rows_e, rows_r) = (st.model.num_entities(), st.model.num_relations());
        let new_e: Vec<EntityId> = delta.new_entities.iter().copied().collect();
        let new_r: Vec<u32> = delta.new_relations.iter().copied().collect();
        let mut erng = derive_rng(seed, &[stream::NEW_ELEMENTS, i as u64]);
        let re = if i == 0 {
            Default::default()
        } else {
            init_new_elements(&mut st.model, ne, nr, &new_e, &new_r, &mut erng)
        };
        st.entity_opt.grow(rows_e, d, st.model.num_entities(), d);
        st.relation_opt.grow(rows_r, d, st.model.num_relations(), d);
        st.entity_opt.reset_rows(d, re.entities.iter().map(|&e| e as usize));
        st.relation_opt.reset_rows(d, re.relations.iter().map(|&r| r as usize));

        let anchors = match (&footprints, sage) {
            (Some(fp), true) => Some(DistillAnchors::new(&st.model, fp.entity_weights(), fp.relation_weights()).map_err(at)?),
            _ => None,
        };

        let cands = CandidateSet::from_ids(st.model.num_entities(), trained.iter().copied());
        let known: Option<HashSet<Triple>> = cfg.train.filter_negatives.then(|| graph.train_triples().iter().copied().collect());
        let ctx = TrainContext {
            pool: &trained,
            valid: &snap.valid,
            filter: &filter,
            candidates: &cands,
            known: known.as_ref(),
        };
        let mut trng = derive_rng(seed, &[stream::TRAIN, i as u64]);
        if cfg.train.verbose {
            println!("snapshot {i}: dim {}, {} new triples", st.model.dim(), snap.train.len());
        }
        let report = train_snapshot(&mut st, &snap.train, anchors.as_ref(), &train_cfg, &ctx, &mut trng).map_err(at)?;

        let mut per_set = Vec::with_capacity(i + 1);
        for s in &dataset.snapshots[..=i] {
            let m = match link_prediction_metrics(&st.model, &s.test, &filter, &cands) {
                Ok(m) => m,
                Err(Error::EmptyTestSet) => LinkMetrics::default(),
                Err(e) => return Err(at(e)),
            };
            per_set.push(m);
        }
        let cum = cumulative_metrics(&per_set);
        let cur = per_set[i];
        let record = MetricsRecord {
            snapshot: i,
            mrr: cur.mrr,
            h1: cur.h1,
            h10: cur.h10,
            cum_mrr: cum.mrr,
            cum_h1: cum.h1,
            cum_h10: cum.h10,
            dim: st.model.dim(),
            h_row: per_set.iter().map(|m| m.mrr).collect(),
            epochs: report.epochs,
            best_valid_mrr: report.best_valid_mrr,
            skipped: cum.skipped,
        };
        log::info!(
            "snapshot {i}: dim {} mrr {:.4} cum_mrr {:.4} epochs {}",
            record.dim,
            record.mrr,
            record.cum_mrr,
            record.epochs
        );
        observer(&SnapshotOutcome {
            record: &record,
            model: &st.model,
            dataset,
            footprints: footprints.as_ref(),
            replay: &replay,
            decision,
            train: &report,
        })?;
        dims.push(record.dim);
        h_matrix.push(record.h_row.clone());
        records.push(record);
        state = Some(st);
    }

    let rtf = if h_matrix.len() >= 2 {
        match rtf(&h_matrix) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("RtF not computed: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(PipelineResult {
        records,
        h_matrix,
        rtf,
        dims,
        model: state.expect("at least one snapshot").model,
    })
}

/// Pipeline without an observer.
pub fn run(dataset: &Dataset, cfg: &RunConfig) -> Result<PipelineResult> {
    run_pipeline(dataset, cfg, &mut |_| Ok(()))
}
