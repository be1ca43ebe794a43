use std::collections::{BTreeSet, HashSet};

use ckge_core::config::{Mode, RunConfig};
use ckge_core::eval::{link_prediction_metrics, rank_all, rtf, CandidateSet, FilterIndex};
use ckge_core::expander::{build_net, expand_all};
use ckge_core::footprint::{element_quality, ElementKey, Footprints, QualityScores};
use ckge_core::kg::{compute_delta, Snapshot, Triple, Vocabulary};
use ckge_core::model::{corrupt_within, init_table, AdamConfig, AdamState, EmbeddingTable, KgeModel, Norm, TableRole};
use ckge_core::sampler::{softmax_entropy, weighted_sample_without_replacement};
use ckge_core::scale::{predict_bounds, update_dimension, DimBounds, DimPolicy, ScaleFit};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn triples(max_e: u32, max_r: u32, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..max_e, 0..max_r, 0..max_e), len).prop_map(|v| v.into_iter().map(|(h, r, t)| Triple::new(h, r, t)).collect())
}

fn model_from(seed: u64, ne: usize, nr: usize, dim: usize) -> KgeModel {
    KgeModel::init(ne, nr, dim, Norm::L2, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn vocabulary_ids_are_dense_and_first_seen(names in prop::collection::vec("[a-e]{1,2}", 1..40)) {
        let mut vocab = Vocabulary::new();
        let mut order: Vec<&str> = Vec::new();
        for n in &names {
            let id = vocab.entity_id(n);
            if !order.contains(&n.as_str()) {
                order.push(n);
            }
            prop_assert_eq!(id as usize, order.iter().position(|o| o == n).unwrap());
        }
        prop_assert_eq!(vocab.num_entities(), order.len());
        for (i, n) in order.iter().enumerate() {
            prop_assert_eq!(vocab.lookup_entity(n), Some(i as u32));
        }
    }

    #[test]
    fn delta_elements_are_new_and_used(
        prev in triples(30, 5, 0..40),
        train in triples(40, 7, 0..40),
    ) {
        let prev_e: BTreeSet<u32> = prev.iter().flat_map(|t| [t.head, t.tail]).collect();
        let prev_r: BTreeSet<u32> = prev.iter().map(|t| t.relation).collect();
        let snap = Snapshot::new(1, train.clone(), Vec::new(), Vec::new());
        let delta = compute_delta(&prev_e, &prev_r, &snap);
        prop_assert!(delta.new_entities.is_disjoint(&prev_e));
        prop_assert!(delta.new_relations.is_disjoint(&prev_r));
        for e in &delta.new_entities {
            prop_assert!(train.iter().any(|t| t.head == *e || t.tail == *e));
        }
        for r in &delta.new_relations {
            prop_assert!(train.iter().any(|t| t.relation == *r));
        }
        let used_e: BTreeSet<u32> = train.iter().flat_map(|t| [t.head, t.tail]).collect();
        prop_assert_eq!(delta.new_entities, &used_e - &prev_e);
    }

    #[test]
    fn init_table_shape_bound_and_norm(rows in 1usize..30, dim in 1usize..40, seed in any::<u64>()) {
        let bound = EmbeddingTable::init_bound(dim);
        let rel = init_table(rows, dim, TableRole::Relation, seed);
        prop_assert_eq!(rel.values().len(), rows * dim);
        prop_assert!(rel.values().iter().all(|x| x.is_finite() && x.abs() <= bound));
        let ent = init_table(rows, dim, TableRole::Entity, seed);
        for i in 0..rows {
            let n = ent.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_moments_track_growth(rows in 1usize..10, dim in 1usize..8, more_rows in 0usize..5, more_dim in 0usize..5) {
        let mut s = AdamState::new(rows * dim, AdamConfig::default());
        let mut p = vec![0.5; rows * dim];
        let g: Vec<f64> = (0..rows * dim).map(|i| i as f64 - 3.0).collect();
        s.step(&mut p, &g, 0.01).unwrap();
        let before = s.first_moment().to_vec();
        let (nr, nd) = (rows + more_rows, dim + more_dim);
        s.grow(rows, dim, nr, nd);
        prop_assert_eq!(s.len(), nr * nd);
        prop_assert_eq!(s.second_moment().len(), nr * nd);
        for r in 0..nr {
            for k in 0..nd {
                let m = s.first_moment()[r * nd + k];
                if r < rows && k < dim {
                    prop_assert_eq!(m.to_bits(), before[r * dim + k].to_bits());
                } else {
                    prop_assert_eq!(m, 0.0);
                    prop_assert_eq!(s.second_moment()[r * nd + k], 0.0);
                }
            }
        }
    }

    #[test]
    fn corruption_changes_exactly_one_side(
        h in 0u32..20, r in 0u32..3, t in 0u32..20, seed in any::<u64>(),
        pool in prop::collection::btree_set(0u32..20, 2..20),
    ) {
        let pool: Vec<u32> = pool.into_iter().collect();
        let pos = Triple::new(h, r, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let (neg, _) = corrupt_within(pos, &pool, &mut rng);
            prop_assert_eq!(neg.relation, r);
            let head_changed = neg.head != h;
            let tail_changed = neg.tail != t;
            prop_assert!(head_changed ^ tail_changed);
            let replaced = if head_changed { neg.head } else { neg.tail };
            prop_assert!(pool.contains(&replaced));
        }
    }

    #[test]
    fn predicted_bounds_are_ordered(a in 1.0f64..1e7, band in 0.0f64..0.99, n in 2usize..10_000_000, rows in 1usize..100_000) {
        let fit = ScaleFit { a, band, ..ScaleFit::default() };
        let b = predict_bounds(&fit, n, rows);
        prop_assert!(1 <= b.min && b.min <= b.target && b.target <= b.max);
    }

    #[test]
    fn dimension_never_shrinks(
        d in 1usize..5000, min in 1usize..2000, t_off in 0usize..2000, m_off in 0usize..2000,
        r in 1.0001f64..4.0, step in 1usize..100,
    ) {
        let b = DimBounds::new(min, min + t_off, min + t_off + m_off).unwrap();
        let next = update_dimension(d, &b, &DimPolicy { r, step });
        prop_assert!(next >= d);
    }

    #[test]
    fn footprints_are_finite_and_nonnegative(
        existing in triples(25, 4, 0..80),
        upcoming in triples(30, 6, 0..80),
        q in prop::collection::vec(0.0f64..=1.0, 25),
        fallback in 0.0f64..=1.0,
    ) {
        let mut quality = QualityScores::uniform(fallback);
        for (i, v) in q.iter().enumerate() {
            quality.entity.insert(i as u32, *v);
        }
        let fp = Footprints::compute(&existing, &upcoming, quality, 25, 4);
        prop_assert_eq!(fp.num_entities(), 25);
        prop_assert_eq!(fp.num_relations(), 4);
        for key in (0..25).map(ElementKey::Entity).chain((0..4).map(ElementKey::Relation)) {
            let fr = fp.reliance.get(key);
            prop_assert!(fr.is_finite() && fr >= 0.0);
            prop_assert!(fp.weight(key).is_finite() && fp.weight(key) >= 0.0);
        }
    }

    #[test]
    fn quality_scores_lie_in_unit_interval(test in triples(12, 3, 1..30), seed in any::<u64>()) {
        let model = model_from(seed, 12, 3, 4);
        let filter = FilterIndex::new(&test);
        let (ranks, _) = rank_all(&model, &test, &filter, &CandidateSet::all(12)).unwrap();
        let q = element_quality(&ranks);
        prop_assert!((0.0..=1.0).contains(&q.fallback));
        prop_assert!(q.entity.values().chain(q.relation.values()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sampling_is_without_replacement(weights in prop::collection::vec(0.0f64..5.0, 1..60), k in 0usize..80, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = weighted_sample_without_replacement(&weights, k, &mut rng);
        prop_assert_eq!(picked.len(), k.min(weights.len()));
        let distinct: HashSet<usize> = picked.iter().copied().collect();
        prop_assert_eq!(distinct.len(), picked.len());
        prop_assert!(picked.iter().all(|&i| i < weights.len()));
    }

    #[test]
    fn entropy_is_bounded(scores in prop::collection::vec(-50.0f64..50.0, 1..100)) {
        let h = softmax_entropy(&scores);
        prop_assert!(h >= 0.0 && h <= (scores.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn expansion_output_shape_and_prefix(
        ne in 1usize..20, nr in 1usize..5, d in 1usize..16, delta in 1usize..16,
        hidden in prop::option::of(1usize..6), seed in any::<u64>(),
    ) {
        let model = model_from(seed, ne, nr, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let net = build_net(d, delta, hidden, &mut rng).unwrap();
        let grown = expand_all(&model, &net).unwrap();
        prop_assert_eq!(grown.dim(), d + delta);
        for i in 0..ne {
            let old = model.entities.row(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            let new = grown.entities.row(i)[..d].iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(old, new);
        }
        prop_assert!(grown.entities.values().iter().chain(grown.relations.values()).all(|x| x.is_finite()));
    }

    #[test]
    fn ranks_and_metrics_are_bounded(test in triples(15, 3, 1..25), seed in any::<u64>(), n_cands in 2usize..=15) {
        let model = model_from(seed, 15, 3, 3);
        let filter = FilterIndex::new(&test);
        let cands = CandidateSet::from_ids(15, 0..n_cands as u32);
        let (ranks, skipped) = rank_all(&model, &test, &filter, &cands).unwrap();
        prop_assert_eq!(ranks.len() / 2 + skipped, test.len());
        prop_assert!(ranks.iter().all(|q| q.rank >= 1 && q.rank <= n_cands));
        if let Ok(m) = link_prediction_metrics(&model, &test, &filter, &cands) {
            prop_assert!((0.0..=1.0).contains(&m.mrr));
            prop_assert!(m.h1 <= m.h10 && m.h10 <= 1.0);
        }
    }

    #[test]
    fn rtf_of_nonnegative_matrix_is_in_unit_interval(raw in prop::collection::vec(0.01f64..1.0, 15)) {
        let mut it = raw.into_iter();
        let h: Vec<Vec<f64>> = (1..=5).map(|i| it.by_ref().take(i).collect()).collect();
        let v = rtf(&h).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn config_text_round_trips(
        a in 1.0f64..1e6, dim in 1usize..500, k in 1usize..100, lr in 1e-6f64..1.0,
        alpha in 0.0f64..10.0, seed in any::<u64>(), finetune in any::<bool>(), le in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.scale.a = a;
        cfg.dim_initial = dim;
        cfg.replay_k = k;
        cfg.train.lr = lr;
        cfg.train.alpha = alpha;
        cfg.seed = seed;
        cfg.mode = if finetune { Mode::Finetune } else { Mode::Sage };
        cfg.ablate.le = le;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
