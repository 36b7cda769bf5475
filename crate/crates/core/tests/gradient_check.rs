//! Analytic gradients against central finite differences.

use kgsr_core::embedding::EmbeddingTable;
use kgsr_core::graph::{EntityId, EntityKind::*, KnowledgeGraph, RelationId, Triple};
use kgsr_core::interactions::InteractionSet;
use kgsr_core::model::ModelParams;
use kgsr_core::train::{batch_loss, forward_backward, forward_user, TrainConfig};
use kgsr_core::transe::{margin_loss_gradient, EmbeddingParam, Norm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Six entities and four relations, two hops, with both diffusion members and a bridged item.
fn fixture(seed: u64) -> (KnowledgeGraph, InteractionSet, ModelParams, TrainConfig) {
    let mut g = KnowledgeGraph::new();
    g.insert(("u", User), "likes", ("p1", Property)).unwrap();
    g.insert(("u", User), "likes", ("p2", Property)).unwrap();
    g.insert(("q", Property), "about", ("p1", Property)).unwrap();
    g.insert(("q", Property), "near", ("p2", Property)).unwrap();
    g.insert(("i1", Item), "has", ("p1", Property)).unwrap();
    g.insert(("i2", Item), "has", ("p2", Property)).unwrap();
    g.insert(("i1", Item), "has", ("q", Property)).unwrap();
    g.insert(("i2", Item), "has", ("q", Property)).unwrap();
    assert_eq!((g.entity_count(), g.relation_count()), (6, 4));
    let mut train = InteractionSet::new();
    let u = g.entity_id("u").unwrap();
    for item in ["i1", "i2"] {
        train.insert(&g, u, g.entity_id(item).unwrap()).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = EmbeddingTable::uniform(g.entity_count(), g.relation_count(), 4, 0.9, &mut rng).unwrap();
    let model = ModelParams::initialize(emb, 4, 4, seed + 100).unwrap();
    let config = TrainConfig {
        dim: 4,
        top_n: 2,
        steps: 2,
        ..TrainConfig::default()
    };
    (g, train, model, config)
}

fn selections(model: &ModelParams, g: &KnowledgeGraph, config: &TrainConfig) -> Vec<Vec<EntityId>> {
    let fwd = forward_user(model, g, g.entity_id("u").unwrap(), &config.diffusion()).unwrap();
    fwd.subgraph.steps.iter().map(|s| s.selected().to_vec()).collect()
}

/// Which parameter a coordinate belongs to.
#[derive(Debug, Clone, Copy)]
enum Coord {
    W(usize, usize),
    Entity(u32, usize),
}

fn value_mut(model: &mut ModelParams, c: Coord) -> &mut f64 {
    match c {
        Coord::W(b, k) => {
            let m = match b {
                0 => &mut model.attention.w1,
                1 => &mut model.attention.w2,
                2 => &mut model.encoder.w3,
                _ => &mut model.encoder.w4,
            };
            &mut m.as_mut_slice()[k]
        }
        Coord::Entity(e, k) => &mut model.embeddings.entity_mut(EntityId(e)).unwrap()[k],
    }
}

#[test]
fn recommender_gradients_match_finite_differences() {
    let (g, train, model, config) = fixture(11);
    let users = [g.entity_id("u").unwrap()];
    let out = forward_backward(&users, &model, &g, &train, &config, 0).unwrap();
    assert_eq!(out.stats.users, 1);
    let base_sel = selections(&model, &g, &config);
    assert!(base_sel.iter().all(|s| !s.is_empty()));

    let mut coords = Vec::new();
    for (b, m) in [&model.attention.w1, &model.attention.w2, &model.encoder.w3, &model.encoder.w4]
        .iter()
        .enumerate()
    {
        coords.extend((0..m.as_slice().len()).map(|k| Coord::W(b, k)));
    }
    for e in 0..6 {
        coords.extend((0..4).map(|k| Coord::Entity(e, k)));
    }

    let mut worst = 0.0f64;
    let mut checked = 0;
    for c in coords {
        let analytic = match c {
            Coord::W(0, k) => out.gradients.w1.as_slice()[k],
            Coord::W(1, k) => out.gradients.w2.as_slice()[k],
            Coord::W(2, k) => out.gradients.w3.as_slice()[k],
            Coord::W(_, k) => out.gradients.w4.as_slice()[k],
            Coord::Entity(e, k) => out.gradients.entity(EntityId(e)).map_or(0.0, |r| r[k]),
        };
        let mut plus = model.clone();
        *value_mut(&mut plus, c) += STEP;
        let mut minus = model.clone();
        *value_mut(&mut minus, c) -= STEP;
        // The selection is held fixed analytically, so it must not flip.
        assert_eq!(selections(&plus, &g, &config), base_sel, "{c:?} flips the selection");
        assert_eq!(selections(&minus, &g, &config), base_sel, "{c:?} flips the selection");
        let lp = batch_loss(&users, &plus, &g, &train, &config, 0).unwrap().mean_loss();
        let lm = batch_loss(&users, &minus, &g, &train, &config, 0).unwrap().mean_loss();
        let numeric = (lp - lm) / (2.0 * STEP);
        let err = rel_err(analytic, numeric);
        assert!(err < 1e-3, "{c:?}: analytic {analytic:e} numeric {numeric:e}");
        worst = worst.max(err);
        checked += 1;
    }
    assert_eq!(checked, 32 + 16 + 48 + 16 + 24);
    eprintln!("max relative error {worst:e} over {checked} coordinates");
}

#[test]
fn fixture_exercises_members_and_bridges() {
    use kgsr_core::scoring::CandidateSource;
    let (g, _, model, config) = fixture(11);
    let fwd = forward_user(&model, &g, g.entity_id("u").unwrap(), &config.diffusion()).unwrap();
    let kinds: Vec<bool> = fwd
        .scores
        .iter()
        .map(|c| matches!(c.source, CandidateSource::Bridged(_)))
        .collect();
    assert!(kinds.contains(&true) && kinds.contains(&false), "{:?}", fwd.scores);
}

#[test]
fn transe_margin_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut table = EmbeddingTable::uniform(4, 2, 4, 1.0, &mut rng).unwrap();
    let pos = Triple::new(EntityId(0), RelationId(0), EntityId(1));
    let neg = Triple::new(EntityId(2), RelationId(0), EntityId(1));
    for norm in [Norm::L2, Norm::L1] {
        // Large margin keeps the hinge active.
        let margin = 10.0;
        let (_, grads) = margin_loss_gradient(&table, &pos, &neg, margin, norm).unwrap();
        let params: Vec<EmbeddingParam> = vec![
            EmbeddingParam::Entity(EntityId(0)),
            EmbeddingParam::Entity(EntityId(1)),
            EmbeddingParam::Entity(EntityId(2)),
            EmbeddingParam::Relation(RelationId(0)),
        ];
        for p in params {
            for k in 0..4 {
                let analytic = grads.get(&p).map_or(0.0, |g| g[k]);
                let mut eval = |delta: f64| {
                    let row = match p {
                        EmbeddingParam::Entity(e) => table.entity_mut(e).unwrap(),
                        EmbeddingParam::Relation(r) => table.relation_mut(r).unwrap(),
                    };
                    row[k] += delta;
                    let (l, _) = margin_loss_gradient(&table, &pos, &neg, margin, norm).unwrap();
                    let row = match p {
                        EmbeddingParam::Entity(e) => table.entity_mut(e).unwrap(),
                        EmbeddingParam::Relation(r) => table.relation_mut(r).unwrap(),
                    };
                    row[k] -= delta;
                    l
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                assert!(rel_err(analytic, numeric) < 1e-4, "{p:?}[{k}] {norm:?}: {analytic} vs {numeric}");
            }
        }
    }
}
