//! Top-K ranking metrics with binary relevance and the full-catalog
//! evaluation protocol.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffusion::DiffusionConfig;
use crate::error::{invalid, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph};
use crate::interactions::InteractionSet;
use crate::model::ModelParams;
use crate::scoring::CandidateScore;
use crate::train::forward_user;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankingMetrics {
    pub ndcg: f64,
    pub recall: f64,
    pub hit_rate: f64,
    pub precision: f64,
}

fn discount(position: usize) -> f64 {
    1.0 / libm::log2(position as f64 + 1.0)
}

/// NDCG, recall, hit rate and precision of the first `k` entries of
/// `ranked` against `relevant` (positions count from 1).
pub fn evaluate_ranking(ranked: &[EntityId], relevant: &BTreeSet<EntityId>, k: usize) -> Result<RankingMetrics> {
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(invalid("relevant set is empty"));
    }
    let mut dcg = 0.0;
    let mut hits = 0usize;
    for (i, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg += discount(i + 1);
            hits += 1;
        }
    }
    let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    Ok(RankingMetrics {
        ndcg: dcg / idcg,
        recall: hits as f64 / relevant.len() as f64,
        hit_rate: if hits > 0 { 1.0 } else { 0.0 },
        precision: hits as f64 / k as f64,
    })
}

/// Full-catalog ranking: scored candidates in score order, then every other
/// catalog item by ascending id; `exclude` is dropped throughout.
pub fn rank_items(scores: &[CandidateScore], catalog: &[EntityId], exclude: &BTreeSet<EntityId>) -> Vec<EntityId> {
    let mut ranked = Vec::with_capacity(catalog.len());
    let mut placed = BTreeSet::new();
    for c in scores {
        if !exclude.contains(&c.item) && placed.insert(c.item) {
            ranked.push(c.item);
        }
    }
    let mut rest: Vec<EntityId> = catalog
        .iter()
        .copied()
        .filter(|i| !exclude.contains(i) && !placed.contains(i))
        .collect();
    rest.sort_unstable();
    rest.dedup();
    ranked.extend(rest);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub hit_rate: f64,
    pub precision: f64,
    pub evaluated: usize,
    /// Test users whose subgraph produced no candidate.
    pub skipped: usize,
}

impl EvalReport {
    /// Averages per-user results; `None` entries count as skipped.
    pub fn from_users(k: usize, results: &[Option<RankingMetrics>]) -> Self {
        let scored: Vec<&RankingMetrics> = results.iter().flatten().collect();
        let n = scored.len();
        let mean = |f: fn(&RankingMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                scored.iter().map(|m| f(m)).sum::<f64>() / n as f64
            }
        };
        Self {
            k,
            ndcg: mean(|m| m.ndcg),
            recall: mean(|m| m.recall),
            hit_rate: mean(|m| m.hit_rate),
            precision: mean(|m| m.precision),
            evaluated: n,
            skipped: results.len() - n,
        }
    }
}

/// Evaluates one test user; `None` when the diffusion yields no candidate.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_user(
    model: &ModelParams,
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    test: &InteractionSet,
    catalog: &[EntityId],
    user: EntityId,
    k: usize,
    config: &DiffusionConfig,
) -> Result<Option<RankingMetrics>> {
    let fwd = forward_user(model, graph, user, config)?;
    if fwd.scores.is_empty() {
        return Ok(None);
    }
    let ranked = rank_items(&fwd.scores, catalog, &train.item_set(user));
    evaluate_ranking(&ranked, &test.item_set(user), k).map(Some)
}

pub fn catalog(graph: &KnowledgeGraph) -> Vec<EntityId> {
    graph.entities_of_kind(EntityKind::Item).collect()
}

/// Mean metrics over every test user, ranking the whole item catalog with the
/// user's training items removed.
pub fn evaluate_model(
    model: &ModelParams,
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    test: &InteractionSet,
    k: usize,
    config: &DiffusionConfig,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(invalid("test set is empty"));
    }
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    let items = catalog(graph);
    let mut results = Vec::with_capacity(test.user_count());
    for user in test.users() {
        results.push(evaluate_user(model, graph, train, test, &items, user, k, config)?);
    }
    Ok(EvalReport::from_users(k, &results))
}

/// Baseline: each test user gets a uniformly random permutation of the
/// catalog (training items removed).
pub fn random_ranking_report<R: Rng>(
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    test: &InteractionSet,
    k: usize,
    rng: &mut R,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(invalid("test set is empty"));
    }
    let items = catalog(graph);
    let mut results = Vec::with_capacity(test.user_count());
    for user in test.users() {
        let exclude = train.item_set(user);
        let mut ranked: Vec<EntityId> = items.iter().copied().filter(|i| !exclude.contains(i)).collect();
        ranked.shuffle(rng);
        results.push(Some(evaluate_ranking(&ranked, &test.item_set(user), k)?));
    }
    Ok(EvalReport::from_users(k, &results))
}
