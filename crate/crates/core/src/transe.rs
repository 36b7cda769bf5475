//! TransE pretraining: triples scored by `‖h + r − t‖`, trained with a
//! margin ranking loss against uniformly corrupted triples.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingTable;
use crate::error::{invalid, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::linalg::{add_scaled, l2_norm};

/// Corruption attempts before an unfiltered negative is accepted.
const MAX_CORRUPTION_TRIES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub norm: Norm,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 100,
            negatives: 1,
            norm: Norm::L2,
            seed: 42,
        }
    }
}

impl TranseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("transe dimension must be positive"));
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(invalid("transe margin must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(invalid("transe learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("transe epochs must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(invalid("transe needs at least one negative per positive"));
        }
        Ok(())
    }
}

fn residual(table: &EmbeddingTable, t: &Triple) -> Result<Vec<f64>> {
    let h = table.entity(t.head)?;
    let r = table.relation(t.relation)?;
    let tail = table.entity(t.tail)?;
    Ok(h.iter().zip(r).zip(tail).map(|((h, r), t)| h + r - t).collect())
}

fn norm_of(x: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => x.iter().map(|v| v.abs()).sum(),
        Norm::L2 => l2_norm(x),
    }
}

/// Subgradient of the norm at `x`.
fn norm_grad(x: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L1 => x
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
            .collect(),
        Norm::L2 => {
            let n = l2_norm(x);
            if n == 0.0 {
                vec![0.0; x.len()]
            } else {
                x.iter().map(|v| v / n).collect()
            }
        }
    }
}

/// `‖h_head + h_rel − h_tail‖` under `norm`.
pub fn transe_score(table: &EmbeddingTable, t: &Triple, norm: Norm) -> Result<f64> {
    Ok(norm_of(&residual(table, t)?, norm))
}

/// Replaces the head or the tail (fair coin) with a uniformly drawn entity so
/// that the result is not a stored triple. Gives up filtering after a fixed
/// number of attempts and returns the last draw. Needs at least two entities.
pub fn sample_negative<R: Rng>(graph: &KnowledgeGraph, t: &Triple, rng: &mut R) -> Triple {
    let n = graph.entity_count() as u32;
    debug_assert!(n >= 2);
    let mut last = *t;
    for _ in 0..MAX_CORRUPTION_TRIES {
        let corrupt_head = rng.gen_bool(0.5);
        let original = if corrupt_head { t.head } else { t.tail };
        // Uniform over the n - 1 entities different from the original.
        let mut pick = rng.gen_range(0..n - 1);
        if pick >= original.0 {
            pick += 1;
        }
        let candidate = if corrupt_head {
            Triple::new(EntityId(pick), t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, EntityId(pick))
        };
        last = candidate;
        if !graph.contains(&candidate) {
            return candidate;
        }
    }
    last
}

/// Parameter addressed by a TransE gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EmbeddingParam {
    Entity(EntityId),
    Relation(RelationId),
}

/// Margin loss `max(0, γ + d(pos) − d(neg))` and its gradient with respect
/// to every embedding row it touches.
pub fn margin_loss_gradient(
    table: &EmbeddingTable,
    positive: &Triple,
    negative: &Triple,
    margin: f64,
    norm: Norm,
) -> Result<(f64, BTreeMap<EmbeddingParam, Vec<f64>>)> {
    let pos = residual(table, positive)?;
    let neg = residual(table, negative)?;
    let loss = margin + norm_of(&pos, norm) - norm_of(&neg, norm);
    let mut grads = BTreeMap::new();
    if loss <= 0.0 {
        return Ok((0.0, grads));
    }
    let gp = norm_grad(&pos, norm);
    let gn = norm_grad(&neg, norm);
    let dim = table.dim();
    let mut push = |param: EmbeddingParam, sign: f64, g: &[f64]| {
        let slot = grads.entry(param).or_insert_with(|| vec![0.0; dim]);
        add_scaled(slot, sign, g);
    };
    push(EmbeddingParam::Entity(positive.head), 1.0, &gp);
    push(EmbeddingParam::Relation(positive.relation), 1.0, &gp);
    push(EmbeddingParam::Entity(positive.tail), -1.0, &gp);
    push(EmbeddingParam::Entity(negative.head), -1.0, &gn);
    push(EmbeddingParam::Relation(negative.relation), -1.0, &gn);
    push(EmbeddingParam::Entity(negative.tail), 1.0, &gn);
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranseEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean distance of stored triples after the epoch's renormalization.
    pub mean_positive_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TranseOutcome {
    pub table: EmbeddingTable,
    pub initial_positive_distance: f64,
    pub history: Vec<TranseEpoch>,
}

pub fn mean_positive_distance(graph: &KnowledgeGraph, table: &EmbeddingTable, norm: Norm) -> Result<f64> {
    if graph.triple_count() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in graph.triples() {
        total += transe_score(table, t, norm)?;
    }
    Ok(total / graph.triple_count() as f64)
}

/// Pretrains a table for every entity and relation of `graph`.
pub fn transe_pretrain(graph: &KnowledgeGraph, config: &TranseConfig) -> Result<EmbeddingTable> {
    transe_pretrain_with_history(graph, config).map(|o| o.table)
}

pub fn transe_pretrain_with_history(graph: &KnowledgeGraph, config: &TranseConfig) -> Result<TranseOutcome> {
    config.validate()?;
    if graph.triple_count() == 0 || graph.entity_count() < 2 {
        return Err(invalid("transe pretraining needs at least one triple"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / libm::sqrt(config.dim as f64);
    let mut table = EmbeddingTable::uniform(
        graph.entity_count(),
        graph.relation_count(),
        config.dim,
        bound,
        &mut rng,
    )?;
    table.normalize_relations();
    table.normalize_entities();
    let initial_positive_distance = mean_positive_distance(graph, &table, config.norm)?;

    let mut order: Vec<usize> = (0..graph.triple_count()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let positive = graph.triples()[idx];
            for _ in 0..config.negatives {
                let negative = sample_negative(graph, &positive, &mut rng);
                let (loss, grads) =
                    margin_loss_gradient(&table, &positive, &negative, config.margin, config.norm)?;
                loss_sum += loss;
                for (param, g) in grads {
                    let row = match param {
                        EmbeddingParam::Entity(e) => table.entity_mut(e)?,
                        EmbeddingParam::Relation(r) => table.relation_mut(r)?,
                    };
                    add_scaled(row, -config.learning_rate, &g);
                }
            }
        }
        table.normalize_entities();
        let stats = TranseEpoch {
            epoch,
            mean_loss: loss_sum / (order.len() * config.negatives) as f64,
            mean_positive_distance: mean_positive_distance(graph, &table, config.norm)?,
        };
        log::debug!(
            "transe epoch {epoch}: loss {:.5} distance {:.5}",
            stats.mean_loss,
            stats.mean_positive_distance
        );
        history.push(stats);
    }
    Ok(TranseOutcome {
        table,
        initial_positive_distance,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityKind;
    use crate::linalg::Matrix;
    use alloc::collections::BTreeSet;

    fn table_2d(h: [f64; 2], r: [f64; 2], t: [f64; 2]) -> EmbeddingTable {
        let e = Matrix::from_vec(2, 2, vec![h[0], h[1], t[0], t[1]]).unwrap();
        let rel = Matrix::from_vec(1, 2, r.to_vec()).unwrap();
        EmbeddingTable::from_matrices(e, rel).unwrap()
    }

    const T: Triple = Triple {
        head: EntityId(0),
        relation: RelationId(0),
        tail: EntityId(1),
    };

    #[test]
    fn translation_identity_scores_zero() {
        let table = table_2d([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]);
        assert_eq!(transe_score(&table, &T, Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn l1_and_l2_reference_values() {
        let table = table_2d([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        assert!((transe_score(&table, &T, Norm::L2).unwrap() - core::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(transe_score(&table, &T, Norm::L1).unwrap(), 2.0);
        let bad = Triple::new(EntityId(0), RelationId(0), EntityId(9));
        assert!(transe_score(&table, &bad, Norm::L2).is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let config = TranseConfig {
            epochs: 0,
            ..TranseConfig::default()
        };
        let mut g = KnowledgeGraph::new();
        g.insert(("a", EntityKind::Item), "r", ("b", EntityKind::Item)).unwrap();
        assert!(transe_pretrain(&g, &config).is_err());
    }

    #[test]
    fn two_entity_corruptions_come_from_the_enumerated_space() {
        let mut g = KnowledgeGraph::new();
        g.insert(("a", EntityKind::Item), "r", ("b", EntityKind::Item)).unwrap();
        let t = g.triples()[0];
        // Brute-force corruption space: every single-slot replacement that is
        // not a stored triple.
        let mut space = BTreeSet::new();
        for e in g.entities() {
            for c in [Triple::new(e, t.relation, t.tail), Triple::new(t.head, t.relation, e)] {
                if !g.contains(&c) {
                    space.insert(c);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let neg = sample_negative(&g, &t, &mut rng);
            assert!(space.contains(&neg));
            let changed = (neg.head != t.head) as u8 + (neg.tail != t.tail) as u8;
            assert_eq!(changed, 1);
            seen.insert(neg);
        }
        assert_eq!(seen, space);
    }

    #[test]
    fn negative_sampling_is_seeded() {
        let mut g = KnowledgeGraph::new();
        for i in 0..6 {
            let a = alloc::format!("e{i}");
            let b = alloc::format!("e{}", i + 1);
            g.insert((&a, EntityKind::Item), "next", (&b, EntityKind::Item)).unwrap();
        }
        let t = g.triples()[2];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_negative(&g, &t, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }
}
