//! User → purchased-items sets and their per-user train/test split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Triple};

/// Relation name under which interactions are materialized as graph edges.
pub const PURCHASE_RELATION: &str = "purchase";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionSet {
    by_user: BTreeMap<EntityId, Vec<EntityId>>,
}

impl InteractionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `user` bought `item`, checking both kinds against `graph`.
    /// Returns `false` for a repeated pair.
    pub fn insert(&mut self, graph: &KnowledgeGraph, user: EntityId, item: EntityId) -> Result<bool> {
        expect_kind(graph, user, EntityKind::User)?;
        expect_kind(graph, item, EntityKind::Item)?;
        Ok(self.insert_unchecked(user, item))
    }

    fn insert_unchecked(&mut self, user: EntityId, item: EntityId) -> bool {
        let items = self.by_user.entry(user).or_default();
        if items.contains(&item) {
            false
        } else {
            items.push(item);
            true
        }
    }

    pub fn users(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.by_user.keys().copied()
    }

    pub fn items(&self, user: EntityId) -> &[EntityId] {
        self.by_user.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn item_set(&self, user: EntityId) -> BTreeSet<EntityId> {
        self.items(user).iter().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &[EntityId])> + '_ {
        self.by_user.iter().map(|(u, items)| (*u, items.as_slice()))
    }

    pub fn contains(&self, user: EntityId, item: EntityId) -> bool {
        self.items(user).contains(&item)
    }

    pub fn user_count(&self) -> usize {
        self.by_user.len()
    }

    /// Number of (user, item) pairs.
    pub fn len(&self) -> usize {
        self.by_user.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-user split: each user keeps `ceil(fraction · n)` items for
    /// training (at least one), the rest go to test. Users with a single
    /// interaction stay entirely in train. Item order within each side
    /// follows the input order.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(InteractionSet, InteractionSet)> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(invalid("train fraction must lie in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = InteractionSet::new();
        let mut test = InteractionSet::new();
        for (&user, items) in &self.by_user {
            let n = items.len();
            let n_train = train_count(n, train_fraction);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let held_out: BTreeSet<usize> = order[n_train..].iter().copied().collect();
            for (pos, &item) in items.iter().enumerate() {
                if held_out.contains(&pos) {
                    test.insert_unchecked(user, item);
                } else {
                    train.insert_unchecked(user, item);
                }
            }
        }
        Ok((train, test))
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    if n <= 1 {
        return n;
    }
    let raw = libm::ceil(fraction * n as f64 - 1e-9) as usize;
    raw.clamp(1, n)
}

fn expect_kind(graph: &KnowledgeGraph, id: EntityId, expected: EntityKind) -> Result<()> {
    let found = graph.kind(id)?;
    if found != expected {
        return Err(Error::WrongKind {
            name: graph.entity_name(id)?.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

impl KnowledgeGraph {
    /// Adds one `user —purchase→ item` triple per interaction; returns how
    /// many were new.
    pub fn add_interactions(&mut self, set: &InteractionSet) -> Result<usize> {
        let relation = self.intern_relation(PURCHASE_RELATION);
        let mut added = 0;
        for (user, items) in set.iter() {
            for &item in items {
                if self.add_triple(Triple::new(user, relation, item))? {
                    added += 1;
                }
            }
        }
        Ok(added)
    }
}
