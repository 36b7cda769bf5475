//! Typed in-memory triple store with a bidirectional adjacency index.
//!
//! Entities and relations are interned into dense ids in order of first
//! appearance. Every stored triple `(h, r, t)` is reachable from both ends:
//! `h` carries a forward entry to `t` and `t` an inverse entry back to `h`,
//! both under the same relation id.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    User,
    Item,
    Property,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [EntityKind::User, EntityKind::Item, EntityKind::Property];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Property => "property",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(EntityKind::User),
            "item" => Ok(EntityKind::Item),
            "property" => Ok(EntityKind::Property),
            other => Err(invalid(alloc::format!("unknown entity kind `{other}`"))),
        }
    }
}

/// Which way an adjacency entry runs relative to its stored triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// The entry's owner is the triple's head.
    Forward,
    /// The entry's owner is the triple's tail.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// One adjacency entry. Field order gives the index ordering: neighbor id,
/// then relation id, then direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    names: Vec<String>,
    kinds: Vec<EntityKind>,
    by_name: BTreeMap<String, EntityId>,
    relations: Vec<String>,
    relation_by_name: BTreeMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: BTreeSet<Triple>,
    adjacency: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, creating the entity if needed. Re-declaring
    /// an existing entity with a different kind is an error.
    pub fn intern_entity(&mut self, name: &str, kind: EntityKind) -> Result<EntityId> {
        if let Some(&id) = self.by_name.get(name) {
            let existing = self.kinds[id.index()];
            if existing != kind {
                return Err(Error::KindConflict {
                    name: name.to_string(),
                    existing,
                    requested: kind,
                });
            }
            return Ok(id);
        }
        let id = EntityId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.by_name.insert(name.to_string(), id);
        self.adjacency.push(Vec::new());
        Ok(id)
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_by_name.get(name) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(name.to_string());
        self.relation_by_name.insert(name.to_string(), id);
        id
    }

    /// Stores `triple`; returns `false` when it was already present.
    pub fn add_triple(&mut self, triple: Triple) -> Result<bool> {
        self.check_entity(triple.head)?;
        self.check_entity(triple.tail)?;
        if triple.relation.index() >= self.relations.len() {
            return Err(Error::UnknownRelation(triple.relation.0));
        }
        if triple.head == triple.tail {
            return Err(Error::SelfLoop(self.names[triple.head.index()].clone()));
        }
        if !self.triple_set.insert(triple) {
            return Ok(false);
        }
        self.triples.push(triple);
        insert_sorted(
            &mut self.adjacency[triple.head.index()],
            Neighbor {
                entity: triple.tail,
                relation: triple.relation,
                direction: Direction::Forward,
            },
        );
        insert_sorted(
            &mut self.adjacency[triple.tail.index()],
            Neighbor {
                entity: triple.head,
                relation: triple.relation,
                direction: Direction::Inverse,
            },
        );
        Ok(true)
    }

    /// Interns both entities and the relation, then stores the triple.
    pub fn insert(
        &mut self,
        (head, head_kind): (&str, EntityKind),
        relation: &str,
        (tail, tail_kind): (&str, EntityKind),
    ) -> Result<bool> {
        let h = self.intern_entity(head, head_kind)?;
        let t = self.intern_entity(tail, tail_kind)?;
        if h == t {
            return Err(Error::SelfLoop(head.to_string()));
        }
        let r = self.intern_relation(relation);
        self.add_triple(Triple::new(h, r, t))
    }

    pub fn entity_count(&self) -> usize {
        self.names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Stored triples in insertion order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_by_name.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str> {
        self.names
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::UnknownEntity(id.0))
    }

    pub fn relation_name(&self, id: RelationId) -> Result<&str> {
        self.relations
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::UnknownRelation(id.0))
    }

    pub fn kind(&self, id: EntityId) -> Result<EntityKind> {
        self.kinds
            .get(id.index())
            .copied()
            .ok_or(Error::UnknownEntity(id.0))
    }

    pub fn entity_names(&self) -> &[String] {
        &self.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.names.len() as u32).map(EntityId)
    }

    pub fn entities_of_kind(&self, kind: EntityKind) -> impl Iterator<Item = EntityId> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, &k)| k == kind)
            .map(|(i, _)| EntityId(i as u32))
    }

    /// Entity counts per kind, in `EntityKind::ALL` order.
    pub fn kind_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for k in &self.kinds {
            counts[*k as usize] += 1;
        }
        counts
    }

    /// Forward and inverse adjacency of `entity`, sorted by neighbor id then
    /// relation id.
    pub fn neighbors(&self, entity: EntityId) -> Result<&[Neighbor]> {
        self.adjacency
            .get(entity.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownEntity(entity.0))
    }

    /// Whether walking from `from` to `to` over `relation` in `direction` is
    /// an edge of the graph.
    pub fn has_edge(
        &self,
        from: EntityId,
        relation: RelationId,
        to: EntityId,
        direction: Direction,
    ) -> bool {
        let triple = match direction {
            Direction::Forward => Triple::new(from, relation, to),
            Direction::Inverse => Triple::new(to, relation, from),
        };
        self.contains(&triple)
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(id.0))
        }
    }
}

fn insert_sorted(list: &mut Vec<Neighbor>, entry: Neighbor) {
    let pos = list.binary_search(&entry).unwrap_or_else(|p| p);
    list.insert(pos, entry);
}
