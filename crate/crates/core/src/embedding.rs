use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{EntityId, RelationId};
use crate::linalg::{l2_norm, Matrix};

/// Entity and relation vectors sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entities: Matrix,
    relations: Matrix,
}

impl EmbeddingTable {
    pub fn zeros(entity_count: usize, relation_count: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            entities: Matrix::zeros(entity_count, dim),
            relations: Matrix::zeros(relation_count, dim),
        })
    }

    pub fn from_matrices(entities: Matrix, relations: Matrix) -> Result<Self> {
        let dim = entities.cols();
        if dim == 0 {
            return Err(invalid("embedding dimension must be positive"));
        }
        if relations.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: relations.cols(),
            });
        }
        Ok(Self {
            dim,
            entities,
            relations,
        })
    }

    /// Every coordinate drawn from `U(-bound, bound)`.
    pub fn uniform<R: Rng>(
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut table = Self::zeros(entity_count, relation_count, dim)?;
        for x in table.entities.as_mut_slice() {
            *x = rng.gen_range(-bound..bound);
        }
        for x in table.relations.as_mut_slice() {
            *x = rng.gen_range(-bound..bound);
        }
        Ok(table)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.rows()
    }

    pub fn entity(&self, id: EntityId) -> Result<&[f64]> {
        if id.index() < self.entities.rows() {
            Ok(self.entities.row(id.index()))
        } else {
            Err(Error::UnknownEntity(id.0))
        }
    }

    pub fn entity_mut(&mut self, id: EntityId) -> Result<&mut [f64]> {
        if id.index() < self.entities.rows() {
            Ok(self.entities.row_mut(id.index()))
        } else {
            Err(Error::UnknownEntity(id.0))
        }
    }

    pub fn relation(&self, id: RelationId) -> Result<&[f64]> {
        if id.index() < self.relations.rows() {
            Ok(self.relations.row(id.index()))
        } else {
            Err(Error::UnknownRelation(id.0))
        }
    }

    pub fn relation_mut(&mut self, id: RelationId) -> Result<&mut [f64]> {
        if id.index() < self.relations.rows() {
            Ok(self.relations.row_mut(id.index()))
        } else {
            Err(Error::UnknownRelation(id.0))
        }
    }

    pub fn entities(&self) -> &Matrix {
        &self.entities
    }

    pub fn entities_mut(&mut self) -> &mut Matrix {
        &mut self.entities
    }

    pub fn relations(&self) -> &Matrix {
        &self.relations
    }

    pub fn relations_mut(&mut self) -> &mut Matrix {
        &mut self.relations
    }

    pub fn split_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.entities, &mut self.relations)
    }

    /// Rescales every entity row to unit L2 norm (zero rows stay zero).
    pub fn normalize_entities(&mut self) {
        normalize_rows(&mut self.entities);
    }

    pub fn normalize_relations(&mut self) {
        normalize_rows(&mut self.relations);
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.relations.is_finite()
    }
}

fn normalize_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = l2_norm(row);
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(EmbeddingTable::zeros(3, 1, 0).is_err());
    }

    #[test]
    fn normalization_gives_unit_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = EmbeddingTable::uniform(5, 2, 7, 1.0, &mut rng).unwrap();
        t.normalize_entities();
        for i in 0..5 {
            assert!((l2_norm(t.entity(EntityId(i)).unwrap()) - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.entity(EntityId(5)), Err(Error::UnknownEntity(5)));
    }
}
