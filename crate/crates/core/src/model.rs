//! Trainable parameters and the checkpoint they are shipped in.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::AttentionParams;
use crate::embedding::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::graph::KnowledgeGraph;
use crate::linalg::Matrix;
use crate::scoring::EncoderParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub attention: AttentionParams,
    pub encoder: EncoderParams,
    pub embeddings: EmbeddingTable,
}

/// Uniform in `±√(6 / (fan_in + fan_out))`.
fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = rng.gen_range(-bound..bound);
    }
    m
}

impl ModelParams {
    /// Wraps a pretrained table with freshly initialized W1..W4 (hidden sizes
    /// `d1` and `d2`). The same seed always gives the same matrices.
    pub fn initialize(embeddings: EmbeddingTable, d1: usize, d2: usize, seed: u64) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(invalid("hidden sizes must be positive"));
        }
        let d = embeddings.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attention = AttentionParams {
            w1: xavier(d1, 2 * d, &mut rng),
            w2: xavier(d, d1, &mut rng),
        };
        let encoder = EncoderParams {
            w3: xavier(d2, 3 * d, &mut rng),
            w4: xavier(d, d2, &mut rng),
        };
        Ok(Self {
            attention,
            encoder,
            embeddings,
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        self.attention.check(d)?;
        self.encoder.check(d)?;
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// The six parameter blocks in a fixed order: W1, W2, W3, W4, entity
    /// table, relation table.
    pub fn blocks(&self) -> [&Matrix; 6] {
        [
            &self.attention.w1,
            &self.attention.w2,
            &self.encoder.w3,
            &self.encoder.w4,
            self.embeddings.entities(),
            self.embeddings.relations(),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Matrix; 6] {
        let (entities, relations) = self.embeddings.split_mut();
        [
            &mut self.attention.w1,
            &mut self.attention.w2,
            &mut self.encoder.w3,
            &mut self.encoder.w4,
            entities,
            relations,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|m| m.is_finite())
    }

    /// Rounds every value to the nearest `f32`, which is what a checkpoint
    /// stores; after this, saving and loading is lossless.
    pub fn round_to_f32(&mut self) {
        for m in self.blocks_mut() {
            for x in m.as_mut_slice() {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// Trained model plus the name tables that tie its rows to a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: ModelParams, graph: &KnowledgeGraph) -> Result<Self> {
        let ckpt = Self {
            model,
            entity_names: graph.entity_names().to_vec(),
            relation_names: graph.relation_names().to_vec(),
        };
        ckpt.check_graph(graph)?;
        Ok(ckpt)
    }

    /// Row counts and names must line up with the graph's interning order.
    pub fn check_graph(&self, graph: &KnowledgeGraph) -> Result<()> {
        let emb = &self.model.embeddings;
        if emb.entity_count() != graph.entity_count() || self.entity_names.len() != graph.entity_count() {
            return Err(Error::CheckpointMismatch(format!(
                "{} entity rows for a graph with {} entities",
                emb.entity_count(),
                graph.entity_count()
            )));
        }
        if emb.relation_count() != graph.relation_count() || self.relation_names.len() != graph.relation_count() {
            return Err(Error::CheckpointMismatch(format!(
                "{} relation rows for a graph with {} relations",
                emb.relation_count(),
                graph.relation_count()
            )));
        }
        if let Some((i, (a, b))) = self
            .entity_names
            .iter()
            .zip(graph.entity_names())
            .enumerate()
            .find(|(_, (a, b))| a != b)
        {
            return Err(Error::CheckpointMismatch(format!("entity {i} is `{a}` here but `{b}` in the graph")));
        }
        if let Some((i, (a, b))) = self
            .relation_names
            .iter()
            .zip(graph.relation_names())
            .enumerate()
            .find(|(_, (a, b))| a != b)
        {
            return Err(Error::CheckpointMismatch(format!("relation {i} is `{a}` here but `{b}` in the graph")));
        }
        self.model.check()
    }
}
