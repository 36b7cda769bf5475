//! Subgraph encoding and candidate scoring.
//!
//! The user's subgraph is summarized as `W4 · LeakyReLU(W3 · (h_u ‖ h_g1 ‖ h_g2))`
//! where `h_gs` is the plain sum of the embeddings selected at diffusion step
//! `s`. A candidate item's similarity is `σ(repr · h_item)` and its final
//! score is `w · sim`, `w` being the summed `v` of the final-step nodes that
//! link to it (or the item's own `v` when the diffusion already absorbed it).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::SubgraphState;
use crate::embedding::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph};
use crate::linalg::{concat, dot, leaky_relu, sigmoid, Matrix};

/// Lower clamp applied to scores before taking logarithms.
pub const SCORE_FLOOR: f64 = 1e-12;

/// Encoder matrices: `w3` is `d2 × 3d`, `w4` is `d × d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w3: Matrix,
    pub w4: Matrix,
}

impl EncoderParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w3: Matrix::zeros(hidden, 3 * dim),
            w4: Matrix::zeros(dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w3.rows()
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        if self.w3.cols() != 3 * dim {
            return Err(Error::DimensionMismatch {
                expected: 3 * dim,
                found: self.w3.cols(),
            });
        }
        if self.w4.shape() != (dim, self.w3.rows()) {
            return Err(Error::DimensionMismatch {
                expected: dim * self.w3.rows(),
                found: self.w4.rows() * self.w4.cols(),
            });
        }
        Ok(())
    }
}

/// Sum of the embeddings selected at `step` (0-based); zero for an empty step.
pub fn hop_embedding(subgraph: &SubgraphState, step: usize, embeddings: &EmbeddingTable) -> Result<Vec<f64>> {
    let s = subgraph
        .steps
        .get(step)
        .ok_or_else(|| invalid("hop step out of range"))?;
    let mut sum = vec![0.0; embeddings.dim()];
    for &node in s.selected() {
        for (acc, x) in sum.iter_mut().zip(embeddings.entity(node)?) {
            *acc += x;
        }
    }
    Ok(sum)
}

/// Intermediate values of the encoder, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn encoder_forward(
    encoder: &EncoderParams,
    h_user: &[f64],
    h_g1: &[f64],
    h_g2: &[f64],
    slope: f64,
) -> Result<EncoderTrace> {
    let d = encoder.w4.rows();
    for v in [h_user, h_g1, h_g2] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    encoder.check(d)?;
    let input = concat(&[h_user, h_g1, h_g2]);
    let hidden_pre = encoder.w3.mul_vec(&input);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| leaky_relu(z, slope)).collect();
    let output = encoder.w4.mul_vec(&hidden);
    Ok(EncoderTrace {
        input,
        hidden_pre,
        hidden,
        output,
    })
}

/// `W4 · LeakyReLU(W3 · (h_u ‖ h_g1 ‖ h_g2))`.
pub fn encode_user_subgraph(
    encoder: &EncoderParams,
    h_user: &[f64],
    h_g1: &[f64],
    h_g2: &[f64],
    slope: f64,
) -> Result<Vec<f64>> {
    encoder_forward(encoder, h_user, h_g1, h_g2, slope).map(|t| t.output)
}

/// `σ(a · b)`.
pub fn similarity(user_repr: &[f64], item: &[f64]) -> Result<f64> {
    if user_repr.len() != item.len() {
        return Err(Error::DimensionMismatch {
            expected: user_repr.len(),
            found: item.len(),
        });
    }
    Ok(sigmoid(dot(user_repr, item)))
}

/// Where a candidate's bridge weight comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CandidateSource {
    /// Adjacent to these final-step nodes (ranks within the final selection).
    Bridged(Vec<usize>),
    /// Selected by the diffusion itself at `(step, rank)`.
    Member { step: usize, rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub item: EntityId,
    pub similarity: f64,
    pub bridge_weight: f64,
    pub score: f64,
    pub source: CandidateSource,
}

/// Item candidates of a subgraph with their bridge weights, in ascending
/// item id. Shared by scoring and by path extraction.
pub fn candidate_sources(subgraph: &SubgraphState, graph: &KnowledgeGraph) -> Result<BTreeMap<EntityId, CandidateSource>> {
    let mut out = BTreeMap::new();
    for (s, step) in subgraph.steps.iter().enumerate() {
        for (rank, &node) in step.selected().iter().enumerate() {
            if graph.kind(node)? == EntityKind::Item {
                out.insert(node, CandidateSource::Member { step: s, rank });
            }
        }
    }
    let final_step = subgraph.final_step();
    for (rank, &bridge) in final_step.selected().iter().enumerate() {
        let mut linked = BTreeSet::new();
        for n in graph.neighbors(bridge)? {
            if subgraph.contains(n.entity) || graph.kind(n.entity)? != EntityKind::Item {
                continue;
            }
            linked.insert(n.entity);
        }
        for item in linked {
            match out
                .entry(item)
                .or_insert_with(|| CandidateSource::Bridged(Vec::new()))
            {
                CandidateSource::Bridged(ranks) => ranks.push(rank),
                CandidateSource::Member { .. } => unreachable!("members are inside the subgraph"),
            }
        }
    }
    Ok(out)
}

pub fn bridge_weight(subgraph: &SubgraphState, source: &CandidateSource) -> f64 {
    match source {
        CandidateSource::Bridged(ranks) => {
            let w = subgraph.final_step().weights();
            ranks.iter().map(|&r| w[r]).sum()
        }
        CandidateSource::Member { step, rank } => subgraph.steps[*step].weights()[*rank],
    }
}

/// User representation of a subgraph (hop sums of steps 0 and 1 feed the
/// encoder; a missing step contributes zeros).
pub fn subgraph_encoding(
    subgraph: &SubgraphState,
    embeddings: &EmbeddingTable,
    encoder: &EncoderParams,
    slope: f64,
) -> Result<EncoderTrace> {
    let zero = vec![0.0; embeddings.dim()];
    let g1 = hop_embedding(subgraph, 0, embeddings)?;
    let g2 = if subgraph.steps.len() > 1 {
        hop_embedding(subgraph, 1, embeddings)?
    } else {
        zero
    };
    encoder_forward(encoder, embeddings.entity(subgraph.user)?, &g1, &g2, slope)
}

/// Scores every candidate item, best first (ties by ascending id).
pub fn score_candidates(
    subgraph: &SubgraphState,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    encoder: &EncoderParams,
    slope: f64,
) -> Result<Vec<CandidateScore>> {
    let trace = subgraph_encoding(subgraph, embeddings, encoder, slope)?;
    score_with_encoding(subgraph, graph, embeddings, &trace.output)
}

pub(crate) fn score_with_encoding(
    subgraph: &SubgraphState,
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    user_repr: &[f64],
) -> Result<Vec<CandidateScore>> {
    let mut scores = Vec::new();
    for (item, source) in candidate_sources(subgraph, graph)? {
        let sim = similarity(user_repr, embeddings.entity(item)?)?;
        let w = bridge_weight(subgraph, &source);
        scores.push(CandidateScore {
            item,
            similarity: sim,
            bridge_weight: w,
            score: w * sim,
            source,
        });
    }
    sort_candidates(&mut scores);
    Ok(scores)
}

pub fn sort_candidates(scores: &mut [CandidateScore]) {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item.cmp(&b.item)));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserLoss {
    pub loss: f64,
    /// Positives that were candidates and entered the average.
    pub used: usize,
    /// Positives without a candidate score.
    pub skipped: usize,
}

/// `−mean log(max(S, 1e-12))` over the user's positives that are candidates.
pub fn user_loss(scores: &[CandidateScore], positives: &[EntityId]) -> Result<UserLoss> {
    if positives.is_empty() {
        return Err(invalid("user has no positive items"));
    }
    let by_item: BTreeMap<EntityId, f64> = scores.iter().map(|c| (c.item, c.score)).collect();
    let mut total = 0.0;
    let mut used = 0;
    let mut seen = BTreeSet::new();
    for item in positives {
        if !seen.insert(*item) {
            continue;
        }
        if let Some(&s) = by_item.get(item) {
            total -= libm::log(s.max(SCORE_FLOOR));
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoScoreablePositive);
    }
    Ok(UserLoss {
        loss: total / used as f64,
        used,
        skipped: seen.len() - used,
    })
}

/// Looks up a candidate by item, reporting the item's name when absent.
pub fn find_candidate<'a>(
    graph: &KnowledgeGraph,
    scores: &'a [CandidateScore],
    item: EntityId,
) -> Result<&'a CandidateScore> {
    scores
        .iter()
        .find(|c| c.item == item)
        .ok_or_else(|| match graph.entity_name(item) {
            Ok(name) => Error::NotCandidate(name.to_string()),
            Err(e) => e,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{diffuse, AttentionParams, DiffusionConfig};

    fn cand(item: u32, score: f64) -> CandidateScore {
        CandidateScore {
            item: EntityId(item),
            similarity: score,
            bridge_weight: 1.0,
            score,
            source: CandidateSource::Bridged(vec![0]),
        }
    }

    #[test]
    fn encoder_reference_values() {
        let enc = EncoderParams {
            w3: Matrix::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap(),
            w4: Matrix::from_vec(1, 1, vec![0.5]).unwrap(),
        };
        assert_eq!(encode_user_subgraph(&enc, &[1.0], &[2.0], &[3.0], 0.01).unwrap(), vec![3.0]);

        let enc = EncoderParams {
            w3: Matrix::from_vec(1, 3, vec![-1.0, 0.0, 0.0]).unwrap(),
            w4: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        };
        let out = encode_user_subgraph(&enc, &[1.0], &[0.0], &[0.0], 0.01).unwrap();
        assert!((out[0] + 0.01).abs() < 1e-15);

        let zero = EncoderParams::zeros(2, 3);
        assert_eq!(encode_user_subgraph(&zero, &[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], 0.01).unwrap(), vec![0.0, 0.0]);
        assert!(encode_user_subgraph(&zero, &[1.0], &[3.0, 4.0], &[5.0, 6.0], 0.01).is_err());
    }

    #[test]
    fn similarity_reference_values() {
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.5);
        assert!((similarity(&[1.0, 1.0], &[1.0, 1.0]).unwrap() - 0.88080).abs() < 1e-5);
        assert!((similarity(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() - 0.11920).abs() < 1e-5);
        assert!(similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn loss_reference_values() {
        let all_one = [cand(1, 1.0), cand(2, 1.0)];
        assert_eq!(user_loss(&all_one, &[EntityId(1), EntityId(2)]).unwrap().loss, 0.0);

        let s = [cand(1, 0.5), cand(2, 0.25)];
        let l = user_loss(&s, &[EntityId(1), EntityId(2)]).unwrap();
        assert!((l.loss - 1.03972).abs() < 1e-5);

        let z = [cand(1, 0.0)];
        let l = user_loss(&z, &[EntityId(1), EntityId(9)]).unwrap();
        assert!((l.loss - 27.631).abs() < 1e-3);
        assert_eq!((l.used, l.skipped), (1, 1));

        assert_eq!(user_loss(&z, &[EntityId(9)]), Err(Error::NoScoreablePositive));
        assert!(user_loss(&z, &[]).is_err());
    }

    fn embeddings(n: usize, dim: usize) -> EmbeddingTable {
        let data = (0..n * dim).map(|i| libm::cos(i as f64 * 0.7) * 0.6).collect();
        EmbeddingTable::from_matrices(Matrix::from_vec(n, dim, data).unwrap(), Matrix::zeros(3, dim)).unwrap()
    }

    #[test]
    fn hop_embedding_sums_and_handles_empty_steps() {
        use EntityKind::*;
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "r", ("p", Property)).unwrap();
        let emb = embeddings(2, 3);
        let sub = diffuse(&g, &emb, &AttentionParams::zeros(3, 3), EntityId(0), &DiffusionConfig::default()).unwrap();
        assert_eq!(hop_embedding(&sub, 0, &emb).unwrap(), emb.entity(EntityId(1)).unwrap());
        assert_eq!(hop_embedding(&sub, 1, &emb).unwrap(), vec![0.0; 3]);
        assert!(hop_embedding(&sub, 2, &emb).is_err());
    }

    #[test]
    fn bridge_weights_sum_over_bridging_nodes() {
        use EntityKind::*;
        // u -> {a, b} -> item; a and b are the only (final) step-1 nodes.
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "r", ("a", Property)).unwrap();
        g.insert(("u", User), "r", ("b", Property)).unwrap();
        g.insert(("a", Property), "s", ("item", Item)).unwrap();
        g.insert(("b", Property), "s", ("item", Item)).unwrap();
        g.insert(("b", Property), "t", ("item", Item)).unwrap();
        g.insert(("far", Item), "s", ("c", Property)).unwrap();
        let emb = embeddings(g.entity_count(), 3);
        let config = DiffusionConfig {
            steps: 1,
            ..DiffusionConfig::default()
        };
        let sub = diffuse(&g, &emb, &AttentionParams::zeros(3, 3), EntityId(0), &config).unwrap();
        let mut enc = EncoderParams::zeros(3, 2);
        enc.w3.set(0, 0, 0.7);
        enc.w4.set(1, 0, -1.1);
        let scores = score_candidates(&sub, &g, &emb, &enc, 0.01).unwrap();
        assert_eq!(scores.len(), 1, "`far` is unreachable");
        let c = &scores[0];
        assert_eq!(c.item, g.entity_id("item").unwrap());
        assert!((c.bridge_weight - 1.0).abs() < 1e-12);
        assert_eq!(c.score, c.bridge_weight * c.similarity);
    }
}
