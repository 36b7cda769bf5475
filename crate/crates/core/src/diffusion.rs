//! Attentive diffusion: grows a user-centred subgraph one hop at a time.
//!
//! Each step starts from the current central entities (the user alone at
//! first, with score 1) and looks at every edge from a central to an
//! unvisited neighbor. For an edge `(e_i, r, e_j)` the gate is
//!
//! ```text
//! gate(e_i, e_j) = σ( (W2 · LeakyReLU(W1 · (h_u ‖ h_{e_i}))) · h_{e_j} )
//! ```
//!
//! and the edge weights `α` are the softmax of the gates over the whole edge
//! set. A candidate's raw score sums `score(e_i) · α` over its incoming edges,
//! the node scores are the softmax of the raw scores over all candidates, and
//! the top `N` raw scores (ties by ascending id) are kept with weights `v`
//! given by the softmax restricted to the kept set. The kept nodes, carrying
//! `v`, are the centrals of the next step. A node enters the subgraph at most
//! once. The relation of an edge shapes which edges exist but does not enter
//! the gate.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use alloc::format;

use crate::embedding::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::graph::{Direction, EntityId, EntityKind, KnowledgeGraph, RelationId};
use crate::linalg::{concat, dot, leaky_relu, sigmoid, softmax, Matrix};

/// Attention matrices: `w1` is `d1 × 2d`, `w2` is `d × d1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl AttentionParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, 2 * dim),
            w2: Matrix::zeros(dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let hidden = self.w1.rows();
        if self.w1.cols() != 2 * dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * dim,
                found: self.w1.cols(),
            });
        }
        if self.w2.shape() != (dim, hidden) {
            return Err(Error::DimensionMismatch {
                expected: dim * hidden,
                found: self.w2.rows() * self.w2.cols(),
            });
        }
        if !(self.w1.is_finite() && self.w2.is_finite()) {
            return Err(Error::NonFinite("attention parameters"));
        }
        Ok(())
    }

    /// Query vector of one central: `W2 · LeakyReLU(W1 · (h_u ‖ h_c))`.
    pub fn query(&self, h_user: &[f64], h_central: &[f64], slope: f64) -> CentralQuery {
        let input = concat(&[h_user, h_central]);
        let hidden_pre = self.w1.mul_vec(&input);
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| leaky_relu(z, slope)).collect();
        let query = self.w2.mul_vec(&hidden);
        CentralQuery {
            hidden_pre,
            hidden,
            query,
        }
    }
}

/// Intermediate values of one central's query, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralQuery {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub query: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub top_n: usize,
    pub slope: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            top_n: 100,
            slope: 0.01,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("diffusion needs at least one step"));
        }
        if self.top_n == 0 {
            return Err(invalid("top-N must be at least 1"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(invalid("LeakyReLU slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Central {
    pub entity: EntityId,
    pub score: f64,
}

/// Edge from `centrals[central]` to `candidates[target]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrontierEdge {
    pub central: usize,
    pub target: usize,
    pub relation: RelationId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frontier {
    pub centrals: Vec<Central>,
    pub edges: Vec<FrontierEdge>,
    /// Unvisited neighbors of the centrals, ascending by id.
    pub candidates: Vec<EntityId>,
}

impl Frontier {
    /// Collects every edge from a central to a neighbor outside `visited`.
    pub fn build(graph: &KnowledgeGraph, centrals: Vec<Central>, visited: &BTreeSet<EntityId>) -> Result<Self> {
        let mut candidate_set = BTreeSet::new();
        for c in &centrals {
            for n in graph.neighbors(c.entity)? {
                if !visited.contains(&n.entity) {
                    candidate_set.insert(n.entity);
                }
            }
        }
        let candidates: Vec<EntityId> = candidate_set.into_iter().collect();
        let mut edges = Vec::new();
        for (ci, c) in centrals.iter().enumerate() {
            for n in graph.neighbors(c.entity)? {
                if let Ok(target) = candidates.binary_search(&n.entity) {
                    edges.push(FrontierEdge {
                        central: ci,
                        target,
                        relation: n.relation,
                        direction: n.direction,
                    });
                }
            }
        }
        Ok(Self {
            centrals,
            edges,
            candidates,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn source(&self, edge: &FrontierEdge) -> EntityId {
        self.centrals[edge.central].entity
    }

    pub fn target(&self, edge: &FrontierEdge) -> EntityId {
        self.candidates[edge.target]
    }
}

/// Gates (pre-softmax, each in `(0, 1)`) and softmax weights per frontier edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeAttention {
    pub queries: Vec<CentralQuery>,
    pub gates: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Attention weight of every frontier edge, aligned with `frontier.edges`.
/// An empty frontier yields empty output.
pub fn compute_edge_attention(
    params: &AttentionParams,
    h_user: &[f64],
    frontier: &Frontier,
    embeddings: &EmbeddingTable,
    slope: f64,
) -> Result<EdgeAttention> {
    if frontier.is_empty() {
        return Ok(EdgeAttention::default());
    }
    let mut queries = Vec::with_capacity(frontier.centrals.len());
    for c in &frontier.centrals {
        queries.push(params.query(h_user, embeddings.entity(c.entity)?, slope));
    }
    let mut gates = Vec::with_capacity(frontier.edges.len());
    for edge in &frontier.edges {
        let h_target = embeddings.entity(frontier.target(edge))?;
        gates.push(sigmoid(dot(&queries[edge.central].query, h_target)));
    }
    let weights = softmax(&gates);
    Ok(EdgeAttention {
        queries,
        gates,
        weights,
    })
}

/// Raw (aggregated) and softmax-normalized candidate scores, aligned with
/// `frontier.candidates`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeScores {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn propagate_node_scores(frontier: &Frontier, edge_weights: &[f64]) -> Result<NodeScores> {
    if edge_weights.len() != frontier.edges.len() {
        return Err(Error::DimensionMismatch {
            expected: frontier.edges.len(),
            found: edge_weights.len(),
        });
    }
    let mut raw = alloc::vec![0.0; frontier.candidates.len()];
    for (edge, &alpha) in frontier.edges.iter().zip(edge_weights) {
        raw[edge.target] += frontier.centrals[edge.central].score * alpha;
    }
    let normalized = softmax(&raw);
    Ok(NodeScores { raw, normalized })
}

/// Kept nodes in rank order with their renormalized weights `v`;
/// `positions` index into the scored input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub positions: Vec<usize>,
    pub nodes: Vec<EntityId>,
    pub weights: Vec<f64>,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Top `n` of `scored` by raw score, ties broken by ascending entity id, with
/// weights equal to the softmax of the kept raw scores.
pub fn select_frontier(scored: &[(EntityId, f64)], n: usize) -> Result<Selection> {
    if n == 0 {
        return Err(invalid("top-N must be at least 1"));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .1
            .total_cmp(&scored[a].1)
            .then_with(|| scored[a].0.cmp(&scored[b].0))
    });
    order.truncate(n);
    let kept: Vec<f64> = order.iter().map(|&i| scored[i].1).collect();
    Ok(Selection {
        nodes: order.iter().map(|&i| scored[i].0).collect(),
        weights: softmax(&kept),
        positions: order,
    })
}

/// Everything computed during one diffusion step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffusionStep {
    pub frontier: Frontier,
    pub attention: EdgeAttention,
    pub scores: NodeScores,
    /// `positions` index into `frontier.candidates`.
    pub selection: Selection,
}

impl DiffusionStep {
    pub fn selected(&self) -> &[EntityId] {
        &self.selection.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.selection.weights
    }

    /// Frontier edges whose target was kept; these are the traversed edges.
    pub fn traversed_edges(&self) -> impl Iterator<Item = &FrontierEdge> + '_ {
        self.frontier
            .edges
            .iter()
            .filter(move |e| self.selection.positions.contains(&e.target))
    }
}

/// A user's diffusion result. Steps are indexed from 0; there are always
/// exactly `config.steps` of them, trailing ones empty after an early halt.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphState {
    pub user: EntityId,
    pub steps: Vec<DiffusionStep>,
    pub visited: BTreeSet<EntityId>,
}

impl SubgraphState {
    /// Node count including the user.
    pub fn node_count(&self) -> usize {
        self.visited.len()
    }

    pub fn contains(&self, entity: EntityId) -> bool {
        self.visited.contains(&entity)
    }

    /// `(step, rank)` at which `entity` was selected.
    pub fn membership(&self, entity: EntityId) -> Option<(usize, usize)> {
        self.steps.iter().enumerate().find_map(|(s, step)| {
            step.selection
                .nodes
                .iter()
                .position(|&n| n == entity)
                .map(|r| (s, r))
        })
    }

    pub fn final_step(&self) -> &DiffusionStep {
        self.steps.last().expect("diffusion has at least one step")
    }
}

/// Runs the diffusion from `user`.
pub fn diffuse(
    graph: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    params: &AttentionParams,
    user: EntityId,
    config: &DiffusionConfig,
) -> Result<SubgraphState> {
    config.validate()?;
    params.check(embeddings.dim())?;
    if embeddings.entity_count() != graph.entity_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.entity_count(),
            found: embeddings.entity_count(),
        });
    }
    let kind = graph.kind(user)?;
    if kind != EntityKind::User {
        return Err(invalid(format!(
            "diffusion must start at a user, `{}` is a {kind}",
            graph.entity_name(user)?
        )));
    }
    let h_user = embeddings.entity(user)?;
    let mut visited = BTreeSet::new();
    visited.insert(user);
    let mut centrals = alloc::vec![Central {
        entity: user,
        score: 1.0,
    }];
    let mut steps = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let frontier = Frontier::build(graph, core::mem::take(&mut centrals), &visited)?;
        if frontier.is_empty() {
            steps.push(DiffusionStep {
                frontier,
                ..DiffusionStep::default()
            });
            continue;
        }
        let attention = compute_edge_attention(params, h_user, &frontier, embeddings, config.slope)?;
        let scores = propagate_node_scores(&frontier, &attention.weights)?;
        let scored: Vec<(EntityId, f64)> = frontier
            .candidates
            .iter()
            .copied()
            .zip(scores.raw.iter().copied())
            .collect();
        let selection = select_frontier(&scored, config.top_n)?;
        for (&entity, &score) in selection.nodes.iter().zip(&selection.weights) {
            visited.insert(entity);
            centrals.push(Central { entity, score });
        }
        steps.push(DiffusionStep {
            frontier,
            attention,
            scores,
            selection,
        });
    }
    Ok(SubgraphState {
        user,
        steps,
        visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use EntityKind::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn two_edge_frontier() -> Frontier {
        Frontier {
            centrals: vec![Central {
                entity: EntityId(1),
                score: 1.0,
            }],
            edges: vec![
                FrontierEdge {
                    central: 0,
                    target: 0,
                    relation: RelationId(0),
                    direction: Direction::Forward,
                },
                FrontierEdge {
                    central: 0,
                    target: 1,
                    relation: RelationId(0),
                    direction: Direction::Forward,
                },
            ],
            candidates: vec![EntityId(2), EntityId(3)],
        }
    }

    fn table(rows: &[[f64; 2]]) -> EmbeddingTable {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        EmbeddingTable::from_matrices(
            Matrix::from_vec(rows.len(), 2, data).unwrap(),
            Matrix::zeros(1, 2),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_attention() {
        let frontier = two_edge_frontier();
        let emb = table(&[[0.3, 0.1], [0.5, -0.2], [1.0, 1.0], [0.0, -1.0]]);
        let att = compute_edge_attention(&AttentionParams::zeros(2, 2), emb.entity(EntityId(0)).unwrap(), &frontier, &emb, 0.01)
            .unwrap();
        assert_eq!(att.gates, vec![0.5, 0.5]);
        assert_eq!(att.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn hand_evaluated_attention() {
        // W1 picks h_u[0] and h_ei[1]; W2 is the identity.
        let params = AttentionParams {
            w1: Matrix::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            w2: Matrix::identity(2),
        };
        let emb = table(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, -1.0]]);
        let frontier = two_edge_frontier();
        let att = compute_edge_attention(&params, emb.entity(EntityId(0)).unwrap(), &frontier, &emb, 0.01).unwrap();
        assert!(close(att.gates[0], 0.88080, 1e-5));
        assert!(close(att.gates[1], 0.26894, 1e-5));
        assert!(close(att.weights[0], 0.6484, 1e-4));
        assert!(close(att.weights[1], 0.3516, 1e-4));
    }

    #[test]
    fn single_edge_has_full_weight() {
        let mut frontier = two_edge_frontier();
        frontier.edges.truncate(1);
        frontier.candidates.truncate(1);
        let emb = table(&[[0.3, 0.1], [0.5, -0.2], [1.0, 1.0]]);
        let mut params = AttentionParams::zeros(2, 3);
        params.w1.set(0, 0, 2.0);
        params.w2.set(1, 0, -1.5);
        let att = compute_edge_attention(&params, emb.entity(EntityId(0)).unwrap(), &frontier, &emb, 0.01).unwrap();
        assert_eq!(att.weights, vec![1.0]);
        let scores = propagate_node_scores(&frontier, &att.weights).unwrap();
        assert_eq!(scores.normalized, vec![1.0]);
    }

    #[test]
    fn three_children_of_one_parent() {
        let centrals = vec![Central {
            entity: EntityId(0),
            score: 1.0,
        }];
        let edges = (0..3)
            .map(|t| FrontierEdge {
                central: 0,
                target: t,
                relation: RelationId(0),
                direction: Direction::Forward,
            })
            .collect();
        let frontier = Frontier {
            centrals,
            edges,
            candidates: vec![EntityId(1), EntityId(2), EntityId(3)],
        };
        let s = propagate_node_scores(&frontier, &[0.5, 0.3, 0.2]).unwrap();
        for (got, want) in s.normalized.iter().zip([0.3907, 0.3199, 0.2894]) {
            assert!(close(*got, want, 1e-4));
        }
    }

    #[test]
    fn candidate_with_two_parents() {
        let frontier = Frontier {
            centrals: vec![
                Central {
                    entity: EntityId(0),
                    score: 0.6,
                },
                Central {
                    entity: EntityId(1),
                    score: 0.4,
                },
            ],
            edges: vec![
                FrontierEdge {
                    central: 0,
                    target: 0,
                    relation: RelationId(0),
                    direction: Direction::Forward,
                },
                FrontierEdge {
                    central: 1,
                    target: 0,
                    relation: RelationId(0),
                    direction: Direction::Forward,
                },
                FrontierEdge {
                    central: 0,
                    target: 1,
                    relation: RelationId(0),
                    direction: Direction::Forward,
                },
            ],
            candidates: vec![EntityId(5), EntityId(6)],
        };
        let s = propagate_node_scores(&frontier, &[0.5, 0.25, 0.5]).unwrap();
        assert!(close(s.raw[0], 0.40, 1e-12));
        assert!(close(s.raw[1], 0.30, 1e-12));
        assert!(close(s.normalized[0], 0.5250, 1e-4));
        assert!(close(s.normalized[1], 0.4750, 1e-4));
    }

    #[test]
    fn selection_examples() {
        let sel = select_frontier(&[(EntityId(1), 0.4), (EntityId(2), 0.3)], 5).unwrap();
        assert_eq!(sel.nodes, vec![EntityId(1), EntityId(2)]);
        assert!(close(sel.weights[0], 0.5250, 1e-4));

        let sel = select_frontier(&[(EntityId(1), 0.9), (EntityId(2), 0.5), (EntityId(3), 0.1)], 2).unwrap();
        assert_eq!(sel.nodes, vec![EntityId(1), EntityId(2)]);
        assert!(close(sel.weights[0], 0.5987, 1e-4));
        assert!(close(sel.weights[1], 0.4013, 1e-4));

        let sel = select_frontier(&[(EntityId(7), 0.5), (EntityId(3), 0.5)], 1).unwrap();
        assert_eq!(sel.nodes, vec![EntityId(3)]);
        assert_eq!(sel.weights, vec![1.0]);

        assert!(select_frontier(&[], 3).unwrap().is_empty());
        assert!(select_frontier(&[(EntityId(1), 0.1)], 0).is_err());
    }

    fn random_ish_embeddings(n: usize, dim: usize) -> EmbeddingTable {
        let data = (0..n * dim).map(|i| libm::sin(i as f64 * 1.37) * 0.8).collect();
        EmbeddingTable::from_matrices(Matrix::from_vec(n, dim, data).unwrap(), Matrix::zeros(2, dim)).unwrap()
    }

    #[test]
    fn isolated_user_gives_empty_steps() {
        let mut g = KnowledgeGraph::new();
        let u = g.intern_entity("u", User).unwrap();
        let emb = random_ish_embeddings(1, 3);
        let sub = diffuse(&g, &emb, &AttentionParams::zeros(3, 3), u, &DiffusionConfig::default()).unwrap();
        assert_eq!(sub.steps.len(), 2);
        assert!(sub.steps.iter().all(|s| s.selection.is_empty()));
        assert_eq!(sub.node_count(), 1);
    }

    #[test]
    fn chain_walk_is_forced() {
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "likes", ("p1", Property)).unwrap();
        g.insert(("i1", Item), "has", ("p1", Property)).unwrap();
        let emb = random_ish_embeddings(3, 4);
        let config = DiffusionConfig {
            steps: 2,
            top_n: 1,
            slope: 0.01,
        };
        let sub = diffuse(&g, &emb, &AttentionParams::zeros(4, 4), EntityId(0), &config).unwrap();
        assert_eq!(sub.steps[0].selected(), &[g.entity_id("p1").unwrap()]);
        assert_eq!(sub.steps[0].weights(), &[1.0]);
        assert_eq!(sub.steps[1].selected(), &[g.entity_id("i1").unwrap()]);
        assert_eq!(sub.steps[1].weights(), &[1.0]);
    }

    #[test]
    fn star_keeps_top_three() {
        let mut g = KnowledgeGraph::new();
        for i in 0..5 {
            g.insert(("u", User), "r", (&format!("p{i}"), Property)).unwrap();
        }
        let emb = random_ish_embeddings(6, 4);
        let mut params = AttentionParams::zeros(4, 4);
        for (k, x) in params.w1.as_mut_slice().iter_mut().enumerate() {
            *x = libm::cos(k as f64) * 0.5;
        }
        for (k, x) in params.w2.as_mut_slice().iter_mut().enumerate() {
            *x = libm::sin(k as f64 + 0.3) * 0.5;
        }
        let config = DiffusionConfig {
            steps: 2,
            top_n: 3,
            slope: 0.01,
        };
        let sub = diffuse(&g, &emb, &params, EntityId(0), &config).unwrap();
        let step = &sub.steps[0];
        assert_eq!(step.selection.len(), 3);
        assert!(close(step.weights().iter().sum::<f64>(), 1.0, 1e-12));
        // Brute-force oracle: sort all five raw scores.
        let mut all: Vec<(EntityId, f64)> = step
            .frontier
            .candidates
            .iter()
            .copied()
            .zip(step.scores.raw.iter().copied())
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<EntityId> = all.iter().take(3).map(|p| p.0).collect();
        assert_eq!(step.selected(), expected.as_slice());
        // The star has no second hop.
        assert!(sub.steps[1].selection.is_empty());
    }

    #[test]
    fn non_user_start_is_rejected() {
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "r", ("i", Item)).unwrap();
        let emb = random_ish_embeddings(2, 2);
        let err = diffuse(&g, &emb, &AttentionParams::zeros(2, 2), EntityId(1), &DiffusionConfig::default());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
