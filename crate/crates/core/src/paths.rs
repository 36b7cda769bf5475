//! Reasoning paths from the user to a recommended item, recovered from the
//! diffusion trace.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::diffusion::SubgraphState;
use crate::error::{invalid, Error, Result};
use crate::graph::{Direction, EntityId, EntityKind, KnowledgeGraph, RelationId};
use crate::scoring::{candidate_sources, CandidateSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathHop {
    pub relation: RelationId,
    /// Orientation of the stored triple relative to the walk.
    pub direction: Direction,
    pub to: EntityId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationPath {
    pub user: EntityId,
    pub hops: Vec<PathHop>,
    /// Product of the diffusion weights of the interior nodes.
    pub weight: f64,
}

impl ExplanationPath {
    pub fn item(&self) -> EntityId {
        self.hops.last().map(|h| h.to).unwrap_or(self.user)
    }

    pub fn nodes(&self) -> Vec<EntityId> {
        core::iter::once(self.user)
            .chain(self.hops.iter().map(|h| h.to))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Checks every hop against the graph's edges, and that the walk runs
    /// from a user to an item.
    pub fn validate(&self, graph: &KnowledgeGraph) -> Result<()> {
        if graph.kind(self.user)? != EntityKind::User {
            return Err(invalid("path does not start at a user"));
        }
        if self.hops.is_empty() {
            return Err(invalid("path has no hops"));
        }
        if graph.kind(self.item())? != EntityKind::Item {
            return Err(invalid("path does not end at an item"));
        }
        let mut from = self.user;
        for hop in &self.hops {
            if !graph.has_edge(from, hop.relation, hop.to, hop.direction) {
                return Err(invalid(alloc::format!(
                    "no `{}` edge between `{}` and `{}`",
                    graph.relation_name(hop.relation)?,
                    graph.entity_name(from)?,
                    graph.entity_name(hop.to)?
                )));
            }
            from = hop.to;
        }
        Ok(())
    }

    /// Arrow form, e.g. `User_1 —review→ reliable ←tag— C_1 —sale→ Item_4`.
    pub fn render(&self, graph: &KnowledgeGraph) -> Result<String> {
        let mut out = String::from(graph.entity_name(self.user)?);
        for hop in &self.hops {
            let rel = graph.relation_name(hop.relation)?;
            let to = graph.entity_name(hop.to)?;
            // Writing to a String cannot fail.
            let _ = match hop.direction {
                Direction::Forward => write!(out, " —{rel}→ {to}"),
                Direction::Inverse => write!(out, " ←{rel}— {to}"),
            };
        }
        Ok(out)
    }
}

/// Partial walk from some node back towards the user, hops stored in reverse.
struct Partial {
    reversed: Vec<PathHop>,
    weight: f64,
}

/// Every way to reach the node kept at `(step, rank)` from the user.
fn walks_to(subgraph: &SubgraphState, step: usize, rank: usize) -> Vec<Partial> {
    let s = &subgraph.steps[step];
    let target_pos = s.selection.positions[rank];
    let mut out = Vec::new();
    for edge in s.frontier.edges.iter().filter(|e| e.target == target_pos) {
        let hop = PathHop {
            relation: edge.relation,
            direction: edge.direction,
            to: s.frontier.candidates[target_pos],
        };
        if step == 0 {
            out.push(Partial {
                reversed: alloc::vec![hop],
                weight: 1.0,
            });
            continue;
        }
        let central = s.frontier.centrals[edge.central];
        let prev = &subgraph.steps[step - 1];
        let prev_rank = prev
            .selection
            .nodes
            .iter()
            .position(|&n| n == central.entity)
            .expect("centrals are the previous step's selection");
        for mut p in walks_to(subgraph, step - 1, prev_rank) {
            p.reversed.insert(0, hop);
            p.weight *= central.score;
            out.push(p);
        }
    }
    out
}

/// Paths from the user to `item`, best first by interior weight product
/// (ties by node sequence), at most `limit`.
pub fn extract_paths(
    subgraph: &SubgraphState,
    graph: &KnowledgeGraph,
    item: EntityId,
    limit: usize,
) -> Result<Vec<ExplanationPath>> {
    let sources = candidate_sources(subgraph, graph)?;
    let source = sources.get(&item).ok_or_else(|| match graph.entity_name(item) {
        Ok(name) => Error::NotCandidate(name.into()),
        Err(e) => e,
    })?;
    let mut partials = Vec::new();
    match source {
        CandidateSource::Member { step, rank } => partials.extend(walks_to(subgraph, *step, *rank)),
        CandidateSource::Bridged(ranks) => {
            let last = subgraph.steps.len() - 1;
            let final_step = subgraph.final_step();
            for &rank in ranks {
                let bridge = final_step.selection.nodes[rank];
                let v = final_step.selection.weights[rank];
                let final_hops: Vec<PathHop> = graph
                    .neighbors(bridge)?
                    .iter()
                    .filter(|n| n.entity == item)
                    .map(|n| PathHop {
                        relation: n.relation,
                        direction: n.direction,
                        to: item,
                    })
                    .collect();
                for p in walks_to(subgraph, last, rank) {
                    for hop in &final_hops {
                        let mut reversed = alloc::vec![*hop];
                        reversed.extend_from_slice(&p.reversed);
                        partials.push(Partial {
                            reversed,
                            weight: p.weight * v,
                        });
                    }
                }
            }
        }
    }
    let mut paths: Vec<ExplanationPath> = partials
        .into_iter()
        .map(|p| {
            let mut hops = p.reversed;
            hops.reverse();
            ExplanationPath {
                user: subgraph.user,
                hops,
                weight: p.weight,
            }
        })
        .collect();
    paths.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then_with(|| a.nodes().cmp(&b.nodes()))
            .then_with(|| {
                let ra: Vec<_> = a.hops.iter().map(|h| (h.relation, h.direction)).collect();
                let rb: Vec<_> = b.hops.iter().map(|h| (h.relation, h.direction)).collect();
                ra.cmp(&rb)
            })
    });
    paths.truncate(limit);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{diffuse, AttentionParams, DiffusionConfig};
    use crate::embedding::EmbeddingTable;
    use crate::linalg::Matrix;
    use EntityKind::*;

    fn emb(n: usize) -> EmbeddingTable {
        let data = (0..n * 3).map(|i| libm::sin(i as f64 + 0.5)).collect();
        EmbeddingTable::from_matrices(Matrix::from_vec(n, 3, data).unwrap(), Matrix::zeros(4, 3)).unwrap()
    }

    #[test]
    fn chain_has_exactly_one_path() {
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "likes", ("p", Property)).unwrap();
        g.insert(("q", Property), "about", ("p", Property)).unwrap();
        g.insert(("q", Property), "sells", ("i", Item)).unwrap();
        let e = emb(g.entity_count());
        let sub = diffuse(&g, &e, &AttentionParams::zeros(3, 3), EntityId(0), &DiffusionConfig::default()).unwrap();
        let item = g.entity_id("i").unwrap();
        let paths = extract_paths(&sub, &g, item, 5).unwrap();
        assert_eq!(paths.len(), 1);
        paths[0].validate(&g).unwrap();
        assert_eq!(paths[0].render(&g).unwrap(), "u —likes→ p ←about— q —sells→ i");
        assert_eq!(paths[0].weight, 1.0);
    }

    #[test]
    fn heavier_bridge_ranks_first() {
        // Two bridges to the same item; zero attention makes the step-1
        // weights depend only on the aggregated scores, so give `a` two
        // incoming edges and `b` one.
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "r1", ("a", Property)).unwrap();
        g.insert(("u", User), "r2", ("a", Property)).unwrap();
        g.insert(("u", User), "r1", ("b", Property)).unwrap();
        g.insert(("a", Property), "s", ("i", Item)).unwrap();
        g.insert(("b", Property), "s", ("i", Item)).unwrap();
        let e = emb(g.entity_count());
        let config = DiffusionConfig {
            steps: 1,
            ..DiffusionConfig::default()
        };
        let sub = diffuse(&g, &e, &AttentionParams::zeros(3, 3), EntityId(0), &config).unwrap();
        let a = g.entity_id("a").unwrap();
        let paths = extract_paths(&sub, &g, g.entity_id("i").unwrap(), 10).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(paths[0].hops[0].to, a);
        assert!(paths[0].weight > paths[2].weight);
        assert_eq!(paths[2].hops[0].to, g.entity_id("b").unwrap());
        let limited = extract_paths(&sub, &g, g.entity_id("i").unwrap(), 1).unwrap();
        assert_eq!(limited.len(), 1);
    }

    #[test]
    fn non_candidate_is_not_found() {
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "r", ("p", Property)).unwrap();
        g.intern_entity("lonely", Item).unwrap();
        let e = emb(g.entity_count());
        let sub = diffuse(&g, &e, &AttentionParams::zeros(3, 3), EntityId(0), &DiffusionConfig::default()).unwrap();
        let err = extract_paths(&sub, &g, g.entity_id("lonely").unwrap(), 3).unwrap_err();
        assert_eq!(err, Error::NotCandidate("lonely".into()));
    }
}
