//! Joint training of the attention, encoder and embedding parameters.
//!
//! Gradients are exact reverse-mode derivatives of the per-user loss with the
//! top-N selection of every diffusion step held fixed. They flow through the
//! similarity, the bridge weights `v`, the restricted softmax, the edge
//! softmax, the gates, both MLPs and every embedding the pass touched.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{diffuse, DiffusionConfig, SubgraphState};
use crate::embedding::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::interactions::InteractionSet;
use crate::linalg::{add_scaled, concat, leaky_relu_grad, softmax_backward, Matrix};
use crate::model::{Checkpoint, ModelParams};
use crate::scoring::{score_with_encoding, subgraph_encoding, CandidateScore, CandidateSource, EncoderTrace, SCORE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Embedding dimensionality `d`.
    pub dim: usize,
    /// Nodes kept per diffusion step.
    pub top_n: usize,
    /// Diffusion steps.
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Adds `−log(1 − S)` terms for sampled non-purchased candidates.
    pub contrastive: bool,
    pub negatives: usize,
    /// Attention hidden width; `None` means `d`.
    pub attention_hidden: Option<usize>,
    /// Encoder hidden width; `None` means `d`.
    pub encoder_hidden: Option<usize>,
    pub slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            dim: 100,
            top_n: 100,
            steps: 2,
            seed: 42,
            learning_rate: 0.001,
            contrastive: false,
            negatives: 4,
            attention_hidden: None,
            encoder_hidden: None,
            slope: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            steps: self.steps,
            top_n: self.top_n,
            slope: self.slope,
        }
    }

    pub fn attention_hidden(&self) -> usize {
        self.attention_hidden.unwrap_or(self.dim)
    }

    pub fn encoder_hidden(&self) -> usize {
        self.encoder_hidden.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.dim == 0 {
            return Err(invalid("batch size, epochs and dimension must be positive"));
        }
        if self.attention_hidden() == 0 || self.encoder_hidden() == 0 {
            return Err(invalid("hidden sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.contrastive && self.negatives == 0 {
            return Err(invalid("contrastive training needs at least one negative"));
        }
        self.diffusion().validate()
    }
}

/// Dense gradients for W1..W4 and sparse rows for the entity table. The
/// relation table never receives a gradient from this objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub w3: Matrix,
    pub w4: Matrix,
    pub entities: BTreeMap<EntityId, Vec<f64>>,
    dim: usize,
}

impl Gradients {
    pub fn zeros(model: &ModelParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w1: z(&model.attention.w1),
            w2: z(&model.attention.w2),
            w3: z(&model.encoder.w3),
            w4: z(&model.encoder.w4),
            entities: BTreeMap::new(),
            dim: model.dim(),
        }
    }

    fn entity_row(&mut self, id: EntityId) -> &mut Vec<f64> {
        let dim = self.dim;
        self.entities.entry(id).or_insert_with(|| vec![0.0; dim])
    }

    fn add_entity(&mut self, id: EntityId, alpha: f64, x: &[f64]) {
        add_scaled(self.entity_row(id), alpha, x);
    }

    /// Gradient row of `id`; `None` means exactly zero.
    pub fn entity(&self, id: EntityId) -> Option<&[f64]> {
        self.entities.get(&id).map(|v| v.as_slice())
    }

    pub fn add(&mut self, other: &Gradients) {
        self.w1.add_assign(&other.w1);
        self.w2.add_assign(&other.w2);
        self.w3.add_assign(&other.w3);
        self.w4.add_assign(&other.w4);
        for (id, row) in &other.entities {
            add_scaled(self.entity_row(*id), 1.0, row);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in [&mut self.w1, &mut self.w2, &mut self.w3, &mut self.w4] {
            m.scale(factor);
        }
        for row in self.entities.values_mut() {
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.w2, &self.w3, &self.w4].iter().all(|m| m.is_finite())
            && self.entities.values().all(|r| r.iter().all(|x| x.is_finite()))
    }
}

/// Forward pass of one user, with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct UserForward {
    pub subgraph: SubgraphState,
    pub encoding: EncoderTrace,
    pub scores: Vec<CandidateScore>,
}

pub fn forward_user(
    model: &ModelParams,
    graph: &KnowledgeGraph,
    user: EntityId,
    config: &DiffusionConfig,
) -> Result<UserForward> {
    let subgraph = diffuse(graph, &model.embeddings, &model.attention, user, config)?;
    let encoding = subgraph_encoding(&subgraph, &model.embeddings, &model.encoder, config.slope)?;
    let scores = score_with_encoding(&subgraph, graph, &model.embeddings, &encoding.output)?;
    Ok(UserForward {
        subgraph,
        encoding,
        scores,
    })
}

/// Loss of one user and `∂loss/∂S` for every candidate it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct UserObjective {
    pub loss: f64,
    pub used: usize,
    pub skipped: usize,
    /// `(index into scores, ∂loss/∂S)`.
    pub seeds: Vec<(usize, f64)>,
}

/// `−mean log S` over scoreable positives, plus `−mean log(1 − S)` over
/// `negatives` when given. Mirrors [`crate::scoring::user_loss`].
pub fn user_objective(scores: &[CandidateScore], positives: &[EntityId], negatives: &[EntityId]) -> Result<UserObjective> {
    if positives.is_empty() {
        return Err(invalid("user has no positive items"));
    }
    let index: BTreeMap<EntityId, usize> = scores.iter().enumerate().map(|(i, c)| (c.item, i)).collect();
    let mut pos: Vec<usize> = Vec::new();
    let mut distinct = 0;
    let mut seen = alloc::collections::BTreeSet::new();
    for item in positives {
        if seen.insert(*item) {
            distinct += 1;
            if let Some(&i) = index.get(item) {
                pos.push(i);
            }
        }
    }
    if pos.is_empty() {
        return Err(Error::NoScoreablePositive);
    }
    let n = pos.len() as f64;
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(pos.len() + negatives.len());
    for &i in &pos {
        let s = scores[i].score;
        loss -= libm::log(s.max(SCORE_FLOOR)) / n;
        seeds.push((i, if s > SCORE_FLOOR { -1.0 / (n * s) } else { 0.0 }));
    }
    let neg: Vec<usize> = negatives.iter().filter_map(|item| index.get(item).copied()).collect();
    if !neg.is_empty() {
        let m = neg.len() as f64;
        for &i in &neg {
            let rest = 1.0 - scores[i].score;
            loss -= libm::log(rest.max(SCORE_FLOOR)) / m;
            seeds.push((i, if rest > SCORE_FLOOR { 1.0 / (m * rest) } else { 0.0 }));
        }
    }
    Ok(UserObjective {
        loss,
        used: pos.len(),
        skipped: distinct - pos.len(),
        seeds,
    })
}

/// Adds the gradient of one user's loss (given its `∂loss/∂S` seeds) to `acc`.
pub fn backward_user(
    model: &ModelParams,
    fwd: &UserForward,
    seeds: &[(usize, f64)],
    slope: f64,
    acc: &mut Gradients,
) -> Result<()> {
    let d = model.dim();
    let emb = &model.embeddings;
    let sub = &fwd.subgraph;
    let last = sub.steps.len() - 1;
    let repr = &fwd.encoding.output;

    // Score layer: S = w · σ(repr · h_item).
    let mut d_repr = vec![0.0; d];
    let mut dv: Vec<Vec<f64>> = sub.steps.iter().map(|s| vec![0.0; s.selection.len()]).collect();
    for &(idx, ds) in seeds {
        let c = &fwd.scores[idx];
        let dw = ds * c.similarity;
        let dt = ds * c.bridge_weight * c.similarity * (1.0 - c.similarity);
        add_scaled(&mut d_repr, dt, emb.entity(c.item)?);
        acc.add_entity(c.item, dt, repr);
        match &c.source {
            CandidateSource::Bridged(ranks) => ranks.iter().for_each(|&k| dv[last][k] += dw),
            CandidateSource::Member { step, rank } => dv[*step][*rank] += dw,
        }
    }

    // Encoder.
    let tr = &fwd.encoding;
    acc.w4.add_outer(&d_repr, &tr.hidden);
    let da = model.encoder.w4.mul_vec_transposed(&d_repr);
    let dz: Vec<f64> = da
        .iter()
        .zip(&tr.hidden_pre)
        .map(|(g, &z)| g * leaky_relu_grad(z, slope))
        .collect();
    acc.w3.add_outer(&dz, &tr.input);
    let dx = model.encoder.w3.mul_vec_transposed(&dz);
    let mut d_user = dx[..d].to_vec();
    for (s, part) in [(0, &dx[d..2 * d]), (1, &dx[2 * d..])] {
        if let Some(step) = sub.steps.get(s) {
            for &node in step.selected() {
                acc.add_entity(node, 1.0, part);
            }
        }
    }

    // Diffusion steps, last to first.
    let h_user = emb.entity(sub.user)?;
    for s in (0..sub.steps.len()).rev() {
        let step = &sub.steps[s];
        if step.selection.is_empty() || dv[s].iter().all(|&g| g == 0.0) {
            continue;
        }
        let frontier = &step.frontier;
        let att = &step.attention;
        let d_sel = softmax_backward(&step.selection.weights, &dv[s]);
        let mut d_raw = vec![0.0; frontier.candidates.len()];
        for (&pos, g) in step.selection.positions.iter().zip(d_sel) {
            d_raw[pos] = g;
        }
        let mut d_score = vec![0.0; frontier.centrals.len()];
        let mut d_alpha = vec![0.0; frontier.edges.len()];
        for (e, edge) in frontier.edges.iter().enumerate() {
            let g = d_raw[edge.target];
            d_alpha[e] = g * frontier.centrals[edge.central].score;
            d_score[edge.central] += g * att.weights[e];
        }
        let d_gate = softmax_backward(&att.weights, &d_alpha);
        let mut d_query = vec![vec![0.0; d]; frontier.centrals.len()];
        for (e, edge) in frontier.edges.iter().enumerate() {
            let gate = att.gates[e];
            let d_pre = d_gate[e] * gate * (1.0 - gate);
            if d_pre == 0.0 {
                continue;
            }
            let target = frontier.target(edge);
            add_scaled(&mut d_query[edge.central], d_pre, emb.entity(target)?);
            acc.add_entity(target, d_pre, &att.queries[edge.central].query);
        }
        for (ci, central) in frontier.centrals.iter().enumerate() {
            let q = &att.queries[ci];
            acc.w2.add_outer(&d_query[ci], &q.hidden);
            let dh = model.attention.w2.mul_vec_transposed(&d_query[ci]);
            let dz: Vec<f64> = dh
                .iter()
                .zip(&q.hidden_pre)
                .map(|(g, &z)| g * leaky_relu_grad(z, slope))
                .collect();
            let h_central = emb.entity(central.entity)?;
            acc.w1.add_outer(&dz, &concat(&[h_user, h_central]));
            let dx = model.attention.w1.mul_vec_transposed(&dz);
            add_scaled(&mut d_user, 1.0, &dx[..d]);
            acc.add_entity(central.entity, 1.0, &dx[d..]);
        }
        // Centrals of step s are the step s−1 selection, in rank order; the
        // user's starting score is a constant.
        if s > 0 {
            debug_assert_eq!(frontier.centrals.len(), dv[s - 1].len());
            for (ci, g) in d_score.into_iter().enumerate() {
                dv[s - 1][ci] += g;
            }
        }
    }
    acc.add_entity(sub.user, 1.0, &d_user);
    Ok(())
}

/// Generator for stream `stream` of the run's seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Candidates the user never bought, sampled without replacement.
fn sample_negatives(fwd: &UserForward, train: &InteractionSet, user: EntityId, config: &TrainConfig, epoch: usize) -> Vec<EntityId> {
    let pool: Vec<EntityId> = fwd
        .scores
        .iter()
        .map(|c| c.item)
        .filter(|&i| !train.contains(user, i))
        .collect();
    let mut rng = stream_rng(config.seed, ((epoch as u64) << 32) | u64::from(user.0));
    pool.choose_multiple(&mut rng, config.negatives).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    /// Users that contributed a loss term.
    pub users: usize,
    /// Users with no scoreable positive.
    pub skipped_users: usize,
    /// Positives of contributing users that were not candidates.
    pub skipped_positives: usize,
    pub loss_sum: f64,
}

impl BatchStats {
    pub fn mean_loss(&self) -> f64 {
        if self.users == 0 {
            0.0
        } else {
            self.loss_sum / self.users as f64
        }
    }

    pub fn merge(&mut self, other: &BatchStats) {
        self.users += other.users;
        self.skipped_users += other.skipped_users;
        self.skipped_positives += other.skipped_positives;
        self.loss_sum += other.loss_sum;
    }
}

/// Summed (unscaled) gradients and statistics over some users of a batch.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    pub gradients: Gradients,
    pub stats: BatchStats,
}

impl BatchAccumulator {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            gradients: Gradients::zeros(model),
            stats: BatchStats::default(),
        }
    }

    pub fn add_user(
        &mut self,
        model: &ModelParams,
        graph: &KnowledgeGraph,
        train: &InteractionSet,
        config: &TrainConfig,
        epoch: usize,
        user: EntityId,
    ) -> Result<()> {
        let fwd = forward_user(model, graph, user, &config.diffusion())?;
        let negatives = if config.contrastive {
            sample_negatives(&fwd, train, user, config, epoch)
        } else {
            Vec::new()
        };
        let objective = match user_objective(&fwd.scores, train.items(user), &negatives) {
            Ok(o) => o,
            Err(Error::NoScoreablePositive) => {
                self.stats.skipped_users += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        backward_user(model, &fwd, &objective.seeds, config.slope, &mut self.gradients)?;
        self.stats.users += 1;
        self.stats.skipped_positives += objective.skipped;
        self.stats.loss_sum += objective.loss;
        Ok(())
    }

    pub fn merge(&mut self, other: &BatchAccumulator) {
        self.gradients.add(&other.gradients);
        self.stats.merge(&other.stats);
    }

    /// Averages the gradients over contributing users.
    pub fn finish(mut self) -> BatchOutcome {
        if self.stats.users > 0 {
            self.gradients.scale(1.0 / self.stats.users as f64);
        }
        BatchOutcome {
            mean_loss: self.stats.mean_loss(),
            gradients: self.gradients,
            stats: self.stats,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub mean_loss: f64,
    /// Gradient of `mean_loss`.
    pub gradients: Gradients,
    pub stats: BatchStats,
}

/// Mean loss over `users` and its gradient.
pub fn forward_backward(
    users: &[EntityId],
    model: &ModelParams,
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    config: &TrainConfig,
    epoch: usize,
) -> Result<BatchOutcome> {
    let mut acc = BatchAccumulator::new(model);
    for &user in users {
        acc.add_user(model, graph, train, config, epoch, user)?;
    }
    Ok(acc.finish())
}

/// Mean loss only, without gradients.
pub fn batch_loss(
    users: &[EntityId],
    model: &ModelParams,
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    config: &TrainConfig,
    epoch: usize,
) -> Result<BatchStats> {
    let mut stats = BatchStats::default();
    for &user in users {
        let fwd = forward_user(model, graph, user, &config.diffusion())?;
        let negatives = if config.contrastive {
            sample_negatives(&fwd, train, user, config, epoch)
        } else {
            Vec::new()
        };
        match user_objective(&fwd.scores, train.items(user), &negatives) {
            Ok(o) => {
                stats.users += 1;
                stats.skipped_positives += o.skipped;
                stats.loss_sum += o.loss;
            }
            Err(Error::NoScoreablePositive) => stats.skipped_users += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(stats)
}

/// How a batch's forward/backward passes are executed.
pub trait BatchRunner {
    fn run(
        &self,
        users: &[EntityId],
        model: &ModelParams,
        graph: &KnowledgeGraph,
        train: &InteractionSet,
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<BatchOutcome>;
}

/// One user after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl BatchRunner for Serial {
    fn run(
        &self,
        users: &[EntityId],
        model: &ModelParams,
        graph: &KnowledgeGraph,
        train: &InteractionSet,
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<BatchOutcome> {
        forward_backward(users, model, graph, train, config, epoch)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moments for the six parameter blocks (W1, W2, W3, W4,
/// entities, relations).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(model: &ModelParams, learning_rate: f64) -> Self {
        let zeros: Vec<Matrix> = model
            .blocks()
            .iter()
            .map(|b| Matrix::zeros(b.rows(), b.cols()))
            .collect();
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam update. A non-finite gradient leaves both the model
/// and the state untouched.
pub fn adam_step(model: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let shapes_match = model
        .blocks()
        .iter()
        .zip(&state.m)
        .all(|(b, m)| b.shape() == m.shape())
        && grads.w1.shape() == model.attention.w1.shape()
        && grads.w2.shape() == model.attention.w2.shape()
        && grads.w3.shape() == model.encoder.w3.shape()
        && grads.w4.shape() == model.encoder.w4.shape();
    if !shapes_match {
        return Err(invalid("gradient and optimizer shapes do not match the model"));
    }
    let entity_rows = model.embeddings.entity_count();
    if let Some((id, _)) = grads.entities.iter().next_back() {
        if id.index() >= entity_rows {
            return Err(Error::UnknownEntity(id.0));
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(state.beta1, t);
    let c2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    let update = |p: &mut [f64], g: Option<&[f64]>, m: &mut [f64], v: &mut [f64]| {
        for k in 0..p.len() {
            let gk = g.map_or(0.0, |g| g[k]);
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
    };

    let dense = [&grads.w1, &grads.w2, &grads.w3, &grads.w4];
    let dim = model.dim();
    let (m_all, v_all) = (&mut state.m, &mut state.v);
    for (i, block) in model.blocks_mut().into_iter().enumerate() {
        let (m, v) = (m_all[i].as_mut_slice(), v_all[i].as_mut_slice());
        match i {
            0..=3 => update(block.as_mut_slice(), Some(dense[i].as_slice()), m, v),
            4 => {
                for row in 0..block.rows() {
                    let g = grads.entity(EntityId(row as u32));
                    let range = row * dim..(row + 1) * dim;
                    update(block.row_mut(row), g, &mut m[range.clone()], &mut v[range]);
                }
            }
            _ => update(block.as_mut_slice(), None, m, v),
        }
    }
    debug_assert!(model.is_finite());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub stats: BatchStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Trains on the serial runner and returns the checkpoint.
pub fn train(
    graph: &KnowledgeGraph,
    embeddings: EmbeddingTable,
    interactions: &InteractionSet,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    train_with(graph, embeddings, interactions, config, &Serial).map(|o| o.checkpoint)
}

/// Full training loop: seeded W initialization, a seeded user shuffle per
/// epoch, one Adam step per batch. The final parameters are rounded to `f32`
/// so the checkpoint survives a save/load round trip exactly.
pub fn train_with<B: BatchRunner + ?Sized>(
    graph: &KnowledgeGraph,
    embeddings: EmbeddingTable,
    interactions: &InteractionSet,
    config: &TrainConfig,
    runner: &B,
) -> Result<TrainOutcome> {
    config.validate()?;
    if embeddings.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            found: embeddings.dim(),
        });
    }
    if embeddings.entity_count() != graph.entity_count() || embeddings.relation_count() != graph.relation_count() {
        return Err(invalid("embedding table does not cover the graph"));
    }
    if interactions.is_empty() {
        return Err(invalid("no training interactions"));
    }
    let mut model = ModelParams::initialize(
        embeddings,
        config.attention_hidden(),
        config.encoder_hidden(),
        config.seed,
    )?;
    let mut adam = AdamState::new(&model, config.learning_rate);
    let base: Vec<EntityId> = interactions.users().collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order = base.clone();
        order.shuffle(&mut stream_rng(config.seed, (1 << 63) | epoch as u64));
        let mut stats = BatchStats::default();
        for batch in order.chunks(config.batch_size) {
            let outcome = runner.run(batch, &model, graph, interactions, config, epoch)?;
            stats.merge(&outcome.stats);
            if outcome.stats.users > 0 {
                adam_step(&mut model, &outcome.gradients, &mut adam)?;
            }
        }
        if stats.users == 0 {
            return Err(Error::NoScoreablePositive);
        }
        log::info!(
            "epoch {}/{}: mean loss {:.6} over {} users ({} skipped)",
            epoch + 1,
            config.epochs,
            stats.mean_loss(),
            stats.users,
            stats.skipped_users
        );
        history.push(EpochStats {
            epoch,
            mean_loss: stats.mean_loss(),
            stats,
        });
    }
    model.round_to_f32();
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, graph)?,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityKind::*;

    fn tiny() -> (KnowledgeGraph, InteractionSet, ModelParams, TrainConfig) {
        let mut g = KnowledgeGraph::new();
        g.insert(("u", User), "likes", ("p", Property)).unwrap();
        g.insert(("i1", Item), "has", ("p", Property)).unwrap();
        g.insert(("i2", Item), "has", ("p", Property)).unwrap();
        g.insert(("far", Item), "has", ("q", Property)).unwrap();
        let mut train = InteractionSet::new();
        train
            .insert(&g, g.entity_id("u").unwrap(), g.entity_id("i1").unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = EmbeddingTable::uniform(g.entity_count(), g.relation_count(), 4, 0.5, &mut rng).unwrap();
        let model = ModelParams::initialize(emb, 4, 4, 7).unwrap();
        let config = TrainConfig {
            dim: 4,
            batch_size: 4,
            epochs: 3,
            ..TrainConfig::default()
        };
        (g, train, model, config)
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs, c.dim, c.top_n), (256, 10, 100, 100));
        assert_eq!(c.steps, 2);
        assert_eq!(c.learning_rate, 0.001);
        assert!(!c.contrastive);
        c.validate().unwrap();
    }

    #[test]
    fn adam_first_step() {
        let (_, _, mut model, _) = tiny();
        let before = model.clone();
        let mut grads = Gradients::zeros(&model);
        let mut state = AdamState::new(&model, 0.001);
        adam_step(&mut model, &grads, &mut state).unwrap();
        assert_eq!(model.attention, before.attention);
        assert_eq!(state.step, 1);

        let mut state = AdamState::new(&model, 0.001);
        grads.w1.set(0, 0, 0.5);
        let x0 = model.attention.w1.get(0, 0);
        adam_step(&mut model, &grads, &mut state).unwrap();
        assert!((model.attention.w1.get(0, 0) - x0 + 0.001).abs() < 1e-9);
        assert_eq!(model.attention.w1.get(0, 1), before.attention.w1.get(0, 1));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (_, _, mut model, _) = tiny();
        let before = model.clone();
        let mut grads = Gradients::zeros(&model);
        grads.w4.set(0, 0, f64::NAN);
        let mut state = AdamState::new(&model, 0.001);
        assert_eq!(adam_step(&mut model, &grads, &mut state), Err(Error::NonFinite("gradient")));
        assert_eq!(model, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn unreachable_entities_get_no_gradient() {
        let (g, train, model, config) = tiny();
        let out = forward_backward(&[g.entity_id("u").unwrap()], &model, &g, &train, &config, 0).unwrap();
        assert_eq!(out.stats.users, 1);
        assert!(out.gradients.entity(g.entity_id("far").unwrap()).is_none());
        assert!(out.gradients.entity(g.entity_id("q").unwrap()).is_none());
        assert!(out.gradients.entity(g.entity_id("i1").unwrap()).is_some());
    }

    #[test]
    fn one_step_lowers_the_loss() {
        let (g, train, mut model, config) = tiny();
        let users = [g.entity_id("u").unwrap()];
        let out = forward_backward(&users, &model, &g, &train, &config, 0).unwrap();
        let mut state = AdamState::new(&model, 0.01);
        adam_step(&mut model, &out.gradients, &mut state).unwrap();
        let after = batch_loss(&users, &model, &g, &train, &config, 0).unwrap();
        assert!(after.mean_loss() < out.mean_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let (g, set, model, config) = tiny();
        let a = train_with(&g, model.embeddings.clone(), &set, &config, &Serial).unwrap();
        let b = train_with(&g, model.embeddings.clone(), &set, &config, &Serial).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.history.len(), 3);
        let wrong = TrainConfig { dim: 5, ..config };
        assert!(matches!(
            train(&g, model.embeddings, &set, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
