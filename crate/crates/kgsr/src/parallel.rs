//! Scoped-thread batch runner and evaluation.
//!
//! Users are split into contiguous chunks, one per thread, and the partial
//! results are merged in chunk order, so a fixed thread count always gives
//! the same floating-point result. Different thread counts can differ in the
//! last bits because the gradient sums associate differently.

use std::thread;

use kgsr_core::diffusion::DiffusionConfig;
use kgsr_core::graph::{EntityId, KnowledgeGraph};
use kgsr_core::interactions::InteractionSet;
use kgsr_core::metrics::{catalog, evaluate_user, EvalReport, RankingMetrics};
use kgsr_core::model::ModelParams;
use kgsr_core::train::{forward_backward, BatchAccumulator, BatchOutcome, BatchRunner, TrainConfig};

fn chunks<T>(xs: &[T], threads: usize) -> impl Iterator<Item = &[T]> {
    let size = xs.len().div_ceil(threads.max(1)).max(1);
    xs.chunks(size)
}

#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub threads: usize,
}

impl BatchRunner for Threaded {
    fn run(
        &self,
        users: &[EntityId],
        model: &ModelParams,
        graph: &KnowledgeGraph,
        train: &InteractionSet,
        config: &TrainConfig,
        epoch: usize,
    ) -> kgsr_core::Result<BatchOutcome> {
        if self.threads <= 1 || users.len() < 2 {
            return forward_backward(users, model, graph, train, config, epoch);
        }
        let parts: Vec<kgsr_core::Result<BatchAccumulator>> = thread::scope(|s| {
            let handles: Vec<_> = chunks(users, self.threads)
                .map(|chunk| {
                    s.spawn(move || {
                        let mut acc = BatchAccumulator::new(model);
                        for &user in chunk {
                            acc.add_user(model, graph, train, config, epoch, user)?;
                        }
                        Ok(acc)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut total = BatchAccumulator::new(model);
        for part in parts {
            total.merge(&part?);
        }
        Ok(total.finish())
    }
}

/// Same report as `kgsr_core::metrics::evaluate_model`, computed on
/// `threads` workers. Per-user results are reassembled in user order before
/// averaging, so the report does not depend on the thread count.
pub fn evaluate_model_threaded(
    model: &ModelParams,
    graph: &KnowledgeGraph,
    train: &InteractionSet,
    test: &InteractionSet,
    k: usize,
    config: &DiffusionConfig,
    threads: usize,
) -> kgsr_core::Result<EvalReport> {
    if test.is_empty() {
        return Err(kgsr_core::Error::InvalidArgument("test set is empty".into()));
    }
    if k == 0 {
        return Err(kgsr_core::Error::InvalidArgument("K must be at least 1".into()));
    }
    let items = catalog(graph);
    let users: Vec<EntityId> = test.users().collect();
    let eval = |chunk: &[EntityId]| -> kgsr_core::Result<Vec<Option<RankingMetrics>>> {
        chunk
            .iter()
            .map(|&u| evaluate_user(model, graph, train, test, &items, u, k, config))
            .collect()
    };
    let parts: Vec<_> = if threads <= 1 {
        vec![eval(&users)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = chunks(&users, threads).map(|c| s.spawn(move || eval(c))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    };
    let mut results = Vec::with_capacity(users.len());
    for part in parts {
        results.extend(part?);
    }
    Ok(EvalReport::from_users(k, &results))
}
