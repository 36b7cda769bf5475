//! The pipeline stages behind each subcommand.
//!
//! Stages talk through fixed file names in the work directory:
//!
//! | file              | written by | read by                              |
//! |-------------------|------------|--------------------------------------|
//! | `base.tsv`        | ingest     | augment                              |
//! | `graph.tsv`       | ingest, augment | pretrain, train, evaluate, recommend, explain |
//! | `train.tsv`       | ingest     | augment, train, evaluate, recommend  |
//! | `test.tsv`        | ingest     | augment, evaluate                    |
//! | `pretrained.ckpt` | pretrain   | train                                |
//! | `model.ckpt`      | train      | evaluate, recommend, explain         |
//!
//! `base.tsv` is the input graph plus the training purchases. Augmenting
//! always starts from it, so re-running a stage rewrites identical files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use kgsr_core::diffusion::DiffusionConfig;
use kgsr_core::extract::{inject_triples, offline_extract, InjectionReport, ReviewIndex};
use kgsr_core::graph::{EntityId, EntityKind, KnowledgeGraph};
use kgsr_core::interactions::InteractionSet;
use kgsr_core::metrics::random_ranking_report;
use kgsr_core::model::{Checkpoint, ModelParams};
use kgsr_core::paths::extract_paths;
use kgsr_core::prompt::{extract_review_triples, generate_explanation, ChatClient, Explanation};
use kgsr_core::train::{forward_user, stream_rng, train_with, TrainOutcome};
use kgsr_core::transe::transe_pretrain;

use crate::chat::HttpChatClient;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::formats::{self, RecommendationRow};
use crate::parallel::{evaluate_model_threaded, Threaded};
use crate::report::{Report, ReportRow};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn base(&self) -> PathBuf {
        self.dir.join("base.tsv")
    }

    pub fn graph(&self) -> PathBuf {
        self.dir.join("graph.tsv")
    }

    pub fn train(&self) -> PathBuf {
        self.dir.join("train.tsv")
    }

    pub fn test(&self) -> PathBuf {
        self.dir.join("test.tsv")
    }

    pub fn pretrained(&self) -> PathBuf {
        self.dir.join("pretrained.ckpt")
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn recommendations(&self) -> PathBuf {
        self.dir.join("recommendations.tsv")
    }
}

fn workspace(cfg: &PipelineConfig) -> Workspace {
    Workspace::new(&cfg.paths.work_dir)
}

fn model_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| workspace(cfg).model())
}

/// A configured input that must exist.
fn input<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("missing input: set `{key}` (flag --{})", key.replace('_', "-"))))?;
    if !p.is_file() {
        return Err(Error::Usage(format!("input file {} does not exist", p.display())));
    }
    Ok(p)
}

/// A file an earlier stage should have produced.
fn produced(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Usage(format!("{} does not exist; run `kgsr {stage}` first", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub entities: [usize; 3],
    pub triples: usize,
    pub train: usize,
    pub test: usize,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let triples = input(&cfg.paths.triples, "triples")?;
    let interactions = input(&cfg.paths.interactions, "interactions")?;
    let mut graph = formats::read_triples(triples)?;
    let all = formats::read_interactions(&graph, interactions)?;
    let (train, test) = all.split(cfg.split, cfg.seed)?;
    graph.add_interactions(&train)?;
    let ws = workspace(cfg);
    formats::save_triples(&graph, &ws.base())?;
    formats::save_triples(&graph, &ws.graph())?;
    formats::save_interactions(&graph, &train, &ws.train())?;
    formats::save_interactions(&graph, &test, &ws.test())?;
    Ok(IngestSummary {
        entities: graph.kind_counts(),
        triples: graph.triple_count(),
        train: train.len(),
        test: test.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Offline,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AugmentSummary {
    pub reviews: usize,
    /// Reviews of held-out purchases, left out so the graph cannot leak them.
    pub held_out_reviews: usize,
    pub extracted: usize,
    pub warnings: usize,
    pub injection: InjectionReport,
}

/// Reads the graph and the split written by `ingest`.
fn load_stage_data(ws: &Workspace, graph_path: &Path) -> Result<(KnowledgeGraph, InteractionSet, InteractionSet)> {
    let graph = formats::read_triples(&produced(graph_path.to_path_buf(), "ingest")?)?;
    let train = formats::read_interactions(&graph, &produced(ws.train(), "ingest")?)?;
    let test = formats::read_interactions(&graph, &produced(ws.test(), "ingest")?)?;
    Ok((graph, train, test))
}

/// Augments `base.tsv` with knowledge from the reviews and writes
/// `graph.tsv`. The LLM mode checks its API key before reading anything.
pub fn augment(cfg: &PipelineConfig, mode: AugmentMode) -> Result<AugmentSummary> {
    let client = match mode {
        AugmentMode::Llm => Some(HttpChatClient::from_env(&cfg.llm)?),
        AugmentMode::Offline => None,
    };
    let reviews_path = input(&cfg.paths.reviews, "reviews")?;
    let targets = formats::read_targets(input(&cfg.paths.targets, "targets")?)?;
    let lexicon = match mode {
        AugmentMode::Offline => Some(formats::read_lexicon(input(&cfg.paths.lexicon, "lexicon")?)?),
        AugmentMode::Llm => None,
    };
    let ws = workspace(cfg);
    let (mut graph, _, test) = load_stage_data(&ws, &ws.base())?;
    let reviews = formats::read_reviews(reviews_path)?;

    let mut summary = AugmentSummary {
        reviews: reviews.len(),
        ..AugmentSummary::default()
    };
    let mut index = ReviewIndex::new();
    let mut extracted = Vec::new();
    for (id, review) in reviews.iter().enumerate() {
        let resolve = |name: &str, kind: EntityKind| -> Result<EntityId> {
            let e = graph.entity_id(name).ok_or_else(|| Error::Data {
                path: reviews_path.into(),
                line: id + 1,
                source: kgsr_core::Error::UnknownName(name.into()),
            })?;
            if graph.kind(e)? != kind {
                return Err(Error::Data {
                    path: reviews_path.into(),
                    line: id + 1,
                    source: kgsr_core::Error::WrongKind {
                        name: name.into(),
                        expected: kind,
                        found: graph.kind(e)?,
                    },
                });
            }
            Ok(e)
        };
        let (user, item) = (resolve(&review.user, EntityKind::User)?, resolve(&review.item, EntityKind::Item)?);
        if test.contains(user, item) {
            summary.held_out_reviews += 1;
            continue;
        }
        index.insert(id, (user, item));
        match (&client, &lexicon) {
            (Some(client), _) => {
                let r = extract_review_triples(id, &review.text, &targets, client)?;
                summary.warnings += r.warnings;
                extracted.extend(r.triples);
            }
            (None, Some(lexicon)) => extracted.extend(
                offline_extract(id, &review.text, lexicon)
                    .into_iter()
                    .filter(|t| targets.get(&t.relation).is_some()),
            ),
            (None, None) => unreachable!("one extractor is always configured"),
        }
    }
    summary.extracted = extracted.len();
    summary.injection = inject_triples(&mut graph, &extracted, &targets, &index)?;
    formats::save_triples(&graph, &ws.graph())?;
    Ok(summary)
}

/// TransE embeddings plus freshly initialized attention and encoder
/// weights, saved as `pretrained.ckpt`.
pub fn pretrain(cfg: &PipelineConfig) -> Result<Checkpoint> {
    let ws = workspace(cfg);
    let graph = formats::read_triples(&produced(ws.graph(), "ingest")?)?;
    let embeddings = transe_pretrain(&graph, &cfg.transe)?;
    let mut model = ModelParams::initialize(
        embeddings,
        cfg.train.attention_hidden(),
        cfg.train.encoder_hidden(),
        cfg.seed,
    )?;
    model.round_to_f32();
    let ckpt = Checkpoint::new(model, &graph)?;
    save_checkpoint(&ckpt, &ws.pretrained())?;
    Ok(ckpt)
}

pub fn train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let ws = workspace(cfg);
    let (graph, train, _) = load_stage_data(&ws, &ws.graph())?;
    let pre = load_checkpoint(&produced(ws.pretrained(), "pretrain")?)?;
    pre.check_graph(&graph)?;
    let outcome = train_with(
        &graph,
        pre.model.embeddings,
        &train,
        &cfg.train,
        &Threaded { threads: cfg.threads },
    )?;
    save_checkpoint(&outcome.checkpoint, &model_path(cfg))?;
    Ok(outcome)
}

fn load_model(cfg: &PipelineConfig, graph: &KnowledgeGraph) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(&produced(model_path(cfg), "train")?)?;
    ckpt.check_graph(graph)?;
    Ok(ckpt)
}

/// One report row per subgraph size (`top_n` when `sizes` is empty), plus a
/// random-ranking row when `baseline` is set. Writes the JSON report.
pub fn evaluate(cfg: &PipelineConfig, sizes: &[usize], baseline: bool) -> Result<Report> {
    let ws = workspace(cfg);
    let (graph, train, test) = load_stage_data(&ws, &ws.graph())?;
    let ckpt = load_model(cfg, &graph)?;
    let sizes = if sizes.is_empty() { vec![cfg.train.top_n] } else { sizes.to_vec() };
    let mut rows = Vec::new();
    for n in sizes {
        let diffusion = DiffusionConfig {
            top_n: n,
            ..cfg.train.diffusion()
        };
        let r = evaluate_model_threaded(&ckpt.model, &graph, &train, &test, cfg.k, &diffusion, cfg.threads)?;
        rows.push(ReportRow::new(format!("N={n}"), &r));
    }
    if baseline {
        let r = random_ranking_report(&graph, &train, &test, cfg.k, &mut stream_rng(cfg.seed, u64::MAX))?;
        rows.push(ReportRow::new("random", &r));
    }
    let report = Report::new(cfg.k, rows);
    let out = cfg.paths.output.clone().unwrap_or_else(|| ws.report());
    let mut w = formats::create(&out)?;
    std::io::Write::write_all(&mut w, report.to_json().as_bytes())
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|e| Error::io(&out, e))?;
    Ok(report)
}

fn user_id(graph: &KnowledgeGraph, name: &str) -> Result<EntityId> {
    let id = graph
        .entity_id(name)
        .ok_or_else(|| Error::Usage(format!("unknown user `{name}`")))?;
    if graph.kind(id)? != EntityKind::User {
        return Err(Error::Usage(format!("`{name}` is not a user")));
    }
    Ok(id)
}

/// Top-K scored candidates per user (or for one user), training items
/// removed, each with its best reasoning path.
pub fn recommend(cfg: &PipelineConfig, user: Option<&str>) -> Result<Vec<RecommendationRow>> {
    let ws = workspace(cfg);
    let (graph, train, _) = load_stage_data(&ws, &ws.graph())?;
    let ckpt = load_model(cfg, &graph)?;
    let users: Vec<EntityId> = match user {
        Some(name) => vec![user_id(&graph, name)?],
        None => graph.entities_of_kind(EntityKind::User).collect(),
    };
    let diffusion = cfg.train.diffusion();
    let mut rows = Vec::new();
    for u in users {
        let fwd = forward_user(&ckpt.model, &graph, u, &diffusion)?;
        let owned: BTreeSet<EntityId> = train.item_set(u);
        let name = graph.entity_name(u)?.to_string();
        for (rank, c) in fwd.scores.iter().filter(|c| !owned.contains(&c.item)).take(cfg.k).enumerate() {
            let path = extract_paths(&fwd.subgraph, &graph, c.item, 1)?
                .first()
                .map(|p| p.render(&graph))
                .transpose()?
                .unwrap_or_default();
            rows.push(RecommendationRow {
                user: name.clone(),
                rank: rank + 1,
                item: graph.entity_name(c.item)?.to_string(),
                score: c.score,
                bridge_weight: c.bridge_weight,
                similarity: c.similarity,
                path,
            });
        }
    }
    let out = cfg.paths.output.clone().unwrap_or_else(|| ws.recommendations());
    formats::write_recommendations(&rows, formats::create(&out)?).map_err(|e| Error::io(&out, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedPath {
    pub path: String,
    pub weight: f64,
    pub explanation: Explanation,
}

/// Explains why `item` is recommended to `user` along up to `limit` paths.
pub fn explain(
    cfg: &PipelineConfig,
    user: &str,
    item: &str,
    limit: usize,
    client: Option<&dyn ChatClient>,
) -> Result<Vec<ExplainedPath>> {
    let ws = workspace(cfg);
    let graph = formats::read_triples(&produced(ws.graph(), "ingest")?)?;
    let ckpt = load_model(cfg, &graph)?;
    let u = user_id(&graph, user)?;
    let i = graph
        .entity_id(item)
        .ok_or_else(|| Error::Usage(format!("unknown item `{item}`")))?;
    let targets = match &cfg.paths.targets {
        Some(p) if p.is_file() => formats::read_targets(p)?.names(),
        _ => String::new(),
    };
    let fwd = forward_user(&ckpt.model, &graph, u, &cfg.train.diffusion())?;
    let mut out = Vec::new();
    for p in extract_paths(&fwd.subgraph, &graph, i, limit.max(1))? {
        out.push(ExplainedPath {
            path: p.render(&graph)?,
            weight: p.weight,
            explanation: generate_explanation(&p, &graph, &targets, client)?,
        });
    }
    Ok(out)
}
