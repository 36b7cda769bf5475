//! Flat-file formats: triples, interactions, lexicon, extraction targets,
//! reviews and recommendation output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use kgsr_core::extract::{ExtractionTarget, InjectionRule, Lexicon, LexiconEntry, SubjectRule, TargetSet};
use kgsr_core::graph::{EntityKind, KnowledgeGraph};
use kgsr_core::interactions::InteractionSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Content lines as `(1-based line number, text)`, skipping blanks and
/// `#` comments.
fn records<R: Read>(reader: R, origin: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

fn fields<'a>(line: &'a str, n: usize, what: &str, origin: &Path, no: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
    if parts.len() != n {
        return Err(Error::parse(
            origin,
            no,
            format!("expected {n} tab-separated fields ({what}), found {}", parts.len()),
        ));
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::parse(origin, no, format!("field {} is empty", i + 1)));
    }
    Ok(parts)
}

/// Reads `head, head_kind, relation, tail, tail_kind` lines into `graph`.
/// Returns the number of new triples.
pub fn read_triples_into<R: Read>(graph: &mut KnowledgeGraph, reader: R, origin: &Path) -> Result<usize> {
    let mut added = 0;
    for (no, line) in records(reader, origin)? {
        let f = fields(&line, 5, "head, head kind, relation, tail, tail kind", origin, no)?;
        let kind = |s: &str| {
            s.to_ascii_lowercase()
                .parse::<EntityKind>()
                .map_err(|e| Error::parse(origin, no, e.to_string()))
        };
        let (hk, tk) = (kind(f[1])?, kind(f[4])?);
        let new = graph
            .insert((f[0], hk), f[2], (f[3], tk))
            .map_err(|source| Error::Data {
                path: origin.into(),
                line: no,
                source,
            })?;
        added += usize::from(new);
    }
    Ok(added)
}

pub fn read_triples(path: &Path) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::new();
    read_triples_into(&mut graph, open(path)?, path)?;
    Ok(graph)
}

pub fn write_triples<W: Write>(graph: &KnowledgeGraph, mut out: W) -> std::io::Result<()> {
    for t in graph.triples() {
        let name = |e| graph.entity_name(e).expect("stored triple");
        let kind = |e| graph.kind(e).expect("stored triple");
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            name(t.head),
            kind(t.head),
            graph.relation_name(t.relation).expect("stored triple"),
            name(t.tail),
            kind(t.tail)
        )?;
    }
    out.flush()
}

pub fn save_triples(graph: &KnowledgeGraph, path: &Path) -> Result<()> {
    write_triples(graph, create(path)?).map_err(|e| Error::io(path, e))
}

/// Reads `user, item` lines; both names must already be in the graph with
/// the right kinds.
pub fn parse_interactions<R: Read>(graph: &KnowledgeGraph, reader: R, origin: &Path) -> Result<InteractionSet> {
    let mut set = InteractionSet::new();
    for (no, line) in records(reader, origin)? {
        let f = fields(&line, 2, "user, item", origin, no)?;
        let data = |source| Error::Data {
            path: origin.into(),
            line: no,
            source,
        };
        let lookup = |name: &str| {
            graph
                .entity_id(name)
                .ok_or_else(|| data(kgsr_core::Error::UnknownName(name.into())))
        };
        let (u, i) = (lookup(f[0])?, lookup(f[1])?);
        set.insert(graph, u, i).map_err(data)?;
    }
    Ok(set)
}

pub fn read_interactions(graph: &KnowledgeGraph, path: &Path) -> Result<InteractionSet> {
    parse_interactions(graph, open(path)?, path)
}

pub fn save_interactions(graph: &KnowledgeGraph, set: &InteractionSet, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let mut write = || -> std::io::Result<()> {
        for (user, items) in set.iter() {
            for &item in items {
                writeln!(
                    out,
                    "{}\t{}",
                    graph.entity_name(user).expect("known user"),
                    graph.entity_name(item).expect("known item")
                )?;
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn parse_lexicon<R: Read>(reader: R, origin: &Path) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for (no, line) in records(reader, origin)? {
        let f = fields(&line, 3, "keyword, relation, value", origin, no)?;
        entries.push(LexiconEntry {
            keyword: f[0].into(),
            relation: f[1].into(),
            value: f[2].into(),
        });
    }
    Ok(Lexicon::new(entries)?)
}

pub fn read_lexicon(path: &Path) -> Result<Lexicon> {
    parse_lexicon(open(path)?, path)
}

/// `name, relation, rule[, instruction]` where rule is `user`, `item`,
/// `value:<relation>` or `sentiment`.
pub fn parse_targets<R: Read>(reader: R, origin: &Path) -> Result<TargetSet> {
    let mut targets = Vec::new();
    for (no, line) in records(reader, origin)? {
        let n = line.split('\t').count();
        let f = fields(&line, n.clamp(3, 4), "name, relation, rule[, instruction]", origin, no)?;
        let rule = match f[2] {
            "user" => InjectionRule::Property {
                subject: SubjectRule::User,
            },
            "item" => InjectionRule::Property {
                subject: SubjectRule::Item,
            },
            "sentiment" => InjectionRule::Sentiment,
            other => match other.strip_prefix("value:") {
                Some(rel) if !rel.is_empty() => InjectionRule::Property {
                    subject: SubjectRule::ValueOf(rel.into()),
                },
                _ => {
                    return Err(Error::parse(
                        origin,
                        no,
                        format!("unknown rule `{other}` (expected user, item, value:<relation> or sentiment)"),
                    ))
                }
            },
        };
        targets.push(ExtractionTarget {
            name: f[0].into(),
            relation: f[1].into(),
            rule,
            instruction: f.get(3).map(|s| s.to_string()),
        });
    }
    Ok(TargetSet::new(targets)?)
}

pub fn read_targets(path: &Path) -> Result<TargetSet> {
    parse_targets(open(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub user: String,
    pub item: String,
    pub text: String,
}

/// One JSON object per line; a review's id is its 0-based position among
/// the non-blank lines.
pub fn parse_reviews<R: Read>(reader: R, origin: &Path) -> Result<Vec<Review>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let review: Review = serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        out.push(review);
    }
    Ok(out)
}

pub fn read_reviews(path: &Path) -> Result<Vec<Review>> {
    parse_reviews(open(path)?, path)
}

pub fn write_reviews<W: Write>(reviews: &[Review], mut out: W) -> std::io::Result<()> {
    for r in reviews {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// One output row of `recommend`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationRow {
    pub user: String,
    pub rank: usize,
    pub item: String,
    pub score: f64,
    pub bridge_weight: f64,
    pub similarity: f64,
    /// Best explanation path in arrow form; empty when none.
    pub path: String,
}

pub const RECOMMENDATION_HEADER: &str = "user\trank\titem\tscore\tw\tsim\tpath";

pub fn write_recommendations<W: Write>(rows: &[RecommendationRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RECOMMENDATION_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{}",
            r.user, r.rank, r.item, r.score, r.bridge_weight, r.similarity, r.path
        )?;
    }
    out.flush()
}
