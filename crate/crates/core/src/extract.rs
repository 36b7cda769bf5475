//! Turning review text into new graph edges.
//!
//! Extraction yields `(relation, value)` pairs tagged with the review they
//! came from. What subject the value attaches to is a property of the
//! configured target, so it is resolved only at injection time.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Triple};

/// Relation minted for a positive sentiment extraction.
pub const POSITIVE_RELATION: &str = "positive";
/// Relation minted for a negative sentiment extraction.
pub const NEGATIVE_RELATION: &str = "negative";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Extractor {
    Llm,
    Lexicon,
}

/// Who an extracted value attaches to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubjectRule {
    /// The review's author.
    User,
    /// The reviewed item.
    Item,
    /// The value extracted from the same review under another relation,
    /// e.g. a brand belonging to the product the user mentioned liking.
    ValueOf(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectionRule {
    /// `subject —relation→ value`, the value being a property entity.
    Property { subject: SubjectRule },
    /// A `Positive` / `Negative` value becomes `user —positive→ item` or
    /// `user —negative→ item`.
    Sentiment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionTarget {
    pub name: String,
    /// Relation name the target mints; unique across targets.
    pub relation: String,
    pub rule: InjectionRule,
    /// Extra guidance appended to the extraction prompt.
    pub instruction: Option<String>,
}

impl ExtractionTarget {
    pub fn property(name: &str, relation: &str, subject: SubjectRule) -> Self {
        Self {
            name: name.into(),
            relation: relation.into(),
            rule: InjectionRule::Property { subject },
            instruction: None,
        }
    }

    pub fn sentiment(name: &str, relation: &str) -> Self {
        Self {
            name: name.into(),
            relation: relation.into(),
            rule: InjectionRule::Sentiment,
            instruction: None,
        }
    }

    /// Values extracted for this target are always property entities.
    pub fn value_kind(&self) -> EntityKind {
        EntityKind::Property
    }
}

/// Validated, non-empty target list keyed by relation name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSet {
    targets: Vec<ExtractionTarget>,
}

impl TargetSet {
    pub fn new(targets: Vec<ExtractionTarget>) -> Result<Self> {
        if targets.is_empty() {
            return Err(invalid("no extraction targets configured"));
        }
        let mut seen = BTreeSet::new();
        for t in &targets {
            if t.relation.trim().is_empty() || t.name.trim().is_empty() {
                return Err(invalid("extraction target with an empty name or relation"));
            }
            if !seen.insert(t.relation.as_str()) {
                return Err(invalid(format!("relation `{}` is minted by two targets", t.relation)));
            }
        }
        for t in &targets {
            if let InjectionRule::Property {
                subject: SubjectRule::ValueOf(other),
            } = &t.rule
            {
                if !seen.contains(other.as_str()) || other == &t.relation {
                    return Err(invalid(format!(
                        "target `{}` takes its subject from `{other}`, which is not another configured target",
                        t.name
                    )));
                }
            }
        }
        Ok(Self { targets })
    }

    pub fn get(&self, relation: &str) -> Option<&ExtractionTarget> {
        self.targets.iter().find(|t| t.relation == relation)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExtractionTarget> {
        self.targets.iter()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Target names joined for display in prompts.
    pub fn names(&self) -> String {
        self.targets.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExtractedTriple {
    pub relation: String,
    pub value: String,
    /// Index of the source review.
    pub review: usize,
    pub extractor: Extractor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub keyword: String,
    pub relation: String,
    pub value: String,
}

/// Keyword table for the offline extractor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    tokens: Vec<Vec<String>>,
}

/// Lower-cased alphanumeric runs; everything else separates words.
fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(entries.len());
        for e in &entries {
            let t = words(&e.keyword);
            if t.is_empty() {
                return Err(invalid(format!("lexicon keyword `{}` has no words", e.keyword)));
            }
            if e.relation.trim().is_empty() || e.value.trim().is_empty() {
                return Err(invalid(format!("lexicon entry `{}` has an empty relation or value", e.keyword)));
            }
            tokens.push(t);
        }
        Ok(Self { entries, tokens })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic keyword scan: case-insensitive, whole words, one triple per
/// distinct `(relation, value)`, ordered by first occurrence in the text.
pub fn offline_extract(review: usize, text: &str, lexicon: &Lexicon) -> Vec<ExtractedTriple> {
    let text_words = words(text);
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for (k, kw) in lexicon.tokens.iter().enumerate() {
        if let Some(pos) = text_words.windows(kw.len()).position(|w| w == kw.as_slice()) {
            hits.push((pos, k));
        }
    }
    hits.sort_unstable();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (_, k) in hits {
        let e = &lexicon.entries[k];
        if seen.insert((e.relation.as_str(), e.value.as_str())) {
            out.push(ExtractedTriple {
                relation: e.relation.clone(),
                value: e.value.clone(),
                review,
                extractor: Extractor::Lexicon,
            });
        }
    }
    out
}

/// Extractions parsed from a chat reply, plus how many lines were dropped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedReply {
    pub triples: Vec<ExtractedTriple>,
    pub warnings: usize,
}

/// Reads `relation<TAB>value` lines. Blank lines are ignored; lines that do
/// not fit the format, or name a relation outside `accepted`, are dropped
/// and counted.
pub fn parse_extraction_reply(reply: &str, review: usize, accepted: &[&str]) -> ParsedReply {
    let mut out = ParsedReply::default();
    let mut seen = BTreeSet::new();
    for line in reply.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line.split_once('\t').and_then(|(r, v)| {
            let (r, v) = (r.trim(), v.trim());
            (!r.is_empty() && !v.is_empty() && !v.contains('\t') && accepted.contains(&r)).then_some((r, v))
        });
        match parsed {
            Some((r, v)) => {
                if seen.insert((r.to_string(), v.to_string())) {
                    out.triples.push(ExtractedTriple {
                        relation: r.into(),
                        value: v.into(),
                        review,
                        extractor: Extractor::Llm,
                    });
                }
            }
            None => out.warnings += 1,
        }
    }
    if out.warnings > 0 {
        log::warn!("review {review}: dropped {} unparseable reply line(s)", out.warnings);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InjectionReport {
    /// Triples actually added.
    pub added: usize,
    /// Triples that were already present.
    pub duplicates: usize,
    /// Extractions that produced no triple (a value-of subject with no
    /// matching value, or a sentiment other than positive/negative).
    pub skipped: usize,
    /// Reviews that yielded both a positive and a negative sentiment; both
    /// edges are kept.
    pub conflicts: Vec<usize>,
}

/// Maps a review index to its `(user, item)` pair.
pub type ReviewIndex = BTreeMap<usize, (EntityId, EntityId)>;

type Endpoint = (String, EntityKind);

/// Adds the extracted knowledge to `graph` following each target's rule.
/// All extractions are checked before any edge is written, so an error
/// leaves the graph unchanged.
pub fn inject_triples(
    graph: &mut KnowledgeGraph,
    extracted: &[ExtractedTriple],
    targets: &TargetSet,
    reviews: &ReviewIndex,
) -> Result<InjectionReport> {
    let mut report = InjectionReport::default();
    let mut by_review: BTreeMap<usize, Vec<&ExtractedTriple>> = BTreeMap::new();
    for t in extracted {
        if targets.get(&t.relation).is_none() {
            return Err(Error::UnconfiguredTarget(t.relation.clone()));
        }
        if t.value.trim().is_empty() {
            return Err(invalid(format!("empty value for `{}` in review {}", t.relation, t.review)));
        }
        if !reviews.contains_key(&t.review) {
            return Err(Error::UnresolvedReview(t.review));
        }
        by_review.entry(t.review).or_default().push(t);
    }

    let mut planned: Vec<(Endpoint, String, Endpoint)> = Vec::new();
    for (&review, items) in &by_review {
        let (user, item) = reviews[&review];
        let user_end = (graph.entity_name(user)?.to_string(), graph.kind(user)?);
        let item_end = (graph.entity_name(item)?.to_string(), graph.kind(item)?);
        if user_end.1 != EntityKind::User || item_end.1 != EntityKind::Item {
            return Err(invalid(format!("review {review} is not attached to a (user, item) pair")));
        }
        let mut sentiments = BTreeSet::new();
        for t in items {
            let target = targets.get(&t.relation).expect("checked above");
            let value = (t.value.trim().to_string(), EntityKind::Property);
            match &target.rule {
                InjectionRule::Property { subject } => {
                    let subjects: Vec<Endpoint> = match subject {
                        SubjectRule::User => alloc::vec![user_end.clone()],
                        SubjectRule::Item => alloc::vec![item_end.clone()],
                        SubjectRule::ValueOf(rel) => items
                            .iter()
                            .filter(|o| &o.relation == rel)
                            .map(|o| (o.value.trim().to_string(), EntityKind::Property))
                            .collect(),
                    };
                    if subjects.is_empty() {
                        report.skipped += 1;
                    }
                    for s in subjects {
                        planned.push((s, t.relation.clone(), value.clone()));
                    }
                }
                InjectionRule::Sentiment => {
                    let relation = match t.value.trim().to_lowercase().as_str() {
                        "positive" => POSITIVE_RELATION,
                        "negative" => NEGATIVE_RELATION,
                        _ => {
                            report.skipped += 1;
                            continue;
                        }
                    };
                    sentiments.insert(relation);
                    planned.push((user_end.clone(), relation.into(), item_end.clone()));
                }
            }
        }
        if sentiments.len() > 1 {
            log::warn!("review {review} expresses both positive and negative sentiment; keeping both edges");
            report.conflicts.push(review);
        }
    }

    // Kind check against the graph and within the plan.
    let mut kinds: BTreeMap<&str, EntityKind> = BTreeMap::new();
    for (h, _, t) in &planned {
        for (name, kind) in [h, t] {
            let existing = graph
                .entity_id(name)
                .map(|id| graph.kind(id))
                .transpose()?
                .or_else(|| kinds.get(name.as_str()).copied());
            if let Some(existing) = existing {
                if existing != *kind {
                    return Err(Error::KindConflict {
                        name: name.clone(),
                        existing,
                        requested: *kind,
                    });
                }
            }
            kinds.insert(name, *kind);
        }
        if h.0 == t.0 {
            return Err(Error::SelfLoop(h.0.clone()));
        }
    }

    for (h, r, t) in planned {
        let head = graph.intern_entity(&h.0, h.1)?;
        let tail = graph.intern_entity(&t.0, t.1)?;
        let rel = graph.intern_relation(&r);
        if graph.add_triple(Triple::new(head, rel, tail))? {
            report.added += 1;
        } else {
            report.duplicates += 1;
        }
    }
    Ok(report)
}
