//! Prompt templates, the chat-client seam, and explanation rendering.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::extract::{parse_extraction_reply, ExtractedTriple, ExtractionTarget, InjectionRule, TargetSet};
use crate::graph::KnowledgeGraph;
use crate::paths::ExplanationPath;

pub const REVIEW: &str = "<Review>";
pub const TARGETS: &str = "<targets>";
pub const PATH: &str = "<path>";
pub const ITEM_TO_USER: &str = "<item->user>";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(&'static str),
}

/// A template whose `<...>` placeholders are all declared up front. Every
/// `<` in the text must open one of them, and rendering needs a value for
/// each, so a rendered prompt never carries a stray placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
    placeholders: Vec<&'static str>,
}

impl PromptTemplate {
    pub fn new(text: &str, placeholders: &[&'static str]) -> Result<Self> {
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(at) = rest.find('<') {
            let tail = &rest[at..];
            let slot = placeholders
                .iter()
                .copied()
                .filter(|p| tail.starts_with(p))
                .max_by_key(|p| p.len())
                .ok_or_else(|| {
                    let snippet: String = tail.chars().take(16).collect();
                    Error::Template(format!("undeclared placeholder at `{snippet}`"))
                })?;
            if at > 0 {
                segments.push(Segment::Text(rest[..at].into()));
            }
            segments.push(Segment::Slot(slot));
            rest = &tail[slot.len()..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.into()));
        }
        let used: Vec<&'static str> = placeholders
            .iter()
            .copied()
            .filter(|p| segments.contains(&Segment::Slot(p)))
            .collect();
        Ok(Self {
            segments,
            placeholders: used,
        })
    }

    /// Placeholders that occur in the text.
    pub fn placeholders(&self) -> &[&'static str] {
        &self.placeholders
    }

    /// Substitutes every placeholder in one pass; bound values are inserted
    /// verbatim and never rescanned.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String> {
        for p in &self.placeholders {
            if !bindings.iter().any(|(k, _)| k == p) {
                return Err(Error::Template(format!("placeholder {p} is not bound")));
            }
        }
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(p) => {
                    let value = bindings.iter().find(|(k, _)| k == p).map(|(_, v)| *v).unwrap_or_default();
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

const ENTITY_EXTRACTION: &str = "From the review \"<Review>\", pinpoint significant dates, the events or action as relations. I will provide you some examples.

Answer only for the target \"<targets>\". Write one finding per line as the relation name, a tab character, and the value. Write nothing else.

Example
Review: \"Ordered it in March 2021, the motor died by June.\"
Target: date
date\tMarch 2021
date\tJune

Example
Review: \"Sturdy frame and it folds flat.\"
Target: feature
feature\tsturdy frame
feature\tfolds flat
";

const SENTIMENT_EXTRACTION: &str = "For the review \"<Review>\", identify any sentiments expressed. Output Positive for positive sentiments and Negative for negative sentiments. I will provide you some examples.

Answer only for the target \"<targets>\". Write one line: the relation name, a tab character, and Positive or Negative. Write nothing else.

Example
Review: \"Works perfectly, would buy again.\"
Target: sentiment
sentiment\tPositive

Example
Review: \"Broke after two days.\"
Target: sentiment
sentiment\tNegative
";

const EXPLANATION: &str = "Generate an explanation for this recommendation \"<item->user>\", based on the predefined target: \"<targets>\", and the reasoning path\"<path>\". I will provide you some answering examples.

Example
Recommendation: \"Item_9 -> User_3\"
Reasoning path: \"User_3 —review→ quiet ←review— User_8 —purchase→ Item_9\"
Explanation: User_3 values quiet products, and User_8, who praised the same quality, bought Item_9, so Item_9 is likely to suit User_3.
";

pub fn entity_extraction_template() -> PromptTemplate {
    PromptTemplate::new(ENTITY_EXTRACTION, &[REVIEW, TARGETS]).expect("built-in template is well formed")
}

pub fn sentiment_template() -> PromptTemplate {
    PromptTemplate::new(SENTIMENT_EXTRACTION, &[REVIEW, TARGETS]).expect("built-in template is well formed")
}

pub fn explanation_template() -> PromptTemplate {
    PromptTemplate::new(EXPLANATION, &[ITEM_TO_USER, TARGETS, PATH]).expect("built-in template is well formed")
}

/// Extraction prompt for one review and one target.
pub fn extraction_prompt(review: &str, target: &ExtractionTarget) -> Result<String> {
    let template = match target.rule {
        InjectionRule::Sentiment => sentiment_template(),
        InjectionRule::Property { .. } => entity_extraction_template(),
    };
    let mut prompt = template.render(&[(REVIEW, review), (TARGETS, &target.relation)])?;
    if let Some(extra) = &target.instruction {
        prompt.push_str("\nNote: ");
        prompt.push_str(extra);
        prompt.push('\n');
    }
    Ok(prompt)
}

/// A synchronous chat-completion backend.
pub trait ChatClient {
    /// Sends one user message and returns the reply text.
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReviewExtraction {
    pub triples: Vec<ExtractedTriple>,
    /// Reply lines that could not be used.
    pub warnings: usize,
}

/// Asks the client once per target. An empty review makes no call.
pub fn extract_review_triples<C: ChatClient + ?Sized>(
    review: usize,
    text: &str,
    targets: &TargetSet,
    client: &C,
) -> Result<ReviewExtraction> {
    let mut out = ReviewExtraction::default();
    if text.trim().is_empty() {
        return Ok(out);
    }
    for target in targets.iter() {
        let prompt = extraction_prompt(text, target)?;
        let reply = client.complete(&prompt)?;
        let parsed = parse_extraction_reply(&reply, review, &[target.relation.as_str()]);
        out.warnings += parsed.warnings;
        out.triples.extend(parsed.triples);
    }
    Ok(out)
}

/// Explanation prompt with the serialized path.
pub fn explanation_prompt(path: &ExplanationPath, graph: &KnowledgeGraph, targets: &str) -> Result<String> {
    let rendered = path.render(graph)?;
    let pair = format!("{} -> {}", graph.entity_name(path.item())?, graph.entity_name(path.user)?);
    explanation_template().render(&[(ITEM_TO_USER, &pair), (TARGETS, targets), (PATH, &rendered)])
}

/// `Because <path>, the system recommends <item> to <user>.`
pub fn template_explanation(path: &ExplanationPath, graph: &KnowledgeGraph) -> Result<String> {
    Ok(format!(
        "Because {}, the system recommends {} to {}.",
        path.render(graph)?,
        graph.entity_name(path.item())?,
        graph.entity_name(path.user)?
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub text: String,
    /// True when no client was given or the client failed, so the text
    /// came from the fixed template.
    pub from_template: bool,
    /// True only when a client was given but failed.
    pub degraded: bool,
}

/// With a client, returns its reply verbatim; without one, or when the
/// client fails, falls back to [`template_explanation`].
pub fn generate_explanation(
    path: &ExplanationPath,
    graph: &KnowledgeGraph,
    targets: &str,
    client: Option<&dyn ChatClient>,
) -> Result<Explanation> {
    path.validate(graph)?;
    if let Some(client) = client {
        let prompt = explanation_prompt(path, graph, targets)?;
        match client.complete(&prompt) {
            Ok(text) => {
                return Ok(Explanation {
                    text,
                    from_template: false,
                    degraded: false,
                })
            }
            Err(e) => log::warn!("explanation falls back to the template: {e}"),
        }
        return Ok(Explanation {
            text: template_explanation(path, graph)?,
            from_template: true,
            degraded: true,
        });
    }
    Ok(Explanation {
        text: template_explanation(path, graph)?,
        from_template: true,
        degraded: false,
    })
}
