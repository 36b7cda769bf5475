//! Synthetic dataset with a planted preference structure.
//!
//! Item `i` carries three properties. User `u` prefers property `u % P`,
//! buys only items carrying it, and has one `browsed` edge to a random
//! property so it exists in the graph before any purchase is added. Each
//! purchase comes with a short review naming a style tag tied to the
//! preferred property; the bundled lexicon turns it into
//! `user —like→ style_k`, a node shared by users with the same taste.

use std::path::Path;

use kgsr_core::extract::{Lexicon, LexiconEntry};
use kgsr_core::graph::{EntityKind, KnowledgeGraph};
use kgsr_core::interactions::InteractionSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats::{self, Review};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub properties: usize,
    pub purchases_per_user: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            properties: 50,
            purchases_per_user: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    /// Item properties and browsing noise; no purchases.
    pub graph: KnowledgeGraph,
    pub interactions: InteractionSet,
    /// One per purchase, in interaction order.
    pub reviews: Vec<Review>,
    pub lexicon: Vec<LexiconEntry>,
    /// Preferred property index of each user.
    pub preference: Vec<usize>,
}

pub fn user_name(u: usize) -> String {
    format!("user_{u:03}")
}

pub fn item_name(i: usize) -> String {
    format!("item_{i:03}")
}

pub fn property_name(p: usize) -> String {
    format!("prop_{p:02}")
}

pub fn style_name(p: usize) -> String {
    format!("style_{p:02}")
}

fn tag(p: usize) -> String {
    format!("tag{p}")
}

/// Properties of item `i`, deduplicated and in ascending order.
pub fn item_properties(i: usize, properties: usize) -> Vec<usize> {
    let mut ps = vec![i % properties, (3 * i + 7) % properties, (7 * i + 21) % properties];
    ps.sort_unstable();
    ps.dedup();
    ps
}

/// Targets file matching the planted lexicon.
pub const PLANTED_TARGETS: &str = "preference\tlike\tuser\tthe product feature the reviewer prefers\n\
sentiment\tsentiment\tsentiment\n";

const OPENERS: [&str; 4] = ["Really happy with the", "Bought this for the", "Solid pick if you want", "Came back for more"];

pub fn generate(config: &PlantedConfig) -> Result<PlantedData> {
    let PlantedConfig {
        users,
        items,
        properties,
        purchases_per_user,
        seed,
    } = *config;
    if users == 0 || items == 0 || properties == 0 || purchases_per_user == 0 {
        return Err(Error::Usage("planted dataset sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = KnowledgeGraph::new();
    let mut carriers = vec![Vec::new(); properties];
    for i in 0..items {
        for p in item_properties(i, properties) {
            graph.insert(
                (&item_name(i), EntityKind::Item),
                "has",
                (&property_name(p), EntityKind::Property),
            )?;
            carriers[p].push(i);
        }
    }
    let mut interactions = InteractionSet::new();
    let mut reviews = Vec::new();
    let mut preference = Vec::with_capacity(users);
    for u in 0..users {
        let pref = u % properties;
        preference.push(pref);
        let name = user_name(u);
        let noise = rng.gen_range(0..properties);
        graph.insert((&name, EntityKind::User), "browsed", (&property_name(noise), EntityKind::Property))?;
        let user = graph.entity_id(&name).expect("just inserted");
        let k = purchases_per_user.min(carriers[pref].len());
        let bought: Vec<usize> = carriers[pref].choose_multiple(&mut rng, k).copied().collect();
        for i in bought {
            let item = graph.entity_id(&item_name(i)).expect("items come first");
            interactions.insert(&graph, user, item)?;
            let opener = OPENERS[rng.gen_range(0..OPENERS.len())];
            reviews.push(Review {
                user: name.clone(),
                item: item_name(i),
                text: format!("{opener} {}. Love it.", tag(pref)),
            });
        }
    }
    let mut lexicon: Vec<LexiconEntry> = (0..properties)
        .map(|p| LexiconEntry {
            keyword: tag(p),
            relation: "like".into(),
            value: style_name(p),
        })
        .collect();
    lexicon.push(LexiconEntry {
        keyword: "love".into(),
        relation: "sentiment".into(),
        value: "Positive".into(),
    });
    Ok(PlantedData {
        graph,
        interactions,
        reviews,
        lexicon,
        preference,
    })
}

impl PlantedData {
    pub fn lexicon(&self) -> Result<Lexicon> {
        Ok(Lexicon::new(self.lexicon.clone())?)
    }

    /// Writes `triples.tsv`, `interactions.tsv`, `reviews.jsonl`,
    /// `lexicon.tsv` and `targets.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        use std::io::Write;
        formats::save_triples(&self.graph, &dir.join("triples.tsv"))?;
        formats::save_interactions(&self.graph, &self.interactions, &dir.join("interactions.tsv"))?;
        let path = dir.join("reviews.jsonl");
        formats::write_reviews(&self.reviews, formats::create(&path)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("lexicon.tsv");
        let mut out = formats::create(&path)?;
        let mut write = || -> std::io::Result<()> {
            for e in &self.lexicon {
                writeln!(out, "{}\t{}\t{}", e.keyword, e.relation, e.value)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("targets.tsv");
        std::fs::write(&path, PLANTED_TARGETS).map_err(|e| Error::io(&path, e))
    }
}
