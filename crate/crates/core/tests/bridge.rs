use kgsr_core::diffusion::{diffuse, AttentionParams, DiffusionConfig};
use kgsr_core::embedding::EmbeddingTable;
use kgsr_core::extract::{
    inject_triples, offline_extract, ExtractionTarget, Lexicon, LexiconEntry, ReviewIndex, SubjectRule, TargetSet,
};
use kgsr_core::graph::{Direction, EntityKind::*, KnowledgeGraph};
use kgsr_core::paths::extract_paths;
use kgsr_core::prompt::{generate_explanation, template_explanation};

fn entry(keyword: &str, relation: &str, value: &str) -> LexiconEntry {
    LexiconEntry {
        keyword: keyword.into(),
        relation: relation.into(),
        value: value.into(),
    }
}

#[test]
fn brand_and_product_from_one_review() {
    let mut g = KnowledgeGraph::new();
    let user = g.intern_entity("User_1", User).unwrap();
    let item = g.intern_entity("Item_1", Item).unwrap();
    let lexicon = Lexicon::new(vec![entry("wash machine", "like", "wash machine"), entry("metc", "belong", "METC")]).unwrap();
    let targets = TargetSet::new(vec![
        ExtractionTarget::property("preference", "like", SubjectRule::User),
        ExtractionTarget::property("brand", "belong", SubjectRule::ValueOf("like".into())),
    ])
    .unwrap();
    let found = offline_extract(0, "I like METC's wash machine colour", &lexicon);
    assert_eq!(found.len(), 2);
    let mut index = ReviewIndex::new();
    index.insert(0, (user, item));
    let before = g.triple_count();
    let report = inject_triples(&mut g, &found, &targets, &index).unwrap();
    assert_eq!(report.added, 2);
    assert_eq!(g.triple_count(), before + 2);
    let wm = g.entity_id("wash machine").unwrap();
    let metc = g.entity_id("METC").unwrap();
    assert!(g.has_edge(user, g.relation_id("like").unwrap(), wm, Direction::Forward));
    assert!(g.has_edge(wm, g.relation_id("belong").unwrap(), metc, Direction::Forward));
    assert_eq!(g.kind(metc).unwrap(), Property);
}

#[test]
fn reasoning_path_through_a_shared_property() {
    let mut g = KnowledgeGraph::new();
    g.insert(("User_1", User), "review", ("reliable", Property)).unwrap();
    g.insert(("C_1", Property), "tag", ("reliable", Property)).unwrap();
    g.insert(("C_1", Property), "sale", ("Item_4", Item)).unwrap();
    let emb = EmbeddingTable::zeros(g.entity_count(), g.relation_count(), 4).unwrap();
    let sub = diffuse(
        &g,
        &emb,
        &AttentionParams::zeros(4, 4),
        g.entity_id("User_1").unwrap(),
        &DiffusionConfig::default(),
    )
    .unwrap();
    let paths = extract_paths(&sub, &g, g.entity_id("Item_4").unwrap(), 3).unwrap();
    assert_eq!(paths.len(), 1);
    paths[0].validate(&g).unwrap();
    assert_eq!(paths[0].render(&g).unwrap(), "User_1 —review→ reliable ←tag— C_1 —sale→ Item_4");
    let text = template_explanation(&paths[0], &g).unwrap();
    let hops = ["User_1", "review", "reliable", "tag", "C_1", "sale", "Item_4"];
    let mut at = 0;
    for h in hops {
        at += text[at..].find(h).unwrap_or_else(|| panic!("{h} missing or out of order in {text}"));
    }
    let e = generate_explanation(&paths[0], &g, "review", None).unwrap();
    assert_eq!(e.text, text);
}
