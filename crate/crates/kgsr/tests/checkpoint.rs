use kgsr::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, MAGIC};
use kgsr::Error;
use kgsr_core::embedding::EmbeddingTable;
use kgsr_core::graph::{EntityKind, KnowledgeGraph};
use kgsr_core::model::{Checkpoint, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn checkpoint() -> (Checkpoint, KnowledgeGraph) {
    let mut g = KnowledgeGraph::new();
    g.insert(("alice", EntityKind::User), "likes", ("blue", EntityKind::Property)).unwrap();
    g.insert(("kettle", EntityKind::Item), "colour", ("blue", EntityKind::Property)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let emb = EmbeddingTable::uniform(3, 2, 5, 1.0, &mut rng).unwrap();
    let mut model = ModelParams::initialize(emb, 3, 7, 2).unwrap();
    model.round_to_f32();
    (Checkpoint::new(model, &g).unwrap(), g)
}

#[test]
fn file_round_trip_is_exact() {
    let (ckpt, g) = checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    back.check_graph(&g).unwrap();
    // d=5, d1=3, d2=7, |E|=3, |R|=2
    let floats = 3 * 10 + 5 * 3 + 7 * 15 + 5 * 7 + 3 * 5 + 2 * 5;
    let names = ["alice", "blue", "kettle", "likes", "colour"].iter().map(|n| 4 + n.len()).sum::<usize>();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 4 + 4 + 20 + 4 * floats + names + 8);
}

#[test]
fn every_truncation_is_rejected() {
    let bytes = encode(&checkpoint().0).unwrap();
    for len in 0..bytes.len() {
        match decode(&bytes[..len]) {
            Err(Error::Corrupt(_)) => assert!(len >= 4),
            Err(Error::Format(_)) => assert!(len < 4),
            other => panic!("prefix of {len} bytes: {other:?}"),
        }
    }
}

#[test]
fn wrong_magic_and_version() {
    let mut bytes = encode(&checkpoint().0).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes), Err(Error::Format(_))));
}

#[test]
fn appended_bytes_are_corruption() {
    let mut bytes = encode(&checkpoint().0).unwrap();
    bytes.push(0);
    assert!(matches!(decode(&bytes), Err(Error::Corrupt(_))));
}

#[test]
fn graph_mismatch_is_detected() {
    let (ckpt, mut g) = checkpoint();
    g.insert(("bob", EntityKind::User), "likes", ("blue", EntityKind::Property)).unwrap();
    assert!(matches!(ckpt.check_graph(&g), Err(kgsr_core::Error::CheckpointMismatch(_))));
}
