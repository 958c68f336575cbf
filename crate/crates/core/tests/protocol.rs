mod common;

use std::collections::BTreeSet;

use oodida::protocol::{decode, decode_all, encode, read_message, validate_assignment, validate_value, Message};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

#[test]
fn fuzzed_messages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dd1da);
    for i in 0..10_000 {
        let m = common::gen::message(&mut rng);
        let frame = encode(&m).unwrap();
        assert_eq!(decode(&frame).unwrap(), m, "case {i}");
    }
}

#[test]
fn every_kind_is_generated() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kinds: BTreeSet<&str> = (0..2000).map(|_| common::gen::message(&mut rng).kind_name()).collect();
    assert_eq!(kinds.len(), Message::KINDS.len());
}

#[tokio::test]
async fn back_to_back_frames_decode_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let msgs: Vec<Message> = (0..500).map(|_| common::gen::message(&mut rng)).collect();
    let stream: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap()).collect();
    assert_eq!(decode_all(&stream).unwrap(), msgs);

    // Same bytes through a pipe in awkward chunk sizes.
    let (mut a, mut b) = tokio::io::duplex(97);
    let writer = tokio::spawn(async move {
        use tokio::io::AsyncWriteExt;
        for chunk in stream.chunks(13) {
            a.write_all(chunk).await.unwrap();
        }
    });
    let mut got = Vec::new();
    while let Some(m) = read_message(&mut b).await.unwrap() {
        got.push(m);
    }
    writer.await.unwrap();
    assert_eq!(got, msgs);
}

pub fn corpus() -> Vec<Value> {
    serde_json::from_str(include_str!("data/validator_corpus.json")).unwrap()
}

#[test]
fn validator_matches_the_golden_corpus() {
    let corpus = corpus();
    assert_eq!(corpus.len(), 50);
    for case in corpus {
        let name = case["name"].as_str().unwrap();
        let verdict = match case.get("raw") {
            Some(raw) => validate_assignment(raw.as_str().unwrap()),
            None => validate_value(&case["document"]),
        };
        let expected: BTreeSet<String> = serde_json::from_value(case["violation_paths"].clone()).unwrap();
        match verdict {
            Ok(_) => assert!(case["valid"].as_bool().unwrap(), "{name}: accepted"),
            Err(e) => {
                assert!(!case["valid"].as_bool().unwrap(), "{name}: rejected with {e}");
                let paths: BTreeSet<String> = e.violations().iter().map(|v| v.path.clone()).collect();
                assert_eq!(paths, expected, "{name}: {e}");
            }
        }
    }
}
