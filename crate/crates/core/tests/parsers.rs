//! Parser robustness: the fuzz corpus seeds must parse, and arbitrary or
//! mutated bytes must be rejected or round-trip, never panic.

use std::path::PathBuf;

use proptest::prelude::*;

use negmarket::experiment::{parse_spec, validate_spec};
use negmarket::features::{parse_dataset, write_dataset};
use negmarket::neural::{decode_checkpoint, encode_checkpoint};
use negmarket::protocol::{parse_trace, write_trace};
use negmarket::strategies::TeacherParams;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn config(data: &[u8]) -> bool {
    match parse_spec(data) {
        Ok(spec) => {
            let _ = validate_spec(&spec);
            true
        }
        Err(_) => false,
    }
}

fn teacher(data: &[u8]) -> bool {
    match TeacherParams::from_json(data) {
        Ok(p) => {
            assert!(p.validate().is_ok());
            true
        }
        Err(_) => false,
    }
}

fn dataset(data: &[u8]) -> bool {
    match parse_dataset(data) {
        Ok(rows) => {
            let mut buf = Vec::new();
            write_dataset(&mut buf, &rows).unwrap();
            assert_eq!(parse_dataset(&buf).unwrap(), rows);
            true
        }
        Err(_) => false,
    }
}

fn trace(data: &[u8]) -> bool {
    match parse_trace(data) {
        Ok(records) => {
            let mut buf = Vec::new();
            write_trace(&mut buf, &records).unwrap();
            assert_eq!(parse_trace(&buf).unwrap(), records);
            true
        }
        Err(_) => false,
    }
}

fn checkpoint(data: &[u8]) -> bool {
    match decode_checkpoint(data) {
        Ok(nets) => {
            assert_eq!(encode_checkpoint(&nets), data);
            true
        }
        Err(_) => false,
    }
}

type Target = fn(&[u8]) -> bool;

const TARGETS: [(&str, Target); 5] = [
    ("parse_config", config),
    ("parse_teacher_params", teacher),
    ("parse_dataset", dataset),
    ("parse_trace", trace),
    ("decode_checkpoint", checkpoint),
];

#[test]
fn corpus_seeds_are_accepted() {
    for (name, f) in TARGETS {
        for seed in corpus(name) {
            assert!(f(&seed), "{name} rejected a seed");
        }
    }
}

#[test]
fn truncated_seeds_never_panic() {
    for (name, f) in TARGETS {
        for seed in corpus(name) {
            for cut in 0..seed.len() {
                f(&seed[..cut]);
            }
        }
    }
}

proptest! {
    #[test]
    fn arbitrary_bytes(data in prop::collection::vec(any::<u8>(), 0..512)) {
        for (_, f) in TARGETS {
            f(&data);
        }
    }

    #[test]
    fn mutated_seeds(target in 0usize..5, pick in any::<prop::sample::Index>(),
                     edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8)) {
        let (name, f) = TARGETS[target];
        let seeds = corpus(name);
        let mut data = seeds[pick.index(seeds.len())].clone();
        for (at, byte) in edits {
            let i = at.index(data.len());
            data[i] = byte;
        }
        f(&data);
    }
}
