//! Replays the checked-in fuzz corpus through the artifact parsers:
//! `valid_*` seeds must parse and `invalid_*` seeds must be rejected.

use std::fs;
use std::path::{Path, PathBuf};

use penlink_core::io;
use penlink_core::records::{read_records, FileId, LoadOptions};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut seeds: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    seeds.sort();
    assert!(!seeds.is_empty(), "no seeds in {}", dir.display());
    seeds
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn replay<T, E: std::fmt::Debug>(target: &str, parse: impl Fn(&[u8]) -> Result<T, E>) {
    for (name, data) in corpus(target) {
        let result = parse(&data);
        if name.starts_with("valid_") {
            assert!(result.is_ok(), "{target}/{name}: {:?}", result.err());
        } else {
            assert!(
                name.starts_with("invalid_"),
                "{target}/{name}: unexpected seed name"
            );
            assert!(result.is_err(), "{target}/{name} was accepted");
        }
    }
}

fn record_options(data: &[u8]) -> LoadOptions {
    let header = data.split(|&b| b == b'\n').next().unwrap_or_default();
    let header = String::from_utf8_lossy(header);
    let columns: Vec<&str> = header.trim().split(',').collect();
    let has = |c: &str| columns.contains(&c);
    LoadOptions {
        id_column: has("id").then(|| "id".to_string()),
        blocking_column: has(io::BLOCK_KEY_COLUMN).then(|| io::BLOCK_KEY_COLUMN.to_string()),
        ..LoadOptions::default()
    }
}

#[test]
fn records_corpus() {
    replay("records", |d| {
        read_records(d, FileId::A, &record_options(d))
    });
}

#[test]
fn patterns_corpus() {
    replay("patterns", |d| io::read_pattern_table(d, &[4, 4, 2, 2]));
}

#[test]
fn pairs_corpus() {
    replay("pairs", |d| io::read_pairs(d));
}

#[test]
fn matching_corpus() {
    replay("matching", |d| io::read_matching(d, 16, 16));
}

#[test]
fn blocks_corpus() {
    replay("blocks", |d| io::read_blocks(d, 16, 16));
}

#[test]
fn posterior_corpus() {
    replay("posterior", |d| io::read_posterior(d));
}

#[test]
fn params_corpus() {
    replay("params", |d| io::read_params(d));
}
