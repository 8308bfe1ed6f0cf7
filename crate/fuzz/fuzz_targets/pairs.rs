#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::comparison::{ComparisonPattern, ComparisonSchema, FieldSchema, PatternTable};
use penlink_core::io::{assemble_comparisons, read_pairs, ComparisonMeta};

fuzz_target!(|data: &[u8]| {
    let Ok(pairs) = read_pairs(data) else {
        return;
    };
    let mut counts = [0u64; 2];
    for &(_, _, p) in &pairs {
        if p < 2 {
            counts[p] += 1;
        }
    }
    if counts.contains(&0) {
        return;
    }
    let entries = [
        (ComparisonPattern::new(vec![1]), counts[0]),
        (ComparisonPattern::new(vec![2]), counts[1]),
    ];
    let table = PatternTable::from_entries(vec![2], entries).unwrap();
    let meta = ComparisonMeta {
        n_a: 8,
        n_b: 8,
        schema: ComparisonSchema {
            fields: vec![FieldSchema::exact("x")],
        },
        blocking: false,
    };
    if let Ok(c) = assemble_comparisons(&meta, table, pairs) {
        assert_eq!(c.table.total_pairs, c.pairs.len() as u64);
    }
});
