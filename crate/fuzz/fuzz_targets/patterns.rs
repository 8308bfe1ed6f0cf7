#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::io::read_pattern_table;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = read_pattern_table(data, &[4, 4, 2, 2]) {
        assert_eq!(
            table.total_pairs,
            table.entries.iter().map(|e| e.count).sum::<u64>()
        );
    }
});
