#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::io::{read_links, read_matching};

fuzz_target!(|data: &[u8]| {
    if let Ok((m, weights)) = read_matching(data, 16, 16) {
        assert_eq!(m.len(), weights.len());
    }
    let _ = read_links(data, 16, 16);
});
