#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::io::read_posterior;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_posterior(data) {
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.2)));
    }
});
