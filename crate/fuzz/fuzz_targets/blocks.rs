#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::io::read_blocks;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = read_blocks(data, 16, 16) {
        assert_eq!((m.a.len(), m.b.len()), (16, 16));
    }
});
