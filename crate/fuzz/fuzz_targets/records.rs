#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::records::{read_records, FileId, LoadOptions};

fuzz_target!(|data: &[u8]| {
    let _ = read_records(data, FileId::A, &LoadOptions::default());
    let keyed = LoadOptions {
        id_column: Some("id".into()),
        blocking_column: Some("block_key".into()),
        ..LoadOptions::default()
    };
    let _ = read_records(data, FileId::B, &keyed);
});
