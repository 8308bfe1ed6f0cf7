#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_cli::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = serde_json::from_slice::<PipelineConfig>(data) {
        let _ = config.validate();
    }
});
