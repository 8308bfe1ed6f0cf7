#![no_main]

use libfuzzer_sys::fuzz_target;
use penlink_core::comparison::ComparisonPattern;
use penlink_core::io::read_params;
use penlink_core::mixture::weight_of_pattern;

fuzz_target!(|data: &[u8]| {
    let Ok(params) = read_params(data) else {
        return;
    };
    let lowest = ComparisonPattern::new(vec![1; params.fields()]);
    let _ = weight_of_pattern(&lowest, &params);
});
