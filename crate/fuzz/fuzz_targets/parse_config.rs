#![no_main]

use libfuzzer_sys::fuzz_target;
use negmarket::experiment::{parse_spec, validate_spec};

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = parse_spec(data) {
        let _ = validate_spec(&spec);
    }
});
