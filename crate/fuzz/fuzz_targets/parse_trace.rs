#![no_main]

use libfuzzer_sys::fuzz_target;
use negmarket::protocol::{parse_trace, write_trace};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_trace(data) {
        let mut buf = Vec::new();
        write_trace(&mut buf, &records).unwrap();
        assert_eq!(parse_trace(&buf).unwrap(), records);
    }
});
