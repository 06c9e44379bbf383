#![no_main]

use libfuzzer_sys::fuzz_target;
use negmarket::features::{parse_dataset, write_dataset};

// Accepted datasets must survive a write/parse round trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_dataset(data) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &rows).unwrap();
        assert_eq!(parse_dataset(&buf).unwrap(), rows);
    }
});
