#![no_main]

use libfuzzer_sys::fuzz_target;
use negmarket::neural::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(nets) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&nets), data);
    }
});
