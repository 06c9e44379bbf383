#![no_main]

use libfuzzer_sys::fuzz_target;
use negmarket::strategies::TeacherParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = TeacherParams::from_json(data) {
        assert!(p.validate().is_ok());
    }
});
