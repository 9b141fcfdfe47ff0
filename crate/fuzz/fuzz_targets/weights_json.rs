#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(w) = scorelab::io::parse_weights_json(text) {
            // accepted documents must be internally consistent
            assert!(w.validate().is_ok());
        }
    }
});
