#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The parser must never panic, whatever the bytes.
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = scorelab::io::parse_model_json(text);
    }
});
