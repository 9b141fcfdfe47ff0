#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = scorelab::io::parse_pwl_json(text) {
            // evaluating an accepted document must not panic
            let _ = scorelab::variational::ScalarFn::eval(&p, 0.7);
        }
    }
});
