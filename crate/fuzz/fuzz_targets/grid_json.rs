#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = scorelab::io::parse_grid_json(text) {
            // accepted grids satisfy their own invariants
            assert!(grid.validate().is_ok());
        }
    }
});
