//! Run configuration TOML parsing plus normalization and cross-field
//! validation must never panic.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = curio::config::RunConfig::from_toml_str(text);
    }
});
