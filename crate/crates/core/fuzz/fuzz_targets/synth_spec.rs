//! Synthetic generator spec TOML parsing and validation must never panic.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = curio::synth::SyntheticSpec::from_toml_str(text);
    }
});
