//! Prediction JSONL decoding must never panic.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = curio::judge::load_predictions_str(text);
    }
});
