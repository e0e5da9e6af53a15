//! Corpus JSONL decoding must never panic; a NUL byte splits the input into
//! corpus content and an optional stories sidecar.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        match text.split_once('\0') {
            Some((corpus, sidecar)) => {
                let _ = curio::data::load_corpus_str(corpus, Some(sidecar));
            }
            None => {
                let _ = curio::data::load_corpus_str(text, None);
            }
        }
    }
});
