//! Checkpoint JSON decoding and arena loading (kind, version, and shape
//! checks) must never panic.

#![no_main]
use curio::params::Layout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ckpt) = serde_json::from_str::<curio::params::Checkpoint>(text) else { return };
    let mut layout = Layout::new();
    layout.register("w", 2, 3);
    layout.register("b", 1, 3);
    let mut params = curio::encoder::init_params(layout, 0);
    let kind = ckpt.model_kind.clone();
    let _ = params.load_checkpoint(&ckpt, &kind, None);
});
