#![no_main]
use libfuzzer_sys::fuzz_target;
use signwave::checkpoint::load_from_bytes;

// Checkpoint loading walks a JSON directory into a binary payload; every
// offset/length/dtype combination must be rejected cleanly, never panic.
fuzz_target!(|data: &[u8]| {
    let _ = load_from_bytes::<f64>(data);
    let _ = load_from_bytes::<f32>(data);
});
