#![no_main]
use libfuzzer_sys::fuzz_target;
use signwave::features::FeatureSequence;

// The TSPF parser must never panic, and any accepted input must re-encode
// to the identical bytes (the container is bit-exact with no slack).
fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = FeatureSequence::from_bytes("fuzz", data) {
        assert_eq!(seq.to_bytes(), data);
    }
});
