#![no_main]
use libfuzzer_sys::fuzz_target;
use signwave_cli::config::{parse_strict, RunConfig, SynthRunConfig};

// Config files are the main user-supplied input; strict parsing (unknown
// keys rejected, field-path errors) must never panic.
fuzz_target!(|data: &[u8]| {
    let _ = parse_strict::<RunConfig>(data, "run");
    let _ = parse_strict::<SynthRunConfig>(data, "synth");
    if let Ok(cfg) = parse_strict::<RunConfig>(data, "run") {
        let _ = cfg.train.validate();
    }
});
