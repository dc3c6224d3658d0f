#![no_main]
use libfuzzer_sys::fuzz_target;
use signwave::corpus::parse_manifest_line;

// Manifest lines are attacker-adjacent (shared corpora); parsing must not
// panic and accepted entries must survive a serialize/reparse cycle.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entry) = parse_manifest_line(text) {
        let line = serde_json::to_string(&entry).unwrap();
        let back = parse_manifest_line(&line).unwrap();
        assert_eq!(entry, back);
    }
});
