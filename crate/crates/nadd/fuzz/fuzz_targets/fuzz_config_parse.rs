#![no_main]

use libfuzzer_sys::fuzz_target;
use nadd::harness::config::ExperimentConfig;

// Parsing plus validation must never panic on arbitrary input; a parsed
// config must survive a serialize -> parse round trip.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.diagnostics();
        let again = ExperimentConfig::parse(&cfg.to_toml()).expect("round trip must parse");
        assert_eq!(cfg, again);
    }
});
