#![no_main]

use libfuzzer_sys::fuzz_target;
use nadd::denoiser::LearnedDenoiser;

// The weights decoder must reject malformed bytes without panicking, and
// anything it accepts must evaluate to finite outputs.
fuzz_target!(|data: &[u8]| {
    if let Ok(den) = LearnedDenoiser::from_bytes(data) {
        let probe = vec![0.5; den.dim];
        let out = den.evaluate(&probe, 1.0);
        assert_eq!(out.len(), den.dim);
        assert!(out.iter().all(|v| v.is_finite()));
    }
});
