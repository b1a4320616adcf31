#![no_main]

use condbench::SweepConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = SweepConfig::from_toml_str(text) {
        // from_toml_str validates; validation must be stable.
        assert!(cfg.validate().is_ok());
        let _ = cfg.settings();
    }
});
