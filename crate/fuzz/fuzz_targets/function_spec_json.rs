#![no_main]

use condbench::{FunctionSpec, Objective};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<FunctionSpec>(data) else {
        return;
    };
    let x = vec![0.5; spec.dim()];
    let _ = spec.eval(&x);
    let json = serde_json::to_string(&spec).unwrap();
    let back: FunctionSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
});
