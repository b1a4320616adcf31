#![no_main]

use condbench::harness::{read_trials_json, write_trials_json};
use condbench::SweepTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_trials_json(data) else {
        return;
    };
    let mut buf = Vec::new();
    write_trials_json(&rows, &mut buf).unwrap();
    let again = read_trials_json(buf.as_slice()).unwrap();
    assert_eq!(again.len(), rows.len());
    let _ = SweepTable::from_rows(&rows);
});
