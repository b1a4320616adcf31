#![no_main]

use condbench::harness::{read_trials_csv, write_trials_csv};
use condbench::SweepTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_trials_csv(data) else {
        return;
    };
    // Anything accepted must survive a write and re-read.
    let mut buf = Vec::new();
    write_trials_csv(&rows, &mut buf).unwrap();
    let again = read_trials_csv(buf.as_slice()).unwrap();
    assert_eq!(again.len(), rows.len());
    let _ = SweepTable::from_rows(&rows);
});
