#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::train::TrainReport;

fuzz_target!(|data: &[u8]| {
    let _ = TrainReport::from_csv(data);
});
