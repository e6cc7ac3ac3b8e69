#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::eval::EvalReport;

fuzz_target!(|data: &[u8]| {
    let _ = EvalReport::from_json(data);
});
