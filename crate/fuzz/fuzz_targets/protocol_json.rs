#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::eval::EvalProtocol;

fuzz_target!(|data: &[u8]| {
    let _ = EvalProtocol::from_json(data);
});
