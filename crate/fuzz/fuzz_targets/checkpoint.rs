#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        assert_eq!(ckpt.model.params.len(), ckpt.model.layout.total());
    }
});
