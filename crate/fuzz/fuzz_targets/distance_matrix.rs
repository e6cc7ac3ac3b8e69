#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::matching::DistanceMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DistanceMatrix::from_bytes(data) {
        assert_eq!(m.values.len(), m.rows() * m.cols());
    }
});
