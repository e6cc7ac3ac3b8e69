#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::data::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DatasetManifest::from_json(data) {
        let again = DatasetManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(again, m);
    }
});
