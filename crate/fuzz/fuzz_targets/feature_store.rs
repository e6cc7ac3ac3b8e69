#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::store::FeatureStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = FeatureStore::from_bytes(data) {
        // Whatever decodes must re-encode to something that decodes the same.
        let again = FeatureStore::from_bytes(&store.to_bytes().unwrap()).unwrap();
        assert_eq!(again.header, store.header);
    }
});
