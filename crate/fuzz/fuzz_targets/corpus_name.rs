#![no_main]

use libfuzzer_sys::fuzz_target;
use rfd_reid::data::parse_corpus_name;

fuzz_target!(|name: &str| {
    let _ = parse_corpus_name(name);
});
