#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::sidecar::{decode_depth, encode_depth};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_depth(data) {
        let bytes = encode_depth(&img);
        let again = decode_depth(&bytes).expect("re-decode");
        assert_eq!(encode_depth(&again), bytes);
    }
});
