#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::sidecar::{decode_cloud, encode_cloud};

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_cloud(data) {
        let bytes = encode_cloud(&cloud);
        let again = decode_cloud(&bytes).expect("re-decode");
        assert_eq!(encode_cloud(&again), bytes);
    }
});
