#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::labeling::LabelConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = LabelConfig::from_json_str(s);
    }
});
