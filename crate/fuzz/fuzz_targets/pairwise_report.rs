#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::eval::PairwiseReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = PairwiseReport::from_json_str(s) {
            let _ = r.render_text();
        }
    }
});
