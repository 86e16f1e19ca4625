#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::residuals::Weights;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(w) = s.parse::<Weights>() {
            assert_eq!(w.to_string().parse::<Weights>().expect("display re-parses"), w);
        }
    }
});
