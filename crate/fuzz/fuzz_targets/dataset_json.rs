#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::dataset::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok((ds, _)) = Dataset::from_json_str(s) {
            // a validated dataset must survive its own serialization
            let (again, _) = Dataset::from_json_str(&ds.to_json_string()).expect("re-parse");
            assert_eq!(again.collections.len(), ds.collections.len());
        }
    }
});
