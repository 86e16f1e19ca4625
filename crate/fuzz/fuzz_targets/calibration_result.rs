#![no_main]

use libfuzzer_sys::fuzz_target;
use sensorcal::calib::CalibrationResult;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(r) = CalibrationResult::from_json_str(s) {
            let _ = r.sensor_tree();
            let _ = r.to_json_string();
        }
    }
});
