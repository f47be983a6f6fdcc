#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(params) = uwsim::PhysicalParams::from_json_str(text) {
            let again = uwsim::PhysicalParams::from_json_str(&params.to_json_string());
            assert_eq!(again.ok(), Some(params));
        }
    }
});
