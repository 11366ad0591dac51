#![no_main]

use libfuzzer_sys::fuzz_target;
use wavcast::data::{format_timestamp, parse_timestamp};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_timestamp(s) {
        assert_eq!(parse_timestamp(&format_timestamp(&t)).expect("re-parse"), t);
    }
});
