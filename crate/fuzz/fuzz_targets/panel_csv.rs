#![no_main]

use libfuzzer_sys::fuzz_target;
use wavcast::data::{parse_panel, write_panel};

fuzz_target!(|data: &[u8]| {
    if let Ok(panel) = parse_panel(data) {
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).expect("write parsed panel");
        let again = parse_panel(buf.as_slice()).expect("re-parse written panel");
        assert_eq!(again.sensor_ids, panel.sensor_ids);
        assert_eq!(again.timestamps, panel.timestamps);
        assert_eq!(again.mask, panel.mask);
    }
});
