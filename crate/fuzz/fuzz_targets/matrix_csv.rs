#![no_main]

use libfuzzer_sys::fuzz_target;
use wavcast::data::{parse_matrix_csv, write_matrix_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_matrix_csv(data) {
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).expect("write parsed matrix");
        let again = parse_matrix_csv(buf.as_slice()).expect("re-parse");
        assert_eq!(again.values.shape(), m.values.shape());
    }
});
