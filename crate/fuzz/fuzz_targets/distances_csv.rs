#![no_main]

use libfuzzer_sys::fuzz_target;
use wavcast::data::{parse_distances, write_distances};

fuzz_target!(|data: &[u8]| {
    if let Ok(edges) = parse_distances(data) {
        let mut buf = Vec::new();
        write_distances(&edges, &mut buf).expect("write parsed edges");
        assert_eq!(parse_distances(buf.as_slice()).expect("re-parse"), edges);
    }
});
