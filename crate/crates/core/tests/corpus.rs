//! Replays the checked-in fuzz corpus through the same round-trip checks the
//! fuzz targets make.

use std::path::PathBuf;

use wavcast::config::RunConfig;
use wavcast::data::{
    format_timestamp, parse_distances, parse_matrix_csv, parse_panel, parse_timestamp, write_distances,
    write_matrix_csv, write_panel,
};
use wavcast::model::ModelState;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn panel_seeds() {
    let mut parsed = 0;
    for (_, data) in seeds("panel_csv") {
        if let Ok(p) = parse_panel(data.as_slice()) {
            let mut buf = Vec::new();
            write_panel(&p, &mut buf).unwrap();
            let again = parse_panel(buf.as_slice()).unwrap();
            assert_eq!(again, p);
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn distance_seeds() {
    for (_, data) in seeds("distances_csv") {
        if let Ok(e) = parse_distances(data.as_slice()) {
            let mut buf = Vec::new();
            write_distances(&e, &mut buf).unwrap();
            assert_eq!(parse_distances(buf.as_slice()).unwrap(), e);
        }
    }
}

#[test]
fn matrix_seeds() {
    for (name, data) in seeds("matrix_csv") {
        let m = parse_matrix_csv(data.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(parse_matrix_csv(buf.as_slice()).unwrap(), m);
    }
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("config_text") {
        let text = String::from_utf8(data).unwrap();
        match RunConfig::parse(&text) {
            Ok(c) => assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c),
            Err(_) => assert!(name.contains("invalid"), "{name}"),
        }
    }
}

#[test]
fn checkpoint_seeds() {
    let mut decoded = 0;
    for (_, data) in seeds("checkpoint") {
        if let Ok(s) = ModelState::from_bytes(&data) {
            assert_eq!(s.to_bytes().unwrap(), data);
            decoded += 1;
        }
    }
    assert_eq!(decoded, 1);
}

#[test]
fn timestamp_seeds() {
    for (name, data) in seeds("timestamp") {
        let t = parse_timestamp(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_timestamp(&format_timestamp(&t)).unwrap(), t);
    }
}
