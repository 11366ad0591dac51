//! Sensor panels, normalization, windowing and the CSV formats around them.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};

use crate::error::{Error, Result};
use crate::graph_learning::DistanceEdge;
use crate::tensor::Tensor;

const TIME_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 timestamp; offsets are converted to UTC.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for f in TIME_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t);
        }
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.naive_utc())
        .map_err(|_| Error::InvalidArgument(format!("'{s}' is not an ISO-8601 timestamp")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

/// A multivariate sensor series at a fixed cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub sensor_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    /// `N × T_total`; missing entries hold 0.
    pub values: Tensor,
    /// `N × T_total`, row-major like `values`.
    pub mask: Vec<bool>,
}

impl Panel {
    /// Builds a panel, deriving the mask from non-finite values.
    pub fn new(sensor_ids: Vec<String>, timestamps: Vec<NaiveDateTime>, values: Tensor) -> Result<Self> {
        let n = sensor_ids.len();
        if values.shape() != [n, timestamps.len()] {
            return Err(Error::Data(format!(
                "values have shape {:?} for {n} sensors and {} timestamps",
                values.shape(),
                timestamps.len()
            )));
        }
        check_cadence(&timestamps)?;
        let mask: Vec<bool> = values.data().iter().map(|v| v.is_finite()).collect();
        let values = values.map(|v| if v.is_finite() { v } else { 0.0 });
        Ok(Self {
            sensor_ids,
            timestamps,
            values,
            mask,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn is_valid(&self, sensor: usize, t: usize) -> bool {
        self.mask[sensor * self.len() + t]
    }

    /// Spacing between consecutive timestamps, if there are at least two.
    pub fn cadence(&self) -> Option<TimeDelta> {
        (self.len() >= 2).then(|| self.timestamps[1] - self.timestamps[0])
    }

    pub fn position(&self, t: &NaiveDateTime) -> Option<usize> {
        self.timestamps.binary_search(t).ok()
    }
}

fn check_cadence(ts: &[NaiveDateTime]) -> Result<()> {
    let mut sorted = ts.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("duplicate timestamp {}", format_timestamp(&w[0]))));
    }
    if ts.len() < 2 {
        return Ok(());
    }
    let step = ts[1] - ts[0];
    for (i, w) in ts.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if gap != step || gap <= TimeDelta::zero() {
            return Err(Error::Data(format!(
                "irregular cadence: gap of {}s between {} and {} (rows {} and {}), expected {}s",
                gap.num_seconds(),
                format_timestamp(&w[0]),
                format_timestamp(&w[1]),
                i + 1,
                i + 2,
                step.num_seconds()
            )));
        }
    }
    Ok(())
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        msg: msg.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_value(cell: &str, line: u64) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>()
        .map_err(|_| parse_err(line, format!("'{cell}' is not a number")))
}

/// Reads `timestamp,<sensor_1>,…,<sensor_N>` CSV; empty cells are missing.
pub fn parse_panel(reader: impl Read) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || header[0].trim() != "timestamp" {
        return Err(parse_err(1, "header must be `timestamp,<sensor_id>,...`"));
    }
    let sensor_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = std::collections::HashSet::new();
    for id in &sensor_ids {
        if id.is_empty() || !seen.insert(id.as_str()) {
            return Err(parse_err(1, format!("sensor ids must be unique and non-empty, got '{id}'")));
        }
    }
    let n = sensor_ids.len();
    let mut timestamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != n + 1 {
            return Err(parse_err(line, format!("expected {} fields, got {}", n + 1, rec.len())));
        }
        timestamps.push(parse_timestamp(&rec[0]).map_err(|e| parse_err(line, e.to_string()))?);
        for (col, cell) in columns.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_value(cell, line)?);
        }
    }
    let t = timestamps.len();
    let values = Tensor::matrix(n, t, columns.concat())?;
    Panel::new(sensor_ids, timestamps, values)
}

pub fn load_panel(path: impl AsRef<Path>) -> Result<Panel> {
    parse_panel(File::open(path)?)
}

/// Writes a panel in the format read by [`parse_panel`]; masked cells are empty.
pub fn write_panel(panel: &Panel, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(panel.sensor_ids.iter().cloned());
    w.write_record(&header)?;
    for (t, ts) in panel.timestamps.iter().enumerate() {
        let mut row = vec![format_timestamp(ts)];
        for s in 0..panel.sensors() {
            row.push(if panel.is_valid(s, t) {
                panel.values.get2(s, t).to_string()
            } else {
                String::new()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `from,to,distance` CSV.
pub fn parse_distances(reader: impl Read) -> Result<Vec<DistanceEdge>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["from", "to", "distance"] {
        return Err(parse_err(1, "header must be `from,to,distance`"));
    }
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", rec.len())));
        }
        let distance = parse_value(&rec[2], line)?;
        if distance.is_nan() || distance < 0.0 {
            return Err(parse_err(line, format!("distance must be a nonnegative number, got '{}'", &rec[2])));
        }
        edges.push(DistanceEdge {
            from: rec[0].trim().to_string(),
            to: rec[1].trim().to_string(),
            distance,
        });
    }
    Ok(edges)
}

pub fn load_distances(path: impl AsRef<Path>) -> Result<Vec<DistanceEdge>> {
    parse_distances(File::open(path)?)
}

pub fn write_distances(edges: &[DistanceEdge], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["from", "to", "distance"])?;
    for e in edges {
        w.write_record([e.from.as_str(), e.to.as_str(), &e.distance.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A matrix with labelled rows and columns, as stored in CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Tensor,
}

/// Writes `corner,<col labels>` followed by one `label,values…` line per row.
pub fn write_matrix_csv(m: &LabeledMatrix, writer: impl Write) -> Result<()> {
    if m.values.shape() != [m.row_labels.len(), m.col_labels.len()] {
        return Err(Error::Shape {
            op: "write_matrix_csv",
            detail: format!(
                "{:?} values for {} rows and {} columns",
                m.values.shape(),
                m.row_labels.len(),
                m.col_labels.len()
            ),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![m.corner.clone()];
    header.extend(m.col_labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in m.row_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.col_labels.len()).map(|j| m.values.get2(i, j).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_matrix_csv(reader: impl Read) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(parse_err(1, "missing header"));
    }
    let corner = header[0].to_string();
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != col_labels.len() + 1 {
            return Err(parse_err(line, format!("expected {} fields, got {}", col_labels.len() + 1, rec.len())));
        }
        row_labels.push(rec[0].to_string());
        for cell in rec.iter().skip(1) {
            let v = parse_value(cell, line)?;
            if v.is_nan() {
                return Err(parse_err(line, "empty or NaN cell"));
            }
            data.push(v);
        }
    }
    let values = Tensor::matrix(row_labels.len(), col_labels.len(), data)?;
    Ok(LabeledMatrix {
        corner,
        row_labels,
        col_labels,
        values,
    })
}

/// Z-score normalization with one mean and standard deviation per dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub const MIN_STD: f64 = 1e-8;

    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::NonFinite("normalizer statistics".into()));
        }
        Ok(Self {
            mean,
            std: std.max(Self::MIN_STD),
        })
    }

    /// Fits on the valid entries of time steps `[0, end)`.
    pub fn fit(panel: &Panel, end: usize) -> Result<Self> {
        let end = end.min(panel.len());
        let mut vals = Vec::new();
        for s in 0..panel.sensors() {
            for t in 0..end {
                if panel.is_valid(s, t) {
                    vals.push(panel.values.get2(s, t));
                }
            }
        }
        if vals.is_empty() {
            return Err(Error::Data("no valid entries to fit the normalizer on".into()));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        Self::new(mean, var.sqrt())
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Sliding windows over a panel, identified by their first time index.
///
/// Window `s` has history `[s, s + L)` and target `[s + L, s + L + T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub starts: Vec<usize>,
    pub history_len: usize,
    pub horizon: usize,
    pub split: Option<Split>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.history_len + self.horizon
    }

    /// Time steps `[first, last]` covered by targets, if any.
    pub fn target_range(&self) -> Option<(usize, usize)> {
        let first = *self.starts.first()?;
        let last = *self.starts.last()?;
        Some((first + self.history_len, last + self.window_len() - 1))
    }
}

pub fn make_windows(panel: &Panel, history_len: usize, horizon: usize) -> Result<SampleSet> {
    if history_len == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("history length and horizon must be positive".into()));
    }
    let need = history_len + horizon;
    if panel.len() < need {
        return Err(Error::Data(format!(
            "panel has {} time steps; at least {need} are required for L = {history_len}, T = {horizon}",
            panel.len()
        )));
    }
    Ok(SampleSet {
        starts: (0..=panel.len() - need).collect(),
        history_len,
        horizon,
        split: None,
    })
}

/// Window counts per split before boundary windows are dropped.
pub fn split_counts(total: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let train = (fractions[0] * total as f64 + 1e-9).floor() as usize;
    let val = ((fractions[1] * total as f64 + 1e-9).floor() as usize).min(total - train);
    Ok([train, val, total - train - val])
}

/// Contiguous chronological partition into train, validation and test.
///
/// The time axis is cut at the first time step of each later split's first
/// window; windows of a later split that would still reach back across the
/// cut are dropped, so no two splits share a time step.
pub fn chrono_split(set: &SampleSet, fractions: [f64; 3]) -> Result<[SampleSet; 3]> {
    let [n_train, n_val, _] = split_counts(set.len(), fractions)?;
    let span = set.window_len();
    let parts = [
        &set.starts[..n_train],
        &set.starts[n_train..n_train + n_val],
        &set.starts[n_train + n_val..],
    ];
    let tags = [Split::Train, Split::Val, Split::Test];
    let mut out = Vec::with_capacity(3);
    let mut prev_end: Option<usize> = None;
    for (part, tag) in parts.into_iter().zip(tags) {
        let starts: Vec<usize> = part
            .iter()
            .copied()
            .filter(|&s| prev_end.is_none_or(|end| s >= end))
            .collect();
        if starts.is_empty() {
            return Err(Error::Data(format!(
                "{tag:?} split is empty ({} windows before dropping boundary windows of length {span})",
                part.len()
            )));
        }
        prev_end = Some(starts.last().unwrap() + span);
        out.push(SampleSet {
            starts,
            history_len: set.history_len,
            horizon: set.horizon,
            split: Some(tag),
        });
    }
    let [a, b, c]: [SampleSet; 3] = out.try_into().expect("three splits");
    Ok([a, b, c])
}

/// A normalized panel with its windows split chronologically.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub panel: Panel,
    pub normalizer: Normalizer,
    /// `N × T_total`, normalized, 0 at masked entries.
    pub normalized: Tensor,
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

impl Dataset {
    /// Windows and splits the panel, then fits the normalizer on the time
    /// steps covered by training windows only.
    pub fn prepare(panel: Panel, history_len: usize, horizon: usize, fractions: [f64; 3]) -> Result<Self> {
        let all = make_windows(&panel, history_len, horizon)?;
        let [train, val, test] = chrono_split(&all, fractions)?;
        let train_end = train.starts.last().unwrap() + train.window_len();
        let normalizer = Normalizer::fit(&panel, train_end)?;
        let normalized = normalize_panel(&panel, &normalizer);
        Ok(Self {
            panel,
            normalizer,
            normalized,
            train,
            val,
            test,
        })
    }

    /// Reuses an existing normalizer; every window lands in `test`.
    pub fn for_inference(panel: Panel, history_len: usize, horizon: usize, normalizer: Normalizer) -> Result<Self> {
        let all = make_windows(&panel, history_len, horizon)?;
        let normalized = normalize_panel(&panel, &normalizer);
        let empty = SampleSet {
            starts: Vec::new(),
            ..all.clone()
        };
        Ok(Self {
            panel,
            normalizer,
            normalized,
            train: SampleSet {
                split: Some(Split::Train),
                ..empty.clone()
            },
            val: SampleSet {
                split: Some(Split::Val),
                ..empty
            },
            test: SampleSet {
                split: Some(Split::Test),
                ..all
            },
        })
    }

    pub fn sensors(&self) -> usize {
        self.panel.sensors()
    }

    /// Normalized history `N × L` of the window starting at `start`.
    pub fn history(&self, start: usize, history_len: usize) -> Tensor {
        let n = self.sensors();
        Tensor::from_fn(n, history_len, |i, j| self.normalized.get2(i, start + j))
    }

    /// Raw target values and validity over `[from, from + len)`.
    pub fn raw_slice(&self, from: usize, len: usize) -> (Tensor, Tensor) {
        let n = self.sensors();
        let vals = Tensor::from_fn(n, len, |i, j| self.panel.values.get2(i, from + j));
        let mask = Tensor::from_fn(n, len, |i, j| if self.panel.is_valid(i, from + j) { 1.0 } else { 0.0 });
        (vals, mask)
    }
}

pub fn normalize_panel(panel: &Panel, norm: &Normalizer) -> Tensor {
    let data = panel
        .values
        .data()
        .iter()
        .zip(&panel.mask)
        .map(|(&v, &ok)| if ok { norm.apply(v) } else { 0.0 })
        .collect();
    Tensor::new(panel.values.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FOUR_ROWS: &str = "timestamp,a,b\n\
        2012-03-01T00:00:00,60.5,58\n\
        2012-03-01T00:05:00,61,57.5\n\
        2012-03-01T00:10:00,,59\n\
        2012-03-01T00:15:00,62,60\n";

    #[test]
    fn well_formed_panel() {
        let p = parse_panel(FOUR_ROWS.as_bytes()).unwrap();
        assert_eq!(p.sensors(), 2);
        assert_eq!(p.len(), 4);
        assert_eq!(p.sensor_ids, vec!["a", "b"]);
        assert_eq!(p.cadence(), Some(TimeDelta::minutes(5)));
        assert_eq!(p.values.get2(1, 1), 57.5);
        let missing: Vec<_> = (0..2)
            .flat_map(|s| (0..4).map(move |t| (s, t)))
            .filter(|&(s, t)| !p.is_valid(s, t))
            .collect();
        assert_eq!(missing, vec![(0, 2)]);
    }

    #[test]
    fn full_mask_without_gaps() {
        let text = FOUR_ROWS.replace(",,59", ",1,59");
        let p = parse_panel(text.as_bytes()).unwrap();
        assert!(p.mask.iter().all(|&m| m));
    }

    #[test]
    fn shuffled_rows_fail_cadence() {
        let mut lines: Vec<&str> = FOUR_ROWS.lines().collect();
        lines.swap(2, 3);
        let text = lines.join("\n");
        let err = parse_panel(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("irregular cadence")), "{err}");
    }

    #[test]
    fn gap_and_duplicates_are_reported() {
        let gap = FOUR_ROWS.replace("00:15:00", "00:20:00");
        let err = parse_panel(gap.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("00:10:00") && err.contains("00:20:00"), "{err}");
        let dup = FOUR_ROWS.replace("00:15:00", "00:05:00");
        let err = parse_panel(dup.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_input_is_a_parse_error() {
        assert!(matches!(parse_panel("time,a\n".as_bytes()), Err(Error::Parse { .. })));
        let bad = FOUR_ROWS.replace("61,", "fast,");
        assert!(matches!(parse_panel(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let short = FOUR_ROWS.replace(",57.5", "");
        assert!(parse_panel(short.as_bytes()).is_err());
        assert!(parse_panel("timestamp,a,a\n".as_bytes()).is_err());
    }

    #[test]
    fn nan_cells_are_masked() {
        let text = FOUR_ROWS.replace("62,", "NaN,");
        let p = parse_panel(text.as_bytes()).unwrap();
        assert!(!p.is_valid(0, 3));
        assert_eq!(p.values.get2(0, 3), 0.0);
    }

    #[test]
    fn timestamps_accept_common_iso_forms() {
        let a = parse_timestamp("2012-03-01T00:05:00").unwrap();
        assert_eq!(parse_timestamp("2012-03-01 00:05:00").unwrap(), a);
        assert_eq!(parse_timestamp("2012-03-01T00:05").unwrap(), a);
        assert_eq!(parse_timestamp("2012-03-01T01:05:00+01:00").unwrap(), a);
        assert_eq!(format_timestamp(&a), "2012-03-01T00:05:00");
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn panel_round_trips_through_csv() {
        let p = parse_panel(FOUR_ROWS.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_panel(&p, &mut buf).unwrap();
        assert_eq!(parse_panel(buf.as_slice()).unwrap(), p);
    }

    fn panel_of_len(len: usize) -> Panel {
        let t0 = parse_timestamp("2012-03-01T00:00:00").unwrap();
        let ts = (0..len).map(|i| t0 + TimeDelta::minutes(5 * i as i64)).collect();
        let values = Tensor::from_fn(2, len, |i, j| (i * 100 + j) as f64);
        Panel::new(vec!["a".into(), "b".into()], ts, values).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&panel_of_len(100), 12, 12).unwrap().len(), 77);
        assert_eq!(make_windows(&panel_of_len(24), 12, 12).unwrap().len(), 1);
        let err = make_windows(&panel_of_len(23), 12, 12).unwrap_err().to_string();
        assert!(err.contains("24"), "{err}");
    }

    #[test]
    fn split_counts_follow_fractions() {
        assert_eq!(split_counts(100, [0.7, 0.1, 0.2]).unwrap(), [70, 10, 20]);
        assert!(split_counts(100, [0.7, 0.2, 0.2]).is_err());
        let set = make_windows(&panel_of_len(123), 12, 12).unwrap();
        assert_eq!(set.len(), 100);
        assert!(chrono_split(&set, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn splits_are_disjoint_in_time() {
        let set = make_windows(&panel_of_len(600), 12, 12).unwrap();
        let [tr, va, te] = chrono_split(&set, [0.7, 0.1, 0.2]).unwrap();
        let [n_tr, n_va, n_te] = split_counts(577, [0.7, 0.1, 0.2]).unwrap();
        assert_eq!([n_tr, n_va, n_te], [403, 57, 117]);
        assert_eq!(tr.len(), n_tr);
        assert_eq!(va.len(), n_va - 23);
        assert_eq!(te.len(), n_te - 23);
        for (a, b) in [(&tr, &va), (&va, &te)] {
            let a_end = a.starts.last().unwrap() + a.window_len();
            assert!(b.starts[0] >= a_end);
            assert!(a.target_range().unwrap().1 < b.target_range().unwrap().0);
        }
    }

    #[test]
    fn normalizer_sees_only_training_steps() {
        let p = panel_of_len(200);
        let d = Dataset::prepare(p.clone(), 4, 4, [0.7, 0.1, 0.2]).unwrap();
        let end = d.train.starts.last().unwrap() + 8;
        assert_eq!(d.normalizer, Normalizer::fit(&p, end).unwrap());
        assert_ne!(d.normalizer, Normalizer::fit(&p, p.len()).unwrap());
    }

    #[test]
    fn normalizer_clamps_std() {
        let n = Normalizer::new(3.0, 0.0).unwrap();
        assert_eq!(n.std, Normalizer::MIN_STD);
        assert_eq!(n.invert(n.apply(3.0)), 3.0);
    }

    #[test]
    fn distances_parse_and_validate() {
        let e = parse_distances("from,to,distance\na,b,120.5\nb,a,inf\n".as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].distance, 120.5);
        assert!(e[1].distance.is_infinite());
        assert!(parse_distances("from,to,distance\na,b,-1\n".as_bytes()).is_err());
        assert!(parse_distances("src,dst,d\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_distances(&e, &mut buf).unwrap();
        assert_eq!(parse_distances(buf.as_slice()).unwrap(), e);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = LabeledMatrix {
            corner: "sensor_id".into(),
            row_labels: vec!["a".into(), "b".into()],
            col_labels: vec!["a".into(), "b".into()],
            values: Tensor::from_rows(&[vec![0.0, 0.1 + 0.2], vec![1e-300, -2.5]]).unwrap(),
        };
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(parse_matrix_csv(buf.as_slice()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn normalizer_inverts(mean in -100.0f64..100.0, std in 0.01f64..50.0, x in -1e3f64..1e3) {
            let n = Normalizer::new(mean, std).unwrap();
            prop_assert!((n.invert(n.apply(x)) - x).abs() <= 1e-12 * x.abs().max(1.0) * 10.0);
        }

        #[test]
        fn panel_csv_round_trip(vals in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 12)) {
            let t0 = parse_timestamp("2020-01-01T00:00:00").unwrap();
            let ts = (0..4).map(|i| t0 + TimeDelta::minutes(5 * i)).collect();
            let data = vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            let p = Panel::new(vec!["x".into(), "y".into(), "z".into()], ts, Tensor::matrix(3, 4, data).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_panel(&p, &mut buf).unwrap();
            prop_assert_eq!(parse_panel(buf.as_slice()).unwrap(), p);
        }

        #[test]
        fn windows_never_cross_splits(len in 80usize..400, l in 1usize..8, t in 1usize..8) {
            let set = make_windows(&panel_of_len(len), l, t).unwrap();
            prop_assert_eq!(set.len(), len - (l + t) + 1);
            if let Ok([a, b, c]) = chrono_split(&set, [0.7, 0.1, 0.2]) {
                let end_a = a.starts.last().unwrap() + a.window_len();
                let end_b = b.starts.last().unwrap() + b.window_len();
                prop_assert!(b.starts[0] >= end_a && c.starts[0] >= end_b);
                prop_assert!(c.starts.last().unwrap() + c.window_len() <= len);
            }
        }
    }
}
