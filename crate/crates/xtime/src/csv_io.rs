//! DB1-style CSV recordings.
//!
//! One header row, then one row per sample at the recording's sample rate:
//!
//! ```text
//! emg0,emg1,...,emg9,stimulus,repetition[,subject]
//! ```
//!
//! `emgN` columns must be contiguous from `emg0`; column order is free.
//! `stimulus` is 0..=52 (0 = rest), `repetition` is 0..=10 (0 = rest).
//! The optional `subject` column splits the file into one record per subject
//! (in order of first appearance); without it every row belongs to subject 1.

use std::collections::BTreeMap;
use std::path::Path;

use xtime_core::data::{SignalRecord, MAX_REPETITION, MAX_STIMULUS};

use crate::error::{AppError, AppResult};

const DEFAULT_SUBJECT: u32 = 1;

struct Columns {
    emg: Vec<usize>,
    stimulus: usize,
    repetition: usize,
    subject: Option<usize>,
}

fn columns(header: &csv::StringRecord, expected_channels: Option<usize>) -> Result<Columns, String> {
    let mut emg: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut stimulus, mut repetition, mut subject) = (None, None, None);
    for (pos, name) in header.iter().enumerate() {
        let name = name.trim();
        let slot = match name {
            "stimulus" => &mut stimulus,
            "repetition" => &mut repetition,
            "subject" => &mut subject,
            _ => {
                let idx = name
                    .strip_prefix("emg")
                    .and_then(|d| d.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown column `{name}`"))?;
                if emg.insert(idx, pos).is_some() {
                    return Err(format!("duplicate column `{name}`"));
                }
                continue;
            }
        };
        if slot.replace(pos).is_some() {
            return Err(format!("duplicate column `{name}`"));
        }
    }
    let channels = match expected_channels {
        Some(n) => n,
        None => emg.keys().next_back().map_or(0, |&m| m + 1),
    };
    if channels == 0 {
        return Err("missing column emg0".into());
    }
    if let Some(missing) = (0..channels).find(|c| !emg.contains_key(c)) {
        return Err(format!("missing column emg{missing}"));
    }
    if let Some(&extra) = emg.keys().find(|&&c| c >= channels) {
        return Err(format!("unexpected column emg{extra} (expected {channels} channels)"));
    }
    Ok(Columns {
        emg: emg.into_values().collect(),
        stimulus: stimulus.ok_or("missing column stimulus")?,
        repetition: repetition.ok_or("missing column repetition")?,
        subject,
    })
}

#[derive(Default)]
struct Builder {
    emg: Vec<f64>,
    stimulus: Vec<u16>,
    repetition: Vec<u16>,
}

fn parse_label(cell: &str, column: &str, max: u16, row: u64) -> Result<u16, String> {
    let v: u16 = cell
        .trim()
        .parse()
        .map_err(|_| format!("row {row}: column {column}: `{cell}` is not a non-negative integer"))?;
    if v > max {
        return Err(format!("row {row}: {column} {v} is outside 0..={max}"));
    }
    Ok(v)
}

/// Parses CSV text. `expected_channels` pins the channel count; otherwise it is
/// inferred from the header.
pub fn parse_records(text: &[u8], expected_channels: Option<usize>) -> Result<Vec<SignalRecord>, String> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text);
    let header = reader.headers().map_err(|e| format!("header: {e}"))?.clone();
    let cols = columns(&header, expected_channels)?;
    let channels = cols.emg.len();
    let mut order: Vec<u32> = Vec::new();
    let mut subjects: BTreeMap<u32, Builder> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        // Row numbers count the header as row 1, matching a spreadsheet view.
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| format!("row {row}: {e}"))?;
        if rec.len() != header.len() {
            return Err(format!("row {row}: {} cells, header has {}", rec.len(), header.len()));
        }
        let subject = match cols.subject {
            Some(c) => rec[c]
                .trim()
                .parse::<u32>()
                .map_err(|_| format!("row {row}: column subject: `{}` is not a non-negative integer", &rec[c]))?,
            None => DEFAULT_SUBJECT,
        };
        let b = subjects.entry(subject).or_insert_with(|| {
            order.push(subject);
            Builder::default()
        });
        for (ch, &c) in cols.emg.iter().enumerate() {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| format!("row {row}: column emg{ch}: `{}` is not a number", &rec[c]))?;
            if !v.is_finite() {
                return Err(format!("row {row}: column emg{ch}: non-finite value"));
            }
            b.emg.push(v);
        }
        b.stimulus.push(parse_label(&rec[cols.stimulus], "stimulus", MAX_STIMULUS, row)?);
        b.repetition.push(parse_label(&rec[cols.repetition], "repetition", MAX_REPETITION, row)?);
    }
    if order.is_empty() {
        return Err("no data rows".into());
    }
    order
        .into_iter()
        .map(|s| {
            let b = subjects.remove(&s).expect("subject was inserted");
            SignalRecord::new(s, channels, b.emg, b.stimulus, b.repetition).map_err(|e| e.to_string())
        })
        .collect()
}

/// Every subject in the file.
pub fn load_records(path: &Path, expected_channels: Option<usize>) -> AppResult<Vec<SignalRecord>> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    parse_records(&bytes, expected_channels).map_err(|m| AppError::format(path, m))
}

/// A single-subject file.
pub fn load_record(path: &Path, expected_channels: Option<usize>) -> AppResult<SignalRecord> {
    let mut records = load_records(path, expected_channels)?;
    if records.len() != 1 {
        return Err(AppError::format(path, format!("expected one subject, found {}", records.len())));
    }
    Ok(records.remove(0))
}

/// CSV text for `records`. A `subject` column is written when there is more
/// than one record or the subject id differs from the default. Values use the
/// shortest representation that parses back to the same bits.
pub fn render_records(records: &[SignalRecord]) -> Result<Vec<u8>, String> {
    let first = records.first().ok_or("no records to write")?;
    let channels = first.channels();
    if records.iter().any(|r| r.channels() != channels) {
        return Err("records disagree on channel count".into());
    }
    let with_subject = records.len() > 1 || first.subject_id != DEFAULT_SUBJECT;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..channels).map(|c| format!("emg{c}")).collect();
    header.push("stimulus".into());
    header.push("repetition".into());
    if with_subject {
        header.push("subject".into());
    }
    w.write_record(&header).map_err(|e| e.to_string())?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        for t in 0..r.num_samples() {
            row.clear();
            row.extend(r.sample(t).iter().map(|v| v.to_string()));
            row.push(r.stimulus()[t].to_string());
            row.push(r.repetition()[t].to_string());
            if with_subject {
                row.push(r.subject_id.to_string());
            }
            w.write_record(&row).map_err(|e| e.to_string())?;
        }
    }
    w.into_inner().map_err(|e| e.to_string())
}

pub fn save_records(path: &Path, records: &[SignalRecord]) -> AppResult<()> {
    let bytes = render_records(records).map_err(|m| AppError::format(path, m))?;
    std::fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn save_record(path: &Path, record: &SignalRecord) -> AppResult<()> {
    save_records(path, std::slice::from_ref(record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: usize) -> String {
        let mut h: Vec<String> = (0..n).map(|c| format!("emg{c}")).collect();
        h.push("stimulus".into());
        h.push("repetition".into());
        h.join(",")
    }

    #[test]
    fn three_rows_parse() {
        let text = format!("{}\n{}\n{}\n{}\n", header(2), "0.5,1,0,0", "-2,3e-3,4,1", "1,1,4,1");
        let recs = parse_records(text.as_bytes(), None).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].num_samples(), 3);
        assert_eq!(recs[0].channels(), 2);
        assert_eq!(recs[0].sample(1), &[-2.0, 3e-3]);
        assert_eq!(recs[0].stimulus(), &[0, 4, 4]);
        assert_eq!(recs[0].subject_id, 1);
    }

    #[test]
    fn missing_channel_is_named() {
        let text = "emg0,emg1,emg2,emg3,emg4,emg5,emg6,emg8,emg9,stimulus,repetition\n";
        let err = parse_records(text.as_bytes(), None).unwrap_err();
        assert!(err.contains("missing column emg7"), "{err}");
        let err = parse_records(header(7).as_bytes(), Some(10)).unwrap_err();
        assert!(err.contains("missing column emg7"), "{err}");
    }

    #[test]
    fn label_range_and_cell_errors_carry_rows() {
        let text = format!("{}\n0,0,1,1\n0,0,53,1\n", header(2));
        let err = parse_records(text.as_bytes(), None).unwrap_err();
        assert!(err.contains("row 3") && err.contains("stimulus 53"), "{err}");
        let text = format!("{}\n0,x,1,1\n", header(2));
        let err = parse_records(text.as_bytes(), None).unwrap_err();
        assert!(err.contains("row 2") && err.contains("emg1"), "{err}");
        let text = format!("{}\n0,1,1\n", header(2));
        let err = parse_records(text.as_bytes(), None).unwrap_err();
        assert!(err.contains("row 2") && err.contains("3 cells"), "{err}");
        let text = format!("{}\n0,1,1,11\n", header(2));
        assert!(parse_records(text.as_bytes(), None).unwrap_err().contains("repetition 11"));
    }

    #[test]
    fn subjects_split_in_order_of_appearance() {
        let text = format!("{},subject\n1,2,1,1,7\n3,4,1,1,3\n5,6,0,0,7\n", header(2));
        let recs = parse_records(text.as_bytes(), None).unwrap();
        assert_eq!(recs.iter().map(|r| r.subject_id).collect::<Vec<_>>(), vec![7, 3]);
        assert_eq!(recs[0].emg(), &[1.0, 2.0, 5.0, 6.0]);
        let back = parse_records(&render_records(&recs).unwrap(), None).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn missing_label_columns_and_empty_files_fail() {
        assert!(parse_records(b"emg0,stimulus\n", None).unwrap_err().contains("repetition"));
        assert!(parse_records(b"emg0,emg0,stimulus,repetition\n", None).unwrap_err().contains("duplicate"));
        assert!(parse_records(header(1).as_bytes(), None).unwrap_err().contains("no data rows"));
    }
}
