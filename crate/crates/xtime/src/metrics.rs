//! Training metrics log: tab-separated, one line per (epoch, split).
//!
//! ```text
//! epoch	split	loss	accuracy	lr
//! 1	train	1.9923	0.2841	0.001
//! 1	test	1.7710	0.3975	0.001
//! ```
//!
//! Epochs are 1-based. Numbers use the shortest round-trip representation, so
//! identical runs produce identical bytes. No timestamps are written.

use std::fmt::Write as _;
use std::path::Path;

use xtime_core::train::EpochMetrics;

use crate::error::{AppError, AppResult};

pub const HEADER: &str = "epoch\tsplit\tloss\taccuracy\tlr";

pub fn render(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for m in rows {
        writeln!(s, "{}\t{}\t{}\t{}\t{}", m.epoch + 1, m.split, m.loss, m.accuracy, m.lr).unwrap();
    }
    s
}

pub fn parse(text: &str) -> Result<Vec<EpochMetrics>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(format!("expected header `{}`", HEADER.replace('\t', "\\t")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let line_no = i + 2;
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != 5 {
                return Err(format!("line {line_no}: expected 5 fields, got {}", cells.len()));
            }
            let num = |j: usize| -> Result<f64, String> {
                cells[j]
                    .parse()
                    .map_err(|_| format!("line {line_no}: `{}` is not a number", cells[j]))
            };
            let epoch: usize = cells[0]
                .parse()
                .ok()
                .filter(|&e| e > 0)
                .ok_or_else(|| format!("line {line_no}: bad epoch `{}`", cells[0]))?;
            Ok(EpochMetrics {
                epoch: epoch - 1,
                split: cells[1].to_string(),
                loss: num(2)?,
                accuracy: num(3)?,
                lr: num(4)?,
            })
        })
        .collect()
}

pub fn save(path: &Path, rows: &[EpochMetrics]) -> AppResult<()> {
    std::fs::write(path, render(rows)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse(&text).map_err(|m| AppError::format(path, m))
}
