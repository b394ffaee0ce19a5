//! Preprocessed-dataset container (`.xtd`).
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic        8 bytes  "XTIMEDS\0"
//! version      u32      1
//! channels     u32
//! window_len   u32      samples per window
//! window_ms    u32
//! step_ms      u32
//! num_classes  u32
//! sample_rate  f64      Hz
//! cutoff_hz    f64      low-pass cutoff used
//! two_pass     u8       0 or 1
//! norm         u8 tag + payload: 0 none | 1 mu-law: scale f64, mu f64
//!                               | 2 minmax: n u64, n x f64 min, n x f64 max
//! test reps    u64 count, u32 each
//! count        u64      number of windows
//! windows      count x channels x window_len f64, window-major, channel-major within a window
//! labels       count x u32 (0-based class)
//! repetitions  count x u16
//! subjects     count x u32
//! ```

use std::path::Path;

use xtime_core::data::{SplitSpec, WindowedDataset};
use xtime_core::signal::{MinMaxStats, NormStats};

use crate::binio::{Decoder, Encoder};
use crate::error::{AppError, AppResult};

const MAGIC: &[u8; 8] = b"XTIMEDS\0";
const VERSION: u32 = 1;

/// Windows plus everything needed to reproduce or reuse their preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFile {
    pub dataset: WindowedDataset,
    pub stats: NormStats,
    pub split: SplitSpec,
    pub sample_rate: f64,
    pub step_ms: u32,
    pub cutoff_hz: f64,
    pub two_pass: bool,
}

impl PreprocessedFile {
    pub fn train_test(&self) -> AppResult<(WindowedDataset, WindowedDataset)> {
        Ok(xtime_core::data::split_by_repetition(&self.dataset, &self.split)?)
    }
}

pub(crate) fn put_stats(e: &mut Encoder, stats: &NormStats) {
    match stats {
        NormStats::None => e.u8(0),
        NormStats::MuLaw { scale, mu } => {
            e.u8(1);
            e.f64(*scale);
            e.f64(*mu);
        }
        NormStats::MinMax(s) => {
            e.u8(2);
            e.len(s.min.len());
            e.f64s(&s.min);
            e.f64s(&s.max);
        }
    }
}

pub(crate) fn get_stats(d: &mut Decoder<'_>) -> Result<NormStats, String> {
    Ok(match d.u8()? {
        0 => NormStats::None,
        1 => NormStats::MuLaw {
            scale: d.f64()?,
            mu: d.f64()?,
        },
        2 => {
            let n = d.len(16)?;
            let min = d.f64s(n)?;
            let max = d.f64s(n)?;
            NormStats::MinMax(MinMaxStats { min, max })
        }
        t => return Err(format!("unknown normalization tag {t}")),
    })
}

fn u32_of(v: usize, what: &str) -> AppResult<u32> {
    u32::try_from(v).map_err(|_| AppError::Data(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode(f: &PreprocessedFile) -> AppResult<Vec<u8>> {
    let ds = &f.dataset;
    let mut e = Encoder::new(MAGIC, VERSION);
    e.u32(u32_of(ds.channels, "channel count")?);
    e.u32(u32_of(ds.window_len, "window length")?);
    e.u32(ds.window_ms);
    e.u32(f.step_ms);
    e.u32(u32_of(ds.num_classes, "class count")?);
    e.f64(f.sample_rate);
    e.f64(f.cutoff_hz);
    e.u8(f.two_pass as u8);
    put_stats(&mut e, &f.stats);
    let reps: Vec<u32> = f.split.test_repetitions().map(u32::from).collect();
    e.u32s(reps.into_iter());
    e.len(ds.len());
    e.f64s(ds.windows());
    for &l in ds.labels() {
        e.u32(u32_of(l, "label")?);
    }
    for &r in ds.repetitions() {
        e.u16(r);
    }
    for &s in ds.subjects() {
        e.u32(s);
    }
    Ok(e.buf)
}

pub fn decode(bytes: &[u8]) -> Result<PreprocessedFile, String> {
    let (mut d, version) = Decoder::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(format!("unsupported dataset version {version} (expected {VERSION})"));
    }
    let channels = d.u32()? as usize;
    let window_len = d.u32()? as usize;
    let window_ms = d.u32()?;
    let step_ms = d.u32()?;
    let num_classes = d.u32()? as usize;
    let sample_rate = d.f64()?;
    let cutoff_hz = d.f64()?;
    let two_pass = match d.u8()? {
        0 => false,
        1 => true,
        b => return Err(format!("two_pass flag must be 0 or 1, got {b}")),
    };
    let stats = get_stats(&mut d)?;
    let reps = d.u32s()?;
    let reps: Vec<u16> = reps
        .into_iter()
        .map(|r| u16::try_from(r).map_err(|_| format!("test repetition {r} out of range")))
        .collect::<Result<_, _>>()?;
    let split = SplitSpec::new(reps).map_err(|e| e.to_string())?;
    let per = channels.checked_mul(window_len).ok_or("window size overflow")?;
    let count = d.len(per * 8 + 10)?;
    let windows = d.f64s(count * per)?;
    let labels = (0..count).map(|_| d.u32().map(|l| l as usize)).collect::<Result<Vec<_>, _>>()?;
    let repetitions = (0..count).map(|_| d.u16()).collect::<Result<Vec<_>, _>>()?;
    let subjects = (0..count).map(|_| d.u32()).collect::<Result<Vec<_>, _>>()?;
    d.finish()?;
    let dataset = WindowedDataset::from_parts(
        channels,
        window_len,
        window_ms,
        num_classes,
        windows,
        labels,
        repetitions,
        subjects,
    )
    .map_err(|e| e.to_string())?;
    Ok(PreprocessedFile {
        dataset,
        stats,
        split,
        sample_rate,
        step_ms,
        cutoff_hz,
        two_pass,
    })
}

pub fn save(path: &Path, f: &PreprocessedFile) -> AppResult<()> {
    std::fs::write(path, encode(f)?).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<PreprocessedFile> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}
