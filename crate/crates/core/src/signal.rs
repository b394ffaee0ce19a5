//! Preprocessing: low-pass filtering, amplitude normalization and windowing.

use alloc::format;
use alloc::vec::Vec;

use crate::data::{SignalRecord, SplitSpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::math;

/// Default companding constant.
pub const DEFAULT_MU: f64 = 256.0;
/// Windows longer than this exceed the acceptable control delay.
pub const LATENCY_BOUND_MS: u32 = 300;

/// First-order IIR section `y[t] = b0 x[t] + b1 x[t-1] - a1 y[t-1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
}

impl FilterCoeffs {
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1) / (1.0 + self.a1)
    }

    /// |H(e^{jω})| at frequency `f` for sampling rate `fs`.
    pub fn magnitude_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * core::f64::consts::PI * f / fs;
        let (c, s) = (math::cos(w), math::sin(w));
        // numerator b0 + b1 e^{-jw}, denominator 1 + a1 e^{-jw}
        let (nr, ni) = (self.b0 + self.b1 * c, -self.b1 * s);
        let (dr, di) = (1.0 + self.a1 * c, -self.a1 * s);
        math::sqrt((nr * nr + ni * ni) / (dr * dr + di * di))
    }
}

/// First-order Butterworth low-pass by the bilinear transform with a
/// prewarped cutoff.
pub fn butterworth_lowpass(fc: f64, fs: f64) -> Result<FilterCoeffs> {
    if !(fs > 0.0) || !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {fc} Hz must lie in (0, fs/2) for fs = {fs} Hz"
        )));
    }
    let wc = 2.0 * fs * math::tan(core::f64::consts::PI * fc / fs);
    let den = 2.0 * fs + wc;
    Ok(FilterCoeffs {
        b0: wc / den,
        b1: wc / den,
        a1: (wc - 2.0 * fs) / den,
    })
}

/// Causal direct-form filtering from zero initial state.
pub fn filter_apply(x: &[f64], c: &FilterCoeffs) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let (mut x_prev, mut y_prev) = (0.0, 0.0);
    for &v in x {
        let y = c.b0 * v + c.b1 * x_prev - c.a1 * y_prev;
        out.push(y);
        x_prev = v;
        y_prev = y;
    }
    out
}

/// Forward then time-reversed pass: zero phase, squared magnitude response.
pub fn filter_apply_two_pass(x: &[f64], c: &FilterCoeffs) -> Vec<f64> {
    let mut y = filter_apply(x, c);
    y.reverse();
    let mut z = filter_apply(&y, c);
    z.reverse();
    z
}

/// Filters each channel of a sample-major record in place.
pub fn filter_record(record: &mut SignalRecord, c: &FilterCoeffs, two_pass: bool) {
    for ch in 0..record.channels() {
        let x = record.channel(ch);
        let y = if two_pass {
            filter_apply_two_pass(&x, c)
        } else {
            filter_apply(&x, c)
        };
        record.set_channel(ch, &y);
    }
}

/// Logarithmic companding `sign(x) ln(1 + mu|x|) / ln(1 + mu)`.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    let m = math::ln_1p(mu * x.abs()) / math::ln_1p(mu);
    if x < 0.0 {
        -m
    } else {
        m
    }
}

/// Applies [`mu_law`] to interleaved `[samples, channels]` data, rejecting
/// magnitudes above one.
pub fn mu_law_normalize(data: &mut [f64], channels: usize, mu: f64) -> Result<()> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if channels == 0 {
        return Err(Error::InvalidArgument("channels must be positive".into()));
    }
    if let Some(i) = data.iter().position(|v| !(v.abs() <= 1.0 + 1e-12)) {
        return Err(Error::OutOfRange {
            channel: i % channels,
            index: i / channels,
            value: data[i],
        });
    }
    for v in data.iter_mut() {
        *v = mu_law(v.clamp(-1.0, 1.0), mu);
    }
    Ok(())
}

/// Per-channel range fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxStats {
    /// Ranges over the samples of `data` (interleaved) for which `keep(t)` holds.
    pub fn fit(data: &[f64], channels: usize, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let mut min = alloc::vec![f64::INFINITY; channels];
        let mut max = alloc::vec![f64::NEG_INFINITY; channels];
        let mut any = false;
        for (t, sample) in data.chunks_exact(channels).enumerate() {
            if !keep(t) {
                continue;
            }
            any = true;
            for (c, &v) in sample.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        if !any {
            return Err(Error::EmptyDataset("no training samples to fit min/max"));
        }
        Ok(Self { min, max })
    }

    /// Maps `[min, max]` of each channel onto `[-1, 1]`; values outside the
    /// fitted range are clamped. Constant channels become zero.
    pub fn apply(&self, data: &mut [f64]) {
        let channels = self.min.len();
        for (c, (&lo, &hi)) in self.min.iter().zip(&self.max).enumerate() {
            if hi <= lo {
                log::warn!("channel {c} is constant ({lo}) over the training split; mapped to 0");
            }
        }
        for sample in data.chunks_exact_mut(channels) {
            for (c, v) in sample.iter_mut().enumerate() {
                let (lo, hi) = (self.min[c], self.max[c]);
                *v = if hi > lo {
                    (2.0 * (*v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
            }
        }
    }
}

/// Largest absolute value over the samples for which `keep(t)` holds, all channels.
pub fn global_abs_max(data: &[f64], channels: usize, keep: impl Fn(usize) -> bool) -> f64 {
    data.chunks_exact(channels)
        .enumerate()
        .filter(|(t, _)| keep(*t))
        .flat_map(|(_, s)| s.iter())
        .fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    MuLaw,
    MinMax,
    None,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::MuLaw => "mu-law",
            NormKind::MinMax => "minmax",
            NormKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mu-law" | "mulaw" | "mu_law" => Ok(NormKind::MuLaw),
            "minmax" => Ok(NormKind::MinMax),
            "none" => Ok(NormKind::None),
            _ => Err(Error::InvalidArgument(format!(
                "unknown normalization `{s}` (expected mu-law, minmax or none)"
            ))),
        }
    }
}

/// Statistics fitted on the training split and reused for every other split.
#[derive(Debug, Clone, PartialEq)]
pub enum NormStats {
    /// Divide by the global absolute maximum, then compand.
    MuLaw { scale: f64, mu: f64 },
    MinMax(MinMaxStats),
    None,
}

impl NormStats {
    pub fn kind(&self) -> NormKind {
        match self {
            NormStats::MuLaw { .. } => NormKind::MuLaw,
            NormStats::MinMax(_) => NormKind::MinMax,
            NormStats::None => NormKind::None,
        }
    }

    /// Fits on the gesture samples of training repetitions, pooled over all records.
    pub fn fit(kind: NormKind, mu: f64, records: &[SignalRecord], split: &SplitSpec) -> Result<Self> {
        let channels = common_channels(records)?;
        let has_train = |r: &SignalRecord| r.repetition().iter().any(|&rep| split.is_train(rep));
        if !records.iter().any(has_train) {
            return Err(Error::EmptyDataset("no training-repetition samples to fit normalization"));
        }
        let fitted = records.iter().filter(|r| has_train(r));
        Ok(match kind {
            NormKind::MuLaw => {
                if !(mu > 0.0) {
                    return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
                }
                let m = fitted
                    .map(|r| global_abs_max(r.emg(), channels, |t| split.is_train(r.repetition()[t])))
                    .fold(0.0, f64::max);
                NormStats::MuLaw {
                    scale: if m > 0.0 { m } else { 1.0 },
                    mu,
                }
            }
            NormKind::MinMax => {
                let mut acc = MinMaxStats {
                    min: alloc::vec![f64::INFINITY; channels],
                    max: alloc::vec![f64::NEG_INFINITY; channels],
                };
                for r in fitted {
                    let s = MinMaxStats::fit(r.emg(), channels, |t| split.is_train(r.repetition()[t]))?;
                    for c in 0..channels {
                        acc.min[c] = acc.min[c].min(s.min[c]);
                        acc.max[c] = acc.max[c].max(s.max[c]);
                    }
                }
                NormStats::MinMax(acc)
            }
            NormKind::None => NormStats::None,
        })
    }

    /// Normalizes interleaved data. For mu-law, prescaled values outside
    /// `[-1, 1]` (possible only off the fitted split) are clamped first.
    pub fn apply(&self, data: &mut [f64], channels: usize) -> Result<()> {
        match self {
            NormStats::MuLaw { scale, mu } => {
                for v in data.iter_mut() {
                    *v = (*v / scale).clamp(-1.0, 1.0);
                }
                mu_law_normalize(data, channels, *mu)
            }
            NormStats::MinMax(s) => {
                if s.min.len() != channels {
                    return Err(Error::ShapeMismatch {
                        op: "minmax",
                        lhs: alloc::vec![s.min.len()],
                        rhs: alloc::vec![channels],
                    });
                }
                s.apply(data);
                Ok(())
            }
            NormStats::None => Ok(()),
        }
    }
}

/// Converts a duration to a whole number of samples.
pub fn ms_to_samples(ms: u32, fs: f64) -> Result<usize> {
    let exact = ms as f64 * fs / 1000.0;
    let rounded = libm::round(exact);
    if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "{ms} ms at {fs} Hz is {exact} samples; need a positive integer"
        )));
    }
    Ok(rounded as usize)
}

/// Sliding-window segmentation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub window_ms: u32,
    pub step_ms: u32,
    pub sample_rate: f64,
    /// Output classes; inferred from the largest stimulus when `None`.
    pub num_classes: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_ms: 200,
            step_ms: 10,
            sample_rate: crate::data::DB1_SAMPLE_RATE,
            num_classes: None,
        }
    }
}

/// Cuts `record` into windows lying entirely inside one gesture repetition.
/// Windows touching rest or a label change are dropped; gesture `g` becomes
/// class `g - 1`.
pub fn segment_windows(record: &SignalRecord, cfg: &WindowConfig) -> Result<WindowedDataset> {
    let w = ms_to_samples(cfg.window_ms, cfg.sample_rate)?;
    let stride = ms_to_samples(cfg.step_ms, cfg.sample_rate)?;
    if cfg.window_ms > LATENCY_BOUND_MS {
        log::warn!(
            "window of {} ms exceeds the {LATENCY_BOUND_MS} ms latency bound for real-time control",
            cfg.window_ms
        );
    }
    let num_classes = cfg.num_classes.unwrap_or(record.max_stimulus() as usize);
    if num_classes == 0 {
        return Err(Error::EmptyDataset("record contains no gesture samples"));
    }
    let c = record.channels();
    let (stim, reps) = (record.stimulus(), record.repetition());
    let mut ds = WindowedDataset::empty(c, w, cfg.window_ms, num_classes);
    let mut buf = alloc::vec![0.0; c * w];
    let n = record.num_samples();
    let mut start = 0;
    while start + w <= n {
        let (s0, r0) = (stim[start], reps[start]);
        let end = start + w;
        let pure = s0 != 0
            && stim[start..end].iter().all(|&s| s == s0)
            && reps[start..end].iter().all(|&r| r == r0);
        if pure {
            let label = s0 as usize - 1;
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
            for t in 0..w {
                for ch in 0..c {
                    buf[ch * w + t] = record.emg()[(start + t) * c + ch];
                }
            }
            ds.push(&buf, label, r0, record.subject_id);
        }
        start += stride;
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("no window lies entirely inside one gesture"));
    }
    Ok(ds)
}

/// Whole preprocessing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub cutoff_hz: f64,
    pub two_pass: bool,
    pub norm: NormKind,
    pub mu: f64,
    pub window: WindowConfig,
    pub split: SplitSpec,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 1.0,
            two_pass: false,
            norm: NormKind::MuLaw,
            mu: DEFAULT_MU,
            window: WindowConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

fn common_channels(records: &[SignalRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptyDataset("no records"))?;
    if let Some(r) = records.iter().find(|r| r.channels() != first.channels()) {
        return Err(Error::InvalidArgument(format!(
            "records disagree on channel count: {} vs {} (subject {})",
            first.channels(),
            r.channels(),
            r.subject_id
        )));
    }
    Ok(first.channels())
}

fn filtered(records: &[SignalRecord], cfg: &PrepConfig) -> Result<Vec<SignalRecord>> {
    common_channels(records)?;
    let coeffs = butterworth_lowpass(cfg.cutoff_hz, cfg.window.sample_rate)?;
    Ok(records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            filter_record(&mut r, &coeffs, cfg.two_pass);
            r
        })
        .collect())
}

fn normalize_and_segment(
    mut records: Vec<SignalRecord>,
    cfg: &PrepConfig,
    stats: &NormStats,
) -> Result<WindowedDataset> {
    let mut window = cfg.window.clone();
    if window.num_classes.is_none() {
        window.num_classes = Some(records.iter().map(|r| r.max_stimulus() as usize).max().unwrap_or(0));
    }
    let mut out: Option<WindowedDataset> = None;
    for r in &mut records {
        let channels = r.channels();
        stats.apply(r.emg_mut(), channels)?;
        let ds = segment_windows(r, &window)?;
        match &mut out {
            Some(acc) => acc.extend(&ds)?,
            None => out = Some(ds),
        }
    }
    out.ok_or(Error::EmptyDataset("no records"))
}

/// Filter every record, fit statistics on training repetitions, normalize,
/// then segment. Returns all windows (both splits) and the fitted statistics.
pub fn preprocess(records: &[SignalRecord], cfg: &PrepConfig) -> Result<(WindowedDataset, NormStats)> {
    let records = filtered(records, cfg)?;
    let stats = NormStats::fit(cfg.norm, cfg.mu, &records, &cfg.split)?;
    let ds = normalize_and_segment(records, cfg, &stats)?;
    Ok((ds, stats))
}

/// Applies the chain with previously fitted statistics (e.g. from a checkpoint).
pub fn preprocess_with(records: &[SignalRecord], cfg: &PrepConfig, stats: &NormStats) -> Result<WindowedDataset> {
    let records = filtered(records, cfg)?;
    normalize_and_segment(records, cfg, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn butterworth_reference_values() {
        let c = butterworth_lowpass(1.0, 100.0).unwrap();
        // reference values from an independent DSP library (scipy.signal.butter(1, 1, fs=100))
        assert!((c.b0 - 0.030_468_747_091_253_83).abs() < 1e-9);
        assert_eq!(c.b0, c.b1);
        assert!((c.a1 + 0.939_062_505_817_492_3).abs() < 1e-9);
        assert!((c.dc_gain() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn butterworth_rejects_bad_cutoffs() {
        for (fc, fs) in [(0.0, 100.0), (50.0, 100.0), (-1.0, 100.0), (60.0, 100.0), (1.0, 0.0)] {
            assert!(butterworth_lowpass(fc, fs).is_err(), "{fc} {fs}");
        }
    }

    #[test]
    fn half_power_at_cutoff_and_wide_passband() {
        let c = butterworth_lowpass(1.0, 100.0).unwrap();
        assert!((c.magnitude_at(1.0, 100.0) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let wide = butterworth_lowpass(45.0, 100.0).unwrap();
        assert!(wide.magnitude_at(25.0, 100.0) > 0.9);
    }

    #[test]
    fn filter_examples() {
        let c = butterworth_lowpass(1.0, 100.0).unwrap();
        assert!(filter_apply(&[0.0; 50], &c).iter().all(|&v| v == 0.0));
        let y = filter_apply(&[3.0; 500], &c);
        assert!((y[499] - 3.0).abs() < 1e-6 * 3.0);
        let mut impulse = alloc::vec![0.0; 6];
        impulse[0] = 1.0;
        let y = filter_apply(&impulse, &c);
        assert_eq!(y[0], c.b0);
        assert_eq!(y[1], c.b1 - c.a1 * c.b0);
        for t in 2..6 {
            assert_eq!(y[t], -c.a1 * y[t - 1]);
        }
        assert_eq!(filter_apply_two_pass(&impulse, &c).len(), 6);
    }

    #[test]
    fn mu_law_examples() {
        assert_eq!(mu_law(0.0, DEFAULT_MU), 0.0);
        assert_eq!(mu_law(1.0, DEFAULT_MU), 1.0);
        assert_eq!(mu_law(-1.0, DEFAULT_MU), -1.0);
        let expected = libm::log(129.0) / libm::log(257.0);
        assert!((mu_law(0.5, DEFAULT_MU) - expected).abs() < 1e-12);
        // 30-digit evaluation of ln 129 / ln 257
        assert!((mu_law(0.5, DEFAULT_MU) - 0.875_787_668_075_096_7).abs() < 1e-12);
        assert_ne!(mu_law(mu_law(0.5, DEFAULT_MU), DEFAULT_MU), mu_law(0.5, DEFAULT_MU));
    }

    #[test]
    fn mu_law_range_error_names_channel_and_index() {
        let mut data = [0.1, 0.2, 0.3, 1.5];
        assert_eq!(
            mu_law_normalize(&mut data, 2, DEFAULT_MU),
            Err(Error::OutOfRange { channel: 1, index: 1, value: 1.5 })
        );
        let mut ok = [1.0 + 1e-13, -1.0];
        mu_law_normalize(&mut ok, 1, DEFAULT_MU).unwrap();
        assert_eq!(ok, [1.0, -1.0]);
    }

    #[test]
    fn minmax_examples() {
        let s = MinMaxStats::fit(&[0.0, 5.0, 10.0], 1, |_| true).unwrap();
        let mut x = [0.0, 5.0, 10.0];
        s.apply(&mut x);
        assert_eq!(x, [-1.0, 0.0, 1.0]);

        let s = MinMaxStats::fit(&[-1.0, 0.25, 1.0], 1, |_| true).unwrap();
        let mut x = [-1.0, 0.25, 1.0];
        s.apply(&mut x);
        assert_eq!(x, [-1.0, 0.25, 1.0]);

        let s = MinMaxStats::fit(&[2.0, 2.0], 1, |_| true).unwrap();
        let mut x = [2.0, 3.0];
        s.apply(&mut x);
        assert_eq!(x, [0.0, 0.0]);

        // statistics come only from kept samples
        let s = MinMaxStats::fit(&[0.0, 100.0, 10.0], 1, |t| t != 1).unwrap();
        assert_eq!((s.min[0], s.max[0]), (0.0, 10.0));
        assert!(MinMaxStats::fit(&[1.0], 1, |_| false).is_err());
    }

    fn toy_record(stim: &[u16], reps: &[u16]) -> SignalRecord {
        let emg = (0..stim.len()).map(|t| t as f64).collect();
        SignalRecord::new(3, 1, emg, stim.to_vec(), reps.to_vec()).unwrap()
    }

    fn cfg_samples(window_ms: u32, step_ms: u32) -> WindowConfig {
        WindowConfig {
            window_ms,
            step_ms,
            sample_rate: 100.0,
            num_classes: None,
        }
    }

    #[test]
    fn segmentation_counts_and_labels() {
        let n = 500;
        let r = toy_record(&alloc::vec![4; n], &alloc::vec![1; n]);
        let ds = segment_windows(&r, &cfg_samples(200, 10)).unwrap();
        assert_eq!(ds.window_len, 20);
        assert_eq!(ds.len(), 481);
        assert!(ds.labels().iter().all(|&l| l == 3));
        assert_eq!(ds.num_classes, 4);
        assert_eq!(ds.window(1)[0], 1.0);
        assert_eq!(ds.subjects()[0], 3);
    }

    #[test]
    fn segmentation_respects_transitions_and_rest() {
        let mut stim = alloc::vec![1u16; 100];
        stim.extend(alloc::vec![2u16; 100]);
        stim.extend(alloc::vec![0u16; 30]);
        let reps = alloc::vec![1u16; 230];
        let r = toy_record(&stim, &reps);
        let ds = segment_windows(&r, &cfg_samples(100, 10)).unwrap();
        assert_eq!(ds.len(), 2 * 91);
        for i in 0..ds.len() {
            let w = ds.window(i);
            let (first, last) = (w[0] as usize, w[w.len() - 1] as usize);
            assert!(!(first <= 99 && last >= 100), "window spans the transition");
            assert!(last < 200, "window touches rest");
        }
    }

    #[test]
    fn segmentation_errors() {
        let r = toy_record(&[1; 10], &[1; 10]);
        assert!(segment_windows(&r, &WindowConfig { window_ms: 25, ..cfg_samples(0, 10) }).is_err());
        assert!(segment_windows(&r, &cfg_samples(100, 15)).is_err());
        assert!(matches!(
            segment_windows(&r, &cfg_samples(200, 10)),
            Err(Error::EmptyDataset(_))
        ));
        let rest = toy_record(&[0; 30], &[0; 30]);
        assert!(segment_windows(&rest, &cfg_samples(100, 10)).is_err());
        // long windows still work, with a warning
        let long = toy_record(&[1; 40], &[1; 40]);
        assert_eq!(segment_windows(&long, &cfg_samples(350, 10)).unwrap().len(), 6);
    }

    #[test]
    fn pipeline_fits_on_training_reps_only() {
        let cfg = SynthConfig { reps: 10, num_classes: 3, ..SynthConfig::default() };
        let mut rec = generate_synthetic(&cfg).unwrap();
        // blow up a test-repetition sample; training statistics must not see it
        let idx = rec.repetition().iter().position(|&r| r == 2).unwrap();
        let channels = rec.channels();
        rec.emg_mut()[idx * channels] = 1e6;
        let prep = PrepConfig::default();
        let (ds, stats) = preprocess(core::slice::from_ref(&rec), &prep).unwrap();
        let NormStats::MuLaw { scale, .. } = stats else { panic!() };
        assert!(scale < 1e3);
        assert!(ds.windows().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(ds.num_classes, 3);
        let again = preprocess_with(core::slice::from_ref(&rec), &prep, &stats).unwrap();
        assert_eq!(again, ds);

        let (mm, stats) = preprocess(core::slice::from_ref(&rec), &PrepConfig { norm: NormKind::MinMax, ..prep.clone() }).unwrap();
        assert!(matches!(stats, NormStats::MinMax(_)));
        assert!(mm.windows().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn statistics_pool_over_subjects() {
        let base = SynthConfig { reps: 10, num_classes: 2, ..SynthConfig::default() };
        let a = generate_synthetic(&base).unwrap();
        let mut b = generate_synthetic(&SynthConfig { seed: 1, subject_id: 2, ..base }).unwrap();
        b.emg_mut().iter_mut().for_each(|v| *v *= 4.0);
        let prep = PrepConfig::default();
        let (ds, stats) = preprocess(&[a.clone(), b.clone()], &prep).unwrap();
        let (_, stats_b) = preprocess(core::slice::from_ref(&b), &prep).unwrap();
        assert_eq!(stats, stats_b, "the louder subject sets the global scale");
        assert!(ds.subjects().contains(&1) && ds.subjects().contains(&2));
        let narrow = SignalRecord::new(3, 1, alloc::vec![0.0; 2], alloc::vec![1; 2], alloc::vec![1; 2]).unwrap();
        assert!(preprocess(&[a, narrow], &prep).is_err());
        assert!(preprocess(&[], &prep).is_err());
    }

    #[test]
    fn norm_kind_names_round_trip() {
        for k in [NormKind::MuLaw, NormKind::MinMax, NormKind::None] {
            assert_eq!(NormKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(NormKind::parse("zscore").is_err());
    }

    proptest! {
        #[test]
        fn mu_law_is_odd_and_magnifies(x in -1.0f64..=1.0, mu in 0.5f64..1000.0) {
            let f = mu_law(x, mu);
            prop_assert_eq!(mu_law(-x, mu), -f);
            prop_assert!(f.abs() >= x.abs() - 1e-15);
            prop_assert!(f.abs() <= 1.0);
        }

        #[test]
        fn mu_law_is_increasing(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            prop_assume!(a < b);
            prop_assert!(mu_law(a, DEFAULT_MU) < mu_law(b, DEFAULT_MU));
        }

        #[test]
        fn butterworth_is_stable_with_unit_dc_gain(fs in 1.0f64..10_000.0, frac in 0.001f64..0.499) {
            let c = butterworth_lowpass(frac * fs, fs).unwrap();
            prop_assert!(c.a1.abs() < 1.0);
            prop_assert!((c.dc_gain() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bounded_input_bounded_output(xs in proptest::collection::vec(-1.0f64..1.0, 1..2000), frac in 0.001f64..0.499) {
            let c = butterworth_lowpass(frac * 100.0, 100.0).unwrap();
            // first-order low-pass with b0, b1 >= 0: |y| <= (b0 + b1) / (1 - |a1|) max|x|
            let bound = (c.b0 + c.b1) / (1.0 - c.a1.abs());
            for y in filter_apply(&xs, &c) {
                prop_assert!(y.abs() <= bound + 1e-12);
            }
        }

        #[test]
        fn window_count_formula(len in 1usize..300, w in 1usize..40, stride in 1usize..7) {
            prop_assume!(len >= w);
            let r = toy_record(&alloc::vec![1; len], &alloc::vec![1; len]);
            let cfg = cfg_samples(10 * w as u32, 10 * stride as u32);
            let ds = segment_windows(&r, &cfg).unwrap();
            prop_assert_eq!(ds.len(), (len - w) / stride + 1);
        }
    }
}
