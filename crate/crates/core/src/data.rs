//! Recordings, windowed datasets, repetition splits and the synthetic generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Largest gesture label (DB1 has 52 gestures; 0 is rest).
pub const MAX_STIMULUS: u16 = 52;
/// Largest repetition id (DB1 repeats each gesture 10 times; 0 is rest).
pub const MAX_REPETITION: u16 = 10;
pub const DB1_CHANNELS: usize = 10;
pub const DB1_SAMPLE_RATE: f64 = 100.0;

/// One subject's continuous recording. `emg` is sample-major:
/// `emg[t * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub subject_id: u32,
    channels: usize,
    emg: Vec<f64>,
    stimulus: Vec<u16>,
    repetition: Vec<u16>,
}

impl SignalRecord {
    pub fn new(
        subject_id: u32,
        channels: usize,
        emg: Vec<f64>,
        stimulus: Vec<u16>,
        repetition: Vec<u16>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("a record needs at least one channel".into()));
        }
        let n = stimulus.len();
        if emg.len() != n * channels || repetition.len() != n {
            return Err(Error::InvalidArgument(format!(
                "sample counts differ: emg {} values for {channels} channels, {n} stimulus, {} repetition",
                emg.len(),
                repetition.len()
            )));
        }
        if let Some(t) = stimulus.iter().position(|&s| s > MAX_STIMULUS) {
            return Err(Error::InvalidArgument(format!(
                "stimulus {} at sample {t} outside 0..={MAX_STIMULUS}",
                stimulus[t]
            )));
        }
        if let Some(t) = repetition.iter().position(|&r| r > MAX_REPETITION) {
            return Err(Error::InvalidArgument(format!(
                "repetition {} at sample {t} outside 0..={MAX_REPETITION}",
                repetition[t]
            )));
        }
        if let Some(i) = emg.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite emg value at sample {}, channel {}",
                i / channels,
                i % channels
            )));
        }
        Ok(Self {
            subject_id,
            channels,
            emg,
            stimulus,
            repetition,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_samples(&self) -> usize {
        self.stimulus.len()
    }

    pub fn emg(&self) -> &[f64] {
        &self.emg
    }

    pub fn emg_mut(&mut self) -> &mut [f64] {
        &mut self.emg
    }

    pub fn stimulus(&self) -> &[u16] {
        &self.stimulus
    }

    pub fn repetition(&self) -> &[u16] {
        &self.repetition
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.emg[t * self.channels..(t + 1) * self.channels]
    }

    /// Copy of one channel as a contiguous sequence.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.emg.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn set_channel(&mut self, c: usize, values: &[f64]) {
        for (dst, &v) in self.emg.iter_mut().skip(c).step_by(self.channels).zip(values) {
            *dst = v;
        }
    }

    /// Largest gesture label present.
    pub fn max_stimulus(&self) -> u16 {
        self.stimulus.iter().copied().max().unwrap_or(0)
    }
}

/// Which repetitions are held out for testing; the rest train.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    test: BTreeSet<u16>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test: [2, 5, 7].into_iter().collect(),
        }
    }
}

impl SplitSpec {
    pub fn new(test: impl IntoIterator<Item = u16>) -> Result<Self> {
        let test: BTreeSet<u16> = test.into_iter().collect();
        if test.is_empty() {
            return Err(Error::InvalidArgument("test repetition set is empty".into()));
        }
        if let Some(&r) = test.iter().find(|&&r| r == 0 || r > MAX_REPETITION) {
            return Err(Error::InvalidArgument(format!(
                "test repetition {r} outside 1..={MAX_REPETITION}"
            )));
        }
        if test.len() == MAX_REPETITION as usize {
            return Err(Error::InvalidArgument("no repetitions left for training".into()));
        }
        Ok(Self { test })
    }

    pub fn test_repetitions(&self) -> impl Iterator<Item = u16> + '_ {
        self.test.iter().copied()
    }

    pub fn train_repetitions(&self) -> impl Iterator<Item = u16> + '_ {
        (1..=MAX_REPETITION).filter(|r| !self.test.contains(r))
    }

    pub fn is_test(&self, repetition: u16) -> bool {
        self.test.contains(&repetition)
    }

    /// Gesture repetitions used for fitting statistics (rest, id 0, excluded).
    pub fn is_train(&self, repetition: u16) -> bool {
        repetition != 0 && !self.is_test(repetition)
    }
}

/// Fixed-length labelled windows, `[n, channels, window_len]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub channels: usize,
    pub window_len: usize,
    pub window_ms: u32,
    pub num_classes: usize,
    windows: Vec<f64>,
    labels: Vec<usize>,
    repetitions: Vec<u16>,
    subjects: Vec<u32>,
}

impl WindowedDataset {
    pub fn empty(channels: usize, window_len: usize, window_ms: u32, num_classes: usize) -> Self {
        Self {
            channels,
            window_len,
            window_ms,
            num_classes,
            windows: Vec::new(),
            labels: Vec::new(),
            repetitions: Vec::new(),
            subjects: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        channels: usize,
        window_len: usize,
        window_ms: u32,
        num_classes: usize,
        windows: Vec<f64>,
        labels: Vec<usize>,
        repetitions: Vec<u16>,
        subjects: Vec<u32>,
    ) -> Result<Self> {
        let n = labels.len();
        if channels == 0 || window_len == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset geometry must be positive: {channels} channels, {window_len} samples, {num_classes} classes"
            )));
        }
        if windows.len() != n * channels * window_len || repetitions.len() != n || subjects.len() != n {
            return Err(Error::InvalidArgument(format!(
                "dataset arrays disagree: {} values, {n} labels, {} repetitions, {} subjects",
                windows.len(),
                repetitions.len(),
                subjects.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            channels,
            window_len,
            window_ms,
            num_classes,
            windows,
            labels,
            repetitions,
            subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.channels * self.window_len
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.window_size();
        &self.windows[i * w..(i + 1) * w]
    }

    pub fn windows(&self) -> &[f64] {
        &self.windows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn repetitions(&self) -> &[u16] {
        &self.repetitions
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    pub fn push(&mut self, window: &[f64], label: usize, repetition: u16, subject: u32) {
        debug_assert_eq!(window.len(), self.window_size());
        debug_assert!(label < self.num_classes);
        self.windows.extend_from_slice(window);
        self.labels.push(label);
        self.repetitions.push(repetition);
        self.subjects.push(subject);
    }

    /// Appends all windows of `other`, which must share the geometry.
    pub fn extend(&mut self, other: &WindowedDataset) -> Result<()> {
        if (other.channels, other.window_len, other.num_classes)
            != (self.channels, self.window_len, self.num_classes)
        {
            return Err(Error::ShapeMismatch {
                op: "dataset extend",
                lhs: alloc::vec![self.channels, self.window_len, self.num_classes],
                rhs: alloc::vec![other.channels, other.window_len, other.num_classes],
            });
        }
        self.windows.extend_from_slice(&other.windows);
        self.labels.extend_from_slice(&other.labels);
        self.repetitions.extend_from_slice(&other.repetitions);
        self.subjects.extend_from_slice(&other.subjects);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.channels, self.window_len, self.window_ms, self.num_classes);
        out.windows.reserve(indices.len() * self.window_size());
        for &i in indices {
            out.push(self.window(i), self.labels[i], self.repetitions[i], self.subjects[i]);
        }
        out
    }

    /// Stacks the chosen windows into a `[B, channels, window_len]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("batch"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.window_size());
        for &i in indices {
            data.extend_from_slice(self.window(i));
        }
        let x = Tensor::new(alloc::vec![indices.len(), self.channels, self.window_len], data)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Windows per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Partitions windows by repetition id.
pub fn split_by_repetition(
    ds: &WindowedDataset,
    spec: &SplitSpec,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, &rep) in ds.repetitions.iter().enumerate() {
        if spec.is_test(rep) {
            test.push(i);
        } else if spec.is_train(rep) {
            train.push(i);
        } else {
            return Err(Error::Internal(format!(
                "window {i} has repetition {rep}, in neither split"
            )));
        }
    }
    if train.is_empty() {
        log::warn!("training split is empty: every window belongs to a test repetition");
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Parameters of the synthetic DB1-like generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub reps: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub gesture_samples: usize,
    pub rest_samples: usize,
    /// Ratio between the loudest and quietest channel.
    pub amplitude_disparity: f64,
    pub snr_db: f64,
    pub subject_id: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            channels: DB1_CHANNELS,
            reps: MAX_REPETITION as usize,
            seed: 0,
            sample_rate: DB1_SAMPLE_RATE,
            gesture_samples: 500,
            rest_samples: 300,
            amplitude_disparity: 30.0,
            snr_db: 10.0,
            subject_id: 1,
        }
    }
}

/// Per-class, per-channel signature of the synthetic generator.
#[derive(Debug, Clone)]
struct ChannelPattern {
    level: f64,
    slow_hz: f64,
    fast_hz: f64,
}

/// A DB1-shaped recording: for each repetition, every class performs one
/// gesture segment followed by rest. Each channel of a gesture is a positive
/// level modulated by two sinusoids whose frequencies and level are specific to
/// the (class, channel) pair, plus white Gaussian noise at `snr_db`. Channel
/// base gains span `amplitude_disparity` geometrically.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SignalRecord> {
    if cfg.num_classes < 2 || cfg.num_classes > MAX_STIMULUS as usize {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be in 2..={MAX_STIMULUS}, got {}",
            cfg.num_classes
        )));
    }
    if cfg.reps == 0 || cfg.reps > MAX_REPETITION as usize {
        return Err(Error::InvalidArgument(format!(
            "reps must be in 1..={MAX_REPETITION}, got {}",
            cfg.reps
        )));
    }
    if cfg.channels == 0 || cfg.gesture_samples == 0 || !(cfg.sample_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "channels, gesture length and sample rate must be positive".into(),
        ));
    }
    if !(cfg.amplitude_disparity >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "amplitude disparity must be at least 1, got {}",
            cfg.amplitude_disparity
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.channels;
    let gains: Vec<f64> = (0..c)
        .map(|ch| {
            let frac = if c == 1 { 0.0 } else { ch as f64 / (c - 1) as f64 };
            math::powf(cfg.amplitude_disparity, frac)
        })
        .collect();
    // Frequencies sit on the DFT grid of one gesture segment so spectra stay sharp.
    let bin_hz = cfg.sample_rate / cfg.gesture_samples as f64;
    let patterns: Vec<Vec<ChannelPattern>> = (0..cfg.num_classes)
        .map(|_| {
            gains
                .iter()
                .map(|&g| ChannelPattern {
                    level: g * rng.gen_range(0.2..1.0),
                    slow_hz: bin_hz * rng.gen_range(1..=5) as f64,
                    fast_hz: bin_hz * rng.gen_range(6..=15) as f64,
                })
                .collect()
        })
        .collect();

    let per_block = cfg.gesture_samples + cfg.rest_samples;
    let n = cfg.reps * cfg.num_classes * per_block;
    let mut emg = Vec::with_capacity(n * c);
    let mut stimulus = Vec::with_capacity(n);
    let mut repetition = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::Internal(format!("{e}")))?;
    let noise_scale = math::powf(10.0, -cfg.snr_db / 20.0);
    let two_pi = 2.0 * core::f64::consts::PI;

    let mut segment = alloc::vec![0.0; cfg.gesture_samples * c];
    for rep in 1..=cfg.reps {
        for (k, pattern) in patterns.iter().enumerate() {
            for (ch, p) in pattern.iter().enumerate() {
                let jitter = 1.0 + 0.1 * unit.sample(&mut rng);
                let (ph1, ph2) = (rng.gen_range(0.0..two_pi), rng.gen_range(0.0..two_pi));
                let mut power = 0.0;
                for t in 0..cfg.gesture_samples {
                    let s = t as f64 / cfg.sample_rate;
                    let v = p.level
                        * jitter
                        * (1.0
                            + 0.3 * math::sin(two_pi * p.slow_hz * s + ph1)
                            + 0.15 * math::sin(two_pi * p.fast_hz * s + ph2));
                    segment[t * c + ch] = v;
                    power += v * v;
                }
                let sigma = math::sqrt(power / cfg.gesture_samples as f64) * noise_scale;
                for t in 0..cfg.gesture_samples {
                    segment[t * c + ch] += sigma * unit.sample(&mut rng);
                }
            }
            emg.extend_from_slice(&segment);
            stimulus.extend(core::iter::repeat(k as u16 + 1).take(cfg.gesture_samples));
            repetition.extend(core::iter::repeat(rep as u16).take(cfg.gesture_samples));
            for _ in 0..cfg.rest_samples {
                for &g in &gains {
                    emg.push(0.05 * g * (1.0 + 0.3 * unit.sample(&mut rng)));
                }
            }
            stimulus.extend(core::iter::repeat(0).take(cfg.rest_samples));
            repetition.extend(core::iter::repeat(0).take(cfg.rest_samples));
        }
    }
    SignalRecord::new(cfg.subject_id, c, emg, stimulus, repetition)
}
