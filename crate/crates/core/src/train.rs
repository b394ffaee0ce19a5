//! Adam, the cyclic learning-rate schedule, the epoch loop and evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::layers::loss::cross_entropy_forward;
use crate::layers::Mode;
use crate::math;
use crate::model::XTimeNetwork;
use crate::params::ParamStore;
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs per cosine cycle; the peak halves at every cycle boundary.
    pub cycle_epochs: usize,
    /// Fraction of the cycle peak reached at the cycle's last epoch.
    pub lr_floor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Batch size for evaluation passes (does not affect results).
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            cycle_epochs: 20,
            lr_floor: 0.1,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.cycle_epochs == 0 {
            return bad("cycle_epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return bad("lr_floor must lie in [0, 1]");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch: within cycle `k` a cosine half-wave
/// from `lr0 / 2^k` down to `lr_floor` times that peak.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let block = epoch / cfg.cycle_epochs;
    let pos = epoch % cfg.cycle_epochs;
    let peak = cfg.lr0 / math::powf(2.0, block as f64);
    if cfg.cycle_epochs == 1 {
        return peak;
    }
    let floor = peak * cfg.lr_floor;
    let phase = core::f64::consts::PI * pos as f64 / (cfg.cycle_epochs - 1) as f64;
    floor + (peak - floor) * 0.5 * (1.0 + math::cos(phase))
}

/// One bias-corrected Adam update of a single tensor. `t` is the 1-based step.
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - math::powf(cfg.beta1, t as f64);
    let c2 = 1.0 - math::powf(cfg.beta2, t as f64);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
    }
}

/// First and second moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.params().iter().map(|p| alloc::vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Applies one step. `grads` is indexed like the store's parameters.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64, cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                lhs: alloc::vec![self.m.len()],
                rhs: alloc::vec![grads.len()],
            });
        }
        for (id, g) in store.param_ids().zip(grads) {
            let n = store.param(id).len();
            if g.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: store.param(id).shape().to_vec(),
                    rhs: alloc::vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(String::from(store.param_name(id))));
            }
        }
        self.t += 1;
        let ids: Vec<_> = store.param_ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let i = id.index();
            adam_update(store.param_mut(id).data_mut(), g, &mut self.m[i], &mut self.v[i], self.t, lr, cfg);
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// `train`, `test`, or `test_<ms>ms` when several window lengths are evaluated.
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Shuffled mini-batches over several single-length datasets. Each batch holds
/// indices into exactly one dataset; which dataset supplies the next batch is
/// drawn uniformly among those with batches left.
pub fn plan_batches<R: Rng + ?Sized>(sizes: &[usize], batch_size: usize, rng: &mut R) -> Vec<(usize, Vec<usize>)> {
    let mut queues: Vec<Vec<Vec<usize>>> = sizes
        .iter()
        .map(|&n| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let mut chunks: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
            chunks.reverse();
            chunks
        })
        .collect();
    let mut plan = Vec::new();
    loop {
        let live: Vec<usize> = (0..queues.len()).filter(|&d| !queues[d].is_empty()).collect();
        if live.is_empty() {
            break;
        }
        let d = if live.len() == 1 { live[0] } else { live[rng.gen_range(0..live.len())] };
        if let Some(batch) = queues[d].pop() {
            plan.push((d, batch));
        }
    }
    plan
}

/// Owns the optimizer state and the shuffling generator across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(net: &XTimeNetwork, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            adam: AdamState::new(net.store()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over all training windows. Loss and accuracy are averaged over
    /// windows as seen during the pass (train-mode batch norm).
    pub fn run_epoch(&mut self, net: &mut XTimeNetwork, data: &[WindowedDataset]) -> Result<EpochMetrics> {
        check_datasets(net, data)?;
        let lr = lr_at(self.epoch, &self.cfg);
        let sizes: Vec<usize> = data.iter().map(WindowedDataset::len).collect();
        let plan = plan_batches(&sizes, self.cfg.batch_size, &mut self.rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (batch_no, (d, idx)) in plan.iter().enumerate() {
            let (x, labels) = data[*d].batch(idx)?;
            let mut tape = Tape::new();
            let (loss, logits, binds) = net.loss(&mut tape, &x, &labels, Mode::Train)?;
            let value = tape.data(loss)[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.epoch,
                    batch: batch_no,
                });
            }
            let k = net.spec().num_classes;
            correct += tape
                .data(logits)
                .chunks_exact(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            loss_sum += value * labels.len() as f64;
            seen += labels.len();
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = binds
                .iter()
                .map(|(id, v)| tape.take_grad(v).unwrap_or_else(|| alloc::vec![0.0; net.store().param(id).len()]))
                .collect();
            self.adam.step(net.store_mut(), &grads, lr, &self.cfg.adam)?;
        }
        let metrics = EpochMetrics {
            epoch: self.epoch,
            split: String::from("train"),
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            lr,
        };
        self.epoch += 1;
        Ok(metrics)
    }
}

fn check_datasets(net: &XTimeNetwork, data: &[WindowedDataset]) -> Result<()> {
    if data.iter().all(WindowedDataset::is_empty) {
        return Err(Error::EmptyDataset("training set"));
    }
    let spec = net.spec();
    for ds in data {
        if ds.channels != spec.input_channels || ds.num_classes > spec.num_classes {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} channels and {} classes; network expects {} channels and {} classes",
                ds.channels, ds.num_classes, spec.input_channels, spec.num_classes
            )));
        }
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs. After every epoch each dataset in `eval`
/// is scored and logged as a test split.
pub fn train(
    net: &mut XTimeNetwork,
    data: &[WindowedDataset],
    eval: &[WindowedDataset],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    let mut trainer = Trainer::new(net, cfg.clone())?;
    let mut log = Vec::new();
    for _ in 0..cfg.epochs {
        let m = trainer.run_epoch(net, data)?;
        let (epoch, lr) = (m.epoch, m.lr);
        log.push(m);
        for ds in eval {
            let e = evaluate(net, ds, cfg.eval_batch_size)?;
            log.push(EpochMetrics {
                epoch,
                split: test_split_name(ds, eval.len()),
                loss: e.loss,
                accuracy: e.accuracy,
                lr,
            });
        }
    }
    Ok(log)
}

pub fn test_split_name(ds: &WindowedDataset, num_eval: usize) -> String {
    if num_eval > 1 {
        format!("test_{}ms", ds.window_ms)
    } else {
        String::from("test")
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy, per-class accuracy and a confusion matrix (rows: true class).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy over windows.
    pub loss: f64,
    /// `None` for classes without test windows.
    pub per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.predictions.len()
    }

    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Scores `[n, k]` logits against labels.
pub fn evaluate_logits(logits: &[f64], labels: &[usize], k: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    if logits.len() != labels.len() * k {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            lhs: alloc::vec![logits.len()],
            rhs: alloc::vec![labels.len(), k],
        });
    }
    let (loss, _) = cross_entropy_forward(&[labels.len(), k], logits, labels)?;
    let mut confusion = alloc::vec![alloc::vec![0usize; k]; k];
    let mut predictions = Vec::with_capacity(labels.len());
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let p = argmax(row);
        confusion[y][p] += 1;
        predictions.push(p);
    }
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| row[i] as f64 / support as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: trace as f64 / labels.len() as f64,
        loss,
        per_class,
        confusion,
        predictions,
    })
}

/// Eval-mode scoring of every window. Works on a copy of the network, so
/// nothing about `net` changes.
pub fn evaluate(net: &XTimeNetwork, ds: &WindowedDataset, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut net = net.clone();
    let k = net.spec().num_classes;
    let mut logits = Vec::with_capacity(ds.len() * k);
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(batch_size) {
        let (x, _) = ds.batch(idx)?;
        logits.extend_from_slice(net.predict(&x, Mode::Eval)?.data());
    }
    evaluate_logits(&logits, ds.labels(), k)
}

/// Most frequent class; the lowest index wins ties.
pub fn majority_vote(predictions: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &p in predictions {
        *counts.entry(p).or_insert(0) += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (class, n) in counts {
        if best.map_or(true, |(_, m)| n > m) {
            best = Some((class, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Accuracy after majority voting within each gesture segment, where a
/// segment is one (subject, repetition, label) triple.
pub fn segment_accuracy(ds: &WindowedDataset, predictions: &[usize]) -> Result<f64> {
    if ds.is_empty() || predictions.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} windows",
            predictions.len(),
            ds.len()
        )));
    }
    let mut groups: BTreeMap<(u32, u16, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        groups
            .entry((ds.subjects()[i], ds.repetitions()[i], ds.labels()[i]))
            .or_default()
            .push(predictions[i]);
    }
    let correct = groups
        .iter()
        .filter(|((_, _, label), preds)| majority_vote(preds) == Some(*label))
        .count();
    Ok(correct as f64 / groups.len() as f64)
}
