//! Layer-by-layer and whole-network gradient verification.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xtime_core::gradcheck::grad_check_on;
use xtime_core::layers::Mode;
use xtime_core::model::{check_network_gradients_on, XTimeNetwork, XTimeNetworkSpec};
use xtime_core::{Result, Tape, Tensor, Var};

use crate::error::AppResult;

/// Settings for [`run_gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Sampled coordinates per network parameter tensor.
    pub coords: usize,
    pub eps: f64,
    pub tol: f64,
    /// Absolute bound for gradients that are identically zero by construction.
    pub zero_tol: f64,
    /// Plant a wrong conv backward to demonstrate the checker fails.
    pub inject_fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            coords: 50,
            eps: 1e-5,
            tol: 1e-4,
            zero_tol: 1e-7,
            inject_fault: false,
        }
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Parameter tensors whose gradient is exactly zero and checked absolutely.
    pub structural_zeros: usize,
}

impl CheckLine {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<28} max_rel_err {:.3e}  {}",
            self.name,
            self.max_rel_error,
            if self.passed { "PASS" } else { "FAIL" }
        );
        if self.structural_zeros > 0 {
            s.push_str(&format!("  ({} zero-gradient bias tensors checked absolutely)", self.structural_zeros));
        }
        s
    }
}

fn faulty_tape() -> Tape {
    let mut t = Tape::new();
    t.inject_conv_backward_fault();
    t
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// `sum(y * r)` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

const WARMUP_PASSES: usize = 60;

type Probe = Box<dyn FnMut(&mut Tape, Var) -> Result<Var>>;

fn layer_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor, Probe)> {
    let x = random(&[2, 4, 9], rng);
    let mut cases: Vec<(&'static str, Tensor, Probe)> = Vec::new();

    for (name, wname, c_out, k, groups) in [
        ("conv1d standard k5", "conv1d standard k5 weight", 3, 5, 1),
        ("conv1d depthwise k9", "conv1d depthwise k9 weight", 4, 9, 4),
        ("conv1d pointwise", "conv1d pointwise weight", 6, 1, 1),
    ] {
        let w = random(&[c_out, 4 / groups, k], rng);
        let b = random(&[c_out], rng);
        let r = random(&[2, c_out, 9], rng);
        let (w2, b2, r2) = (w.clone(), b.clone(), r.clone());
        cases.push((
            name,
            x.clone(),
            Box::new(move |t, xv| {
                let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
                let y = t.conv1d(xv, wv, Some(bv), groups)?;
                project(t, y, &r)
            }),
        ));
        let xs = x.clone();
        cases.push((
            wname,
            w2,
            Box::new(move |t, wv| {
                let (xv, bv) = (t.constant(xs.clone()), t.constant(b2.clone()));
                let y = t.conv1d(xv, wv, Some(bv), groups)?;
                project(t, y, &r2)
            }),
        ));
    }

    let gamma = random(&[4], rng);
    let beta = random(&[4], rng);
    let r = random(&[2, 4, 9], rng);
    {
        let (gamma, beta, r) = (gamma.clone(), beta.clone(), r.clone());
        cases.push((
            "batch norm (train)",
            x.clone(),
            Box::new(move |t, xv| {
                let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
                let (y, _) = t.batch_norm_train(xv, g, b, 1e-5)?;
                project(t, y, &r)
            }),
        ));
    }
    {
        let (gamma, beta, r) = (gamma.clone(), beta.clone(), r.clone());
        let mean = vec![0.1, -0.2, 0.3, 0.0];
        let var = vec![0.5, 1.5, 2.0, 0.8];
        cases.push((
            "batch norm (eval)",
            x.clone(),
            Box::new(move |t, xv| {
                let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
                let y = t.batch_norm_eval(xv, g, b, &mean, &var, 1e-5)?;
                project(t, y, &r)
            }),
        ));
    }
    {
        let r = r.clone();
        cases.push((
            "max pool k3",
            x.clone(),
            Box::new(move |t, xv| {
                let y = t.max_pool1d(xv, 3)?;
                project(t, y, &r)
            }),
        ));
    }
    for (name, out_len) in [("adaptive avg pool 9->4", 4), ("adaptive avg pool 9->50", 50)] {
        let r = random(&[2, 4, out_len], rng);
        cases.push((
            name,
            x.clone(),
            Box::new(move |t, xv| {
                let y = t.adaptive_avg_pool1d(xv, out_len)?;
                project(t, y, &r)
            }),
        ));
    }
    {
        let r = r.clone();
        cases.push((
            "relu",
            x.clone(),
            Box::new(move |t, xv| {
                let y = t.relu(xv);
                project(t, y, &r)
            }),
        ));
    }
    let logits = random(&[3, 5], rng);
    cases.push((
        "cross entropy",
        logits,
        Box::new(|t, xv| t.cross_entropy(xv, &[0, 4, 2])),
    ));
    cases
}

/// Runs every layer check and the full-network check on a `[2, 10, 20]`
/// input in train and eval mode.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> AppResult<Vec<CheckLine>> {
    let make_tape: fn() -> Tape = if cfg.inject_fault { faulty_tape } else { Tape::new };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lines = Vec::new();

    for (name, x, probe) in layer_cases(&mut rng) {
        let coords: Vec<usize> = (0..x.len()).collect();
        let err = grad_check_on(make_tape, probe, &x, cfg.eps, &coords)?;
        lines.push(CheckLine {
            name: name.to_string(),
            max_rel_error: err,
            passed: err < cfg.tol,
            structural_zeros: 0,
        });
    }

    let spec = XTimeNetworkSpec::default();
    let mut net = XTimeNetwork::new(spec.clone(), cfg.seed)?;
    let x = random(&[2, spec.input_channels, 20], &mut rng);
    let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..spec.num_classes)).collect();
    for mode in [Mode::Train, Mode::Eval] {
        if mode == Mode::Eval {
            // Initial running statistics (mean 0, var 1) leave activations
            // unnormalized and the loss large enough for central differences
            // to drown in rounding; fit them to the probe input first.
            for _ in 0..WARMUP_PASSES {
                net.predict(&x, Mode::Train)?;
            }
        }
        let report = check_network_gradients_on(make_tape, &net, &x, &labels, mode, cfg.coords, cfg.eps, cfg.seed)?;
        let mut groups: BTreeMap<String, CheckLine> = BTreeMap::new();
        for p in &report {
            let component = p.name.split('.').next().unwrap_or(&p.name);
            let key = format!("network[{}] {component}", mode_name(mode));
            let line = groups.entry(key.clone()).or_insert(CheckLine {
                name: key,
                max_rel_error: 0.0,
                passed: true,
                structural_zeros: 0,
            });
            if p.structurally_zero {
                line.structural_zeros += 1;
            } else {
                line.max_rel_error = line.max_rel_error.max(p.max_rel_error);
            }
            line.passed &= p.passes(cfg.tol, cfg.zero_tol);
        }
        lines.extend(groups.into_values());
    }
    Ok(lines)
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Train => "train",
        Mode::Eval => "eval",
    }
}
