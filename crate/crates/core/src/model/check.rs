//! Gradient verification for whole networks.

use alloc::string::String;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::XTimeNetwork;
use crate::error::{Error, Result};
use crate::gradcheck::relative_error;
use crate::layers::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Outcome for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    /// Maximum relative error over the sampled coordinates.
    pub max_rel_error: f64,
    /// Largest absolute analytic / numeric partial seen.
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// The gradient is identically zero by construction (see [`annihilated_by_batch_norm`]).
    pub structurally_zero: bool,
}

impl ParamCheck {
    /// Relative error below `tol`, or, for structurally zero gradients, both
    /// partials below the absolute floor `zero_tol`.
    pub fn passes(&self, tol: f64, zero_tol: f64) -> bool {
        if self.structurally_zero {
            self.max_abs_analytic <= zero_tol && self.max_abs_numeric <= zero_tol
        } else {
            self.max_rel_error < tol
        }
    }
}

/// Biases whose output reaches a train-mode batch norm only through maps that
/// keep a per-channel constant constant (depthwise and pointwise convs,
/// concatenation). Batch statistics subtract them out, so their gradient is
/// exactly zero and a relative-error check is meaningless. The bottleneck bias
/// is not among them: zero padding in the following depthwise conv turns it
/// into a position-dependent signal.
pub fn annihilated_by_batch_norm(name: &str) -> bool {
    name.ends_with(".bias") && !name.ends_with("bottleneck.bias")
}

/// Compares backprop against central differences for up to `coords_per_tensor`
/// randomly chosen coordinates of every parameter tensor.
///
/// The network is cloned, so running statistics of `net` are left untouched.
pub fn check_network_gradients(
    net: &XTimeNetwork,
    x: &Tensor,
    labels: &[usize],
    mode: Mode,
    coords_per_tensor: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<ParamCheck>> {
    check_network_gradients_on(Tape::new, net, x, labels, mode, coords_per_tensor, eps, seed)
}

/// As [`check_network_gradients`], with backprop run on a tape from `make_tape`.
#[allow(clippy::too_many_arguments)]
pub fn check_network_gradients_on(
    make_tape: fn() -> Tape,
    net: &XTimeNetwork,
    x: &Tensor,
    labels: &[usize],
    mode: Mode,
    coords_per_tensor: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<ParamCheck>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(alloc::format!("eps must be positive, got {eps}")));
    }
    let mut net = net.clone();
    let mut tape = make_tape();
    let (loss, _, binds) = net.loss(&mut tape, x, labels, mode)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = binds
        .iter()
        .map(|(id, v)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; net.store().param(id).len()])
        })
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = net.store().param_ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let n = net.store().param(id).len();
        let coords = rand::seq::index::sample(&mut rng, n, coords_per_tensor.min(n)).into_vec();
        let name = String::from(net.store().param_name(id));
        let structurally_zero = mode == Mode::Train && annihilated_by_batch_norm(&name);
        let mut check = ParamCheck {
            name,
            coords: coords.len(),
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
            structurally_zero,
        };
        for i in coords {
            let original = net.store().param(id).data()[i];
            let mut eval_at = |value: f64| -> Result<f64> {
                net.store_mut().param_mut(id).data_mut()[i] = value;
                let mut tape = Tape::new();
                let (loss, _, _) = net.loss(&mut tape, x, labels, mode)?;
                Ok(tape.data(loss)[0])
            };
            let plus = eval_at(original + eps)?;
            let minus = eval_at(original - eps)?;
            net.store_mut().param_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.index()][i];
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
        }
        report.push(check);
    }
    Ok(report)
}
