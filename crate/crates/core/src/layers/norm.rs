//! Per-channel batch normalization over the `(batch, length)` axes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::tape::BatchStats;

type Dims = (usize, usize, usize);

/// State a batch-norm node keeps for its backward rule.
#[derive(Debug, Clone)]
pub struct Saved {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

pub fn check_affine(channels: usize, gamma: &[usize], beta: &[usize]) -> Result<()> {
    if gamma != [channels] || beta != [channels] {
        return Err(Error::InvalidShape {
            op: "batch_norm",
            detail: alloc::format!(
                "gamma {gamma:?} / beta {beta:?} do not match {channels} channels"
            ),
        });
    }
    Ok(())
}

fn channel_iter(dims: Dims, c: usize) -> impl Iterator<Item = core::ops::Range<usize>> {
    let (b, ch, l) = dims;
    (0..b).map(move |bi| (bi * ch + c) * l..(bi * ch + c + 1) * l)
}

pub fn forward_train(
    dims: Dims,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Saved, BatchStats)> {
    let (b, ch, l) = dims;
    let n = b * l;
    if n < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "train-mode batch norm needs batch*length >= 2, got {n}"
        )));
    }
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; ch];
    let mut stats = BatchStats {
        mean: vec![0.0; ch],
        var: vec![0.0; ch],
    };
    for c in 0..ch {
        let mean = channel_iter(dims, c)
            .map(|r| x[r].iter().sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let ss = channel_iter(dims, c)
            .map(|r| x[r].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>();
        let var = ss / n as f64;
        let is = 1.0 / sqrt(var + eps);
        inv_std[c] = is;
        stats.mean[c] = mean;
        stats.var[c] = ss / (n - 1) as f64;
        for r in channel_iter(dims, c) {
            for i in r {
                let h = (x[i] - mean) * is;
                xhat[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
        }
    }
    Ok((
        out,
        Saved {
            xhat,
            inv_std,
            train: true,
        },
        stats,
    ))
}

pub fn forward_eval(
    dims: Dims,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> (Vec<f64>, Saved) {
    let ch = dims.1;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / sqrt(v + eps)).collect();
    for c in 0..ch {
        for r in channel_iter(dims, c) {
            for i in r {
                let h = (x[i] - running_mean[c]) * inv_std[c];
                xhat[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        out,
        Saved {
            xhat,
            inv_std,
            train: false,
        },
    )
}

pub fn backward_gamma(dims: Dims, dy: &[f64], saved: &Saved, dgamma: &mut [f64]) {
    for (c, dg) in dgamma.iter_mut().enumerate() {
        *dg += channel_iter(dims, c)
            .flat_map(|r| r.map(|i| dy[i] * saved.xhat[i]))
            .sum::<f64>();
    }
}

pub fn backward_beta(dims: Dims, dy: &[f64], dbeta: &mut [f64]) {
    for (c, db) in dbeta.iter_mut().enumerate() {
        *db += channel_iter(dims, c)
            .flat_map(|r| dy[r].iter().copied())
            .sum::<f64>();
    }
}

pub fn backward_input(dims: Dims, dy: &[f64], gamma: &[f64], saved: &Saved, dx: &mut [f64]) {
    let (b, ch, l) = dims;
    let n = (b * l) as f64;
    for c in 0..ch {
        let scale = gamma[c] * saved.inv_std[c];
        if !saved.train {
            for r in channel_iter(dims, c) {
                for i in r {
                    dx[i] += dy[i] * scale;
                }
            }
            continue;
        }
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for r in channel_iter(dims, c) {
            for i in r {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * saved.xhat[i];
            }
        }
        for r in channel_iter(dims, c) {
            for i in r {
                dx[i] += scale * (dy[i] - sum_dy / n - saved.xhat[i] * sum_dy_xhat / n);
            }
        }
    }
}
