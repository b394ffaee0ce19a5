use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

type Dims = (usize, usize, usize);

/// Sliding max with stride 1 and `(kernel - 1) / 2` virtual `-inf` padding on each side.
///
/// Returns the pooled values and, per output, the flat input index that won
/// (the first one on ties).
pub fn max_forward(dims: Dims, x: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "max-pool kernel must be odd and positive, got {kernel}"
        )));
    }
    let (b, c, l) = dims;
    let pad = (kernel - 1) / 2;
    let mut out = vec![0.0; x.len()];
    let mut argmax = vec![0usize; x.len()];
    for row in 0..b * c {
        let base = row * l;
        for t in 0..l {
            let lo = t.saturating_sub(pad);
            let hi = (t + pad + 1).min(l);
            let mut best = lo;
            for s in lo + 1..hi {
                if x[base + s] > x[base + best] {
                    best = s;
                }
            }
            out[base + t] = x[base + best];
            argmax[base + t] = base + best;
        }
    }
    Ok((out, argmax))
}

/// Bin `[start, end)` of output `i` when pooling `l_in` samples into `l_out`.
pub fn adaptive_bin(i: usize, l_in: usize, l_out: usize) -> (usize, usize) {
    let start = i * l_in / l_out;
    let end = ((i + 1) * l_in).div_ceil(l_out);
    (start, end)
}

pub fn adaptive_avg_forward(dims: Dims, x: &[f64], l_out: usize) -> Result<Vec<f64>> {
    if l_out == 0 {
        return Err(Error::InvalidArgument("adaptive pool target length must be >= 1".into()));
    }
    let (b, c, l_in) = dims;
    let mut out = vec![0.0; b * c * l_out];
    for row in 0..b * c {
        let xs = &x[row * l_in..(row + 1) * l_in];
        for i in 0..l_out {
            let (s, e) = adaptive_bin(i, l_in, l_out);
            out[row * l_out + i] = xs[s..e].iter().sum::<f64>() / (e - s) as f64;
        }
    }
    Ok(out)
}

pub fn adaptive_avg_backward(in_dims: Dims, l_out: usize, dy: &[f64], dx: &mut [f64]) {
    let (b, c, l_in) = in_dims;
    for row in 0..b * c {
        for i in 0..l_out {
            let (s, e) = adaptive_bin(i, l_in, l_out);
            let share = dy[row * l_out + i] / (e - s) as f64;
            dx[row * l_in + s..row * l_in + e]
                .iter_mut()
                .for_each(|d| *d += share);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_are_never_empty() {
        for l_in in 1..40 {
            for l_out in 1..60 {
                for i in 0..l_out {
                    let (s, e) = adaptive_bin(i, l_in, l_out);
                    assert!(e > s && e <= l_in, "{l_in}->{l_out} bin {i}: {s}..{e}");
                }
            }
        }
    }
}
