//! Stride-1 same-padded 1-D convolution kernels.
//!
//! Pointwise and general grouped convolutions lower to GEMM (the latter via
//! im2col); depthwise convolutions with one filter per channel run as direct
//! loops.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gemm::{gemm, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub length: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl Geometry {
    pub fn new(
        x: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        groups: usize,
    ) -> Result<Self> {
        let [batch, in_channels, length] = *x else {
            return Err(Error::InvalidShape {
                op: "conv1d",
                detail: alloc::format!("input must be [batch, channels, length], got {x:?}"),
            });
        };
        let [out_channels, per_group, kernel] = *weight else {
            return Err(Error::InvalidShape {
                op: "conv1d",
                detail: alloc::format!("weight must be [out, in/groups, kernel], got {weight:?}"),
            });
        };
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "groups {groups} must divide in ({in_channels}) and out ({out_channels}) channels"
            )));
        }
        if per_group * groups != in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: x.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if kernel % 2 == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "kernel {kernel} must be odd for symmetric same padding"
            )));
        }
        if let Some(b) = bias {
            if b != [out_channels] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: b.to_vec(),
                    rhs: vec![out_channels],
                });
            }
        }
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            length,
            kernel,
            groups,
        })
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.in_per_group() == 1 && self.out_per_group() == 1 && self.kernel > 1
    }

    /// Range of kernel taps `j` such that `t + j - pad` lies inside the signal.
    fn taps(&self, t: usize) -> core::ops::Range<usize> {
        let pad = self.pad();
        let lo = pad.saturating_sub(t);
        let hi = (self.length + pad - t).min(self.kernel);
        lo..hi
    }
}

/// Columns of one group for the whole batch: `[in_per_group * kernel, batch * length]`,
/// with zero-padded taps. For 1x1 kernels this is a plain channel-major transpose.
fn im2col(geom: &Geometry, x: &[f64], group: usize, cols: &mut [f64]) {
    let (b, l, k, pad) = (geom.batch, geom.length, geom.kernel, geom.pad());
    let (cin_g, n) = (geom.in_per_group(), geom.batch * geom.length);
    if k > 1 {
        cols.fill(0.0);
    }
    for bi in 0..b {
        for c in 0..cin_g {
            let xs = &x[(bi * geom.in_channels + group * cin_g + c) * l..][..l];
            for j in 0..k {
                let row = &mut cols[(c * k + j) * n + bi * l..][..l];
                // row[t] = xs[t + j - pad] where in range
                let t_lo = pad.saturating_sub(j);
                let t_hi = (l + pad).saturating_sub(j).min(l);
                if t_lo < t_hi {
                    row[t_lo..t_hi].copy_from_slice(&xs[t_lo + j - pad..t_hi + j - pad]);
                }
            }
        }
    }
}

fn col2im(geom: &Geometry, cols: &[f64], group: usize, dx: &mut [f64]) {
    let (b, l, k, pad) = (geom.batch, geom.length, geom.kernel, geom.pad());
    let (cin_g, n) = (geom.in_per_group(), geom.batch * geom.length);
    for bi in 0..b {
        for c in 0..cin_g {
            let dxs = &mut dx[(bi * geom.in_channels + group * cin_g + c) * l..][..l];
            for j in 0..k {
                let row = &cols[(c * k + j) * n + bi * l..][..l];
                let t_lo = pad.saturating_sub(j);
                let t_hi = (l + pad).saturating_sub(j).min(l);
                for t in t_lo..t_hi {
                    dxs[t + j - pad] += row[t];
                }
            }
        }
    }
}

/// Copies the `[B, C_out, L]` rows of one group into a `[cout_per_group, B * L]` matrix.
fn gather_out(geom: &Geometry, y: &[f64], group: usize, out: &mut [f64]) {
    let (l, cout_g, n) = (geom.length, geom.out_per_group(), geom.batch * geom.length);
    for bi in 0..geom.batch {
        for o in 0..cout_g {
            out[o * n + bi * l..][..l]
                .copy_from_slice(&y[(bi * geom.out_channels + group * cout_g + o) * l..][..l]);
        }
    }
}

fn scatter_add_out(geom: &Geometry, out: &[f64], group: usize, y: &mut [f64]) {
    let (l, cout_g, n) = (geom.length, geom.out_per_group(), geom.batch * geom.length);
    for bi in 0..geom.batch {
        for o in 0..cout_g {
            let dst = &mut y[(bi * geom.out_channels + group * cout_g + o) * l..][..l];
            let src = &out[o * n + bi * l..][..l];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
}

pub fn forward(geom: &Geometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (b, l) = (geom.batch, geom.length);
    let (cin_g, cout_g, k) = (geom.in_per_group(), geom.out_per_group(), geom.kernel);
    let mut y = vec![0.0; b * geom.out_channels * l];

    if let Some(bias) = bias {
        for yb in y.chunks_exact_mut(geom.out_channels * l) {
            for (row, &bv) in yb.chunks_exact_mut(l).zip(bias) {
                row.fill(bv);
            }
        }
    }

    if geom.is_depthwise() {
        for bi in 0..b {
            for c in 0..geom.in_channels {
                let xs = &x[(bi * geom.in_channels + c) * l..][..l];
                let ws = &w[c * k..(c + 1) * k];
                let ys = &mut y[(bi * geom.out_channels + c) * l..][..l];
                for (t, yt) in ys.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in geom.taps(t) {
                        acc += ws[j] * xs[t + j - geom.pad()];
                    }
                    *yt += acc;
                }
            }
        }
        return y;
    }

    let n = b * l;
    let mut cols = vec![0.0; cin_g * k * n];
    let mut out = vec![0.0; cout_g * n];
    for g in 0..geom.groups {
        im2col(geom, x, g, &mut cols);
        let wg = &w[g * cout_g * cin_g * k..][..cout_g * cin_g * k];
        gemm(
            1.0,
            wg,
            View::row_major(cout_g, cin_g * k),
            &cols,
            View::row_major(cin_g * k, n),
            0.0,
            &mut out,
            View::row_major(cout_g, n),
        );
        scatter_add_out(geom, &out, g, &mut y);
    }
    y
}

/// Accumulates `d loss / d weight` into `dw`.
pub fn backward_weight(geom: &Geometry, dy: &[f64], x: &[f64], dw: &mut [f64]) {
    let (b, l) = (geom.batch, geom.length);
    let (cin_g, cout_g, k) = (geom.in_per_group(), geom.out_per_group(), geom.kernel);

    if geom.is_depthwise() {
        for bi in 0..b {
            for c in 0..geom.in_channels {
                let xs = &x[(bi * geom.in_channels + c) * l..][..l];
                let gs = &dy[(bi * geom.out_channels + c) * l..][..l];
                let dws = &mut dw[c * k..(c + 1) * k];
                for (t, &gt) in gs.iter().enumerate() {
                    for j in geom.taps(t) {
                        dws[j] += gt * xs[t + j - geom.pad()];
                    }
                }
            }
        }
        return;
    }

    let n = b * l;
    let mut cols = vec![0.0; cin_g * k * n];
    let mut dyg = vec![0.0; cout_g * n];
    for g in 0..geom.groups {
        im2col(geom, x, g, &mut cols);
        gather_out(geom, dy, g, &mut dyg);
        let dwg = &mut dw[g * cout_g * cin_g * k..][..cout_g * cin_g * k];
        gemm(
            1.0,
            &dyg,
            View::row_major(cout_g, n),
            &cols,
            View::row_major(cin_g * k, n).t(),
            1.0,
            dwg,
            View::row_major(cout_g, cin_g * k),
        );
    }
}

pub fn backward_bias(geom: &Geometry, dy: &[f64], db: &mut [f64]) {
    let l = geom.length;
    for yb in dy.chunks_exact(geom.out_channels * l) {
        for (row, d) in yb.chunks_exact(l).zip(db.iter_mut()) {
            *d += row.iter().sum::<f64>();
        }
    }
}

/// Accumulates `d loss / d input` into `dx`.
pub fn backward_input(geom: &Geometry, dy: &[f64], w: &[f64], dx: &mut [f64]) {
    let (b, l) = (geom.batch, geom.length);
    let (cin_g, cout_g, k) = (geom.in_per_group(), geom.out_per_group(), geom.kernel);

    if geom.is_depthwise() {
        for bi in 0..b {
            for c in 0..geom.in_channels {
                let gs = &dy[(bi * geom.out_channels + c) * l..][..l];
                let ws = &w[c * k..(c + 1) * k];
                let dxs = &mut dx[(bi * geom.in_channels + c) * l..][..l];
                for (t, &gt) in gs.iter().enumerate() {
                    for j in geom.taps(t) {
                        dxs[t + j - geom.pad()] += gt * ws[j];
                    }
                }
            }
        }
        return;
    }

    let n = b * l;
    let mut cols = vec![0.0; cin_g * k * n];
    let mut dyg = vec![0.0; cout_g * n];
    for g in 0..geom.groups {
        gather_out(geom, dy, g, &mut dyg);
        let wg = &w[g * cout_g * cin_g * k..][..cout_g * cin_g * k];
        gemm(
            1.0,
            wg,
            View::row_major(cout_g, cin_g * k).t(),
            &dyg,
            View::row_major(cout_g, n),
            0.0,
            &mut cols,
            View::row_major(cin_g * k, n),
        );
        col2im(geom, &cols, g, dx);
    }
}

/// Trainable scalars of a convolution: weight plus optional bias.
pub fn param_count(in_channels: usize, out_channels: usize, kernel: usize, groups: usize, bias: bool) -> usize {
    out_channels * (in_channels / groups) * kernel + if bias { out_channels } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the convolution sum, independent of im2col/GEMM.
    pub(crate) fn naive(geom: &Geometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let (b, l, k) = (geom.batch, geom.length, geom.kernel);
        let (cin_g, cout_g) = (geom.in_per_group(), geom.out_per_group());
        let pad = k as isize / 2;
        let mut y = vec![0.0; b * geom.out_channels * l];
        for bi in 0..b {
            for o in 0..geom.out_channels {
                let g = o / cout_g;
                for t in 0..l {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for c in 0..cin_g {
                        for j in 0..k {
                            let src = t as isize + j as isize - pad;
                            if src >= 0 && (src as usize) < l {
                                let ci = g * cin_g + c;
                                acc += w[(o * cin_g + c) * k + j] * x[(bi * geom.in_channels + ci) * l + src as usize];
                            }
                        }
                    }
                    y[(bi * geom.out_channels + o) * l + t] = acc;
                }
            }
        }
        y
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn hand_convolution_with_zero_padding() {
        let g = Geometry::new(&[1, 1, 3], &[1, 1, 3], None, 1).unwrap();
        let y = forward(&g, &[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], None);
        assert_eq!(y, [3.0, 6.0, 5.0]);
    }

    #[test]
    fn depthwise_scales_each_channel() {
        let g = Geometry::new(&[1, 2, 2], &[2, 1, 1], None, 2).unwrap();
        let y = forward(&g, &[1.0, 1.0, 3.0, 3.0], &[1.0, 2.0], None);
        assert_eq!(y, [1.0, 1.0, 6.0, 6.0]);
    }

    #[test]
    fn fast_paths_match_direct_sum() {
        let cases = [
            // (b, cin, cout, l, k, groups)
            (2, 3, 4, 7, 1, 1),
            (2, 3, 4, 7, 5, 1),
            (2, 4, 4, 6, 11, 4),
            (1, 4, 8, 5, 3, 2),
            (3, 2, 2, 1, 41, 2),
            (2, 3, 2, 4, 21, 1),
        ];
        for (i, &(b, cin, cout, l, k, groups)) in cases.iter().enumerate() {
            let g = Geometry::new(&[b, cin, l], &[cout, cin / groups, k], Some(&[cout]), groups).unwrap();
            let x = pseudo(b * cin * l, i as u64);
            let w = pseudo(cout * cin / groups * k, 100 + i as u64);
            let bias = pseudo(cout, 200 + i as u64);
            let fast = forward(&g, &x, &w, Some(&bias));
            let slow = naive(&g, &x, &w, Some(&bias));
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "case {i}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::new(&[1, 3, 4], &[2, 1, 3], None, 2).is_err());
        assert!(Geometry::new(&[1, 4, 4], &[2, 2, 4], None, 2).is_err());
        assert!(Geometry::new(&[1, 4, 4], &[2, 3, 3], None, 1).is_err());
        assert!(Geometry::new(&[1, 4, 4], &[2, 4, 3], Some(&[3]), 1).is_err());
        assert!(Geometry::new(&[4, 4], &[2, 4, 3], None, 1).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(10, 16, 1, 1, true), 176);
        assert_eq!(param_count(16, 16, 11, 16, true), 16 * 11 + 16);
    }
}
