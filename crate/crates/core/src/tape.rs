//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough saved state to
//! run its backward rule. `backward` walks the nodes in reverse recording order
//! exactly once and leaves gradients on every node that requires one.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{conv, loss, norm, pool};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Relu(Var),
    Conv1d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        groups: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::Saved,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a train-mode batch norm, used to update running stats.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased per-channel variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    conv_fault: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Test fixture: every conv backward on this tape returns an input gradient
    /// that is 5% too large, so verification harnesses can show they catch it.
    #[doc(hidden)]
    pub fn inject_conv_backward_fault(&mut self) {
        self.conv_fault = true;
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, needs_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.take_grad()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_node(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            data.iter().all(|v| v.is_finite())
                || inputs.iter().any(|&i| !self.value(i).is_finite()),
            "op {op:?} produced non-finite values from finite inputs"
        );
        let needs = inputs.iter().any(|&i| self.needs(i));
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push_node(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(shape, data, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(shape, data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * s).collect();
        let shape = t.shape().to_vec();
        self.push(shape, data, Op::Scale(x, s), &[x])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = t.data().to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    /// Concatenates `[B, C_i, L]` tensors along the channel axis, preserving order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat_channels",
            detail: "no parts given".into(),
        })?;
        let (b, _, l) = self.value(first).dims3("concat_channels")?;
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, pl) = self.value(p).dims3("concat_channels")?;
            if pb != b || pl != l {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            channels += pc;
        }
        let mut data = Vec::with_capacity(b * channels * l);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[1] * l;
                data.extend_from_slice(&t.data()[bi * block..(bi + 1) * block]);
            }
        }
        Ok(self.push(vec![b, channels, l], data, Op::Concat(parts.to_vec()), parts))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = t.shape().to_vec();
        self.push(shape, data, Op::Relu(x), &[x])
    }

    /// Stride-1, same-zero-padded 1-D convolution.
    ///
    /// `weight` is `[C_out, C_in / groups, kernel]` with an odd kernel; `bias` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>, groups: usize) -> Result<Var> {
        let geom = conv::Geometry::new(
            self.shape(x),
            self.shape(weight),
            bias.map(|b| self.shape(b)),
            groups,
        )?;
        let out = conv::forward(
            &geom,
            self.data(x),
            self.data(weight),
            bias.map(|b| self.data(b)),
        );
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            vec![geom.batch, geom.out_channels, geom.length],
            out,
            Op::Conv1d {
                x,
                weight,
                bias,
                groups,
            },
            &inputs,
        ))
    }

    /// Train-mode batch norm over the `(batch, length)` axes of a `[B, C, L]` input.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let dims = self.value(x).dims3("batch_norm")?;
        norm::check_affine(dims.1, self.shape(gamma), self.shape(beta))?;
        let (out, saved, stats) =
            norm::forward_train(dims, self.data(x), self.data(gamma), self.data(beta), eps)?;
        let v = self.push(
            vec![dims.0, dims.1, dims.2],
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Eval-mode batch norm: a fixed per-channel affine map from running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let dims = self.value(x).dims3("batch_norm")?;
        norm::check_affine(dims.1, self.shape(gamma), self.shape(beta))?;
        if running_mean.len() != dims.1 || running_var.len() != dims.1 {
            return Err(Error::InvalidShape {
                op: "batch_norm",
                detail: alloc::format!(
                    "running stats have {} / {} channels, input has {}",
                    running_mean.len(),
                    running_var.len(),
                    dims.1
                ),
            });
        }
        let (out, saved) = norm::forward_eval(
            dims,
            self.data(x),
            self.data(gamma),
            self.data(beta),
            running_mean,
            running_var,
            eps,
        );
        Ok(self.push(
            vec![dims.0, dims.1, dims.2],
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            &[x, gamma, beta],
        ))
    }

    /// Length-preserving stride-1 max pool; padded positions never win.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let dims = self.value(x).dims3("max_pool1d")?;
        let (out, argmax) = pool::max_forward(dims, self.data(x), kernel)?;
        Ok(self.push(
            vec![dims.0, dims.1, dims.2],
            out,
            Op::MaxPool { x, argmax },
            &[x],
        ))
    }

    pub fn adaptive_avg_pool1d(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let dims = self.value(x).dims3("adaptive_avg_pool1d")?;
        let out = pool::adaptive_avg_forward(dims, self.data(x), out_len)?;
        Ok(self.push(
            vec![dims.0, dims.1, out_len],
            out,
            Op::AdaptiveAvgPool(x),
            &[x],
        ))
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = loss::cross_entropy_forward(self.shape(logits), self.data(logits), labels)?;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`. The tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                if node.needs_grad {
                    node.value.set_grad(g);
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        fn accum<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = accum(nodes, grads, v) {
                        ga.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = accum(nodes, grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(db) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = accum(nodes, grads, *b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(da) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = accum(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, u)| *d += u * s);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = accum(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = accum(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::Concat(parts) => {
                let (b, c, l) = nodes[i].value.dims3("concat_channels")?;
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.shape()[1];
                    if let Some(gp) = accum(nodes, grads, p) {
                        for bi in 0..b {
                            let src = &g[(bi * c + offset) * l..(bi * c + offset + pc) * l];
                            let dst = &mut gp[bi * pc * l..(bi + 1) * pc * l];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += pc;
                }
            }
            Op::Relu(x) => {
                let out = nodes[i].value.data();
                if let Some(gx) = accum(nodes, grads, *x) {
                    for ((d, s), y) in gx.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                weight,
                bias,
                groups,
            } => {
                let geom = conv::Geometry::new(
                    nodes[x.0].value.shape(),
                    nodes[weight.0].value.shape(),
                    bias.map(|b| nodes[b.0].value.shape()),
                    *groups,
                )?;
                let xd = nodes[x.0].value.data();
                let wd = nodes[weight.0].value.data();
                // Each accumulator is borrowed in turn; the kernel only adds into them.
                if let Some(gw) = accum(nodes, grads, *weight) {
                    conv::backward_weight(&geom, g, xd, gw);
                }
                if let Some(b) = bias {
                    if let Some(gb) = accum(nodes, grads, *b) {
                        conv::backward_bias(&geom, g, gb);
                    }
                }
                if let Some(gx) = accum(nodes, grads, *x) {
                    if self.conv_fault {
                        let mut wrong = vec![0.0; gx.len()];
                        conv::backward_input(&geom, g, wd, &mut wrong);
                        gx.iter_mut().zip(&wrong).for_each(|(d, w)| *d += 1.05 * w);
                    } else {
                        conv::backward_input(&geom, g, wd, gx);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let dims = nodes[i].value.dims3("batch_norm")?;
                let gd = nodes[gamma.0].value.data();
                if let Some(gg) = accum(nodes, grads, *gamma) {
                    norm::backward_gamma(dims, g, saved, gg);
                }
                if let Some(gb) = accum(nodes, grads, *beta) {
                    norm::backward_beta(dims, g, gb);
                }
                if let Some(gx) = accum(nodes, grads, *x) {
                    norm::backward_input(dims, g, gd, saved, gx);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = accum(nodes, grads, *x) {
                    for (s, &src) in g.iter().zip(argmax) {
                        gx[src] += s;
                    }
                }
            }
            Op::AdaptiveAvgPool(x) => {
                let in_dims = nodes[x.0].value.dims3("adaptive_avg_pool1d")?;
                let out_len = nodes[i].value.shape()[2];
                if let Some(gx) = accum(nodes, grads, *x) {
                    pool::adaptive_avg_backward(in_dims, out_len, g, gx);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if let Some(gl) = accum(nodes, grads, *logits) {
                    loss::cross_entropy_backward(labels, probs, g[0], gl);
                }
            }
        }
        Ok(())
    }
}

/// Runs the reverse pass of `tape` from `loss`. See [`Tape::backward`].
pub fn backward(loss: Var, tape: &mut Tape) -> Result<()> {
    tape.backward(loss)
}
