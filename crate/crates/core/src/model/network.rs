use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::module::XTimeModule;
use super::spec::{XTimeNetworkSpec, RESIDUAL_SPAN};
use crate::error::{Error, Result};
use crate::layers::{BatchNorm1d, Conv1d, ConvConfig, Ctx, Mode};
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A 1x1 convolution followed by batch norm; used for residual shortcuts and head stages.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
}

impl ConvBn {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(store, &format!("{name}.conv"), ConvConfig::pointwise(c_in, c_out), rng)?,
            bn: BatchNorm1d::new(store, &format!("{name}.bn"), c_out),
        })
    }

    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.conv.forward(ctx, x)?;
        self.bn.forward(ctx, h)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// The XceptionTime network: stacked modules with residual shortcuts every two
/// modules, then an adaptive-pool / 1x1-conv head that accepts any input length.
#[derive(Debug, Clone)]
pub struct XTimeNetwork {
    spec: XTimeNetworkSpec,
    store: ParamStore,
    modules: Vec<XTimeModule>,
    shortcuts: Vec<ConvBn>,
    head: Vec<ConvBn>,
}

impl XTimeNetwork {
    /// Builds with a ChaCha8 generator seeded from `seed`.
    pub fn new(spec: XTimeNetworkSpec, seed: u64) -> Result<Self> {
        Self::build(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn build<R: Rng + ?Sized>(spec: XTimeNetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let module_specs = spec.module_specs();
        let mut modules = Vec::with_capacity(module_specs.len());
        let mut shortcuts = Vec::new();
        for (i, ms) in module_specs.iter().enumerate() {
            if i % RESIDUAL_SPAN == 0 {
                let c_out = module_specs[i + RESIDUAL_SPAN - 1].out_channels();
                let idx = shortcuts.len() + 1;
                shortcuts.push(ConvBn::new(&mut store, &format!("residual{idx}"), ms.in_channels, c_out, rng)?);
            }
            modules.push(XTimeModule::new(&mut store, &format!("module{}", i + 1), ms.clone(), rng)?);
        }
        let chans = spec.head_channels();
        let head = chans
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvBn::new(&mut store, &format!("head{}", i + 1), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            store,
            modules,
            shortcuts,
            head,
        })
    }

    pub fn spec(&self) -> &XTimeNetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn modules(&self) -> &[XTimeModule] {
        &self.modules
    }

    pub fn shortcuts(&self) -> &[ConvBn] {
        &self.shortcuts
    }

    pub fn head(&self) -> &[ConvBn] {
        &self.head
    }

    /// Exact number of trainable scalars (running statistics excluded).
    pub fn count_parameters(&self) -> usize {
        self.store.num_trainable()
    }

    /// Trainable scalars per layer path (parameter name without its last segment),
    /// in construction order.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in self.store.params() {
            let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
            match out.last_mut() {
                Some((name, n)) if name == layer => *n += p.tensor.len(),
                _ => out.push((layer.to_string(), p.tensor.len())),
            }
        }
        out
    }

    /// Trainable scalars per top-level component (`module1`, `residual1`, `head2`, ...).
    pub fn component_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for p in self.store.params() {
            let top = p.name.split('.').next().unwrap_or("").to_string();
            *out.entry(top).or_insert(0) += p.tensor.len();
        }
        out
    }

    /// Records every parameter on `tape` and runs the forward pass, returning
    /// `[B, num_classes]` logits and the parameter bindings.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<(Var, Bindings)> {
        let binds = self.store.bind(tape);
        let logits = self.forward_bound(tape, &binds, x, mode)?;
        Ok((logits, binds))
    }

    /// Forward pass using caller-provided parameter bindings.
    pub fn forward_bound(
        &mut self,
        tape: &mut Tape,
        binds: &Bindings,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let (b, c, _) = tape.value(x).dims3("network input")?;
        if c != self.spec.input_channels {
            return Err(Error::ShapeMismatch {
                op: "network input",
                lhs: tape.shape(x).to_vec(),
                rhs: alloc::vec![b, self.spec.input_channels, 0],
            });
        }
        let Self {
            spec,
            store,
            modules,
            shortcuts,
            head,
        } = self;
        let mut ctx = Ctx {
            tape,
            binds,
            store,
            mode,
        };

        let mut h = x;
        for (block, shortcut) in modules.chunks(RESIDUAL_SPAN).zip(shortcuts.iter()) {
            let block_in = h;
            for m in block {
                h = m.forward(&mut ctx, h)?;
            }
            let skip = shortcut.forward(&mut ctx, block_in)?;
            let sum = ctx.tape.add(h, skip)?;
            h = ctx.tape.relu(sum);
        }

        // A 1x1 conv commutes with adaptive average pooling (bins are convex
        // combinations), so the first head conv runs at the shorter of the two lengths.
        let length = ctx.tape.shape(h)[2];
        for (i, stage) in head.iter().enumerate() {
            let z = if i == 0 && length < spec.head_mid_length {
                let z = stage.conv.forward(&mut ctx, h)?;
                let z = ctx.tape.adaptive_avg_pool1d(z, spec.head_mid_length)?;
                stage.bn.forward(&mut ctx, z)?
            } else {
                if i == 0 {
                    h = ctx.tape.adaptive_avg_pool1d(h, spec.head_mid_length)?;
                }
                stage.forward(&mut ctx, h)?
            };
            h = ctx.tape.relu(z);
        }
        h = ctx.tape.adaptive_avg_pool1d(h, 1)?;
        ctx.tape.reshape(h, &[b, spec.num_classes])
    }

    /// Mean cross-entropy of the network on `(x, labels)` recorded on `tape`.
    pub fn loss(
        &mut self,
        tape: &mut Tape,
        x: &Tensor,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(Var, Var, Bindings)> {
        let xv = tape.constant(x.clone());
        let (logits, binds) = self.forward(tape, xv, mode)?;
        let loss = tape.cross_entropy(logits, labels)?;
        Ok((loss, logits, binds))
    }

    /// Logits without recording gradients for later use.
    pub fn predict(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (logits, _) = self.forward(&mut tape, xv, mode)?;
        Ok(tape.value(logits).clone())
    }
}
