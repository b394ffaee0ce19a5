use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

use super::spec::{Variant, XTimeModuleSpec};
use crate::error::Result;
use crate::layers::{BatchNorm1d, Conv1d, ConvConfig, Ctx, DepthwiseSeparableConv1d};
use crate::params::ParamStore;
use crate::tape::Var;

#[derive(Debug, Clone)]
pub enum Branch {
    Separable(DepthwiseSeparableConv1d),
    Plain(Conv1d),
}

impl Branch {
    fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Branch::Separable(c) => c.forward(ctx, x),
            Branch::Plain(c) => c.forward(ctx, x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Branch::Separable(c) => c.param_count(),
            Branch::Plain(c) => c.param_count(),
        }
    }
}

/// One XceptionTime module.
///
/// ```text
/// x ─ bottleneck 1x1 ─┬─ branch k=11 ─┐
///                     ├─ branch k=21 ─┤
///                     └─ branch k=41 ─┼─ concat ─ BN ─ ReLU
/// x ─ maxpool 3 ─ 1x1 ────────────────┘
/// ```
#[derive(Debug, Clone)]
pub struct XTimeModule {
    pub spec: XTimeModuleSpec,
    pub bottleneck: Conv1d,
    pub branches: Vec<Branch>,
    pub pool_conv: Conv1d,
    pub bn: BatchNorm1d,
}

impl XTimeModule {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: XTimeModuleSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let f = spec.filters;
        let bottleneck = Conv1d::new(
            store,
            &format!("{name}.bottleneck"),
            ConvConfig::pointwise(spec.in_channels, f),
            rng,
        )?;
        let branches = spec
            .kernels
            .iter()
            .map(|&k| {
                let bname = format!("{name}.branch_k{k}");
                Ok(match spec.variant {
                    Variant::Separable => {
                        Branch::Separable(DepthwiseSeparableConv1d::new(store, &bname, f, f, k, rng)?)
                    }
                    Variant::Plain => {
                        Branch::Plain(Conv1d::new(store, &bname, ConvConfig::standard(f, f, k), rng)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool_conv = Conv1d::new(
            store,
            &format!("{name}.pool_conv"),
            ConvConfig::pointwise(spec.in_channels, f),
            rng,
        )?;
        let bn = BatchNorm1d::new(store, &format!("{name}.bn"), spec.out_channels());
        Ok(Self {
            spec,
            bottleneck,
            branches,
            pool_conv,
            bn,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let squeezed = self.bottleneck.forward(ctx, x)?;
        let mut parts = Vec::with_capacity(self.branches.len() + 1);
        for branch in &self.branches {
            parts.push(branch.forward(ctx, squeezed)?);
        }
        let pooled = ctx.tape.max_pool1d(x, self.spec.pool_kernel)?;
        parts.push(self.pool_conv.forward(ctx, pooled)?);
        let cat = ctx.tape.concat_channels(&parts)?;
        let normed = self.bn.forward(ctx, cat)?;
        Ok(ctx.tape.relu(normed))
    }

    pub fn param_count(&self) -> usize {
        self.bottleneck.param_count()
            + self.branches.iter().map(Branch::param_count).sum::<usize>()
            + self.pool_conv.param_count()
            + self.bn.param_count()
    }
}
