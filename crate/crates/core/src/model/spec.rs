use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Convolution used for the three temporal branches of each module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Depthwise separable branches (the reference architecture).
    Separable,
    /// Plain `f -> f` convolutions in place of each separable branch ("V2").
    Plain,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Separable => "base",
            Variant::Plain => "v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Variant::Separable),
            "v2" => Some(Variant::Plain),
            _ => None,
        }
    }
}

pub const DEFAULT_KERNELS: [usize; 3] = [11, 21, 41];
pub const DEFAULT_POOL_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XTimeModuleSpec {
    pub in_channels: usize,
    pub filters: usize,
    pub kernels: Vec<usize>,
    pub pool_kernel: usize,
    pub variant: Variant,
}

impl XTimeModuleSpec {
    pub fn new(in_channels: usize, filters: usize) -> Self {
        Self {
            in_channels,
            filters,
            kernels: DEFAULT_KERNELS.to_vec(),
            pool_kernel: DEFAULT_POOL_KERNEL,
            variant: Variant::Separable,
        }
    }

    /// One block of `filters` channels per temporal branch plus the pooling branch.
    pub fn out_channels(&self) -> usize {
        (self.kernels.len() + 1) * self.filters
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.filters == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "module dimensions must be positive: in={} filters={}",
                self.in_channels,
                self.filters
            )));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "branch kernels must be odd and non-empty: {:?}",
                self.kernels
            )));
        }
        if self.pool_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "pool kernel must be odd: {}",
                self.pool_kernel
            )));
        }
        Ok(())
    }
}

/// Full network description. Residual shortcuts span every two modules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XTimeNetworkSpec {
    pub input_channels: usize,
    pub module_filters: Vec<usize>,
    pub num_classes: usize,
    pub head_mid_length: usize,
    /// Hidden widths of the 1x1 head; the last stage maps to `num_classes`.
    pub head_hidden: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool_kernel: usize,
    pub variant: Variant,
}

impl Default for XTimeNetworkSpec {
    fn default() -> Self {
        Self {
            input_channels: 10,
            module_filters: vec![16, 32, 64, 128],
            num_classes: 52,
            head_mid_length: 50,
            head_hidden: vec![256, 128],
            kernels: DEFAULT_KERNELS.to_vec(),
            pool_kernel: DEFAULT_POOL_KERNEL,
            variant: Variant::Separable,
        }
    }
}

pub const RESIDUAL_SPAN: usize = 2;

impl XTimeNetworkSpec {
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn module_specs(&self) -> Vec<XTimeModuleSpec> {
        let mut c_in = self.input_channels;
        self.module_filters
            .iter()
            .map(|&f| {
                let spec = XTimeModuleSpec {
                    in_channels: c_in,
                    filters: f,
                    kernels: self.kernels.clone(),
                    pool_kernel: self.pool_kernel,
                    variant: self.variant,
                };
                c_in = spec.out_channels();
                spec
            })
            .collect()
    }

    pub fn module_out_channels(&self) -> Vec<usize> {
        self.module_specs().iter().map(|m| m.out_channels()).collect()
    }

    /// Head channel schedule, starting at the last module's width.
    pub fn head_channels(&self) -> Vec<usize> {
        let mut chans = vec![*self.module_out_channels().last().unwrap_or(&self.input_channels)];
        chans.extend(&self.head_hidden);
        chans.push(self.num_classes);
        chans
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        if self.input_channels == 0 || self.num_classes == 0 || self.head_mid_length == 0 {
            return bad(alloc::format!("non-positive dimension in {self:?}"));
        }
        if self.module_filters.is_empty() || self.module_filters.len() % RESIDUAL_SPAN != 0 {
            return bad(alloc::format!(
                "module count must be a positive multiple of {RESIDUAL_SPAN}, got {}",
                self.module_filters.len()
            ));
        }
        if self.head_hidden.iter().any(|&c| c == 0) {
            return bad(alloc::format!("zero head width in {:?}", self.head_hidden));
        }
        for m in self.module_specs() {
            m.validate()?;
        }
        Ok(())
    }
}
