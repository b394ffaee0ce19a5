//! Named parameter and buffer storage shared by all layers of a network.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Trainable parameters plus non-trainable buffers (batch-norm running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(NamedTensor {
            name: name.into(),
            tensor: tensor.with_requires_grad(true),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> BufferId {
        self.buffers.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].tensor
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].tensor
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn buffers(&self) -> &[NamedTensor] {
        &self.buffers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.params.iter().map(|p| tape.param(p.tensor.clone())).collect())
    }

    /// Replaces stored values with same-named, same-shaped tensors from `other`.
    pub fn load_from(&mut self, params: &[NamedTensor], buffers: &[NamedTensor]) -> Result<()> {
        fn copy(dst: &mut [NamedTensor], src: &[NamedTensor], kind: &str) -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "expected {} {kind}s, got {}",
                    dst.len(),
                    src.len()
                )));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                if d.name != s.name || d.tensor.shape() != s.tensor.shape() {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "{kind} `{}` {:?} does not match `{}` {:?}",
                        s.name,
                        s.tensor.shape(),
                        d.name,
                        d.tensor.shape()
                    )));
                }
                d.tensor.data_mut().copy_from_slice(s.tensor.data());
            }
            Ok(())
        }
        copy(&mut self.params, params, "parameter")?;
        copy(&mut self.buffers, buffers, "buffer")
    }
}

/// Tape handles for each parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Routes `id` through a different tape value (used by gradient checks).
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.0[id.0] = var;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.0.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}
