//! Model checkpoint container (`.xtc`).
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic            8 bytes "XTIMECKP"
//! version          u32     1
//! variant          u8      0 base (depthwise separable) | 1 v2 (plain conv)
//! input_channels   u32
//! num_classes      u32
//! head_mid_length  u32
//! pool_kernel      u32
//! module_filters   u64 count, u32 each
//! kernels          u64 count, u32 each
//! head_hidden      u64 count, u32 each
//! norm             normalization statistics, same encoding as the dataset file
//! params           u64 count, then per tensor:
//!                    name (u64 length + UTF-8), rank u64, rank x u64 dims,
//!                    product(dims) x f64
//! buffers          same encoding as params (batch-norm running statistics)
//! ```

use std::path::Path;

use xtime_core::model::{Variant, XTimeNetwork, XTimeNetworkSpec};
use xtime_core::params::NamedTensor;
use xtime_core::signal::NormStats;
use xtime_core::Tensor;

use crate::binio::{Decoder, Encoder};
use crate::dataset_file::{get_stats, put_stats};
use crate::error::{AppError, AppResult};

const MAGIC: &[u8; 8] = b"XTIMECKP";
const VERSION: u32 = 1;

/// A trained network with the statistics its inputs were normalized with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: XTimeNetwork,
    pub stats: NormStats,
}

fn put_usizes(e: &mut Encoder, vs: &[usize]) {
    e.u32s(vs.iter().map(|&v| v as u32));
}

fn put_tensors(e: &mut Encoder, ts: &[NamedTensor]) {
    e.len(ts.len());
    for t in ts {
        e.str(&t.name);
        e.len(t.tensor.shape().len());
        for &d in t.tensor.shape() {
            e.u64(d as u64);
        }
        e.f64s(t.tensor.data());
    }
}

fn get_tensors(d: &mut Decoder<'_>) -> Result<Vec<NamedTensor>, String> {
    let n = d.len(16)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = d.str()?;
        let rank = d.len(8)?;
        let shape = (0..rank).map(|_| d.u64().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or("shape overflow")?;
        let data = d.f64s(count)?;
        let tensor = Tensor::new(shape, data).map_err(|e| format!("tensor `{name}`: {e}"))?;
        out.push(NamedTensor { name, tensor });
    }
    Ok(out)
}

pub fn encode(net: &XTimeNetwork, stats: &NormStats) -> Vec<u8> {
    let spec = net.spec();
    let mut e = Encoder::new(MAGIC, VERSION);
    e.u8(match spec.variant {
        Variant::Separable => 0,
        Variant::Plain => 1,
    });
    e.u32(spec.input_channels as u32);
    e.u32(spec.num_classes as u32);
    e.u32(spec.head_mid_length as u32);
    e.u32(spec.pool_kernel as u32);
    put_usizes(&mut e, &spec.module_filters);
    put_usizes(&mut e, &spec.kernels);
    put_usizes(&mut e, &spec.head_hidden);
    put_stats(&mut e, stats);
    put_tensors(&mut e, net.store().params());
    put_tensors(&mut e, net.store().buffers());
    e.buf
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let (mut d, version) = Decoder::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version} (expected {VERSION})"));
    }
    let variant = match d.u8()? {
        0 => Variant::Separable,
        1 => Variant::Plain,
        v => return Err(format!("unknown variant tag {v}")),
    };
    let input_channels = d.u32()? as usize;
    let num_classes = d.u32()? as usize;
    let head_mid_length = d.u32()? as usize;
    let pool_kernel = d.u32()? as usize;
    let to_usize = |v: Vec<u32>| v.into_iter().map(|x| x as usize).collect::<Vec<_>>();
    let module_filters = to_usize(d.u32s()?);
    let kernels = to_usize(d.u32s()?);
    let head_hidden = to_usize(d.u32s()?);
    let spec = XTimeNetworkSpec {
        input_channels,
        module_filters,
        num_classes,
        head_mid_length,
        head_hidden,
        kernels,
        pool_kernel,
        variant,
    };
    let stats = get_stats(&mut d)?;
    let params = get_tensors(&mut d)?;
    let buffers = get_tensors(&mut d)?;
    d.finish()?;
    let mut network = XTimeNetwork::new(spec, 0).map_err(|e| format!("network spec: {e}"))?;
    network.store_mut().load_from(&params, &buffers).map_err(|e| e.to_string())?;
    Ok(Checkpoint { network, stats })
}

pub fn save(path: &Path, net: &XTimeNetwork, stats: &NormStats) -> AppResult<()> {
    std::fs::write(path, encode(net, stats)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}
