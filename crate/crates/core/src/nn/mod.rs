//! Dense feed-forward networks with exact backpropagation.

mod adam;
mod gradcheck;
mod mlp;

use std::io::{Read, Write};

pub use adam::{AdamConfig, AdamOutcome, AdamState};
pub use gradcheck::finite_diff_grad;
pub use mlp::{
    backward, backward_batch, forward, forward_batch, mlp_init, Activation, BackwardRequest,
    ForwardCache, Gradients, MlpSpec, ParamVector,
};

use crate::codec::*;
use crate::error::{Error, Result};

/// Concatenates several networks' parameters in the given order.
///
/// The combined `spec_hash` is derived from the member hashes so that
/// [`unflatten`] can reject a flat vector built from different networks.
pub fn flatten(nets: &[&ParamVector]) -> ParamVector {
    let mut values = Vec::with_capacity(nets.iter().map(|n| n.len()).sum());
    for n in nets {
        values.extend_from_slice(&n.values);
    }
    ParamVector {
        values,
        spec_hash: combined_hash(nets.iter().map(|n| n.spec_hash)),
    }
}

pub fn unflatten(specs: &[&MlpSpec], flat: &ParamVector) -> Result<Vec<ParamVector>> {
    let total: usize = specs.iter().map(|s| s.param_count()).sum();
    if flat.len() != total {
        return Err(Error::dim("flattened parameters", total, flat.len()));
    }
    let expected = combined_hash(specs.iter().map(|s| s.spec_hash()));
    if flat.spec_hash != expected {
        return Err(Error::SpecMismatch {
            expected,
            actual: flat.spec_hash,
        });
    }
    let mut out = Vec::with_capacity(specs.len());
    let mut offset = 0;
    for s in specs {
        let n = s.param_count();
        out.push(ParamVector {
            values: flat.values[offset..offset + n].to_vec(),
            spec_hash: s.spec_hash(),
        });
        offset += n;
    }
    Ok(out)
}

fn combined_hash(hashes: impl Iterator<Item = u64>) -> u64 {
    // FNV-1a over the member hashes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in hashes {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

const PARAM_MAGIC: &[u8; 4] = b"PVEC";
const PARAM_VERSION: u8 = 1;

/// Binary layout (all little-endian):
///
/// ```text
/// "PVEC" | version u8 = 1
/// n_sizes u32 | sizes u32 × n_sizes | activation codes u8 × (n_sizes - 1)
/// spec_hash u64 | len u64 | values f64 × len
/// ```
pub fn write_params(w: &mut impl Write, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    params.check(spec)?;
    w.write_all(PARAM_MAGIC)?;
    put_u8(w, PARAM_VERSION)?;
    put_u32(w, spec.layer_sizes().len() as u32)?;
    for &s in spec.layer_sizes() {
        put_u32(w, s as u32)?;
    }
    for a in spec.activations() {
        put_u8(w, a.code())?;
    }
    put_u64(w, params.spec_hash)?;
    put_u64(w, params.len() as u64)?;
    put_f64s(w, &params.values)
}

pub fn read_params(r: &mut impl Read) -> Result<(MlpSpec, ParamVector)> {
    expect_magic(r, PARAM_MAGIC, "parameter vector")?;
    let version = get_u8(r)?;
    if version != PARAM_VERSION {
        return Err(Error::format("parameter vector", format!("unsupported version {version}")));
    }
    let n = get_u32(r)? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::format("parameter vector", format!("{n} layers")));
    }
    let sizes = (0..n)
        .map(|_| get_u32(r).map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let acts = (0..n - 1)
        .map(|_| get_u8(r).and_then(Activation::from_code))
        .collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec::new(sizes, acts)?;
    let hash = get_u64(r)?;
    let len = get_u64(r)? as usize;
    if len != spec.param_count() || hash != spec.spec_hash() {
        return Err(Error::format("parameter vector", "header does not match spec"));
    }
    let values = get_f64s(r, len)?;
    Ok((
        spec,
        ParamVector {
            values,
            spec_hash: hash,
        },
    ))
}
