//! Little-endian parameter checkpoints.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ODCK"
//! 4       u32         format version (1)
//! 8       u32         activation code (0 = relu, 1 = tanh)
//! 12      u32         input_dim
//! 16      u32         output_dim
//! 20      u32         number of hidden layers H
//! 24      u32 * H     hidden widths
//! 24+4H   u64         parameter count D
//! 32+4H   f64 * D     parameters, layer by layer (weights fan_in x fan_out row-major, then biases)
//! ```

use std::io::{Read, Write};

use super::{Activation, NetworkArchitecture, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ODCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(
    mut out: W,
    arch: &NetworkArchitecture,
    params: &ParamVector,
) -> Result<()> {
    arch.check_params(params)?;
    let mut buf = Vec::with_capacity(32 + 4 * arch.hidden_widths.len() + 8 * params.len());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&arch.activation.code().to_le_bytes());
    for dim in [arch.input_dim, arch.output_dim, arch.hidden_widths.len()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &w in &arch.hidden_widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params.iter() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)
        .map_err(|e| Error::io("writing checkpoint", e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parse {
        path: None,
        line: 0,
        msg: msg.into(),
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(NetworkArchitecture, ParamVector)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading checkpoint", e))?;
    let mut cursor = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(bad("checkpoint truncated"));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let activation = Activation::from_code(u32_at(take(4)?))
        .ok_or_else(|| bad("unknown activation code"))?;
    let input_dim = u32_at(take(4)?) as usize;
    let output_dim = u32_at(take(4)?) as usize;
    let n_hidden = u32_at(take(4)?) as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(u32_at(take(4)?) as usize);
    }
    let arch = NetworkArchitecture::new(input_dim, hidden, activation, output_dim)?;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(bad(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    if !cursor.is_empty() {
        return Err(bad("trailing bytes after checkpoint"));
    }
    Ok((arch, ParamVector::from_vec(params)))
}
