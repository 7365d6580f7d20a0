//! Binary checkpoint serialization for named parameter tensors.
//!
//! Layout (all integers little-endian): magic `VMSU`, format version u32,
//! tensor count u32; then per tensor: name length u16 + UTF-8 name, rank
//! u8, each extent u32, element type u8 (0 = f32, 1 = f64), and the raw
//! element payload in row-major order. Values round-trip bitwise. Loading
//! into a network requires an exact one-to-one match between file entries
//! and parameter names with identical shapes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segnet::SegNet;
use crate::tensor::{Parameter, Tensor};

const MAGIC: [u8; 4] = *b"VMSU";
const VERSION: u32 = 1;

fn dtype_tag<T: Scalar>() -> u8 {
    match T::BYTES {
        4 => 0,
        8 => 1,
        other => unreachable!("unsupported element width {}", other),
    }
}

fn push_element<T: Scalar>(out: &mut Vec<u8>, v: T) {
    let bits = v.bits().to_le_bytes();
    out.extend_from_slice(&bits[..T::BYTES]);
}

/// Serialize parameters to a checkpoint file.
pub fn save_params<T: Scalar>(path: &Path, params: &[Parameter<T>]) -> Result<()> {
    let count = u32::try_from(params.len())
        .map_err(|_| Error::Contract("checkpoint: too many tensors".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("checkpoint: name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let ndim = u8::try_from(p.value.ndim())
            .map_err(|_| Error::Contract("checkpoint: rank exceeds 255".into()))?;
        out.push(ndim);
        for &d in p.value.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Contract("checkpoint: extent exceeds u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(dtype_tag::<T>());
        for &v in p.value.data() {
            push_element(&mut out, v);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated while reading {}", what))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a checkpoint into named tensors, in file order.
pub fn load_params<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("checkpoint: bad magic (not a VMSU file)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint: unsupported version {} (expected {})",
            version, VERSION
        )));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("checkpoint: name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = r.u32("extent")? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Format("checkpoint: extent overflow".into()))?;
            shape.push(d);
        }
        let tag = r.u8("element type")?;
        if tag != dtype_tag::<T>() {
            return Err(Error::Format(format!(
                "checkpoint: element type tag {} does not match the requested precision",
                tag
            )));
        }
        let payload = r.take(len * T::BYTES, &format!("payload of {}", name))?;
        let mut data = Vec::with_capacity(len);
        for chunk in payload.chunks_exact(T::BYTES) {
            let mut raw = [0u8; 8];
            raw[..T::BYTES].copy_from_slice(chunk);
            data.push(T::from_bits(u64::from_le_bytes(raw)));
        }
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint: {} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Load a checkpoint into a built network. Every file entry must name an
/// existing parameter with the same shape, exactly once, and every
/// parameter must be covered.
pub fn load_params_into<T: Scalar>(path: &Path, net: &mut SegNet<T>) -> Result<()> {
    let entries = load_params::<T>(path)?;
    let mut seen = vec![false; net.params().len()];
    for (name, tensor) in entries {
        let idx = net.param_index(&name).ok_or_else(|| {
            Error::Contract(format!("checkpoint names unknown parameter '{}'", name))
        })?;
        if seen[idx] {
            return Err(Error::Contract(format!("checkpoint repeats parameter '{}'", name)));
        }
        let p = &mut net.params_mut()[idx];
        if tensor.shape() != p.value.shape() {
            return Err(Error::Contract(format!(
                "checkpoint shape {:?} does not match parameter '{}' {:?}",
                tensor.shape(),
                name,
                p.value.shape()
            )));
        }
        p.value = tensor;
        seen[idx] = true;
    }
    if let Some(idx) = seen.iter().position(|&s| !s) {
        return Err(Error::Contract(format!(
            "checkpoint is missing parameter '{}'",
            net.params()[idx].name
        )));
    }
    Ok(())
}
