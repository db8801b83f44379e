//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ROEP"            magic, 4 bytes
//! version           u32
//! tensor count      u32
//! per tensor:
//!   name length     u16, then UTF-8 name bytes
//!   rank            u8, then `rank` dims as u32
//!   values          f64 each, row-major
//! ```

use std::io::{Read, Write};

use super::{NnError, Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"ROEP";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, &Tensor)]) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(tensors.len()).map_err(|_| bad("too many tensors"))?.to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| bad("name too long"))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| bad("rank too large"))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&u32::try_from(d).map_err(|_| bad("dimension too large"))?.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(read_array(&mut r)?) as usize))
            .collect::<Result<Vec<_>, NnError>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<Vec<_>, NnError>>()?;
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Flattens parameters (values plus `.m` / `.v` Adam moments) into named tensors.
pub fn parameter_tensors<'a>(params: impl IntoIterator<Item = &'a Parameter>) -> Vec<(String, &'a Tensor)> {
    params
        .into_iter()
        .flat_map(|p| {
            [
                (p.name.clone(), &p.value),
                (format!("{}.m", p.name), &p.adam_m),
                (format!("{}.v", p.name), &p.adam_v),
            ]
        })
        .collect()
}

/// Copies values and moments from `tensors` into matching parameters.
/// Every parameter must be present with the same shape.
pub fn restore_parameters<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    tensors: &[(String, Tensor)],
) -> Result<(), NnError> {
    let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
    for p in params {
        for (suffix, slot) in [("", &mut p.value), (".m", &mut p.adam_m), (".v", &mut p.adam_v)] {
            let key = format!("{}{}", p.name, suffix);
            let t = find(&key).ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            if t.shape() != slot.shape() {
                return Err(NnError::ShapeMismatch { expected: slot.shape().to_vec(), got: t.shape().to_vec() });
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        p.zero_grad();
    }
    Ok(())
}
