//! Flat little-endian parameter snapshots.
//!
//! Layout: `b"SARB"`, `u32` version, then for each tensor until end of file:
//! `u32` name length, UTF-8 name bytes, `u32` rank, `rank` x `u32` dims,
//! `f64` payload in row-major order.

use std::io::{self, Read, Write};

use super::{NumericsError, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SARB";
pub const VERSION: u32 = 1;

pub fn write_tensors<'a, W, I>(mut out: W, tensors: I) -> Result<(), NumericsError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in tensors {
        write_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        write_u32(&mut out, tensor.rank())?;
        for &dim in tensor.shape() {
            write_u32(&mut out, dim)?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_u32<W: Write>(out: &mut W, v: usize) -> Result<(), NumericsError> {
    let v = u32::try_from(v).map_err(|_| NumericsError::Snapshot(format!("{v} exceeds u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_tensors<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = Cursor { bytes: &bytes, pos: 0 };
    if cursor.take(4)? != MAGIC {
        return Err(NumericsError::Snapshot("bad magic".into()));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(NumericsError::Snapshot(format!("unsupported version {version}")));
    }
    let mut tensors = Vec::new();
    while cursor.pos < bytes.len() {
        let name_len = cursor.u32()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|e| NumericsError::Snapshot(format!("name is not UTF-8: {e}")))?
            .to_owned();
        let rank = cursor.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cursor.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let payload = cursor.take(count * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(NumericsError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "truncated snapshot",
            )));
        };
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn save_params<W: Write>(out: W, store: &ParamStore) -> Result<(), NumericsError> {
    write_tensors(out, store.iter().map(|(_, v)| (v.name.as_str(), &v.value)))
}

/// Loads values by name into an existing store. Names absent from the store
/// are ignored; every store variable must be present with a matching shape.
pub fn load_params(store: &mut ParamStore, tensors: &[(String, Tensor)]) -> Result<(), NumericsError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let (_, tensor) = tensors
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| NumericsError::Snapshot(format!("missing parameter {name}")))?;
        store.set_value(id, tensor.clone())?;
    }
    Ok(())
}
