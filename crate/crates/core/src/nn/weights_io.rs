use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Result, SagaError};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SAGW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Serializes every parameter in store order; values are narrowed to `f32`.
pub fn write_weights(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| SagaError::config(format!("parameter name too long: {}", p.name)))?;
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| SagaError::config(format!("rank too large: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SagaError::format(self.origin, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a weights blob into an ordered parameter store (values upcast to `f64`).
pub fn read_weights(bytes: &[u8], origin: &Path) -> Result<ParamStore> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(SagaError::format(origin, "bad magic, expected SAGW"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(SagaError::format(origin, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| SagaError::format(origin, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| SagaError::format(origin, "tensor too large"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SagaError::format(origin, format!("non-finite value in {name}")));
        }
        store.add(&name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(SagaError::format(origin, "trailing bytes"));
    }
    Ok(store)
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = write_weights(store)?;
    std::fs::write(path, bytes).map_err(|e| SagaError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| SagaError::io(path, e))?;
    read_weights(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let mut s = ParamStore::new();
        s.add("a.W", Tensor::new(vec![2, 3], vec![0.5, -1.25, 3.0, 0.0, 1e-3f32 as f64, 7.0]).unwrap())
            .unwrap();
        s.add("b", Tensor::scalar(4.0)).unwrap();
        let bytes = write_weights(&s).unwrap();
        let back = read_weights(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert!(read_weights(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_weights(&bad, Path::new("mem")).is_err());
    }
}
