//! Flat container of named arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FPPN1"
//! repeated until end of input:
//!   u32   name length in bytes
//!   [u8]  UTF-8 name
//!   u8    dtype code (0 = f32, 1 = f64, 2 = u8)
//!   u32   rank
//!   u64   extent, `rank` times
//!   ...   values, little-endian, product(extents) of them
//! ```

use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"FPPN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U8 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl CheckpointEntry {
    pub fn dtype(&self) -> DType {
        match self.data {
            EntryData::F32(_) => DType::F32,
            EntryData::F64(_) => DType::F64,
            EntryData::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match &self.data {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::U8(v) => v.len(),
        }
    }

    /// Values converted to `T` (u8 entries are rejected).
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let vals: Vec<T> = match &self.data {
            EntryData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            EntryData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            EntryData::U8(_) => {
                return Err(Error::format("checkpoint", format!("entry `{}` is not a float array", self.name)))
            }
        };
        Tensor::from_vec(&self.shape, vals)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        let data = match T::DTYPE {
            DType::F32 => EntryData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => EntryData::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        self.entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data,
        });
    }

    pub fn push_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: vec![bytes.len()],
            data: EntryData::U8(bytes.to_vec()),
        });
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut ck = Self::new();
        for (name, t, _) in store.iter() {
            ck.push_tensor(name, t);
        }
        ck
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn bytes(&self, name: &str) -> Option<&[u8]> {
        match self.get(name).map(|e| &e.data) {
            Some(EntryData::U8(b)) => Some(b),
            _ => None,
        }
    }

    /// Copies every store entry's values from the checkpoint, matching by name
    /// and requiring identical shapes.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let entry = self
                .get(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing entry `{name}`")))?;
            let t: Tensor<T> = entry.to_tensor()?;
            if t.shape() != store.tensor(id).shape() {
                return Err(Error::shape(format!(
                    "checkpoint entry `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    store.tensor(id).shape()
                )));
            }
            store.set_values(id, t.data())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, write_checkpoint(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(&bytes)
    }
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for e in &ck.entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype().code());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.data {
            EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            EntryData::U8(v) => out.extend_from_slice(v),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                "checkpoint",
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("checkpoint", "missing FPPN1 magic"));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut ck = Checkpoint::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format("checkpoint", "entry name is not UTF-8"))?
            .to_string();
        let code = r.take(1, "dtype")?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::format("checkpoint", format!("unknown dtype code {code} in `{name}`")))?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format("checkpoint", format!("extents of `{name}` overflow")))?;
        let nbytes = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::format("checkpoint", format!("extents of `{name}` overflow")))?;
        let raw = r.take(nbytes, "values")?;
        let data = match dtype {
            DType::F32 => EntryData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => EntryData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            DType::U8 => EntryData::U8(raw.to_vec()),
        };
        let entry = CheckpointEntry { name, shape, data };
        debug_assert_eq!(entry.len(), count);
        ck.entries.push(entry);
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.push_tensor("w", &Tensor::<f32>::from_vec(&[2], vec![1.5, -2.0]).unwrap());
        let bytes = write_checkpoint(&ck);
        assert_eq!(&bytes[..5], b"FPPN1");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(bytes[9], b'w');
        assert_eq!(bytes[10], 0);
        assert_eq!(&bytes[11..15], &1u32.to_le_bytes());
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..27], &1.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 31);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let mut ck = Checkpoint::new();
        ck.push_tensor("a", &Tensor::<f64>::full(&[3, 2], 0.25));
        let bytes = write_checkpoint(&ck);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint(b"FPPN0").is_err());
        assert_eq!(read_checkpoint(b"FPPN1").unwrap().entries.len(), 0);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            bits64 in proptest::collection::vec(any::<u64>(), 0..40),
            bits32 in proptest::collection::vec(any::<u32>(), 0..40),
            raw in proptest::collection::vec(any::<u8>(), 0..20),
            name in "[a-z./_0-9]{1,12}",
        ) {
            let mut ck = Checkpoint::new();
            ck.entries.push(CheckpointEntry {
                name: name.clone(),
                shape: vec![bits64.len()],
                data: EntryData::F64(bits64.iter().map(|&b| f64::from_bits(b)).collect()),
            });
            ck.entries.push(CheckpointEntry {
                name: format!("{name}32"),
                shape: vec![1, bits32.len()],
                data: EntryData::F32(bits32.iter().map(|&b| f32::from_bits(b)).collect()),
            });
            ck.push_bytes("meta", &raw);
            let bytes = write_checkpoint(&ck);
            let back = read_checkpoint(&bytes).unwrap();
            prop_assert_eq!(write_checkpoint(&back), bytes);
            match &back.entries[0].data {
                EntryData::F64(v) => prop_assert!(v.iter().map(|x| x.to_bits()).eq(bits64.iter().copied())),
                _ => prop_assert!(false),
            }
        }
    }
}
