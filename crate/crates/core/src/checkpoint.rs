//! Named-tensor checkpoint archive.
//!
//! Layout: magic `MVCK`, tensor count u32, then per tensor: name length
//! u16, name bytes, rank u8, one u32 per dimension, float32 payload.
//! All integers and floats little-endian.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVCK";

/// Ordered collection of named tensors. Order is preserved through
/// save/load so checkpoints are byte-reproducible.
#[derive(Clone, Debug, Default)]
pub struct Archive {
    entries: Vec<(String, Tensor<f32>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Element>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.entries.push((name.into(), tensor.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fetch and cast, erroring when the name is absent.
    pub fn require<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .map(Tensor::cast)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor '{name}'")))
    }

    /// Scalar convenience for configuration values stored as tensors.
    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.require::<f64>(name)?.item()?)
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.entries.push((name.into(), Tensor::scalar(v as f32)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Argument("too many tensors for archive".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, t) in &self.entries {
            let nlen = u16::try_from(name.len())
                .map_err(|_| Error::Argument(format!("tensor name too long: {name}")))?;
            w.write_all(&nlen.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::Argument(format!("rank too large for '{name}'")))?;
            w.write_all(&[rank])?;
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::Argument(format!("dimension too large in '{name}'")))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let count = read_u32(r)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let nlen = read_u16(r)? as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0f32; n];
            let mut buf = [0u8; 4];
            for v in data.iter_mut() {
                r.read_exact(&mut buf).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Length(format!("truncated payload for tensor '{name}'"))
                    } else {
                        Error::Io(e)
                    }
                })?;
                *v = f32::from_le_bytes(buf);
            }
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        crate::util::atomic_write(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_tensors_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ar = Archive::new();
        ar.push("enc.w", &Tensor::<f32>::randn(&[4, 3, 2], &mut rng));
        ar.push("enc.b", &Tensor::<f32>::randn(&[4], &mut rng));
        ar.push_scalar("config.width", 64.0);
        let mut bytes = Vec::new();
        ar.write_to(&mut bytes).unwrap();
        let back = Archive::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((n0, t0), (n1, t1)) in ar.iter().zip(back.iter()) {
            assert_eq!(n0, n1);
            assert_eq!(t0, t1);
        }
        // byte-stable re-serialization
        let mut bytes2 = Vec::new();
        back.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let bytes = b"NOPE\x00\x00\x00\x00".to_vec();
        assert!(matches!(
            Archive::read_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let mut ar = Archive::new();
        ar.push("w", &Tensor::<f32>::zeros(&[8]));
        let mut bytes = Vec::new();
        ar.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(
            Archive::read_from(&mut bytes.as_slice()),
            Err(Error::Length(_))
        ));
    }
}
