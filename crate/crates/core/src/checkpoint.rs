//! Versioned little-endian checkpoint container.
//!
//! Layout: magic `GCNNCKPT`, `u32` version, `u32` scalar width in bytes,
//! length-prefixed architecture text, vocabulary hash and vocabulary table,
//! model options, then every parameter as name, shape, direction values and
//! optional per-unit gains. Strings and blobs carry a `u32` byte length;
//! shapes carry a `u32` rank followed by `u64` extents.

use std::path::Path;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::layers::{parse_arch, Parameter};
use crate::model::{Model, ModelOptions};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GCNNCKPT";
pub const VERSION: u32 = 1;

/// A decoded checkpoint: the model plus the vocabulary it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub vocab: Vocabulary,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.u32(t.rank());
        for &d in t.shape() {
            self.u64(d);
        }
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("extent {v} too large")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let raw = self.take(
            numel
                .checked_mul(T::BYTES)
                .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?,
        )?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn encode<T: Scalar>(model: &Model<T>, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(T::BYTES);
    w.bytes(model.arch().render().as_bytes());
    w.bytes(vocab.hash().as_bytes());
    w.bytes(vocab.to_tsv().as_bytes());
    let opts = model.options();
    w.u8(opts.weight_norm as u8);
    w.u32(opts.tail_divisor);
    w.u32(model.params().len());
    for p in model.params() {
        w.bytes(p.name.as_bytes());
        w.tensor(&p.direction.value);
        match &p.gain {
            Some(g) => {
                w.u8(1);
                w.tensor(&g.value);
            }
            None => w.u8(0),
        }
    }
    Ok(w.0)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let width = r.u32()?;
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {width}-byte scalars, loader expects {}",
            T::BYTES
        )));
    }
    let arch = parse_arch(&r.string()?)?;
    let hash = r.string()?;
    let vocab = Vocabulary::from_tsv(&r.string()?)?;
    if vocab.hash() != hash {
        return Err(Error::Checkpoint(
            "embedded vocabulary does not match its recorded hash".into(),
        ));
    }
    let options = ModelOptions {
        weight_norm: r.u8()? != 0,
        tail_divisor: r.u32()?,
    };
    let n = r.u32()?;
    let mut params = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = r.string()?;
        let value = r.tensor::<T>()?;
        let mut p = Parameter::plain(name, value);
        if r.u8()? == 1 {
            let gain = r.tensor::<T>()?;
            p.gain = Some(crate::layers::Slot::new(gain));
        }
        params.push(p);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = Model::from_parameters(&arch, vocab.len(), options, params)?;
    Ok(Checkpoint { model, vocab })
}

pub fn save<T: Scalar>(path: &Path, model: &Model<T>, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, encode(model, vocab)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Reads only the scalar width of a checkpoint file.
pub fn scalar_width(path: &Path) -> Result<usize> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    Ok(u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocab_from_text;
    use crate::layers::preset;
    use rand::SeedableRng;

    fn setup() -> (Model<f64>, Vocabulary) {
        let vocab = build_vocab_from_text("a b c d\ne f a b\n", 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(&preset("gcnn8b-tiny").unwrap(), vocab.len(), ModelOptions::default(), &mut rng).unwrap();
        (model, vocab)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, vocab) = setup();
        let bytes = encode(&model, &vocab).unwrap();
        let back: Checkpoint<f64> = decode(&bytes).unwrap();
        assert_eq!(back.vocab, vocab);
        for (a, b) in model.params().iter().zip(back.model.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.direction.value, b.direction.value);
            assert_eq!(a.gain.as_ref().map(|g| &g.value), b.gain.as_ref().map(|g| &g.value));
        }
    }

    #[test]
    fn rejects_corruption() {
        let (model, vocab) = setup();
        let bytes = encode(&model, &vocab).unwrap();
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
        assert!(decode::<f32>(&bytes).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode::<f64>(&extra).is_err());
    }
}
