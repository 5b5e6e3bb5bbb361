//! Binary checkpoint: magic, version, hyperparameters, vocabulary, named
//! tensors as little-endian `f32`.

use std::path::Path;

use super::{Dims, ModelParams, Variant, Weights};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::textprep::{EmbeddingMatrix, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"NEWSMIL-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const EMBEDDING_NAME: &str = "embeddings";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != params.vocab_size() {
            return Err(Error::Consistency(format!(
                "vocabulary has {} tokens but the embedding table has {} rows",
                vocab.len(),
                params.vocab_size()
            )));
        }
        let fits = |data: &[f64]| data.iter().all(|&v| (v as f32).is_finite());
        if !fits(params.embeddings.vectors.data()) {
            return Err(Error::Numeric("embeddings overflow 32-bit storage".into()));
        }
        if let Some(t) = params.weights.tensors().iter().find(|t| !fits(t.data)) {
            return Err(Error::Numeric(format!("tensor {} overflows 32-bit storage", t.name)));
        }
        Ok(Checkpoint { params, vocab })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for v in [p.dims.embed, p.dims.hidden, p.dims.attn, p.dims.mlp, self.vocab.len()] {
            put_u32(&mut out, v as u32);
        }
        put_str(&mut out, p.variant.as_str());
        for token in self.vocab.tokens() {
            put_str(&mut out, token);
        }

        let tensors = p.weights.tensors();
        put_u32(&mut out, tensors.len() as u32 + 1);
        let emb = &p.embeddings.vectors;
        put_tensor(&mut out, EMBEDDING_NAME, emb.shape(), emb.data());
        for t in &tensors {
            put_tensor(&mut out, t.name, t.shape, t.data);
        }
        out
    }

    /// `source` labels error messages.
    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let fail = |msg: String| Error::format(source, msg);
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(&fail)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fail("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32().map_err(&fail)?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut hp = [0usize; 5];
        for v in &mut hp {
            *v = r.u32().map_err(&fail)? as usize;
        }
        let dims = Dims { embed: hp[0], hidden: hp[1], attn: hp[2], mlp: hp[3] };
        dims.validate().map_err(|e| fail(e.to_string()))?;
        let vocab_size = hp[4];
        let variant: Variant = r.string().map_err(&fail)?.parse().map_err(|e: Error| fail(e.to_string()))?;

        let mut tokens = Vec::with_capacity(vocab_size.min(1 << 20));
        for _ in 0..vocab_size {
            tokens.push(r.string().map_err(&fail)?);
        }
        let vocab = Vocabulary::from_tokens(tokens, 1).map_err(|e| fail(e.to_string()))?;

        let mut weights = Weights::zeros(&dims, variant);
        let expected: Vec<(&'static str, (usize, usize))> =
            weights.tensors().iter().map(|t| (t.name, t.shape)).collect();
        let count = r.u32().map_err(&fail)? as usize;
        if count != expected.len() + 1 {
            return Err(fail(format!(
                "expected {} tensors, found {count}",
                expected.len() + 1
            )));
        }

        let emb_values = r.tensor(EMBEDDING_NAME, (vocab_size, dims.embed)).map_err(&fail)?;
        let vectors = Matrix::from_vec(vocab_size, dims.embed, emb_values).map_err(|e| fail(e.to_string()))?;
        for ((name, shape), dst) in expected.into_iter().zip(weights.slices_mut()) {
            let values = r.tensor(name, shape).map_err(&fail)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("tensor {name} contains non-finite values")));
            }
            dst.copy_from_slice(&values);
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let params = ModelParams {
            dims,
            variant,
            embeddings: EmbeddingMatrix { vectors, trainable: false },
            weights,
        };
        Ok(Checkpoint { params, vocab })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: (usize, usize), data: &[f64]) {
    put_str(out, name);
    put_u32(out, 2);
    put_u32(out, shape.0 as u32);
    put_u32(out, shape.1 as u32);
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| format!("invalid utf-8 at byte {at}"))
    }

    fn tensor(&mut self, name: &str, shape: (usize, usize)) -> std::result::Result<Vec<f64>, String> {
        let found = self.string()?;
        if found != name {
            return Err(format!("expected tensor {name}, found {found}"));
        }
        let ndim = self.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        if dims != [shape.0, shape.1] {
            return Err(format!("tensor {name} has shape {dims:?}, expected [{}, {}]", shape.0, shape.1));
        }
        let raw = self.take(shape.0 * shape.1 * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}
