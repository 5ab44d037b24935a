//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DBTAGMDL"
//! version   u32      currently 1
//! dims      5 × u32  vocab, embed, hidden, gold tags, proj tags
//! tagsets   2 ×      u32 count, then per label u32 byte length + UTF-8
//! vocab              u32 count, then entries like labels
//! arrays             per parameter array in canonical order:
//!                    u64 element count + that many f64
//! ```
//!
//! Loading re-validates everything, so a round trip is bit-exact and a
//! truncated or doctored file fails loudly.

use std::fs;
use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::tagset::TagSet;

use super::{ModelDims, ModelParams, TaggerModel};

const MAGIC: &[u8; 8] = b"DBTAGMDL";
const VERSION: u32 = 1;

impl TaggerModel {
    /// Writes the model to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dims = self.params.dims();
        let mut buf = Vec::with_capacity(64 + self.params.param_count() * 8);
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        for v in [
            dims.vocab_size,
            dims.embed_dim,
            dims.hidden_dim,
            dims.gold_tags,
            dims.proj_tags,
        ] {
            let v = u32::try_from(v)
                .map_err(|_| Error::Model(format!("dimension {v} too large to save")))?;
            put_u32(&mut buf, v);
        }
        put_strings(&mut buf, self.gold_tagset.labels())?;
        put_strings(&mut buf, self.proj_tagset.labels())?;
        put_strings(&mut buf, self.vocab.tokens())?;
        for slice in self.params.slices() {
            buf.extend_from_slice(&(slice.len() as u64).to_le_bytes());
            for &v in slice {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a model written by [`save`](Self::save).
    pub fn load(path: impl AsRef<Path>) -> Result<TaggerModel> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Cursor {
            bytes: &bytes,
            pos: 0,
        };

        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Model("not a tagger model file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {version}, expected {VERSION}"
            )));
        }
        let dims = ModelDims {
            vocab_size: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            hidden_dim: r.u32()? as usize,
            gold_tags: r.u32()? as usize,
            proj_tags: r.u32()? as usize,
        };
        dims.validate().map_err(|e| Error::Model(e.to_string()))?;

        let gold_labels = r.strings()?;
        let proj_labels = r.strings()?;
        let vocab_tokens = r.strings()?;
        if gold_labels.len() != dims.gold_tags || proj_labels.len() != dims.proj_tags {
            return Err(Error::Model(format!(
                "tagsets hold {}/{} labels, dimensions say {}/{}",
                gold_labels.len(),
                proj_labels.len(),
                dims.gold_tags,
                dims.proj_tags
            )));
        }
        if vocab_tokens.len() != dims.vocab_size {
            return Err(Error::Model(format!(
                "vocabulary holds {} entries, dimensions say {}",
                vocab_tokens.len(),
                dims.vocab_size
            )));
        }
        let gold_tagset =
            TagSet::new(gold_labels).map_err(|e| Error::Model(format!("gold tagset: {e}")))?;
        let proj_tagset =
            TagSet::new(proj_labels).map_err(|e| Error::Model(format!("projected tagset: {e}")))?;
        let vocab = Vocabulary::from_tokens(vocab_tokens)?;

        let mut params = ModelParams::zeros(&dims);
        for slice in params.slices_mut() {
            let count = r.u64()? as usize;
            if count != slice.len() {
                return Err(Error::Model(format!(
                    "parameter array holds {count} values, expected {}",
                    slice.len()
                )));
            }
            for v in slice.iter_mut() {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(Error::Model("non-finite parameter value".into()));
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Model(format!(
                "{} trailing bytes after the parameters",
                bytes.len() - r.pos
            )));
        }
        TaggerModel::new(params, vocab, gold_tagset, proj_tagset)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_strings(buf: &mut Vec<u8>, strings: &[String]) -> Result<()> {
    let count = u32::try_from(strings.len())
        .map_err(|_| Error::Model("too many strings to save".into()))?;
    put_u32(buf, count);
    for s in strings {
        let len = u32::try_from(s.len())
            .map_err(|_| Error::Model(format!("string `{s}` too long to save")))?;
        put_u32(buf, len);
        buf.extend_from_slice(s.as_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Model("file is truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = self.u32()? as usize;
            let bytes = self.take(len)?;
            let s = std::str::from_utf8(bytes)
                .map_err(|_| Error::Model("string is not valid UTF-8".into()))?;
            out.push(s.to_string());
        }
        Ok(out)
    }
}
