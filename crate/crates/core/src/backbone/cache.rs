//! Precomputed contextual embedding cache (`CWEC` files).
//!
//! Little-endian layout:
//!
//! ```text
//! magic "CWEC" | format_version u32 = 1 | dim u32 | doc_count u64
//! per doc:  id_len u16 | id bytes (UTF-8) | word_count u32
//! per word: word_len u16 | word bytes (UTF-8) | dim × f32
//! ```
//!
//! The reader is strict: header fields must match the payload exactly and
//! trailing bytes are rejected.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CwtmError, Result};
use crate::tensor::Matrix;

use super::{ContextualEmbeddingDoc, EmbeddingSource};

pub const MAGIC: &[u8; 4] = b"CWEC";
pub const FORMAT_VERSION: u32 = 1;

/// All documents of a cache file, addressable by id.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dim: usize,
    docs: Vec<ContextualEmbeddingDoc>,
    index: HashMap<String, usize>,
}

impl EmbeddingCache {
    pub fn new(dim: usize, docs: Vec<ContextualEmbeddingDoc>) -> Result<Self> {
        if dim == 0 {
            return Err(CwtmError::CacheFormat("dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.embeddings.cols() != dim || d.embeddings.rows() != d.words.len() {
                return Err(CwtmError::CacheFormat(format!(
                    "document '{}' has a {}×{} matrix for {} words, expected width {dim}",
                    d.doc_id,
                    d.embeddings.rows(),
                    d.embeddings.cols(),
                    d.words.len()
                )));
            }
            if index.insert(d.doc_id.clone(), i).is_some() {
                return Err(CwtmError::CacheFormat(format!("duplicate document id '{}'", d.doc_id)));
            }
        }
        Ok(EmbeddingCache { dim, docs, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[ContextualEmbeddingDoc] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Result<&ContextualEmbeddingDoc> {
        self.index
            .get(doc_id)
            .map(|&i| &self.docs[i])
            .ok_or_else(|| CwtmError::CacheMiss(doc_id.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CwtmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| CwtmError::io(path, e))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.dim).map_err(|_| too_large("dim"))?.to_le_bytes());
        out.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for d in &self.docs {
            put_str(&mut out, &d.doc_id)?;
            let count = u32::try_from(d.words.len()).map_err(|_| too_large("word count"))?;
            out.extend_from_slice(&count.to_le_bytes());
            for (i, w) in d.words.iter().enumerate() {
                put_str(&mut out, w)?;
                for &v in d.embeddings.row(i) {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CwtmError::CacheFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CwtmError::CacheFormat(format!("unsupported format version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(CwtmError::CacheFormat("dimension must be positive".into()));
        }
        let doc_count = r.u64()?;
        let mut docs = Vec::new();
        for _ in 0..doc_count {
            let doc_id = r.string()?;
            let word_count = r.u32()? as usize;
            let mut words = Vec::with_capacity(word_count.min(1 << 16));
            let mut data = Vec::with_capacity((word_count * dim).min(1 << 20));
            for _ in 0..word_count {
                words.push(r.string()?);
                for _ in 0..dim {
                    let v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(CwtmError::CacheFormat(format!("non-finite value in document '{doc_id}'")));
                    }
                    data.push(v as f64);
                }
            }
            docs.push(ContextualEmbeddingDoc {
                doc_id,
                embeddings: Matrix::from_vec(word_count, dim, data),
                words,
                source: EmbeddingSource::Cached,
            });
        }
        if r.pos != bytes.len() {
            return Err(CwtmError::CacheFormat(format!(
                "{} trailing bytes after {doc_count} documents",
                bytes.len() - r.pos
            )));
        }
        Self::new(dim, docs)
    }
}

fn too_large(what: &str) -> CwtmError {
    CwtmError::CacheFormat(format!("{what} does not fit the format"))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| too_large("string length"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CwtmError::CacheFormat(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CwtmError::CacheFormat(format!("invalid UTF-8 at byte {}", self.pos)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, words: &[&str], dim: usize, base: f64) -> ContextualEmbeddingDoc {
        let data = (0..words.len() * dim).map(|i| base + i as f64 * 0.25).collect();
        ContextualEmbeddingDoc {
            doc_id: id.into(),
            embeddings: Matrix::from_vec(words.len(), dim, data),
            words: words.iter().map(|s| s.to_string()).collect(),
            source: EmbeddingSource::Cached,
        }
    }

    #[test]
    fn exact_layout() {
        let cache = EmbeddingCache::new(2, vec![doc("a", &["hi"], 2, 1.0)]).unwrap();
        let bytes = cache.to_bytes().unwrap();
        let mut want = b"CWEC".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1u16.to_le_bytes());
        want.extend_from_slice(b"a");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u16.to_le_bytes());
        want.extend_from_slice(b"hi");
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&1.25f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn strict_parser() {
        let cache = EmbeddingCache::new(3, vec![doc("a", &["x", "y"], 3, 0.5), doc("b", &[], 3, 0.0)]).unwrap();
        let bytes = cache.to_bytes().unwrap();
        let back = EmbeddingCache::from_bytes(&bytes).unwrap();
        assert_eq!(back.get("a").unwrap().words, vec!["x", "y"]);
        assert!(matches!(back.get("zzz"), Err(CwtmError::CacheMiss(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(EmbeddingCache::from_bytes(&trailing).is_err());
        assert!(EmbeddingCache::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingCache::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(EmbeddingCache::from_bytes(&bad).is_err());
        // doc_count larger than the payload
        let mut bad = bytes;
        bad[12] = 3;
        assert!(EmbeddingCache::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e3f32..1e3, 0..24), dim in 1usize..4) {
            let words = values.len() / dim;
            let data: Vec<f64> = values[..words * dim].iter().map(|&v| v as f64).collect();
            let d = ContextualEmbeddingDoc {
                doc_id: "é".into(),
                embeddings: Matrix::from_vec(words, dim, data),
                words: (0..words).map(|i| format!("w{i}")).collect(),
                source: EmbeddingSource::Cached,
            };
            let cache = EmbeddingCache::new(dim, vec![d.clone()]).unwrap();
            let bytes = cache.to_bytes().unwrap();
            let back = EmbeddingCache::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.docs()[0].clone(), d);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
