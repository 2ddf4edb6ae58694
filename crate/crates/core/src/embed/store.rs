use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::EmbeddingVector;
use crate::error::{Error, Result};
use crate::preprocess::TraceKey;

const MAGIC: &[u8; 4] = b"DTVS";
const VERSION: u16 = 1;

/// Cached passage embeddings keyed by `(report_id, trace_index)`.
///
/// On disk: magic `DTVS`, `u16` version, `u32` dimension, `u64` count, a
/// `u32`-length-prefixed provenance string, then per record a
/// `u32`-length-prefixed key `report_id#trace_index` followed by `dimension`
/// little-endian `f32`s. Records are written in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dimension: usize,
    provenance: String,
    entries: BTreeMap<TraceKey, EmbeddingVector>,
}

impl VectorStore {
    pub fn new(dimension: usize, provenance: impl Into<String>) -> Self {
        VectorStore {
            dimension,
            provenance: provenance.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces any vector already stored under `key`.
    pub fn insert(&mut self, key: TraceKey, vector: EmbeddingVector) -> Result<()> {
        if vector.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: vector.dimension(),
            });
        }
        if !vector.is_finite() {
            return Err(Error::format("vector store", format!("non-finite vector for `{key}`")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &TraceKey) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    /// Like [`get`](Self::get) but a missing key is an error naming it.
    pub fn require(&self, key: &TraceKey) -> Result<&EmbeddingVector> {
        self.entries.get(key).ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    /// All trace vectors of one report, in trace order.
    pub fn report_vectors(&self, report_id: &str) -> Vec<&EmbeddingVector> {
        let start = TraceKey::new(report_id, 0);
        self.entries
            .range(start..)
            .take_while(|(k, _)| k.report_id == report_id)
            .map(|(_, v)| v)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TraceKey, &EmbeddingVector)> {
        self.entries.iter()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = u32::try_from(self.dimension).map_err(|_| Error::config("dimension exceeds u32"))?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&dim.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        write_str(&mut out, &self.provenance)?;
        for (key, vector) in &self.entries {
            write_str(&mut out, &key.to_string())?;
            for x in vector.as_slice() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "header")?;
        if &magic != MAGIC {
            return Err(Error::format("vector store", "bad magic bytes"));
        }
        let mut b2 = [0u8; 2];
        read_exact(&mut input, &mut b2, "header")?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(Error::format("vector store", format!("unsupported version {version}")));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut input, &mut b4, "header")?;
        let dimension = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        read_exact(&mut input, &mut b8, "header")?;
        let count = u64::from_le_bytes(b8);
        let provenance = read_str(&mut input)?;
        let mut store = VectorStore::new(dimension, provenance);
        let mut raw = vec![0u8; dimension * 4];
        for _ in 0..count {
            let key_text = read_str(&mut input)?;
            let key = TraceKey::parse(&key_text)
                .ok_or_else(|| Error::format("vector store", format!("bad key `{key_text}`")))?;
            read_exact(&mut input, &mut raw, "record")?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.entries.contains_key(&key) {
                return Err(Error::format("vector store", format!("duplicate key `{key}`")));
            }
            store.insert(key, EmbeddingVector(values))?;
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(Error::format("vector store", "trailing bytes after last record"));
        }
        Ok(store)
    }
}

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::config("string exceeds u32 length"))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::format("vector store", format!("truncated {what}")))
}

fn read_str<R: Read>(input: &mut R) -> Result<String> {
    let mut b4 = [0u8; 4];
    read_exact(input, &mut b4, "string length")?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut buf = Vec::new();
    input.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::format("vector store", "truncated string"));
    }
    String::from_utf8(buf).map_err(|_| Error::format("vector store", "string is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VectorStore {
        let mut store = VectorStore::new(3, "test provider");
        store.insert(TraceKey::new("r2", 0), EmbeddingVector(vec![1.0, 2.0, 3.0])).unwrap();
        store.insert(TraceKey::new("r1", 1), EmbeddingVector(vec![-0.5, 0.0, f32::MIN_POSITIVE])).unwrap();
        store.insert(TraceKey::new("r1", 0), EmbeddingVector(vec![0.1, 0.2, 0.3])).unwrap();
        store
    }

    #[test]
    fn round_trip() {
        let store = sample();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(VectorStore::read_from(buf.as_slice()).unwrap(), store);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        VectorStore::new(768, "p").write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DTVS");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &768u32.to_le_bytes());
        assert_eq!(&buf[10..18], &0u64.to_le_bytes());
        assert_eq!(&buf[18..22], &1u32.to_le_bytes());
        assert_eq!(&buf[22..], b"p");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(VectorStore::read_from(bad.as_slice()), Err(Error::Format { .. })));
        for cut in [3, 10, 20, buf.len() - 1] {
            assert!(matches!(VectorStore::read_from(&buf[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        buf.push(0);
        assert!(VectorStore::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn dimension_is_enforced() {
        let mut store = VectorStore::new(2, "");
        assert!(matches!(
            store.insert(TraceKey::new("a", 0), EmbeddingVector(vec![1.0])),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(store.require(&TraceKey::new("a", 0)).unwrap_err().to_string().contains("a#0"));
    }

    #[test]
    fn report_vectors_are_grouped() {
        let store = sample();
        assert_eq!(store.report_vectors("r1").len(), 2);
        assert_eq!(store.report_vectors("r1")[0].as_slice(), &[0.1, 0.2, 0.3]);
        assert_eq!(store.report_vectors("r2").len(), 1);
        assert!(store.report_vectors("r").is_empty());
    }
}
