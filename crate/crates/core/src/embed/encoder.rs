use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::util::fnv1a;

const MAGIC: &[u8; 4] = b"DTEN";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dimension: usize,
    pub hash_buckets: usize,
    pub min_n: usize,
    pub max_n: usize,
    /// Seeds the fixed n-gram table.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dimension: 128,
            hash_buckets: 1 << 15,
            min_n: 3,
            max_n: 5,
            seed: 0,
        }
    }
}

/// Hashed character n-gram encoder: a fixed random row per n-gram bucket,
/// mean-pooled over the passage, followed by a trainable square projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinEncoder {
    config: EncoderConfig,
    table: Vec<f32>,
    /// Row-major `dimension x dimension`; initialised to the identity.
    projection: Vec<f64>,
}

impl BuiltinEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.dimension == 0 || config.hash_buckets == 0 || config.min_n == 0 || config.min_n > config.max_n {
            return Err(Error::config(format!("invalid encoder configuration {config:?}")));
        }
        let d = config.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (d as f32).sqrt();
        let table = (0..config.hash_buckets * d)
            .map(|_| if rng.gen::<bool>() { scale } else { -scale })
            .collect();
        let mut projection = vec![0.0; d * d];
        for i in 0..d {
            projection[i * d + i] = 1.0;
        }
        Ok(BuiltinEncoder {
            config,
            table,
            projection,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub(crate) fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    /// Hash buckets of every character n-gram of the space-padded text.
    pub fn ngram_buckets(&self, text: &str) -> Vec<usize> {
        let chars: Vec<char> = std::iter::once(' ').chain(text.chars()).chain(std::iter::once(' ')).collect();
        let mut buckets = Vec::new();
        let mut buf = String::new();
        for n in self.config.min_n..=self.config.max_n {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                buckets.push((fnv1a(buf.as_bytes()) % self.config.hash_buckets as u64) as usize);
            }
        }
        buckets
    }

    /// Mean of the n-gram rows: the input to the projection.
    pub fn pooled(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::empty("cannot embed an empty passage"));
        }
        let d = self.config.dimension;
        let buckets = self.ngram_buckets(text);
        let mut sum = vec![0.0f64; d];
        for b in &buckets {
            for (s, &t) in sum.iter_mut().zip(&self.table[b * d..(b + 1) * d]) {
                *s += f64::from(t);
            }
        }
        let count = buckets.len().max(1) as f64;
        sum.iter_mut().for_each(|s| *s /= count);
        Ok(sum)
    }

    pub fn project(&self, pooled: &[f64]) -> Vec<f64> {
        project_with(&self.projection, pooled)
    }

    pub fn embed_f64(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.project(&self.pooled(text)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for v in [self.config.dimension, self.config.hash_buckets, self.config.min_n, self.config.max_n] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        out.write_all(&self.config.seed.to_le_bytes())?;
        for w in &self.projection {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::format("encoder", m.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u16buf = [0u8; 2];
        input.read_exact(&mut u16buf).map_err(|_| bad("truncated header"))?;
        if u16::from_le_bytes(u16buf) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut fields = [0usize; 4];
        for f in &mut fields {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *f = u32::from_le_bytes(b) as usize;
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let config = EncoderConfig {
            dimension: fields[0],
            hash_buckets: fields[1],
            min_n: fields[2],
            max_n: fields[3],
            seed: u64::from_le_bytes(b8),
        };
        let mut encoder = BuiltinEncoder::new(config)?;
        for w in encoder.projection.iter_mut() {
            input.read_exact(&mut b8).map_err(|_| bad("truncated weights"))?;
            *w = f64::from_le_bytes(b8);
        }
        Ok(encoder)
    }
}

pub(crate) fn project_with(projection: &[f64], pooled: &[f64]) -> Vec<f64> {
    let d = pooled.len();
    projection
        .chunks_exact(d)
        .map(|row| row.iter().zip(pooled).map(|(w, x)| w * x).sum())
        .collect()
}

impl EmbeddingProvider for BuiltinEncoder {
    fn name(&self) -> String {
        format!(
            "builtin-ngram(d={},buckets={},n={}..{},seed={})",
            self.config.dimension, self.config.hash_buckets, self.config.min_n, self.config.max_n, self.config.seed
        )
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let values = self.embed_f64(text)?;
        Ok(EmbeddingVector(values.into_iter().map(|x| x as f32).collect()))
    }
}
