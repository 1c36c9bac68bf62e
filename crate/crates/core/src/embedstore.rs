//! Binary store of per-instance contextual embeddings.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "CWEVEC01"
//! dim          u32
//! count        u64
//! model_tag    u32 byte length + UTF-8 bytes
//! layer_policy u8       0 = final layer, 1 = concatenation of the last four layers
//! count records:
//!   instance_id  u32 byte length + UTF-8 bytes
//!   vector       dim x f32
//! ```
//!
//! A record count that disagrees with the byte length of the file is an error in
//! both directions (missing records and trailing bytes).

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Read, Seek, SeekFrom, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Instance};

pub const MAGIC: &[u8; 8] = b"CWEVEC01";

/// Byte offset of the `count` field.
const COUNT_OFFSET: u64 = 12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic at offset 0: expected CWEVEC01")]
    BadMagic,
    #[error("truncated file: expected {needed} more bytes at offset {offset}")]
    Truncated { offset: u64, needed: usize },
    #[error("count mismatch at offset {offset}: header declares {declared} records, found {found}")]
    CountMismatch {
        offset: u64,
        declared: u64,
        found: u64,
    },
    #[error("trailing bytes after {declared} records at offset {offset}")]
    TrailingBytes { offset: u64, declared: u64 },
    #[error("invalid header at offset {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("record {id:?}: vector has {found} components, header dim is {expected}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("record {id:?}: {message}")]
    Validation { id: String, message: String },
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("invalid UTF-8 string at offset {offset}")]
    Utf8 { offset: u64 },
    #[error("debug line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerPolicy {
    FinalLayer = 0,
    ConcatLast4 = 1,
}

impl LayerPolicy {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(LayerPolicy::FinalLayer),
            1 => Some(LayerPolicy::ConcatLast4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingFileHeader {
    pub dim: u32,
    pub count: u64,
    pub model_tag: String,
    pub layer_policy: LayerPolicy,
}

impl EmbeddingFileHeader {
    pub fn new(model_tag: impl Into<String>, dim: u32, layer_policy: LayerPolicy) -> Self {
        EmbeddingFileHeader {
            dim,
            count: 0,
            model_tag: model_tag.into(),
            layer_policy,
        }
    }

    /// Serialized size of the header in bytes.
    pub fn byte_len(&self) -> u64 {
        8 + 4 + 8 + 4 + self.model_tag.len() as u64 + 1
    }

    fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(StoreError::Header {
                offset: 8,
                message: "dim must be positive".into(),
            });
        }
        if self.layer_policy == LayerPolicy::ConcatLast4 && !self.dim.is_multiple_of(4) {
            return Err(StoreError::Header {
                offset: 8,
                message: format!("dim {} is not a multiple of 4 for ConcatLast4", self.dim),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    #[serde(rename = "id")]
    pub instance_id: String,
    #[serde(rename = "vec")]
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(instance_id: impl Into<String>, vector: Vec<f32>) -> Self {
        EmbeddingRecord {
            instance_id: instance_id.into(),
            vector,
        }
    }
}

fn validate_vector(id: &str, vector: &[f32]) -> Result<()> {
    if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
        return Err(StoreError::Validation {
            id: id.to_string(),
            message: format!("component {i} is {}", vector[i]),
        });
    }
    if vector.iter().all(|&x| x == 0.0) {
        return Err(StoreError::Validation {
            id: id.to_string(),
            message: "all-zero vector".into(),
        });
    }
    Ok(())
}

fn write_str<W: Write>(sink: &mut W, s: &str) -> Result<u64> {
    let len = u32::try_from(s.len()).map_err(|_| {
        io::Error::new(io::ErrorKind::InvalidInput, "string longer than u32::MAX bytes")
    })?;
    sink.write_all(&len.to_le_bytes())?;
    sink.write_all(s.as_bytes())?;
    Ok(4 + s.len() as u64)
}

/// Write a header followed by `records`, returning the number of bytes written.
///
/// The header's `count` is ignored on input; the number of records actually
/// written is patched into the file once the stream is exhausted.
pub fn write_embeddings<W, I>(header: &EmbeddingFileHeader, records: I, mut sink: W) -> Result<u64>
where
    W: Write + Seek,
    I: IntoIterator<Item = EmbeddingRecord>,
{
    header.check()?;
    let start = sink.stream_position()?;
    let dim = header.dim as usize;

    sink.write_all(MAGIC)?;
    sink.write_all(&header.dim.to_le_bytes())?;
    sink.write_all(&0u64.to_le_bytes())?;
    write_str(&mut sink, &header.model_tag)?;
    sink.write_all(&[header.layer_policy as u8])?;
    let mut written = header.byte_len();

    let mut seen = HashSet::new();
    let mut count = 0u64;
    let mut buf = Vec::with_capacity(dim * 4);
    for record in records {
        if record.vector.len() != dim {
            return Err(StoreError::DimMismatch {
                id: record.instance_id,
                expected: dim,
                found: record.vector.len(),
            });
        }
        validate_vector(&record.instance_id, &record.vector)?;
        if !seen.insert(record.instance_id.clone()) {
            return Err(StoreError::DuplicateId(record.instance_id));
        }
        written += write_str(&mut sink, &record.instance_id)?;
        buf.clear();
        for x in &record.vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
        count += 1;
    }

    let end = sink.stream_position()?;
    sink.seek(SeekFrom::Start(start + COUNT_OFFSET))?;
    sink.write_all(&count.to_le_bytes())?;
    sink.seek(SeekFrom::Start(end))?;
    sink.flush()?;
    Ok(written)
}

/// Embeddings loaded from one file, keyed by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub header: EmbeddingFileHeader,
    pub vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Records sorted by instance id.
    pub fn records(&self) -> Vec<EmbeddingRecord> {
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| EmbeddingRecord::new(id.clone(), self.vectors[id].clone()))
            .collect()
    }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    /// Fill `buf` completely. Returns `Ok(false)` on a clean EOF before any byte
    /// was read, and a positioned truncation error on EOF part way through.
    fn fill(&mut self, buf: &mut [u8]) -> Result<bool> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    if got == 0 {
                        return Ok(false);
                    }
                    return Err(StoreError::Truncated {
                        offset: self.offset + got as u64,
                        needed: buf.len() - got,
                    });
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let offset = self.offset;
        if self.fill(buf)? || buf.is_empty() {
            Ok(())
        } else {
            Err(StoreError::Truncated {
                offset,
                needed: buf.len(),
            })
        }
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let offset = self.offset;
        let mut bytes = vec![0u8; len];
        self.exact(&mut bytes)?;
        String::from_utf8(bytes).map_err(|_| StoreError::Utf8 { offset })
    }
}

/// Read and validate a complete embedding file.
pub fn read_embeddings<R: Read>(source: R) -> Result<EmbeddingStore> {
    let mut r = OffsetReader {
        inner: source,
        offset: 0,
    };

    let mut magic = [0u8; 8];
    r.exact(&mut magic).map_err(|e| match e {
        StoreError::Truncated { .. } => StoreError::BadMagic,
        other => other,
    })?;
    if &magic != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4);
    r.exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    r.exact(&mut b4)?;
    let model_tag = r.string(u32::from_le_bytes(b4) as usize)?;
    let policy_offset = r.offset;
    let mut b1 = [0u8; 1];
    r.exact(&mut b1)?;
    let layer_policy = LayerPolicy::from_byte(b1[0]).ok_or_else(|| StoreError::Header {
        offset: policy_offset,
        message: format!("unknown layer policy {}", b1[0]),
    })?;
    let header = EmbeddingFileHeader {
        dim,
        count,
        model_tag,
        layer_policy,
    };
    header.check()?;

    let dim = dim as usize;
    let mut vectors = HashMap::new();
    let mut raw = vec![0u8; dim * 4];
    for found in 0..count {
        let record_offset = r.offset;
        if !r.fill(&mut b4)? {
            return Err(StoreError::CountMismatch {
                offset: record_offset,
                declared: count,
                found,
            });
        }
        let id = r.string(u32::from_le_bytes(b4) as usize)?;
        r.exact(&mut raw)?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        validate_vector(&id, &vector)?;
        if vectors.insert(id.clone(), vector).is_some() {
            return Err(StoreError::DuplicateId(id));
        }
    }

    let end = r.offset;
    if r.fill(&mut b1)? {
        return Err(StoreError::TrailingBytes {
            offset: end,
            declared: count,
        });
    }
    Ok(EmbeddingStore { header, vectors })
}

pub fn write_embeddings_file(
    path: &std::path::Path,
    header: &EmbeddingFileHeader,
    records: impl IntoIterator<Item = EmbeddingRecord>,
) -> Result<u64> {
    let file = std::fs::File::create(path)?;
    let mut sink = io::BufWriter::new(file);
    let n = write_embeddings(header, records, &mut sink)?;
    sink.flush()?;
    Ok(n)
}

pub fn read_embeddings_file(path: &std::path::Path) -> Result<EmbeddingStore> {
    read_embeddings(io::BufReader::new(std::fs::File::open(path)?))
}

/// Write records as line-delimited JSON, `{"id":...,"vec":[...]}` per line.
pub fn write_jsonl<W: Write, I>(records: I, mut sink: W) -> Result<()>
where
    I: IntoIterator<Item = EmbeddingRecord>,
{
    for record in records {
        serde_json::to_writer(&mut sink, &record).map_err(io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(source: R) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|source| StoreError::Json { line: i + 1, source })?;
        validate_vector(&record.instance_id, &record.vector)?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Joined<'a> {
    pub pairs: Vec<(&'a Instance, &'a [f32])>,
    /// Corpus instance ids with no stored vector, in corpus order.
    pub missing: Vec<&'a str>,
}

impl Joined<'_> {
    pub fn coverage(&self) -> f64 {
        let total = self.pairs.len() + self.missing.len();
        if total == 0 {
            1.0
        } else {
            self.pairs.len() as f64 / total as f64
        }
    }
}

/// Pair every corpus instance with its stored vector.
pub fn join<'a>(corpus: &'a Corpus, store: &'a EmbeddingStore) -> Joined<'a> {
    let mut pairs = Vec::with_capacity(corpus.instances.len());
    let mut missing = Vec::new();
    for inst in &corpus.instances {
        match store.get(&inst.id) {
            Some(v) => pairs.push((inst, v)),
            None => missing.push(inst.id.as_str()),
        }
    }
    Joined { pairs, missing }
}
