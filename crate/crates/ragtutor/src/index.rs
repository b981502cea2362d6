//! Exact flat vector index with metadata, persistence, and top-k search.
//!
//! Search scores every stored vector with a dot product (cosine similarity on
//! unit vectors) and keeps the best k in a bounded heap. Ties break toward
//! earlier insertion, so results are fully deterministic.
//!
//! On-disk layout: a 32-byte header (magic, version, dim, count, metadata
//! length, CRC-32 of the payload), a fixed-width little-endian f32 vector
//! block, then a JSON metadata block. Vectors round-trip bitwise.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;

const MAGIC: [u8; 4] = *b"RTIX";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate chunk_id {0}")]
    DuplicateChunkId(String),
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u16),
    #[error("index file truncated")]
    Truncated,
    #[error("index file checksum mismatch (corrupted)")]
    ChecksumMismatch,
    #[error("index metadata corrupted: {0}")]
    MetadataCorrupt(String),
}

/// Citation metadata carried with every stored vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkMetadata {
    pub doc_id: String,
    pub origin: String,
    pub seq: usize,
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone)]
struct Entry {
    chunk_id: String,
    vector: EmbeddingVector,
    text: String,
    meta: ChunkMetadata,
}

/// One retrieval result: the chunk, its cosine score, and its rank.
#[derive(Debug, Clone)]
pub struct SearchHit {
    pub chunk_id: String,
    /// Cosine similarity in [-1, 1].
    pub score: f32,
    /// 0-based, consecutive, ordered by descending score.
    pub rank: usize,
    pub text: String,
    pub metadata: ChunkMetadata,
}

/// Append-only exact index. Build single-writer, then share immutably.
pub struct VectorIndex {
    dim: usize,
    entries: Vec<Entry>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(
        &mut self,
        chunk_id: &str,
        vector: EmbeddingVector,
        text: &str,
        meta: ChunkMetadata,
    ) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if self.by_id.contains_key(chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk_id.to_string()));
        }
        self.by_id.insert(chunk_id.to_string(), self.entries.len());
        self.entries.push(Entry {
            chunk_id: chunk_id.to_string(),
            vector,
            text: text.to_string(),
            meta,
        });
        Ok(())
    }

    /// Look one entry up by chunk id.
    pub fn get(&self, chunk_id: &str) -> Option<(&EmbeddingVector, &str, &ChunkMetadata)> {
        self.by_id
            .get(chunk_id)
            .map(|&i| (&self.entries[i].vector, self.entries[i].text.as_str(), &self.entries[i].meta))
    }

    /// Exact top-k by cosine similarity. Returns `min(k, len)` hits sorted by
    /// descending score; equal scores rank earlier insertions first. An empty
    /// index yields an empty result.
    pub fn search_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }

        // max-heap of "worst" candidates so pop evicts the lowest score
        // (ties evict the later insertion, keeping the earlier one)
        struct Candidate {
            score: f32,
            pos: usize,
        }
        impl PartialEq for Candidate {
            fn eq(&self, other: &Self) -> bool {
                self.score == other.score && self.pos == other.pos
            }
        }
        impl Eq for Candidate {}
        impl PartialOrd for Candidate {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Candidate {
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .score
                    .total_cmp(&self.score)
                    .then_with(|| self.pos.cmp(&other.pos))
            }
        }

        let mut heap = BinaryHeap::with_capacity(k + 1);
        for (pos, entry) in self.entries.iter().enumerate() {
            heap.push(Candidate {
                score: query.dot(&entry.vector),
                pos,
            });
            if heap.len() > k {
                heap.pop();
            }
        }

        let mut picked: Vec<Candidate> = heap.into_vec();
        picked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pos.cmp(&b.pos)));
        Ok(picked
            .into_iter()
            .enumerate()
            .map(|(rank, c)| {
                let entry = &self.entries[c.pos];
                SearchHit {
                    chunk_id: entry.chunk_id.clone(),
                    score: c.score,
                    rank,
                    text: entry.text.clone(),
                    metadata: entry.meta.clone(),
                }
            })
            .collect())
    }

    // -- persistence ---------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut vector_block =
            Vec::with_capacity(self.entries.len() * self.dim * std::mem::size_of::<f32>());
        for entry in &self.entries {
            for &x in entry.vector.values() {
                vector_block.extend_from_slice(&x.to_le_bytes());
            }
        }
        let metas: Vec<StoredEntry> = self
            .entries
            .iter()
            .map(|e| StoredEntry {
                chunk_id: e.chunk_id.clone(),
                text: e.text.clone(),
                meta: e.meta.clone(),
            })
            .collect();
        let meta_block =
            serde_json::to_vec(&metas).map_err(|e| IndexError::MetadataCorrupt(e.to_string()))?;

        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&vector_block);
        hasher.update(&meta_block);
        let crc = hasher.finalize();

        let mut file = std::fs::File::create(path)?;
        file.write_all(&MAGIC)?;
        file.write_all(&VERSION.to_le_bytes())?;
        file.write_all(&[0u8; 2])?; // reserved
        file.write_all(&(self.dim as u32).to_le_bytes())?;
        file.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        file.write_all(&(meta_block.len() as u64).to_le_bytes())?;
        file.write_all(&crc.to_le_bytes())?;
        file.write_all(&vector_block)?;
        file.write_all(&meta_block)?;
        file.sync_all()?;
        Ok(())
    }

    /// Load an index saved by [`VectorIndex::save`]. Any integrity failure
    /// (bad magic, wrong version, truncation, checksum mismatch, undecodable
    /// metadata) yields an error and no partial index.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::Truncated);
        }
        if bytes[0..4] != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_len = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        let crc_expected = u32::from_le_bytes(bytes[28..32].try_into().unwrap());

        let vector_len = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(std::mem::size_of::<f32>()))
            .ok_or(IndexError::Truncated)?;
        let payload_end = HEADER_LEN
            .checked_add(vector_len)
            .and_then(|n| n.checked_add(meta_len))
            .ok_or(IndexError::Truncated)?;
        if bytes.len() < payload_end {
            return Err(IndexError::Truncated);
        }

        let vector_block = &bytes[HEADER_LEN..HEADER_LEN + vector_len];
        let meta_block = &bytes[HEADER_LEN + vector_len..payload_end];
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(vector_block);
        hasher.update(meta_block);
        if hasher.finalize() != crc_expected {
            return Err(IndexError::ChecksumMismatch);
        }

        let metas: Vec<StoredEntry> = serde_json::from_slice(meta_block)
            .map_err(|e| IndexError::MetadataCorrupt(e.to_string()))?;
        if metas.len() != count {
            return Err(IndexError::MetadataCorrupt(format!(
                "metadata holds {} entries, header says {}",
                metas.len(),
                count
            )));
        }

        let mut index = VectorIndex::new(dim);
        for (i, stored) in metas.into_iter().enumerate() {
            let offset = i * dim * std::mem::size_of::<f32>();
            let values: Vec<f32> = (0..dim)
                .map(|d| {
                    let at = offset + d * std::mem::size_of::<f32>();
                    f32::from_le_bytes(vector_block[at..at + 4].try_into().unwrap())
                })
                .collect();
            // vectors were unit at save time; re-wrapping keeps them bitwise
            let vector = EmbeddingVector::from_unit_values(values);
            if index.by_id.contains_key(&stored.chunk_id) {
                return Err(IndexError::MetadataCorrupt(format!(
                    "duplicate chunk_id {} in file",
                    stored.chunk_id
                )));
            }
            index.by_id.insert(stored.chunk_id.clone(), i);
            index.entries.push(Entry {
                chunk_id: stored.chunk_id,
                vector,
                text: stored.text,
                meta: stored.meta,
            });
        }
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredEntry {
    chunk_id: String,
    text: String,
    meta: ChunkMetadata,
}
