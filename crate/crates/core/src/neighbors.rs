//! Exact cosine K-nearest-neighbor tables over content-token embeddings.
//!
//! Tables persist in the SEMN binary format (little-endian): magic `"SEMN"`,
//! `u32` version = 1, `u64` n = |C|, `u32` k, then n `u32` content ids
//! (sorted), n*k `u32` neighbor ids, n*k `f32` cosine values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::EmbeddingMatrix;
use crate::vocab::VocabPartition;

pub const SEMN_MAGIC: &[u8; 4] = b"SEMN";

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("k = {k} out of range for |C| = {c}")]
    BadK { k: usize, c: usize },
    #[error("epsilon must be > 0, got {0}")]
    BadEpsilon(f32),
    #[error("content id {0} out of range for embedding matrix with {1} rows")]
    ContentIdOutOfRange(u32, usize),
    #[error("bad magic: expected \"SEMN\"")]
    BadMagic,
    #[error("unsupported SEMN version {0}")]
    BadVersion(u32),
    #[error("payload size mismatch: {0}")]
    SizeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct NeighborBuildConfig {
    /// Neighbors per row, including self.
    pub k: usize,
    /// Norm damping added to every row norm before division.
    pub epsilon: f32,
    /// Rows per parallel work unit. Has no effect on the result.
    pub block_size: usize,
}

impl Default for NeighborBuildConfig {
    fn default() -> Self {
        Self {
            k: 32,
            epsilon: 1e-8,
            block_size: 256,
        }
    }
}

/// Precomputed neighbor ids and cosine values, |C| x K, self always in
/// slot 0. Values are stored unclamped; clamping happens at decode time.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub content_ids: Vec<u32>,
    pub k: usize,
    pub s_tid: Vec<u32>,
    pub s_val: Vec<f32>,
}

impl NeighborTable {
    pub fn n(&self) -> usize {
        self.content_ids.len()
    }

    pub fn row_ids(&self, row: usize) -> &[u32] {
        &self.s_tid[row * self.k..(row + 1) * self.k]
    }

    pub fn row_vals(&self, row: usize) -> &[f32] {
        &self.s_val[row * self.k..(row + 1) * self.k]
    }

    /// Index of a token id within `content_ids`, if it is a content token.
    pub fn row_of(&self, token_id: u32) -> Option<usize> {
        self.content_ids.binary_search(&token_id).ok()
    }
}

/// Row-normalized copies of the content-token embedding rows:
/// `row_i = E[c_i] / (||E[c_i]||_2 + eps)`. Zero rows stay (near) zero.
pub fn normalize_rows(e: &EmbeddingMatrix, content_ids: &[u32], epsilon: f32) -> Vec<f32> {
    let d = e.dim();
    let mut out = vec![0f32; content_ids.len() * d];
    out.par_chunks_mut(d)
        .zip(content_ids.par_iter())
        .for_each(|(dst, &id)| {
            let src = e.row(id as usize);
            let norm = src.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32;
            let denom = norm + epsilon;
            for (o, s) in dst.iter_mut().zip(src) {
                *o = s / denom;
            }
        });
    out
}

pub fn build_neighbor_table(
    e: &EmbeddingMatrix,
    p: &VocabPartition,
    cfg: &NeighborBuildConfig,
) -> Result<NeighborTable, NeighborError> {
    let c = &p.content_ids;
    if cfg.k < 1 || cfg.k > c.len() {
        return Err(NeighborError::BadK {
            k: cfg.k,
            c: c.len(),
        });
    }
    if !(cfg.epsilon > 0.0) {
        return Err(NeighborError::BadEpsilon(cfg.epsilon));
    }
    for &id in c {
        if (id as usize) >= e.rows() {
            return Err(NeighborError::ContentIdOutOfRange(id, e.rows()));
        }
    }

    let n = c.len();
    let d = e.dim();
    let k = cfg.k;
    let normed = normalize_rows(e, c, cfg.epsilon);
    let block = cfg.block_size.max(1);

    let mut s_tid = vec![0u32; n * k];
    let mut s_val = vec![0f32; n * k];

    // Each block owns a disjoint output range, so parallelism cannot change
    // the result.
    s_tid
        .par_chunks_mut(block * k)
        .zip(s_val.par_chunks_mut(block * k))
        .enumerate()
        .for_each(|(bi, (tid_chunk, val_chunk))| {
            let row0 = bi * block;
            let rows = tid_chunk.len() / k;
            let mut dots = vec![0f32; n];
            for r in 0..rows {
                let i = row0 + r;
                let qi = &normed[i * d..(i + 1) * d];
                for (j, dot) in dots.iter_mut().enumerate() {
                    let vj = &normed[j * d..(j + 1) * d];
                    *dot = qi.iter().zip(vj).map(|(a, b)| a * b).sum();
                }
                // Self goes in slot 0 unconditionally; the remaining k-1
                // slots are the best of the other rows by (value desc,
                // token id asc).
                let mut order: Vec<u32> = (0..n as u32).filter(|&j| j as usize != i).collect();
                let rest = k - 1;
                if rest > 0 && rest < order.len() {
                    order.select_nth_unstable_by(rest - 1, |&a, &b| {
                        dots[b as usize]
                            .partial_cmp(&dots[a as usize])
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                    order.truncate(rest);
                }
                order.sort_unstable_by(|&a, &b| {
                    dots[b as usize]
                        .partial_cmp(&dots[a as usize])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                tid_chunk[r * k] = c[i];
                val_chunk[r * k] = dots[i];
                for (slot, &j) in order.iter().take(rest).enumerate() {
                    tid_chunk[r * k + 1 + slot] = c[j as usize];
                    val_chunk[r * k + 1 + slot] = dots[j as usize];
                }
            }
        });

    Ok(NeighborTable {
        content_ids: c.clone(),
        k,
        s_tid,
        s_val,
    })
}

pub fn save_table(t: &NeighborTable, path: impl AsRef<Path>) -> Result<(), NeighborError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SEMN_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u64::<LittleEndian>(t.content_ids.len() as u64)?;
    w.write_u32::<LittleEndian>(t.k as u32)?;
    for &id in &t.content_ids {
        w.write_u32::<LittleEndian>(id)?;
    }
    for &id in &t.s_tid {
        w.write_u32::<LittleEndian>(id)?;
    }
    for &v in &t.s_val {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_table(path: impl AsRef<Path>) -> Result<NeighborTable, NeighborError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SEMN_MAGIC {
        return Err(NeighborError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(NeighborError::BadVersion(version));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    if n == 0 || k == 0 {
        return Err(NeighborError::SizeMismatch(format!("n={n}, k={k}")));
    }
    let mut content_ids = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut content_ids)
        .map_err(|_| NeighborError::SizeMismatch("content ids truncated".into()))?;
    let mut s_tid = vec![0u32; n * k];
    r.read_u32_into::<LittleEndian>(&mut s_tid)
        .map_err(|_| NeighborError::SizeMismatch("s_tid truncated".into()))?;
    let mut s_val = vec![0f32; n * k];
    r.read_f32_into::<LittleEndian>(&mut s_val)
        .map_err(|_| NeighborError::SizeMismatch("s_val truncated".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NeighborError::SizeMismatch("trailing bytes".into()));
    }
    Ok(NeighborTable {
        content_ids,
        k,
        s_tid,
        s_val,
    })
}
