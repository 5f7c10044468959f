//! Token-embedding matrices and tokenizer metadata.
//!
//! Embeddings travel in the SEMB binary format (little-endian): magic
//! `"SEMB"`, `u32` version = 1, `u64` rows, `u64` dim, `u8` dtype = 0 (f32),
//! then `rows * dim` f32 values row-major. The header is exactly 25 bytes.
//! Tokenizer metadata is plain JSON with `v_tok`, `special_ids` and
//! `added_ids` fields.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEMB_MAGIC: &[u8; 4] = b"SEMB";
pub const SEMB_HEADER_LEN: usize = 25;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected \"SEMB\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported SEMB version {0}")]
    BadVersion(u32),
    #[error("unsupported dtype code {0} (only 0 = f32)")]
    BadDtype(u8),
    #[error("truncated at offset {0}")]
    Truncated(u64),
    #[error("non-finite value at offset {0}")]
    NonFinite(u64),
    #[error("empty matrix: rows and dim must be >= 1")]
    EmptyMatrix,
    #[error("matrix contains a non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("id {id} >= v_tok {v_tok}")]
    IdOutOfRange { id: u32, v_tok: u32 },
    #[error("malformed tokenizer meta: {0}")]
    MetaParse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major token-embedding table, `rows` x `dim`, f32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if rows == 0 || dim == 0 {
            return Err(EmbeddingError::EmptyMatrix);
        }
        assert_eq!(data.len(), rows * dim, "data length must equal rows * dim");
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(EmbeddingError::NonFiniteValue {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut offset: u64 = 0;

    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, &mut offset)?;
    if &magic != SEMB_MAGIC {
        return Err(EmbeddingError::BadMagic(magic));
    }
    let version = read_u32(&mut r, &mut offset)?;
    if version != 1 {
        return Err(EmbeddingError::BadVersion(version));
    }
    let rows = read_u64(&mut r, &mut offset)? as usize;
    let dim = read_u64(&mut r, &mut offset)? as usize;
    let mut dtype = [0u8; 1];
    read_exact_at(&mut r, &mut dtype, &mut offset)?;
    if dtype[0] != 0 {
        return Err(EmbeddingError::BadDtype(dtype[0]));
    }
    if rows == 0 || dim == 0 {
        return Err(EmbeddingError::EmptyMatrix);
    }

    let n = rows * dim;
    let mut data = Vec::with_capacity(n);
    let mut buf = vec![0u8; dim * 4];
    for _ in 0..rows {
        read_exact_at(&mut r, &mut buf, &mut offset)?;
        for chunk in buf.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                let in_row = (data.len() % dim) as u64 * 4;
                return Err(EmbeddingError::NonFinite(offset - buf.len() as u64 + in_row));
            }
            data.push(v);
        }
    }
    debug_assert_eq!(data.len(), n);
    Ok(EmbeddingMatrix { rows, dim, data })
}

pub fn save_embeddings(
    m: &EmbeddingMatrix,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingError> {
    // NaN/Inf cannot enter through the constructor, but guard against
    // matrices built from unchecked sources.
    for (i, v) in m.data.iter().enumerate() {
        if !v.is_finite() {
            return Err(EmbeddingError::NonFiniteValue {
                row: i / m.dim,
                col: i % m.dim,
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SEMB_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u64::<LittleEndian>(m.rows as u64)?;
    w.write_u64::<LittleEndian>(m.dim as u64)?;
    w.write_u8(0)?;
    for v in &m.data {
        w.write_f32::<LittleEndian>(*v)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_at<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: &mut u64,
) -> Result<(), EmbeddingError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(EmbeddingError::Truncated(*offset + filled as u64));
        }
        filled += n;
    }
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    read_exact_at(r, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, offset: &mut u64) -> Result<u64, EmbeddingError> {
    let mut b = [0u8; 8];
    read_exact_at(r, &mut b, offset)?;
    Ok(u64::from_le_bytes(b))
}

/// Tokenizer-side vocabulary metadata: the tokenizer vocabulary size plus
/// the ids of special and added tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerMeta {
    pub v_tok: u32,
    pub special_ids: BTreeSet<u32>,
    pub added_ids: BTreeSet<u32>,
}

impl TokenizerMeta {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        for &id in self.special_ids.iter().chain(self.added_ids.iter()) {
            if id >= self.v_tok {
                return Err(EmbeddingError::IdOutOfRange {
                    id,
                    v_tok: self.v_tok,
                });
            }
        }
        Ok(())
    }
}

pub fn load_tokenizer_meta(path: impl AsRef<Path>) -> Result<TokenizerMeta, EmbeddingError> {
    let text = std::fs::read_to_string(path)?;
    let meta: TokenizerMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    #[test]
    fn load_identity_like_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.semb");
        let m =
            EmbeddingMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.rows(), 2);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(back.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn truncated_mid_header_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.semb");
        let m = EmbeddingMatrix::new(1, 1, vec![2.5]).unwrap();
        save_embeddings(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..24]).unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert_eq!(err.to_string(), "truncated at offset 24");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.semb");
        let m = EmbeddingMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_embeddings(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..SEMB_HEADER_LEN]).unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, EmbeddingError::Truncated(25)), "{err}");
    }

    #[test]
    fn round_trip_random_matrix_bitwise() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(42);
        let rows = 257;
        let dim = 17;
        let data: Vec<f32> = (0..rows * dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let m = EmbeddingMatrix::new(rows, dim, data).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.semb");
        save_embeddings(&m, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        // bitwise comparison
        let a: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);

        // file size = header + rows*dim*4
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, SEMB_HEADER_LEN + rows * dim * 4);
    }

    #[test]
    fn one_by_one_matrix_is_29_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.semb");
        let m = EmbeddingMatrix::new(1, 1, vec![2.5]).unwrap();
        save_embeddings(&m, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 29);
    }

    #[test]
    fn equal_matrices_equal_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, 2, vec![0.5, -1.5, 3.25, 0.0]).unwrap();
        let p1 = dir.path().join("a.semb");
        let p2 = dir.path().join("b.semb");
        save_embeddings(&m, &p1).unwrap();
        save_embeddings(&m.clone(), &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn nan_rejected_before_write() {
        let err = EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]).unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::NonFiniteValue { row: 0, col: 1 }
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.semb");
        std::fs::write(&path, b"XEMB\x01\x00\x00\x00").unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, EmbeddingError::BadMagic(_)));
    }

    #[test]
    fn non_finite_payload_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nf.semb");
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        save_embeddings(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // overwrite the second payload value with NaN
        bytes[SEMB_HEADER_LEN + 4..SEMB_HEADER_LEN + 8]
            .copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert_eq!(err.to_string(), format!("non-finite value at offset {}", SEMB_HEADER_LEN + 4));
    }

    #[test]
    fn tokenizer_meta_parses_and_validates() {
        let meta: TokenizerMeta =
            serde_json::from_str(r#"{"v_tok":10,"special_ids":[0,9],"added_ids":[]}"#).unwrap();
        meta.validate().unwrap();
        assert_eq!(meta.special_ids.len(), 2);

        let bad: TokenizerMeta =
            serde_json::from_str(r#"{"v_tok":5,"special_ids":[7],"added_ids":[]}"#).unwrap();
        let err = bad.validate().unwrap_err();
        assert_eq!(err.to_string(), "id 7 >= v_tok 5");
    }

    #[test]
    fn duplicated_ids_collapse_to_single_membership() {
        let meta: TokenizerMeta = serde_json::from_str(
            r#"{"v_tok":10,"special_ids":[3,3],"added_ids":[3]}"#,
        )
        .unwrap();
        let union: std::collections::BTreeSet<u32> = meta
            .special_ids
            .iter()
            .chain(meta.added_ids.iter())
            .copied()
            .collect();
        assert_eq!(union.len(), 1);
    }
}
