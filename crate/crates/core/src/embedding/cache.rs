//! Binary embedding cache.
//!
//! Framed by [`crate::binfmt`] with magic `SDEM`. Payload:
//!
//! ```text
//! dim        u32
//! count      u64
//! normalized u8 (always 1 when written by save_cache)
//! words      count x (u32 byte length, UTF-8 bytes)
//! rows       count*dim x f64, row-major
//! ```

use std::path::Path;

use super::{EmbeddingError, EmbeddingMatrix, Vocab};
use crate::binfmt::{self, FrameError, PayloadReader, PayloadWriter};

pub const CACHE_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"SDEM";

pub fn save_cache(matrix: &EmbeddingMatrix, path: &Path) -> Result<(), EmbeddingError> {
    if !matrix.is_normalized() {
        return Err(EmbeddingError::NotNormalized);
    }
    let mut w = PayloadWriter::default();
    w.u32(matrix.dim() as u32);
    w.u64(matrix.len() as u64);
    w.u8(1);
    for word in matrix.vocab().words() {
        w.str(word);
    }
    w.f64s(matrix.rows());
    binfmt::write_framed(path, MAGIC, CACHE_VERSION, &w.buf)
        .map_err(|source| EmbeddingError::FileUnwritable { path: path.to_path_buf(), source })
}

pub fn load_cache(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    let payload = binfmt::read_framed(path, MAGIC, CACHE_VERSION, "embedding cache").map_err(|e| match e {
        FrameError::Io(source) => EmbeddingError::FileUnreadable { path: path.to_path_buf(), source },
        other => frame_error(other),
    })?;
    decode(&payload).map_err(frame_error)
}

/// True when the file starts with the cache magic.
pub fn is_cache_file(path: &Path) -> bool {
    let mut magic = [0u8; 4];
    std::fs::File::open(path).and_then(|mut f| std::io::Read::read_exact(&mut f, &mut magic)).is_ok() && &magic == MAGIC
}

/// Loads a binary cache, or parses and normalizes a text file.
pub fn open_embeddings(path: &Path, max_words: Option<usize>) -> Result<EmbeddingMatrix, EmbeddingError> {
    if is_cache_file(path) {
        load_cache(path)
    } else {
        super::load_text_embeddings(path, max_words)?.matrix.normalize()
    }
}

fn frame_error(e: FrameError) -> EmbeddingError {
    match e {
        FrameError::VersionMismatch { found, expected } => EmbeddingError::VersionMismatch { found, expected },
        other => EmbeddingError::CorruptCache(other.to_string()),
    }
}

fn decode(payload: &[u8]) -> Result<EmbeddingMatrix, FrameError> {
    let mut r = PayloadReader::new(payload);
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;
    let normalized = match r.u8()? {
        1 => true,
        0 => false,
        _ => return Err(FrameError::Corrupt("bad normalized flag")),
    };
    if dim == 0 {
        return Err(FrameError::Corrupt("zero dimension"));
    }
    let mut words = Vec::with_capacity(count.min(payload.len()));
    for _ in 0..count {
        words.push(r.str()?);
    }
    let rows = r.f64s(count.checked_mul(dim).ok_or(FrameError::Corrupt("size overflow"))?)?;
    r.finish()?;
    let vocab = Vocab::from_words(words).map_err(|_| FrameError::Corrupt("duplicate word"))?;
    Ok(EmbeddingMatrix::from_parts_unchecked(vocab, dim, rows, normalized))
}
