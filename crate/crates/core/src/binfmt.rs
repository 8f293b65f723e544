//! Versioned, checksummed binary container used by the embedding cache and
//! the activation-table cache.
//!
//! ```text
//! magic      4 bytes
//! version    u8
//! length     u64 LE   (payload byte count)
//! payload    length bytes
//! checksum   32 bytes SHA-256 over every preceding byte
//! ```
//!
//! All integers and floats inside payloads are little-endian.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

const HEADER_LEN: usize = 4 + 1 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("corrupt file: {0}")]
    Corrupt(&'static str),
}

/// Writes `payload` framed with `magic`/`version` to `path`, going through a
/// sibling temp file and a rename so readers never observe a partial file.
pub fn write_framed(path: &Path, magic: &[u8; 4], version: u8, payload: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    buf.extend_from_slice(magic);
    buf.push(version);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(payload);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    atomic_write(path, &buf)
}

/// Reads a framed file, verifying magic, version and checksum, and returns
/// the payload bytes.
pub fn read_framed(path: &Path, magic: &[u8; 4], version: u8, kind: &'static str) -> Result<Vec<u8>, FrameError> {
    let bytes = fs::read(path)?;
    unframe(bytes, magic, version, kind)
}

pub(crate) fn unframe(
    mut bytes: Vec<u8>,
    magic: &[u8; 4],
    version: u8,
    kind: &'static str,
) -> Result<Vec<u8>, FrameError> {
    if bytes.len() < 5 || &bytes[..4] != magic {
        return Err(FrameError::BadMagic { expected: kind });
    }
    if bytes[4] != version {
        return Err(FrameError::VersionMismatch { found: bytes[4], expected: version });
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(FrameError::Corrupt("truncated header"));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let body_end = HEADER_LEN as u64 + len;
    if body_end + CHECKSUM_LEN as u64 != bytes.len() as u64 {
        return Err(FrameError::Corrupt("length does not match file size"));
    }
    let body_end = body_end as usize;
    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(FrameError::Corrupt("checksum mismatch"));
    }
    bytes.truncate(body_end);
    bytes.drain(..HEADER_LEN);
    Ok(bytes)
}

/// Write-to-temp, fsync, rename, fsync-parent.
pub fn atomic_write(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name =
        path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    // Directory fsync is best effort; not every platform allows opening a
    // directory for reading.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[derive(Default)]
pub(crate) struct PayloadWriter {
    pub buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        PayloadReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(FrameError::Corrupt("payload ended early"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, FrameError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FrameError::Corrupt("invalid utf-8"))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FrameError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FrameError::Corrupt("size overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(self) -> Result<(), FrameError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FrameError::Corrupt("trailing bytes in payload"))
        }
    }
}
