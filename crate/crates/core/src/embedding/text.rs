//! Reader for the whitespace-separated text vector format:
//!
//! ```text
//! [<count> <dim>]
//! <word> <v1> ... <vd>
//! ```
//!
//! Fields are separated by a single ASCII space, so a word never contains a
//! space. Trailing whitespace on a line is ignored.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{EmbeddingError, EmbeddingMatrix, Vocab};

/// Mirrors the 250k-word vocabulary cut used for the published experiments.
pub const DEFAULT_MAX_WORDS: usize = 250_000;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// `(count, dim)` from the header line, when one was present.
    pub header: Option<(usize, usize)>,
    /// Lines whose values did not parse as finite floats, or had no word.
    pub malformed: usize,
    /// Lines with a value count different from the matrix dimension.
    pub dimension_mismatch: usize,
    /// Repeated words; the first occurrence is kept.
    pub duplicates: usize,
}

impl LoadStats {
    pub fn skipped(&self) -> usize {
        self.malformed + self.dimension_mismatch + self.duplicates
    }
}

#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub matrix: EmbeddingMatrix,
    pub stats: LoadStats,
}

pub fn load_text_embeddings(path: &Path, max_words: Option<usize>) -> Result<LoadedEmbeddings, EmbeddingError> {
    let unreadable = |source| EmbeddingError::FileUnreadable { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(unreadable)?;
    read_text_embeddings(BufReader::with_capacity(1 << 20, file), max_words).map_err(|e| match e {
        EmbeddingError::FileUnreadable { source, .. } => unreadable(source),
        other => other,
    })
}

/// Parses the text format from any buffered reader. Returns an un-normalized
/// matrix holding the first `max_words` valid, distinct entries in input order.
pub fn read_text_embeddings<R: BufRead>(
    mut reader: R,
    max_words: Option<usize>,
) -> Result<LoadedEmbeddings, EmbeddingError> {
    let limit = max_words.unwrap_or(usize::MAX).max(1);
    let mut stats = LoadStats::default();
    let mut dim: Option<usize> = None;
    let mut words = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut buf = Vec::new();
    let mut first_line = true;

    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|source| EmbeddingError::FileUnreadable { path: "<reader>".into(), source })?;
        if n == 0 {
            break;
        }
        let Ok(line) = std::str::from_utf8(&buf) else {
            stats.malformed += 1;
            first_line = false;
            continue;
        };
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }

        if std::mem::take(&mut first_line) {
            if let Some(header) = parse_header(line) {
                stats.header = Some(header);
                dim = Some(header.1);
                continue;
            }
        }

        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default();
        values.clear();
        let parsed = fields.try_for_each(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                values.push(v);
                Ok(())
            }
            _ => Err(()),
        });
        if word.is_empty() || parsed.is_err() || values.is_empty() {
            stats.malformed += 1;
            continue;
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            stats.dimension_mismatch += 1;
            continue;
        }
        if !seen.insert(word.to_owned()) {
            stats.duplicates += 1;
            continue;
        }
        words.push(word.to_owned());
        rows.extend_from_slice(&values);
        if words.len() >= limit {
            break;
        }
    }

    if stats.skipped() > 0 {
        log::warn!(
            "skipped {} malformed, {} wrong-dimension and {} duplicate lines",
            stats.malformed,
            stats.dimension_mismatch,
            stats.duplicates
        );
    }
    if words.is_empty() {
        return Err(match dim {
            Some(d) if stats.dimension_mismatch > 0 => EmbeddingError::DimensionMismatch { expected: d, found: 0 },
            _ => EmbeddingError::EmptyFile,
        });
    }
    let dim = dim.expect("dim is known once a row was accepted");
    let vocab = Vocab::from_words(words)?;
    Ok(LoadedEmbeddings { matrix: EmbeddingMatrix::from_parts_unchecked(vocab, dim, rows, false), stats })
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split(' ');
    let count = it.next()?.parse().ok()?;
    let dim: usize = it.next()?.parse().ok()?;
    (it.next().is_none() && dim > 0).then_some((count, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::WordId;

    fn read(s: &str, max: Option<usize>) -> Result<LoadedEmbeddings, EmbeddingError> {
        read_text_embeddings(s.as_bytes(), max)
    }

    #[test]
    fn header_and_rows() {
        let l = read("2 3\ncat 1 0 0\ndog 0 1 0\n", None).unwrap();
        assert_eq!(l.stats.header, Some((2, 3)));
        assert_eq!(l.matrix.dim(), 3);
        assert_eq!(l.matrix.vocab().words(), &["cat", "dog"]);
        assert_eq!(l.matrix.row(WordId(1)), &[0.0, 1.0, 0.0]);
        assert!(!l.matrix.is_normalized());
    }

    #[test]
    fn truncation() {
        let l = read("2 3\ncat 1 0 0\ndog 0 1 0\n", Some(1)).unwrap();
        assert_eq!(l.matrix.vocab().words(), &["cat"]);
    }

    #[test]
    fn duplicate_keeps_first() {
        let l = read("cat 1 0\ncat 0 1\n", None).unwrap();
        assert_eq!(l.matrix.len(), 1);
        assert_eq!(l.matrix.row(WordId(0)), &[1.0, 0.0]);
        assert_eq!(l.stats.duplicates, 1);
    }

    #[test]
    fn no_header_trailing_spaces_and_crlf() {
        let l = read("a 0.5 -1e-3 \r\nb 2 3 \r\n", None).unwrap();
        assert_eq!(l.stats.header, None);
        assert_eq!(l.matrix.dim(), 2);
        assert_eq!(l.matrix.row(WordId(0)), &[0.5, -1e-3]);
    }

    #[test]
    fn malformed_and_mismatched_rows_are_skipped() {
        let l = read("3 2\na 1 2\nb 1 x\nc 1 2 3\n 1 2\nd nan 1\ne 4 5\n", None).unwrap();
        assert_eq!(l.matrix.vocab().words(), &["a", "e"]);
        assert_eq!(l.stats.malformed, 3);
        assert_eq!(l.stats.dimension_mismatch, 1);
    }

    #[test]
    fn empty_and_all_mismatched() {
        assert!(matches!(read("", None), Err(EmbeddingError::EmptyFile)));
        assert!(matches!(read("2 3\n", None), Err(EmbeddingError::EmptyFile)));
        assert!(matches!(read("2 3\na 1 2\nb 1\n", None), Err(EmbeddingError::DimensionMismatch { expected: 3, .. })));
    }

    #[test]
    fn missing_file() {
        let e = load_text_embeddings(Path::new("/definitely/not/here.vec"), None).unwrap_err();
        assert!(matches!(e, EmbeddingError::FileUnreadable { .. }));
    }
}
