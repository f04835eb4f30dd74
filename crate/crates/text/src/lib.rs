//! Embedded full-text index over [`ProductDoc`]s.
//!
//! Writes are buffered and become visible atomically on [`TextIndex::commit`].
//! Ranking is BM25 (k1 = 1.2, b = 0.75) summed over weighted fields. With a
//! directory, every commit is appended to a JSON-lines journal that is
//! replayed on open.

mod analyze;
mod doc;
mod index;

pub use analyze::{analyze, Analyzer};
pub use doc::{Field, FilterField, Price, ProductDoc};
pub use index::{bm25_idf, bm25_term, Hit, TextIndex, DEFAULT_WEIGHTS, JOURNAL_FILE, K1, B};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("unknown filter field {0:?}")]
    UnknownFilter(String),
    #[error("unknown search field {0:?}")]
    UnknownField(String),
    #[error("limit must be at least 1")]
    ZeroLimit,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal line {line}: {message}")]
    Journal { line: usize, message: String },
}
