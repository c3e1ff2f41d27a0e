//! Loader for the plain-text embedding format: one `word c1 c2 ... cd` line
//! per vocabulary entry, space-separated, no header. The dimension is taken
//! from the first line and enforced on every other.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use textpriv::embedding::{EmbeddingStore, EmbeddingStoreBuilder, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Line {
        path: String,
        line: usize,
        source: StoreError,
    },
    #[error("{path}:{line}: coordinate {value:?} is not a number")]
    BadCoordinate {
        path: String,
        line: usize,
        value: String,
    },
    #[error("{path}:{line}: no coordinates after the word")]
    NoCoordinates { path: String, line: usize },
    #[error("{path}: file contains no embeddings")]
    Empty { path: String },
}

/// Load an embedding store from `path`, optionally validating the dimension.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingStore, LoadError> {
    let display = path.display().to_string();
    let io_err = |source| LoadError::Io {
        path: display.clone(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);

    let mut builder = EmbeddingStoreBuilder::new();
    if let Some(dim) = expected_dim {
        builder = builder.expect_dim(dim);
    }
    let mut coords: Vec<f32> = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io {
            path: display.clone(),
            source,
        })?;
        let number = number + 1;
        let mut fields = line.split_whitespace();
        let word = match fields.next() {
            Some(w) => w,
            None => continue, // blank line
        };
        coords.clear();
        for field in fields {
            let value: f32 = field.parse().map_err(|_| LoadError::BadCoordinate {
                path: display.clone(),
                line: number,
                value: field.to_string(),
            })?;
            coords.push(value);
        }
        if coords.is_empty() {
            return Err(LoadError::NoCoordinates {
                path: display.clone(),
                line: number,
            });
        }
        builder.push(word, &coords).map_err(|source| LoadError::Line {
            path: display.clone(),
            line: number,
            source,
        })?;
    }
    builder.finish().map_err(|_| LoadError::Empty { path: display })
}
