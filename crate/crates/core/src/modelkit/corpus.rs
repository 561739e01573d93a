use std::path::Path;

use crate::error::{Error, Result};

/// An ordered list of case-folded token sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Vec<String>>,
}

impl Corpus {
    pub fn new(documents: Vec<Vec<String>>) -> Self {
        let documents = documents
            .into_iter()
            .map(|d| d.into_iter().map(|t| t.to_lowercase()).collect())
            .collect();
        Self { documents }
    }

    /// One document per line, whitespace tokenization. Blank lines are skipped.
    pub fn from_text(text: &str) -> Self {
        let documents = text
            .lines()
            .map(tokenize)
            .filter(|d| !d.is_empty())
            .collect();
        Self { documents }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::not_found(format!("corpus file {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(Self::from_text(&text))
    }

    pub fn documents(&self) -> &[Vec<String>] {
        &self.documents
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_tokens() == 0
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}
