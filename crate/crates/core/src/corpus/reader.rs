use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::triples::Document;
use crate::error::{Error, Result};

/// How a corpus file is divided into documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentMode {
    /// Each non-empty line is a document; source_ref is `file:line`.
    #[default]
    Line,
    /// Each file is a document; source_ref is the file name.
    File,
}

impl std::str::FromStr for DocumentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(DocumentMode::Line),
            "file" => Ok(DocumentMode::File),
            _ => Err(Error::Config(format!("unknown document mode {s:?}"))),
        }
    }
}

/// Corpus files under `path` (the file itself, or every regular file in the
/// directory sorted by name).
pub fn corpus_files(path: &Path) -> Result<Vec<std::path::PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        if p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid("corpus", format!("no files under {}", path.display())));
    }
    Ok(files)
}

pub fn read_corpus(path: &Path, mode: DocumentMode) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for file in corpus_files(path)? {
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&file)?;
        match mode {
            DocumentMode::File => docs.push(Document::from_text(name, &text)),
            DocumentMode::Line => {
                for (i, line) in text.lines().enumerate() {
                    if !line.trim().is_empty() {
                        docs.push(Document::from_text(format!("{name}:{}", i + 1), line));
                    }
                }
            }
        }
    }
    Ok(docs)
}
