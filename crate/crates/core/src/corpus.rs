//! Corpus records and the JSONL corpus format.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CwtmError, Result};

/// One raw document. `label` is only used by classification probes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl DocumentRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        DocumentRecord {
            id: id.into(),
            text: text.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// Reads a JSONL corpus. Malformed lines and duplicate ids are errors; blank
/// lines are ignored.
pub fn read_jsonl(path: &Path) -> Result<Vec<DocumentRecord>> {
    let file = File::open(path).map_err(|e| CwtmError::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CwtmError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: DocumentRecord = serde_json::from_str(&line).map_err(|e| CwtmError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CwtmError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate document id '{}'", doc.id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl(path: &Path, docs: &[DocumentRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CwtmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| CwtmError::io(path, e))?;
    }
    w.flush().map_err(|e| CwtmError::io(path, e))
}
