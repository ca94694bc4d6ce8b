//! Corpus directory format: UTF-8 text files plus a `manifest.json`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Document, KbError};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub title: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub documents: Vec<ManifestEntry>,
}

/// Reads every document listed in `dir/manifest.json`, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, KbError> {
    let raw = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CorpusManifest = serde_json::from_str(&raw)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(KbError::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(manifest.documents.len());
    for entry in manifest.documents {
        if !seen.insert(entry.id.clone()) {
            return Err(KbError::DuplicateDocument(entry.id));
        }
        if Path::new(&entry.file).is_absolute() || entry.file.contains("..") {
            return Err(KbError::Manifest(format!(
                "document file `{}` must be relative to the corpus directory",
                entry.file
            )));
        }
        let body = fs::read_to_string(dir.join(&entry.file))?;
        docs.push(Document::new(entry.id, entry.title, body));
    }
    Ok(docs)
}

/// Writes `docs` as `<id>.txt` files plus a manifest.
pub fn write_corpus(dir: &Path, docs: &[Document]) -> Result<(), KbError> {
    fs::create_dir_all(dir)?;
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        let file = format!("{}.txt", sanitize(&doc.id));
        fs::write(dir.join(&file), &doc.body)?;
        documents.push(ManifestEntry {
            id: doc.id.clone(),
            title: doc.title.clone(),
            file,
        });
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        documents,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
