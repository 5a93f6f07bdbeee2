//! Gated retrieval over a local, curated corpus of technique notes.
//!
//! Documents come from two sources only: notes bundled with the binary and
//! files under operator-configured directories. The gate rejects any path
//! outside the configured roots, the corpus is immutable after indexing,
//! and scoring is plain normalized term overlap so rankings are
//! deterministic and dependency-free.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("gate denied: {0} is outside the configured corpus roots")]
    GateDenied(PathBuf),
    #[error("duplicate document id: {0}")]
    DuplicateDoc(String),
    #[error("{path}: {reason}")]
    MalformedDoc { path: PathBuf, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocSource {
    Bundled,
    OperatorAdded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub id: String,
    pub title: String,
    pub tags: BTreeSet<String>,
    pub body: String,
    pub source: DocSource,
}

/// Immutable, indexed corpus.
#[derive(Debug, Default)]
pub struct Corpus {
    docs: Vec<KnowledgeDoc>,
    // doc index -> term set over title + tags + body
    terms: Vec<BTreeSet<String>>,
}

impl Corpus {
    /// Corpus holding only the bundled technique notes.
    pub fn bundled() -> Self {
        let mut corpus = Self::default();
        for text in [
            include_str!("../corpus/xss-attribute-escape.md"),
            include_str!("../corpus/hidden-parameter-privilege-escalation.md"),
            include_str!("../corpus/upload-to-execution.md"),
            include_str!("../corpus/replacement-filter-probing.md"),
            include_str!("../corpus/default-credentials.md"),
        ] {
            let doc = parse_doc(text, DocSource::Bundled)
                .expect("bundled notes are well-formed");
            corpus.insert(doc).expect("bundled ids are unique");
        }
        corpus
    }

    /// Index every document under `dir`, which must live inside one of the
    /// configured `roots`.
    pub fn index_dir(&mut self, dir: &Path, roots: &[PathBuf]) -> Result<usize, KnowledgeError> {
        let canonical = dir.canonicalize().map_err(KnowledgeError::Io)?;
        let gated = roots.iter().any(|root| {
            root.canonicalize()
                .map(|r| canonical.starts_with(&r))
                .unwrap_or(false)
        });
        if !gated {
            return Err(KnowledgeError::GateDenied(dir.to_path_buf()));
        }
        let mut loaded = 0;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&canonical)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|e| e == "md" || e == "txt")
                    .unwrap_or(false)
            })
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            let doc = parse_doc(&text, DocSource::OperatorAdded).map_err(|reason| {
                KnowledgeError::MalformedDoc {
                    path: path.clone(),
                    reason,
                }
            })?;
            self.insert(doc)?;
            loaded += 1;
        }
        Ok(loaded)
    }

    fn insert(&mut self, doc: KnowledgeDoc) -> Result<(), KnowledgeError> {
        if self.docs.iter().any(|d| d.id == doc.id) {
            return Err(KnowledgeError::DuplicateDoc(doc.id));
        }
        let mut terms = tokenize(&doc.title);
        terms.extend(doc.tags.iter().flat_map(|t| tokenize(t)));
        terms.extend(tokenize(&doc.body));
        self.terms.push(terms);
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, id: &str) -> Option<&KnowledgeDoc> {
        self.docs.iter().find(|d| d.id == id)
    }

    /// Score documents by normalized term overlap with the query and return
    /// the `top_n` best, descending, ties broken by doc id. Scores are the
    /// fraction of query terms present in the document, so they live in
    /// [0, 1]. An empty query matches nothing.
    pub fn retrieve(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        assert!(top_n >= 1, "top_n must be at least 1");
        let query_terms = tokenize(query);
        if query_terms.is_empty() {
            return Vec::new();
        }
        let mut scored: Vec<(String, f64)> = self
            .docs
            .iter()
            .zip(&self.terms)
            .filter_map(|(doc, terms)| {
                let overlap = query_terms.intersection(terms).count();
                (overlap > 0).then(|| {
                    (
                        doc.id.clone(),
                        overlap as f64 / query_terms.len() as f64,
                    )
                })
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(top_n);
        scored
    }

    /// Best-matching document for a query, if any term overlaps.
    pub fn best_match(&self, query: &str) -> Option<&KnowledgeDoc> {
        let top = self.retrieve(query, 1);
        top.first().and_then(|(id, _)| self.doc(id))
    }
}

fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Parse the corpus document format: a front-matter header of
/// `key: value` lines (id, title, tags) separated from the body by `---`.
fn parse_doc(text: &str, source: DocSource) -> Result<KnowledgeDoc, String> {
    let (header, body) = text
        .split_once("\n---\n")
        .ok_or_else(|| "missing --- separator".to_string())?;
    let mut fields: BTreeMap<&str, String> = BTreeMap::new();
    for line in header.lines() {
        if let Some((key, value)) = line.split_once(':') {
            fields.insert(key.trim(), value.trim().to_string());
        }
    }
    let id = fields.remove("id").ok_or("missing id")?;
    let title = fields.remove("title").ok_or("missing title")?;
    let tags = fields
        .remove("tags")
        .unwrap_or_default()
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    let body = body.trim().to_string();
    if body.is_empty() {
        return Err("empty body".into());
    }
    Ok(KnowledgeDoc {
        id,
        title,
        tags,
        body,
        source,
    })
}
