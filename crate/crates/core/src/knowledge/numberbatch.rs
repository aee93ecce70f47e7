use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{concept_language, normalize_concept};
use crate::error::{Error, Result};

/// Word to concept-vector map for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
    language: String,
}

impl EmbeddingTable {
    pub fn new(dim: usize, language: impl Into<String>) -> Self {
        EmbeddingTable {
            vectors: HashMap::new(),
            dim,
            language: language.into(),
        }
    }

    /// Inserts under the normalized key. Returns false if the key already existed
    /// (the first vector wins).
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::shape("EmbeddingTable::insert", &[self.dim], &[vector.len()]));
        }
        let key = normalize_concept(word);
        if self.vectors.contains_key(&key) {
            return Ok(false);
        }
        self.vectors.insert(key, vector);
        Ok(true)
    }

    /// Case-folded lookup.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&normalize_concept(word)).map(Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Entries sorted by word.
    pub fn entries(&self) -> Vec<(&str, &[f64])> {
        let mut out: Vec<_> = self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }
}

/// Reads a Numberbatch text file.
///
/// An optional `<count> <dim>` header is accepted. Entries are either
/// `/c/<lang>/<word> v1 .. vdim` (kept only when `<lang>` matches `language`)
/// or bare `<word> v1 .. vdim`. Every kept vector must have `dim` values.
pub fn load_numberbatch(path: &Path, language: &str, dim: usize) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::new(dim, language);
    let mut seen_content = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let key = fields.next().expect("non-empty line");
        if !seen_content {
            seen_content = true;
            let rest: Vec<&str> = fields.clone().collect();
            if rest.len() == 1 && key.parse::<usize>().is_ok() {
                if let Ok(header_dim) = rest[0].parse::<usize>() {
                    if header_dim != dim {
                        return Err(Error::format(
                            path,
                            format!("header declares dim {header_dim}, expected {dim}"),
                        ));
                    }
                    continue;
                }
            }
        }
        if let Some(lang) = concept_language(key) {
            if lang != language {
                continue;
            }
        }
        let word = normalize_concept(key);
        if word.is_empty() {
            return Err(Error::parse(path, lineno, format!("empty concept in `{key}`")));
        }
        let vector = fields
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::format(
                path,
                format!("line {lineno}: `{key}` has {} values, expected {dim}", vector.len()),
            ));
        }
        table.insert(&word, vector)?;
    }
    Ok(table)
}

/// Writes `table` with a header and `/c/<lang>/` keys, sorted by word.
/// Values use the shortest representation that parses back exactly.
pub fn save_numberbatch(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for (word, vector) in table.entries() {
        out.push_str(&format!("/c/{}/{word}", table.language()));
        for v in vector {
            out.push_str(&format!(" {v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
