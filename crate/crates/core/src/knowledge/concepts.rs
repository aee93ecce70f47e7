use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edges::{expand_concepts, ConceptSet, EdgeSource, RelationFilter};
use super::normalize_concept;
use super::numberbatch::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const STOPWORDS: &str = include_str!("../../resources/stopwords.txt");
const CACHE_FORMAT: &str = "semirnet-concepts";
const CACHE_VERSION: u32 = 1;

pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Concept vectors for one word, in [`ConceptSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedConcepts {
    /// Concepts that had a table vector; row `i` of `matrix` belongs to `found[i]`.
    pub found: Vec<String>,
    pub matrix: Tensor,
    /// True when no concept had a vector and `matrix` is a single zero row.
    pub oov: bool,
}

/// Stacks the table vectors of every concept in `cs`, dropping concepts the
/// table lacks. Values are copied exactly.
pub fn embed_concept_set(cs: &ConceptSet, table: &EmbeddingTable) -> EmbeddedConcepts {
    let mut found = Vec::new();
    let mut data = Vec::new();
    for concept in cs.concepts() {
        if let Some(v) = table.get(concept) {
            found.push(concept.to_string());
            data.extend_from_slice(v);
        }
    }
    if found.is_empty() {
        return EmbeddedConcepts {
            found,
            matrix: Tensor::zeros(&[1, table.dim()]),
            oov: true,
        };
    }
    let rows = found.len();
    EmbeddedConcepts {
        found,
        matrix: Tensor::matrix(rows, table.dim(), data).expect("rows x dim values"),
        oov: false,
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
    dim: usize,
    k: usize,
    relations: String,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    word: String,
    entries: Vec<(String, f64)>,
    found: Vec<String>,
    oov: bool,
    rows: Vec<Vec<f64>>,
}

/// Per-word concept sets and their embedded matrices, as written by
/// `knowledge-build` and read at training and evaluation time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    dim: usize,
    k: usize,
    relations: String,
    order: Vec<String>,
    sets: HashMap<String, (ConceptSet, EmbeddedConcepts)>,
}

impl KnowledgeBase {
    /// Expands and embeds every distinct normalized word, skipping stopwords.
    pub fn build<'a, I, S>(
        words: I,
        table: &EmbeddingTable,
        edges: &S,
        k: usize,
        filter: &RelationFilter,
        stopwords: &BTreeSet<String>,
    ) -> Self
    where
        I: IntoIterator<Item = &'a str>,
        S: EdgeSource + ?Sized,
    {
        let mut kb = KnowledgeBase {
            dim: table.dim(),
            k,
            relations: filter.to_list(),
            ..Default::default()
        };
        for w in words {
            let norm = normalize_concept(w);
            if norm.is_empty() || stopwords.contains(&norm) || kb.sets.contains_key(&norm) {
                continue;
            }
            let cs = expand_concepts(&norm, edges, k, filter);
            let emb = embed_concept_set(&cs, table);
            kb.order.push(norm.clone());
            kb.sets.insert(norm, (cs, emb));
        }
        kb
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.order
    }

    pub fn concept_set(&self, word: &str) -> Option<&ConceptSet> {
        self.sets.get(&normalize_concept(word)).map(|(cs, _)| cs)
    }

    pub fn embedded(&self, word: &str) -> Option<&EmbeddedConcepts> {
        self.sets.get(&normalize_concept(word)).map(|(_, e)| e)
    }

    /// Vertical stack of the concept matrices of every known word, or `None`
    /// when no word is known.
    pub fn stack<S: AsRef<str>>(&self, words: &[S]) -> Option<Tensor> {
        let mut data = Vec::new();
        let mut rows = 0;
        for w in words {
            if let Some(e) = self.embedded(w.as_ref()) {
                data.extend_from_slice(e.matrix.data());
                rows += e.matrix.rows();
            }
        }
        (rows > 0).then(|| Tensor::matrix(rows, self.dim, data).expect("stacked rows"))
    }

    /// JSON-lines: a header, then one entry per word in build order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let header = CacheHeader {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            dim: self.dim,
            k: self.k,
            relations: self.relations.clone(),
        };
        serde_json::to_writer(&mut buf, &header).expect("serialize header");
        buf.push(b'\n');
        for word in &self.order {
            let (cs, emb) = &self.sets[word];
            let entry = CacheEntry {
                word: word.clone(),
                entries: cs.entries.clone(),
                found: emb.found.clone(),
                oov: emb.oov,
                rows: (0..emb.matrix.rows()).map(|i| emb.matrix.row(i).to_vec()).collect(),
            };
            serde_json::to_writer(&mut buf, &entry).expect("serialize entry");
            buf.push(b'\n');
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty concept cache (missing header)"))?;
        let header: CacheHeader = serde_json::from_str(first).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported concept cache {} v{}", header.format, header.version),
            ));
        }
        let mut kb = KnowledgeBase {
            dim: header.dim,
            k: header.k,
            relations: header.relations,
            ..Default::default()
        };
        for (i, line) in lines {
            let lineno = i + 1;
            let entry: CacheEntry =
                serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let expected_rows = if entry.oov { 1 } else { entry.found.len() };
            if entry.rows.len() != expected_rows || entry.rows.iter().any(|r| r.len() != kb.dim) {
                return Err(Error::parse(path, lineno, "row count or width does not match entry"));
            }
            let data: Vec<f64> = entry.rows.concat();
            let emb = EmbeddedConcepts {
                found: entry.found,
                matrix: Tensor::matrix(expected_rows, kb.dim, data)
                    .map_err(|e| Error::parse(path, lineno, e.to_string()))?,
                oov: entry.oov,
            };
            let cs = ConceptSet {
                word: entry.word.clone(),
                entries: entry.entries,
            };
            if kb.sets.insert(entry.word.clone(), (cs, emb)).is_some() {
                return Err(Error::parse(path, lineno, format!("duplicate word `{}`", entry.word)));
            }
            kb.order.push(entry.word);
        }
        Ok(kb)
    }
}
