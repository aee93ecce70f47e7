use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_concept, normalize_relation};
use crate::error::{Error, Result};

/// One weighted, labeled ConceptNet edge between normalized concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEdge {
    pub start: String,
    pub relation: String,
    pub end: String,
    pub weight: f64,
}

impl ConceptEdge {
    /// Normalizes both concepts and the relation; rejects empty concepts and
    /// negative or non-finite weights.
    pub fn new(start: &str, relation: &str, end: &str, weight: f64) -> Result<Self> {
        let (start, end) = (normalize_concept(start), normalize_concept(end));
        if start.is_empty() || end.is_empty() {
            return Err(Error::Data("edge with empty concept".into()));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Data(format!("edge weight {weight} must be finite and >= 0")));
        }
        Ok(ConceptEdge {
            start,
            relation: normalize_relation(relation),
            end,
            weight,
        })
    }
}

/// Relations allowed during expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationFilter {
    All,
    Only(BTreeSet<String>),
}

impl Default for RelationFilter {
    fn default() -> Self {
        RelationFilter::only(["RelatedTo", "IsA", "Synonym", "HasProperty", "UsedFor"])
    }
}

impl RelationFilter {
    pub fn only<I, S>(relations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        RelationFilter::Only(relations.into_iter().map(|r| normalize_relation(r.as_ref())).collect())
    }

    pub fn allows(&self, relation: &str) -> bool {
        match self {
            RelationFilter::All => true,
            RelationFilter::Only(set) => set.contains(relation),
        }
    }

    /// Comma-separated form; `*` means all relations.
    pub fn to_list(&self) -> String {
        match self {
            RelationFilter::All => "*".into(),
            RelationFilter::Only(set) => set.iter().cloned().collect::<Vec<_>>().join(","),
        }
    }

    pub fn parse_list(list: &str) -> Self {
        if list.trim() == "*" {
            RelationFilter::All
        } else {
            RelationFilter::only(list.split(',').map(str::trim).filter(|s| !s.is_empty()))
        }
    }
}

/// Anything that can list the edges touching a normalized concept.
pub trait EdgeSource {
    fn edges_touching(&self, concept: &str) -> Vec<&ConceptEdge>;
}

/// Edges indexed by both endpoints. Immutable after construction.
#[derive(Debug, Clone, Default)]
pub struct EdgeIndex {
    edges: Vec<ConceptEdge>,
    by_concept: HashMap<String, Vec<usize>>,
}

impl EdgeIndex {
    pub fn new(edges: Vec<ConceptEdge>) -> Self {
        let mut by_concept: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            by_concept.entry(e.start.clone()).or_default().push(i);
            if e.end != e.start {
                by_concept.entry(e.end.clone()).or_default().push(i);
            }
        }
        EdgeIndex { edges, by_concept }
    }

    pub fn edges(&self) -> &[ConceptEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl EdgeSource for EdgeIndex {
    fn edges_touching(&self, concept: &str) -> Vec<&ConceptEdge> {
        self.by_concept
            .get(concept)
            .map(|ix| ix.iter().map(|&i| &self.edges[i]).collect())
            .unwrap_or_default()
    }
}

impl EdgeSource for [ConceptEdge] {
    fn edges_touching(&self, concept: &str) -> Vec<&ConceptEdge> {
        self.iter().filter(|e| e.start == concept || e.end == concept).collect()
    }
}

/// Reads a `start,relation,end,weight` CSV edge dump with a header row.
pub fn load_edges(path: &Path) -> Result<Vec<ConceptEdge>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["start", "relation", "end", "weight"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header `start,relation,end,weight`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 fields, got {}", record.len()),
            ));
        }
        let weight: f64 = record[3]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad weight `{}`", &record[3])))?;
        let edge = ConceptEdge::new(&record[0], &record[1], &record[2], weight)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        edges.push(edge);
    }
    Ok(edges)
}

/// Writes edges in the format read by [`load_edges`].
pub fn save_edges(path: &Path, edges: &[ConceptEdge]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["start", "relation", "end", "weight"])
        .map_err(|e| csv_error(path, e))?;
    for e in edges {
        writer
            .write_record([
                e.start.as_str(),
                e.relation.as_str(),
                e.end.as_str(),
                &format!("{:?}", e.weight),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

/// A word together with its ranked related concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub word: String,
    /// `(concept, weight)`, sorted by weight descending then concept
    /// ascending; entry 0 is always the word itself.
    pub entries: Vec<(String, f64)>,
}

impl ConceptSet {
    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The word itself plus its top-`k` neighbors by edge weight.
///
/// Neighbors reached through several edges keep their heaviest edge. The
/// word's own entry carries weight `max neighbor weight + 1` so it always
/// ranks first.
pub fn expand_concepts<S>(word: &str, source: &S, k: usize, filter: &RelationFilter) -> ConceptSet
where
    S: EdgeSource + ?Sized,
{
    let norm = normalize_concept(word);
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for edge in source.edges_touching(&norm) {
        if !filter.allows(&edge.relation) {
            continue;
        }
        let neighbor = if edge.start == norm { &edge.end } else { &edge.start };
        if *neighbor == norm {
            continue;
        }
        let w = best.entry(neighbor.as_str()).or_insert(edge.weight);
        if edge.weight > *w {
            *w = edge.weight;
        }
    }
    let mut ranked: Vec<(String, f64)> = best.into_iter().map(|(c, w)| (c.to_string(), w)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let top_weight = ranked.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    ranked.truncate(k);
    let mut entries = Vec::with_capacity(ranked.len() + 1);
    entries.push((norm.clone(), top_weight + 1.0));
    entries.extend(ranked);
    ConceptSet { word: norm, entries }
}
