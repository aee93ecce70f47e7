//! ConceptNet integration: Numberbatch vectors, edge expansion, the REST
//! client with its response cache, and the per-word concept cache consumed
//! by the word-level similarity features.

mod api;
mod concepts;
mod edges;
mod numberbatch;

#[cfg(feature = "http")]
pub use api::UreqTransport;
pub use api::{parse_response, ApiConfig, ConceptNetClient, HttpResponse, ResponseCache, Transport, TransportError};
pub use concepts::{default_stopwords, embed_concept_set, EmbeddedConcepts, KnowledgeBase};
pub use edges::{
    expand_concepts, load_edges, save_edges, ConceptEdge, ConceptSet, EdgeIndex, EdgeSource, RelationFilter,
};
pub use numberbatch::{load_numberbatch, save_numberbatch, EmbeddingTable};

/// Numberbatch vector width.
pub const CONCEPT_DIM: usize = 300;

/// Canonical concept key: drops a `/c/<lang>/` prefix and any trailing
/// part-of-speech segments, then lowercases, trims and joins words with `_`.
pub fn normalize_concept(raw: &str) -> String {
    let trimmed = raw.trim();
    let body = match trimmed.strip_prefix("/c/") {
        Some(rest) => {
            let mut parts = rest.splitn(3, '/');
            let _lang = parts.next();
            parts.next().unwrap_or("")
        }
        None => trimmed,
    };
    body.trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Language tag of a `/c/<lang>/...` URI, if it is one.
pub fn concept_language(raw: &str) -> Option<&str> {
    raw.trim().strip_prefix("/c/")?.split('/').next()
}

/// Relation label without the `/r/` prefix.
pub fn normalize_relation(raw: &str) -> String {
    let r = raw.trim();
    r.strip_prefix("/r/").unwrap_or(r).trim_end_matches('/').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_concept("/c/en/cat"), "cat");
        assert_eq!(normalize_concept("/c/en/ice_cream/n"), "ice_cream");
        assert_eq!(normalize_concept("  Bad Day "), "bad_day");
        assert_eq!(normalize_concept("Sunny"), "sunny");
        assert_eq!(concept_language("/c/fr/chat"), Some("fr"));
        assert_eq!(concept_language("chat"), None);
        assert_eq!(normalize_relation("/r/IsA"), "IsA");
        assert_eq!(normalize_relation("RelatedTo"), "RelatedTo");
    }
}
