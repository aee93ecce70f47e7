//! Client for the public ConceptNet REST API with a mandatory on-disk cache.
//!
//! The cache holds one file per normalized term containing the raw response
//! bytes. A cache hit never touches the transport, so replayed fixtures and
//! offline runs behave identically.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::edges::ConceptEdge;
use super::{concept_language, normalize_concept};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiConfig {
    /// `conceptnet.endpoint`
    pub endpoint: String,
    /// `conceptnet.timeout_ms`
    pub timeout_ms: u64,
    pub language: String,
    pub limit: usize,
    /// When false, cache misses fail with a retriable error instead of
    /// reaching the network.
    pub network_enabled: bool,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            endpoint: "https://api.conceptnet.io".into(),
            timeout_ms: 10_000,
            language: "en".into(),
            limit: 50,
            network_enabled: false,
            max_retries: 3,
            backoff_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

/// Minimal blocking HTTP GET.
pub trait Transport {
    fn get(&self, url: &str, timeout: Duration) -> std::result::Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn get(&self, url: &str, timeout: Duration) -> std::result::Result<HttpResponse, TransportError> {
        (**self).get(url, timeout)
    }
}

/// Live transport over `ureq`.
#[cfg(feature = "http")]
#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

#[cfg(feature = "http")]
impl Transport for UreqTransport {
    fn get(&self, url: &str, timeout: Duration) -> std::result::Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut response = agent.get(url).call().map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Directory of raw responses keyed by normalized term.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File for a normalized term. Path separators and a leading dot are
    /// percent-escaped so every term maps inside the cache directory.
    pub fn path_for(&self, term: &str) -> PathBuf {
        let mut name = String::with_capacity(term.len());
        for (i, c) in term.chars().enumerate() {
            match c {
                '/' => name.push_str("%2F"),
                '\\' => name.push_str("%5C"),
                '%' => name.push_str("%25"),
                '.' if i == 0 => name.push_str("%2E"),
                c => name.push(c),
            }
        }
        self.dir.join(name)
    }

    pub fn get(&self, term: &str) -> Result<Option<Vec<u8>>> {
        let path = self.path_for(term);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Atomically stores `bytes`; concurrent writers are serialized.
    pub fn put(&self, term: &str, bytes: &[u8]) -> Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path_for(term);
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub struct ConceptNetClient<T> {
    transport: T,
    cache: ResponseCache,
    config: ApiConfig,
}

impl<T: Transport> ConceptNetClient<T> {
    pub fn new(transport: T, cache: ResponseCache, config: ApiConfig) -> Self {
        ConceptNetClient {
            transport,
            cache,
            config,
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn url_for(&self, term: &str) -> String {
        format!(
            "{}/c/{}/{}?limit={}",
            self.config.endpoint.trim_end_matches('/'),
            self.config.language,
            percent_encode(term),
            self.config.limit
        )
    }

    /// Edges touching `term`, served from the cache when present.
    pub fn query(&self, term: &str) -> Result<Vec<ConceptEdge>> {
        let norm = normalize_concept(term);
        if norm.is_empty() {
            return Err(Error::EmptyInput("ConceptNet query term"));
        }
        if let Some(bytes) = self.cache.get(&norm)? {
            return parse_response(&norm, &bytes, &self.config.language);
        }
        if !self.config.network_enabled {
            return Err(Error::Retriable(format!(
                "`{norm}` not cached and network access is disabled"
            )));
        }
        let url = self.url_for(&norm);
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let mut attempt = 0;
        loop {
            let response = self
                .transport
                .get(&url, timeout)
                .map_err(|e| Error::Retriable(format!("GET {url}: {}", e.0)))?;
            match response.status {
                200 => {
                    let edges = parse_response(&norm, &response.body, &self.config.language)?;
                    self.cache.put(&norm, &response.body)?;
                    return Ok(edges);
                }
                429 if attempt < self.config.max_retries => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                429 => {
                    return Err(Error::Retriable(format!(
                        "rate limited on `{norm}` after {} retries",
                        self.config.max_retries
                    )))
                }
                status => {
                    return Err(Error::Retriable(format!("GET {url} returned HTTP {status}")));
                }
            }
        }
    }
}

/// Parses a ConceptNet `/c/<lang>/<term>` JSON response. Edges with an
/// endpoint outside `language` are dropped.
pub fn parse_response(term: &str, body: &[u8], language: &str) -> Result<Vec<ConceptEdge>> {
    let malformed = |msg: String| Error::Response {
        term: term.to_string(),
        msg,
    };
    let doc: Value = serde_json::from_slice(body).map_err(|e| malformed(e.to_string()))?;
    let edges = doc
        .get("edges")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing `edges` array".into()))?;
    let mut out = Vec::with_capacity(edges.len());
    for (i, edge) in edges.iter().enumerate() {
        let id = |key: &str| -> Result<&str> {
            edge.get(key)
                .and_then(|n| n.get("@id"))
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("edge {i}: missing `{key}.@id`")))
        };
        let (start, rel, end) = (id("start")?, id("rel")?, id("end")?);
        let weight = edge
            .get("weight")
            .and_then(Value::as_f64)
            .ok_or_else(|| malformed(format!("edge {i}: missing numeric `weight`")))?;
        let in_language = |uri: &str| concept_language(uri).is_none_or(|l| l == language);
        if !(in_language(start) && in_language(end)) {
            continue;
        }
        out.push(ConceptEdge::new(start, rel, end, weight).map_err(|e| malformed(format!("edge {i}: {e}")))?);
    }
    Ok(out)
}

fn percent_encode(term: &str) -> String {
    let mut out = String::with_capacity(term.len());
    for b in term.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
