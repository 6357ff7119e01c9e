//! Revision history acquisition: live MediaWiki Action API, XML history
//! dumps, and the on-disk revision cache both of them feed.

mod api;
mod cache;
mod dump;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::{ApiClient, ApiConfig, HttpTransport, Transport, TransportError};
pub use cache::{sanitize_title, RevisionCache};
pub use dump::{ingest_dump, ingest_reader};

/// One raw revision of a page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRevision {
    pub page_title: String,
    pub rev_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<u64>,
    pub timestamp: String,
    pub wikitext: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageRef {
    pub title: String,
    #[serde(default = "default_edition")]
    pub language_edition: String,
}

fn default_edition() -> String {
    "en".to_string()
}

impl PageRef {
    /// English-edition page. Dataset-style titles (`Super_Bowl_50`) are
    /// accepted and normalized to spaces.
    pub fn new(title: impl AsRef<str>) -> Result<Self, HarvestError> {
        let title = title.as_ref().replace('_', " ").trim().to_string();
        if title.is_empty() {
            return Err(HarvestError::EmptyTitle);
        }
        Ok(Self {
            title,
            language_edition: default_edition(),
        })
    }
}

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("page title is empty")]
    EmptyTitle,
    #[error("page not found: {0}")]
    PageNotFound(String),
    #[error("network error after {attempts} attempts: {message}")]
    NetworkError { attempts: u32, message: String },
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("malformed dump: {0}")]
    MalformedDump(String),
    #[error("page {title} has {count} cached revisions, need at least 2")]
    InsufficientHistory { title: String, count: usize },
    #[error("unexpected API response: {0}")]
    BadResponse(String),
    #[error("invalid timestamp {0:?}")]
    BadTimestamp(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Orders revisions by rev_id, timestamp breaking ties.
pub fn sort_chronologically(revs: &mut [RawRevision]) {
    revs.sort_by(|a, b| {
        a.rev_id
            .cmp(&b.rev_id)
            .then_with(|| a.timestamp.cmp(&b.timestamp))
    });
}

/// Parses a MediaWiki ISO-8601 timestamp.
pub fn parse_timestamp(ts: &str) -> Result<chrono::DateTime<chrono::Utc>, HarvestError> {
    chrono::DateTime::parse_from_rfc3339(ts)
        .map(|t| t.with_timezone(&chrono::Utc))
        .map_err(|_| HarvestError::BadTimestamp(ts.to_string()))
}

/// True when `rev` was made at or before `cutoff` (always true without one).
pub fn within_cutoff(
    rev: &RawRevision,
    cutoff: Option<&chrono::DateTime<chrono::Utc>>,
) -> Result<bool, HarvestError> {
    match cutoff {
        None => Ok(true),
        Some(c) => Ok(parse_timestamp(&rev.timestamp)? <= *c),
    }
}

/// Options shared by both acquisition paths.
#[derive(Debug, Clone, Default)]
pub struct HarvestOptions {
    /// Revisions newer than this are ignored.
    pub max_timestamp: Option<chrono::DateTime<chrono::Utc>>,
    /// Recorded in the cache index for every page touched.
    pub harvested_at: Option<String>,
    /// Refetch pages already present in the cache.
    pub refresh: bool,
}

/// Fetches the full history of `page`, oldest first.
///
/// Pages already in the cache are served from it without touching the
/// network unless `opts.refresh` is set.
pub fn fetch_history<T: Transport>(
    page: &PageRef,
    cache: &RevisionCache,
    client: &ApiClient<T>,
    opts: &HarvestOptions,
) -> Result<Vec<RawRevision>, HarvestError> {
    if !opts.refresh && cache.contains(&page.title) {
        return cache.load(&page.title);
    }
    let mut revs = client.fetch_all(&page.title)?;
    if let Some(cutoff) = opts.max_timestamp.as_ref() {
        let mut kept = Vec::with_capacity(revs.len());
        for r in revs {
            if within_cutoff(&r, Some(cutoff))? {
                kept.push(r);
            }
        }
        revs = kept;
    }
    cache.store(&page.title, revs, opts.harvested_at.as_deref())?;
    cache.load(&page.title)
}

/// `(previous, current)` revision pairs in chronological order.
pub fn adjacent_pairs(
    page: &PageRef,
    cache: &RevisionCache,
) -> Result<Vec<(RawRevision, RawRevision)>, HarvestError> {
    let revs = cache.load(&page.title)?;
    if revs.len() < 2 {
        return Err(HarvestError::InsufficientHistory {
            title: page.title.clone(),
            count: revs.len(),
        });
    }
    Ok(revs
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect())
}
