use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::{sort_chronologically, HarvestError, RawRevision};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("{0}")]
    Network(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status(code) => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
        }
    }
}

/// Issues one GET request and returns the response body.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<String, TransportError>;
}

/// HTTPS transport with gzip support.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(user_agent: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .user_agent(user_agent)
            .timeout(timeout)
            .build();
        Self { agent }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str, query: &[(String, String)]) -> Result<String, TransportError> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| TransportError::Network(e.to_string())),
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Status(code)),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub endpoint: String,
    pub user_agent: String,
    pub max_retries: u32,
    pub base_backoff: Duration,
    /// Concurrent requests allowed against the endpoint.
    pub max_concurrent: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://en.wikipedia.org/w/api.php".into(),
            user_agent: String::new(),
            max_retries: 4,
            base_backoff: Duration::from_millis(500),
            max_concurrent: 1,
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn run<R>(&self, f: impl FnOnce() -> R) -> R {
        {
            let mut n = self.in_flight.lock().unwrap();
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap();
            }
            *n += 1;
        }
        let out = f();
        *self.in_flight.lock().unwrap() -= 1;
        self.freed.notify_one();
        out
    }
}

/// MediaWiki Action API client for full revision histories.
pub struct ApiClient<T> {
    transport: T,
    config: ApiConfig,
    requests: AtomicUsize,
    gate: Gate,
}

impl<T: Transport> ApiClient<T> {
    pub fn new(transport: T, config: ApiConfig) -> Self {
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: config.max_concurrent.max(1),
        };
        Self {
            transport,
            config,
            requests: AtomicUsize::new(0),
            gate,
        }
    }

    /// Requests issued so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn get_with_retry(&self, query: &[(String, String)]) -> Result<String, HarvestError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::SeqCst);
            let result = self
                .gate
                .run(|| self.transport.get(&self.config.endpoint, query));
            match result {
                Ok(body) => return Ok(body),
                Err(e) if e.retryable() && attempt <= self.config.max_retries => {
                    let delay = self.config.base_backoff * 2u32.saturating_pow(attempt - 1);
                    log::warn!("request failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(e) => {
                    return Err(HarvestError::NetworkError {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            }
        }
    }

    /// Every revision of `title`, oldest first, following `continue`
    /// tokens until exhausted.
    pub fn fetch_all(&self, title: &str) -> Result<Vec<RawRevision>, HarvestError> {
        let base: Vec<(String, String)> = [
            ("action", "query"),
            ("format", "json"),
            ("formatversion", "2"),
            ("prop", "revisions"),
            ("titles", title),
            ("rvslots", "main"),
            ("rvprop", "ids|timestamp|content"),
            ("rvlimit", "max"),
            ("rvdir", "newer"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

        let mut revs = Vec::new();
        let mut cont: Vec<(String, String)> = Vec::new();
        loop {
            let mut query = base.clone();
            query.extend(cont.iter().cloned());
            let body = self.get_with_retry(&query)?;
            let json: Value = serde_json::from_str(&body)
                .map_err(|e| HarvestError::BadResponse(format!("invalid JSON: {e}")))?;
            if let Some(err) = json.get("error") {
                return Err(HarvestError::BadResponse(err.to_string()));
            }
            parse_revisions(&json, title, &mut revs)?;
            match json.get("continue").and_then(Value::as_object) {
                Some(obj) => {
                    cont = obj
                        .iter()
                        .map(|(k, v)| {
                            let v = v
                                .as_str()
                                .map(str::to_string)
                                .unwrap_or_else(|| v.to_string());
                            (k.clone(), v)
                        })
                        .collect();
                }
                None => break,
            }
        }
        sort_chronologically(&mut revs);
        Ok(revs)
    }
}

fn parse_revisions(
    json: &Value,
    title: &str,
    out: &mut Vec<RawRevision>,
) -> Result<(), HarvestError> {
    let pages = json
        .pointer("/query/pages")
        .and_then(Value::as_array)
        .ok_or_else(|| HarvestError::BadResponse("missing query.pages".into()))?;
    let page = pages
        .first()
        .ok_or_else(|| HarvestError::BadResponse("empty query.pages".into()))?;
    if page.get("missing").is_some() || page.get("invalid").is_some() {
        return Err(HarvestError::PageNotFound(title.to_string()));
    }
    let page_title = page
        .get("title")
        .and_then(Value::as_str)
        .unwrap_or(title)
        .to_string();
    let Some(revisions) = page.get("revisions").and_then(Value::as_array) else {
        return Ok(());
    };
    for r in revisions {
        let rev_id = r
            .get("revid")
            .and_then(Value::as_u64)
            .ok_or_else(|| HarvestError::BadResponse("revision without revid".into()))?;
        let parent_id = r
            .get("parentid")
            .and_then(Value::as_u64)
            .filter(|&p| p != 0);
        let timestamp = r
            .get("timestamp")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                HarvestError::BadResponse(format!("revision {rev_id} without timestamp"))
            })?
            .to_string();
        // Suppressed content comes back without a `content` field.
        let wikitext = r
            .pointer("/slots/main/content")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();
        out.push(RawRevision {
            page_title: page_title.clone(),
            rev_id,
            parent_id,
            timestamp,
            wikitext,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    struct Scripted {
        replies: Mutex<VecDeque<Result<String, TransportError>>>,
        seen: Mutex<Vec<Vec<(String, String)>>>,
    }

    impl Transport for Scripted {
        fn get(&self, _url: &str, query: &[(String, String)]) -> Result<String, TransportError> {
            self.seen.lock().unwrap().push(query.to_vec());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .expect("unexpected request")
        }
    }

    fn client(replies: Vec<Result<String, TransportError>>) -> ApiClient<Scripted> {
        let t = Scripted {
            replies: Mutex::new(replies.into()),
            seen: Mutex::new(Vec::new()),
        };
        let cfg = ApiConfig {
            base_backoff: Duration::ZERO,
            max_retries: 2,
            ..ApiConfig::default()
        };
        ApiClient::new(t, cfg)
    }

    #[test]
    fn retries_server_errors_then_gives_up() {
        let c = client(vec![
            Err(TransportError::Status(503)),
            Err(TransportError::Status(503)),
            Err(TransportError::Status(503)),
        ]);
        let err = c.fetch_all("X").unwrap_err();
        assert!(matches!(
            err,
            HarvestError::NetworkError { attempts: 3, .. }
        ));
        assert_eq!(c.request_count(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let c = client(vec![Err(TransportError::Status(404))]);
        assert!(c.fetch_all("X").is_err());
        assert_eq!(c.request_count(), 1);
    }

    #[test]
    fn missing_page() {
        let c = client(vec![Ok(
            r#"{"query":{"pages":[{"title":"X","missing":true}]}}"#.into(),
        )]);
        assert!(matches!(
            c.fetch_all("X"),
            Err(HarvestError::PageNotFound(_))
        ));
    }

    #[test]
    fn follows_continuation() {
        let first = r#"{"continue":{"rvcontinue":"20200102|2","continue":"||"},
            "query":{"pages":[{"title":"X","revisions":[
            {"revid":1,"parentid":0,"timestamp":"2020-01-01T00:00:00Z","slots":{"main":{"content":"a"}}}]}]}}"#;
        let second = r#"{"query":{"pages":[{"title":"X","revisions":[
            {"revid":2,"parentid":1,"timestamp":"2020-01-02T00:00:00Z","slots":{"main":{"content":"b"}}}]}]}}"#;
        let c = client(vec![Ok(first.into()), Ok(second.into())]);
        let revs = c.fetch_all("X").unwrap();
        assert_eq!(revs.len(), 2);
        assert_eq!(revs[0].parent_id, None);
        assert_eq!(revs[1].parent_id, Some(1));
        let seen = c.transport.seen.lock().unwrap();
        assert!(seen[1].contains(&("rvcontinue".to_string(), "20200102|2".to_string())));
    }
}
