use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;

/// One retrieved comment, as stored in fixture files and returned by a
/// Pushshift-compatible search endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawComment {
    pub id: String,
    pub body: String,
    #[serde(rename = "created_utc")]
    pub created: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommentSource {
    /// Newline-delimited JSON, one [`RawComment`] per line.
    Fixture(PathBuf),
    /// Base URL of the search API.
    Endpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchOptions {
    /// Length of the trailing search window.
    pub period_years: f64,
    /// End of the window as a unix timestamp.
    pub until: i64,
    pub size_limit: usize,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl FetchOptions {
    pub fn new(until: i64, size_limit: usize) -> Self {
        FetchOptions {
            period_years: 3.33,
            until,
            size_limit,
            max_retries: 3,
            initial_backoff_ms: 500,
        }
    }

    pub fn after(&self) -> i64 {
        self.until - (self.period_years * SECONDS_PER_YEAR).round() as i64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchResult {
    /// Ordered by creation time, earliest first.
    pub comments: Vec<RawComment>,
    /// Fixture lines or response records that failed to parse.
    pub skipped: usize,
}

/// Retrieves up to `size_limit` comments containing `query` and created in
/// the trailing window `[until - period, until]`.
pub fn fetch_comments(query: &str, source: &CommentSource, opts: &FetchOptions) -> Result<FetchResult> {
    let mut result = match source {
        CommentSource::Fixture(path) => read_fixture(path)?,
        CommentSource::Endpoint(base) => fetch_http(base, query, opts)?,
    };
    let needle = query.to_lowercase();
    let after = opts.after();
    result
        .comments
        .retain(|c| c.created >= after && c.created <= opts.until && c.body.to_lowercase().contains(&needle));
    result
        .comments
        .sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.id.cmp(&b.id)));
    result.comments.truncate(opts.size_limit);
    Ok(result)
}

/// Runs [`fetch_comments`] for every query on a bounded pool of worker
/// threads. Results come back in query order.
pub fn fetch_all(
    queries: &[String],
    source: &CommentSource,
    opts: &FetchOptions,
    workers: usize,
) -> Vec<Result<FetchResult>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<FetchResult>>>> = Mutex::new((0..queries.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, queries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let r = fetch_comments(&queries[i], source, opts);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every query processed"))
        .collect()
}

/// Drops repeated comment ids, keeping the first occurrence.
pub fn dedup_comments(comments: Vec<RawComment>) -> Vec<RawComment> {
    let mut seen = HashSet::new();
    comments.into_iter().filter(|c| seen.insert(c.id.clone())).collect()
}

fn read_fixture(path: &PathBuf) -> Result<FetchResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = FetchResult::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawComment>(line) {
            Ok(c) if !c.id.is_empty() => out.comments.push(c),
            Ok(_) | Err(_) => {
                warn!("{}:{}: skipping malformed record", path.display(), lineno + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SearchResponse {
    data: Vec<serde_json::Value>,
}

fn fetch_http(base: &str, query: &str, opts: &FetchOptions) -> Result<FetchResult> {
    let url = format!("{}/reddit/search/comment", base.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into();

    let mut attempt = 0;
    let body = loop {
        let call = agent
            .get(&url)
            .query("q", query)
            .query("size", opts.size_limit.to_string())
            .query("before", opts.until.to_string())
            .query("after", opts.after().to_string())
            .call()
            .and_then(|mut resp| resp.body_mut().read_to_string());
        match call {
            Ok(body) => break body,
            Err(e) if attempt < opts.max_retries => {
                let wait = opts.initial_backoff_ms << attempt;
                warn!("request for `{query}` failed ({e}); retrying in {wait} ms");
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
            }
            Err(e) => return Err(Error::Network(format!("{url}: {e}"))),
        }
    };

    let parsed: SearchResponse = serde_json::from_str(&body).map_err(|e| Error::parse("search response", e))?;
    let mut out = FetchResult::default();
    for item in parsed.data {
        match serde_json::from_value::<RawComment>(item) {
            Ok(c) if !c.id.is_empty() => out.comments.push(c),
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::io::{Read, Write};
    use std::net::TcpListener;

    use super::*;

    const NOW: i64 = 1_600_000_000;

    fn fixture(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn rec(id: &str, body: &str, created: i64) -> String {
        serde_json::json!({"id": id, "body": body, "created_utc": created}).to_string()
    }

    #[test]
    fn substring_filter() {
        let f = fixture(&[
            rec("a", "Jews are greedy, they say", NOW - 30),
            rec("b", "nothing to see", NOW - 20),
            rec("c", "I heard jews are greedy", NOW - 10),
            rec("d", "jews are greedy!!", NOW - 40),
            rec("e", "jews are kind", NOW - 50),
        ]);
        let src = CommentSource::Fixture(f.path().to_path_buf());
        let r = fetch_comments("jews are greedy", &src, &FetchOptions::new(NOW, 100)).unwrap();
        assert_eq!(r.comments.len(), 3);
        let ids: Vec<&str> = r.comments.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["d", "a", "c"]);
    }

    #[test]
    fn size_limit_keeps_earliest() {
        let f = fixture(&[
            rec("x", "q q", NOW - 5),
            rec("y", "q", NOW - 500),
            rec("z", "q", NOW - 50),
        ]);
        let src = CommentSource::Fixture(f.path().to_path_buf());
        let r = fetch_comments("q", &src, &FetchOptions::new(NOW, 1)).unwrap();
        assert_eq!(r.comments.len(), 1);
        assert_eq!(r.comments[0].id, "y");
    }

    #[test]
    fn trailing_period() {
        let year = SECONDS_PER_YEAR as i64;
        let f = fixture(&[
            rec("old", "q", NOW - 4 * year),
            rec("edge", "q", NOW - 3 * year),
            rec("new", "q", NOW - 1),
            rec("future", "q", NOW + 10),
        ]);
        let src = CommentSource::Fixture(f.path().to_path_buf());
        let r = fetch_comments("q", &src, &FetchOptions::new(NOW, 10)).unwrap();
        let ids: Vec<&str> = r.comments.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["edge", "new"]);
    }

    #[test]
    fn malformed_lines_counted() {
        let f = fixture(&[rec("a", "q", NOW), "{not json".into(), rec("", "q", NOW)]);
        let src = CommentSource::Fixture(f.path().to_path_buf());
        let r = fetch_comments("q", &src, &FetchOptions::new(NOW, 10)).unwrap();
        assert_eq!(r.comments.len(), 1);
        assert_eq!(r.skipped, 2);
    }

    #[test]
    fn missing_fixture_errors() {
        let src = CommentSource::Fixture("/nonexistent/fixture.jsonl".into());
        assert!(fetch_comments("q", &src, &FetchOptions::new(NOW, 10)).is_err());
    }

    #[test]
    fn dedup_keeps_first() {
        let c = |id: &str, b: &str| RawComment {
            id: id.into(),
            body: b.into(),
            created: 0,
        };
        let out = dedup_comments(vec![c("1", "a"), c("2", "b"), c("1", "c")]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].body, "a");
    }

    fn serve_once(body: String) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let n = stream.read(&mut buf).unwrap();
            let request = String::from_utf8_lossy(&buf[..n]).to_string();
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(resp.as_bytes()).unwrap();
            request
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn http_endpoint() {
        let body = serde_json::json!({"data": [
            {"id": "a", "body": "muslims are dangerous", "created_utc": NOW - 100, "score": 3},
            {"id": "b", "body": "unrelated", "created_utc": NOW - 100},
            {"body": "no id"}
        ]})
        .to_string();
        let (base, server) = serve_once(body);
        let src = CommentSource::Endpoint(base);
        let r = fetch_comments("muslims are dangerous", &src, &FetchOptions::new(NOW, 25)).unwrap();
        let request = server.join().unwrap();
        assert!(request.starts_with("GET /reddit/search/comment?"), "{request}");
        assert!(request.contains("q=muslims"), "{request}");
        assert!(request.contains("size=25"));
        assert!(request.contains(&format!("before={NOW}")));
        assert_eq!(r.comments.len(), 1);
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn unreachable_endpoint_surfaces_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut opts = FetchOptions::new(NOW, 5);
        opts.max_retries = 1;
        opts.initial_backoff_ms = 1;
        let err = fetch_comments("q", &CommentSource::Endpoint(format!("http://{addr}")), &opts);
        assert!(matches!(err, Err(Error::Network(_))));
    }

    #[test]
    fn pool_preserves_query_order() {
        let f = fixture(&[
            rec("1", "alpha", NOW),
            rec("2", "beta", NOW),
            rec("3", "alpha beta", NOW),
        ]);
        let src = CommentSource::Fixture(f.path().to_path_buf());
        let qs = vec!["alpha".to_string(), "beta".to_string(), "gamma".to_string()];
        let res = fetch_all(&qs, &src, &FetchOptions::new(NOW, 10), 2);
        let counts: Vec<usize> = res.into_iter().map(|r| r.unwrap().comments.len()).collect();
        assert_eq!(counts, [2, 2, 0]);
    }
}
