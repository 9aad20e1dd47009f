//! Flickr photo-search ingestion.
//!
//! HTTP goes through [`HttpTransport`], so tests drive the client with canned
//! responses and the CLI plugs in a real client.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Deserializer};
use thiserror::Error;
use url::Url;

pub const SEARCH_ENDPOINT: &str = "https://api.flickr.com/services/rest/";
pub const API_KEY_ENV: &str = "FLICKR_API_KEY";
/// Flickr's "Invalid API Key" error code.
pub const INVALID_KEY_CODE: i64 = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: Vec::new(),
        }
    }

    fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Minimal blocking GET interface. `Err` means the request never produced an
/// HTTP response (DNS, TLS, connection reset).
pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, String>;

    /// Backoff delay hook; mocks override this to avoid real waiting.
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

#[derive(Debug, Error)]
pub enum FlickrError {
    #[error("Flickr rejected the API key (code {code}): {message}")]
    Auth { code: i64, message: String },
    #[error("Flickr API error {code}: {message}")]
    Api { code: i64, message: String },
    #[error("search request failed: {0}")]
    Network(String),
    #[error("malformed search response: {0}")]
    Response(String),
    #[error("destination I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("missing Flickr API key; set {API_KEY_ENV} or pass it explicitly")]
    MissingKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchOptions {
    pub per_page: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub workers: usize,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            per_page: 100,
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            workers: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DownloadReport {
    pub fetched: usize,
    pub skipped: usize,
    pub failed: usize,
    /// `(photo id, reason)` for each failed download.
    pub failures: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct Photo {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub secret: String,
    #[serde(deserialize_with = "string_or_number")]
    pub server: String,
}

impl Photo {
    /// Static image URL for the default size.
    pub fn static_url(&self) -> String {
        format!(
            "https://live.staticflickr.com/{}/{}_{}.jpg",
            self.server, self.id, self.secret
        )
    }

    pub fn file_name(&self) -> String {
        format!("{}.jpg", self.id)
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(i64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::N(n) => n.to_string(),
    })
}

#[derive(Deserialize)]
struct SearchEnvelope {
    stat: String,
    #[serde(default)]
    code: Option<i64>,
    #[serde(default)]
    message: Option<String>,
    #[serde(default)]
    photos: Option<PhotoPage>,
}

#[derive(Deserialize)]
struct PhotoPage {
    #[serde(default)]
    pages: serde_json::Value,
    #[serde(default)]
    photo: Vec<Photo>,
}

pub fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty())
}

/// `flickr.photos.search` request URL with form-encoded parameters.
pub fn search_url(api_key: &str, query: &str, per_page: usize, page: usize) -> String {
    Url::parse_with_params(
        SEARCH_ENDPOINT,
        &[
            ("method", "flickr.photos.search"),
            ("api_key", api_key),
            ("text", query),
            ("media", "photos"),
            ("format", "json"),
            ("nojsoncallback", "1"),
            ("per_page", &per_page.to_string()),
            ("page", &page.to_string()),
        ],
    )
    .expect("static endpoint parses")
    .to_string()
}

/// GET with exponential backoff (`base * 2^attempt`) on 429, 5xx and
/// transport failures.
fn get_with_retry(
    transport: &dyn HttpTransport,
    url: &str,
    opts: &FetchOptions,
) -> Result<HttpResponse, String> {
    let mut attempt = 0u32;
    loop {
        let outcome = transport.get(url);
        let retryable = match &outcome {
            Ok(r) => r.status == 429 || r.status >= 500,
            Err(_) => true,
        };
        if !retryable {
            return outcome;
        }
        if attempt >= opts.max_retries {
            let last = match outcome {
                Ok(r) => format!("HTTP {}", r.status),
                Err(e) => e,
            };
            return Err(format!("{last} (gave up after {attempt} retries)"));
        }
        transport.sleep(opts.backoff_base * 2u32.pow(attempt));
        attempt += 1;
    }
}

fn search(
    transport: &dyn HttpTransport,
    api_key: &str,
    query: &str,
    max_count: usize,
    opts: &FetchOptions,
) -> Result<Vec<Photo>, FlickrError> {
    let per_page = opts.per_page.clamp(1, 500);
    let mut photos = Vec::new();
    let mut seen = HashSet::new();
    let mut page = 1;
    while photos.len() < max_count {
        let url = search_url(api_key, query, per_page, page);
        let resp = get_with_retry(transport, &url, opts).map_err(FlickrError::Network)?;
        if !resp.is_success() {
            return Err(FlickrError::Network(format!("search returned HTTP {}", resp.status)));
        }
        let env: SearchEnvelope = serde_json::from_slice(&resp.body)
            .map_err(|e| FlickrError::Response(e.to_string()))?;
        if env.stat != "ok" {
            let code = env.code.unwrap_or(-1);
            let message = env.message.unwrap_or_else(|| "unspecified failure".into());
            return Err(if code == INVALID_KEY_CODE {
                FlickrError::Auth { code, message }
            } else {
                FlickrError::Api { code, message }
            });
        }
        let body = env
            .photos
            .ok_or_else(|| FlickrError::Response("missing `photos` object".into()))?;
        let pages = match &body.pages {
            serde_json::Value::Number(n) => n.as_u64().unwrap_or(0) as usize,
            serde_json::Value::String(s) => s.parse().unwrap_or(0),
            _ => 0,
        };
        if body.photo.is_empty() {
            break;
        }
        for p in body.photo {
            if photos.len() == max_count {
                break;
            }
            if seen.insert(p.id.clone()) {
                photos.push(p);
            }
        }
        if page >= pages {
            break;
        }
        page += 1;
    }
    Ok(photos)
}

enum Outcome {
    Fetched,
    Skipped,
    Failed(String),
}

fn download(
    transport: &dyn HttpTransport,
    photo: &Photo,
    destination: &Path,
    opts: &FetchOptions,
) -> io::Result<Outcome> {
    let target = destination.join(photo.file_name());
    if target.exists() {
        return Ok(Outcome::Skipped);
    }
    let resp = match get_with_retry(transport, &photo.static_url(), opts) {
        Ok(r) if r.is_success() => r,
        Ok(r) => return Ok(Outcome::Failed(format!("HTTP {}", r.status))),
        Err(e) => return Ok(Outcome::Failed(e)),
    };
    let partial = destination.join(format!("{}.part", photo.file_name()));
    fs::write(&partial, &resp.body)?;
    fs::rename(&partial, &target)?;
    Ok(Outcome::Fetched)
}

/// Searches for `query` and downloads up to `max_count` photos into
/// `destination` as `<id>.jpg`. Existing files count as skipped.
pub fn flickr_fetch(
    api_key: &str,
    query: &str,
    max_count: usize,
    destination: impl AsRef<Path>,
    transport: &dyn HttpTransport,
) -> Result<DownloadReport, FlickrError> {
    flickr_fetch_with(api_key, query, max_count, destination, transport, &FetchOptions::default())
}

pub fn flickr_fetch_with(
    api_key: &str,
    query: &str,
    max_count: usize,
    destination: impl AsRef<Path>,
    transport: &dyn HttpTransport,
    opts: &FetchOptions,
) -> Result<DownloadReport, FlickrError> {
    if api_key.trim().is_empty() {
        return Err(FlickrError::MissingKey);
    }
    let destination = destination.as_ref();
    fs::create_dir_all(destination)?;
    if max_count == 0 {
        return Ok(DownloadReport::default());
    }
    let photos = search(transport, api_key, query, max_count, opts)?;

    let next = AtomicUsize::new(0);
    let report = Mutex::new(DownloadReport::default());
    let io_error = Mutex::new(None::<io::Error>);
    std::thread::scope(|s| {
        for _ in 0..opts.workers.clamp(1, 4).min(photos.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(photo) = photos.get(i) else { break };
                if io_error.lock().expect("lock").is_some() {
                    break;
                }
                match download(transport, photo, destination, opts) {
                    Ok(outcome) => {
                        let mut r = report.lock().expect("lock");
                        match outcome {
                            Outcome::Fetched => r.fetched += 1,
                            Outcome::Skipped => r.skipped += 1,
                            Outcome::Failed(why) => {
                                log::warn!("photo {} failed: {why}", photo.id);
                                r.failed += 1;
                                r.failures.push((photo.id.clone(), why));
                            }
                        }
                    }
                    Err(e) => {
                        io_error.lock().expect("lock").get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("lock") {
        return Err(FlickrError::Io(e));
    }
    let mut report = report.into_inner().expect("lock");
    report.failures.sort();
    Ok(report)
}
