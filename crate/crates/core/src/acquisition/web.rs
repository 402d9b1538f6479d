use std::path::PathBuf;
use std::time::Duration;

use chrono::Utc;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::store::{CachedImage, UrlCache};
use super::{dedupe, ImageRecord, ImageSource};
use crate::error::{Error, Result};
use crate::raster;

/// Environment variable holding the image-search API key.
pub const API_KEY_ENV: &str = "MNISTGEN_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebSourceConfig {
    /// Search endpoint; queried with `query`, `per_page` and `page` parameters.
    pub endpoint: String,
    pub per_page: usize,
    pub max_pages: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub cache_dir: PathBuf,
}

impl Default for WebSourceConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.unsplash.com/search/photos".into(),
            per_page: 30,
            max_pages: 20,
            max_retries: 4,
            backoff_base_ms: 500,
            timeout_secs: 30,
            cache_dir: PathBuf::from("cache"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct SearchPage {
    #[serde(default)]
    results: Vec<SearchHit>,
    #[serde(default)]
    total_pages: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SearchHit {
    urls: HitUrls,
}

#[derive(Debug, Deserialize)]
struct HitUrls {
    #[serde(default)]
    small: Option<String>,
    #[serde(default)]
    regular: Option<String>,
}

enum Fetch {
    Body(Vec<u8>),
    /// Retries exhausted on rate limiting; caller returns what it has.
    RateLimited,
}

/// Keyword image search against an Unsplash-compatible API with a URL-keyed disk cache.
pub struct WebFetcher {
    config: WebSourceConfig,
    client: Client,
    cache: UrlCache,
    requests: u64,
}

impl WebFetcher {
    pub fn new(config: WebSourceConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Source(e.to_string()))?;
        let cache = UrlCache::open(&config.cache_dir)?;
        Ok(Self {
            config,
            client,
            cache,
            requests: 0,
        })
    }

    /// Network requests issued so far (cache hits are free).
    pub fn request_count(&self) -> u64 {
        self.requests
    }

    fn get(&mut self, url: &str, api_key: &str) -> Result<Fetch> {
        let mut attempt = 0;
        loop {
            self.requests += 1;
            let resp = self
                .client
                .get(url)
                .header("Authorization", format!("Client-ID {api_key}"))
                .header("Accept-Version", "v1")
                .send()
                .map_err(|e| Error::Source(format!("GET {url}: {e}")))?;
            let status = resp.status();
            if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                return Err(Error::Auth(format!(
                    "{url} answered {status}; check the key in ${API_KEY_ENV}"
                )));
            }
            if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                if attempt >= self.config.max_retries {
                    if status == StatusCode::TOO_MANY_REQUESTS {
                        return Ok(Fetch::RateLimited);
                    }
                    return Err(Error::Source(format!("GET {url}: {status}")));
                }
                let wait = self
                    .config
                    .backoff_base_ms
                    .saturating_mul(1 << attempt.min(16));
                log::warn!("{url}: {status}, retrying in {wait} ms");
                std::thread::sleep(Duration::from_millis(wait));
                attempt += 1;
                continue;
            }
            if !status.is_success() {
                return Err(Error::Source(format!("GET {url}: {status}")));
            }
            let body = resp
                .bytes()
                .map_err(|e| Error::Source(format!("GET {url}: {e}")))?;
            return Ok(Fetch::Body(body.to_vec()));
        }
    }

    fn page_url(&self, keyword: &str, page: usize) -> Result<String> {
        let url = reqwest::Url::parse_with_params(
            &self.config.endpoint,
            &[
                ("query", keyword.to_string()),
                ("per_page", self.config.per_page.to_string()),
                ("page", page.to_string()),
            ],
        )
        .map_err(|e| Error::Config(format!("bad endpoint {}: {e}", self.config.endpoint)))?;
        Ok(url.into())
    }

    /// Fetches up to `k` distinct images for `keyword`.
    pub fn fetch_keyword(
        &mut self,
        keyword: &str,
        k: usize,
        api_key: &str,
    ) -> Result<Vec<ImageRecord>> {
        if k == 0 {
            return Err(Error::Precondition("count must be at least 1".into()));
        }
        if api_key.trim().is_empty() {
            return Err(Error::Auth(format!("no API key; set ${API_KEY_ENV}")));
        }
        let mut records: Vec<ImageRecord> = Vec::new();
        'pages: for page in 1..=self.config.max_pages {
            let url = self.page_url(keyword, page)?;
            let body = match self.cache.page(&url) {
                Some(body) => body,
                None => match self.get(&url, api_key)? {
                    Fetch::Body(bytes) => {
                        let text = String::from_utf8_lossy(&bytes).into_owned();
                        self.cache.put_page(&url, &text)?;
                        text
                    }
                    Fetch::RateLimited => {
                        log::warn!(
                            "rate limited; returning {} partial results for {keyword:?}",
                            records.len()
                        );
                        break 'pages;
                    }
                },
            };
            let parsed: SearchPage = serde_json::from_str(&body)
                .map_err(|e| Error::Source(format!("malformed search response: {e}")))?;
            if parsed.results.is_empty() {
                break;
            }
            for hit in &parsed.results {
                let Some(img_url) = hit.urls.small.clone().or_else(|| hit.urls.regular.clone())
                else {
                    continue;
                };
                let record = match self.cache.image(&img_url) {
                    CachedImage::Hit(row, w, h, px) => {
                        ImageRecord::new(ImageSource::WebApi, keyword, w, h, px, row.fetched_at)?
                    }
                    CachedImage::Undecodable => continue,
                    CachedImage::Miss => {
                        let bytes = match self.get(&img_url, api_key)? {
                            Fetch::Body(b) => b,
                            Fetch::RateLimited => {
                                log::warn!(
                                    "rate limited; returning {} partial results for {keyword:?}",
                                    records.len()
                                );
                                break 'pages;
                            }
                        };
                        let (w, h, px) = match raster::decode_rgb(&bytes) {
                            Ok(v) => v,
                            Err(e) => {
                                log::warn!("skipping undecodable image {img_url}: {e}");
                                self.cache.put_undecodable(&img_url, Utc::now())?;
                                continue;
                            }
                        };
                        let record =
                            ImageRecord::new(ImageSource::WebApi, keyword, w, h, px, Utc::now())?;
                        self.cache.put_image(&img_url, &record)?;
                        record
                    }
                };
                if !records.iter().any(|r| r.id == record.id) {
                    records.push(record);
                }
                if records.len() >= k {
                    break 'pages;
                }
            }
            if parsed.total_pages.is_some_and(|t| page >= t) {
                break;
            }
        }
        Ok(dedupe(records))
    }
}
