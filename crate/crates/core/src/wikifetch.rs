//! Fetches encyclopedia summaries and dictionary definitions over HTTP and
//! turns them into a grounding corpus file.
//!
//! Every response that settles a word (found or not found) is appended to
//! an on-disk cache, one JSON-lines file per initial letter of the
//! normalized word. With a warm cache the corpus build makes no network
//! calls at all. Transport and clock are traits so tests can replay
//! recorded responses and check the rate limit without sleeping.

use std::cell::Cell;
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SUMMARY_URL: &str = "https://en.wikipedia.org/api/rest_v1/page/summary/";
pub const DEFAULT_DEFINITION_URL: &str = "https://en.wiktionary.org/api/rest_v1/page/definition/";
pub const DEFAULT_SEARCH_URL: &str = "https://en.wikipedia.org/w/api.php";
pub const DEFAULT_MAX_RPS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FetchConfig {
    /// Page title is appended, percent-encoded.
    pub summary_url: String,
    pub definition_url: String,
    /// MediaWiki action API used when the exact title has no page.
    pub search_url: String,
    pub max_rps: f64,
    pub offline: bool,
    pub user_agent: String,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            summary_url: DEFAULT_SUMMARY_URL.to_owned(),
            definition_url: DEFAULT_DEFINITION_URL.to_owned(),
            search_url: DEFAULT_SEARCH_URL.to_owned(),
            max_rps: DEFAULT_MAX_RPS,
            offline: false,
            user_agent: concat!("kgimpute/", env!("CARGO_PKG_VERSION")).to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    NotFound,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchCacheEntry {
    pub word: String,
    pub fetched_at: u64,
    pub summary_text: String,
    pub definition_text: String,
    pub status: FetchStatus,
    /// Page title the summary came from, when one was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_title: Option<String>,
    /// `exact` or `search`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FetchCacheEntry {
    fn failed(word: &str, fetched_at: u64, message: impl Into<String>) -> Self {
        FetchCacheEntry {
            word: word.to_owned(),
            fetched_at,
            summary_text: String::new(),
            definition_text: String::new(),
            status: FetchStatus::Error,
            resolved_title: None,
            resolution: None,
            error: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchCounts {
    pub ok: usize,
    pub not_found: usize,
    pub error: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport {
    /// Performs a GET. `Err` means no HTTP response was received.
    fn get(&mut self, url: &str) -> std::result::Result<HttpResponse, String>;
}

/// Blocking HTTP client.
pub struct UreqTransport {
    agent: ureq::Agent,
    user_agent: String,
}

impl UreqTransport {
    pub fn new(user_agent: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        UreqTransport {
            agent,
            user_agent: user_agent.into(),
        }
    }
}

impl Transport for UreqTransport {
    fn get(&mut self, url: &str) -> std::result::Result<HttpResponse, String> {
        let response = self
            .agent
            .get(url)
            .header("User-Agent", &self.user_agent)
            .call()
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.into_body().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Replays canned responses keyed by exact URL and records every request.
/// Unknown URLs answer 404.
#[derive(Debug, Default, Clone)]
pub struct FixtureTransport {
    pub responses: HashMap<String, std::result::Result<HttpResponse, String>>,
    pub requests: Vec<String>,
}

impl FixtureTransport {
    pub fn respond(&mut self, url: impl Into<String>, status: u16, body: impl Into<String>) {
        self.responses.insert(
            url.into(),
            Ok(HttpResponse {
                status,
                body: body.into(),
            }),
        );
    }

    pub fn fail(&mut self, url: impl Into<String>, message: impl Into<String>) {
        self.responses.insert(url.into(), Err(message.into()));
    }
}

impl Transport for FixtureTransport {
    fn get(&mut self, url: &str) -> std::result::Result<HttpResponse, String> {
        self.requests.push(url.to_owned());
        self.responses.get(url).cloned().unwrap_or(Ok(HttpResponse {
            status: 404,
            body: String::new(),
        }))
    }
}

pub trait Clock {
    /// Monotonic time since an arbitrary origin.
    fn elapsed(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn unix_seconds(&self) -> u64;
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }

    fn unix_seconds(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Clock that only moves when slept on. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    now: Rc<Cell<Duration>>,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        self.now.set(self.now.get() + d);
    }
}

impl Clock for ManualClock {
    fn elapsed(&self) -> Duration {
        self.now.get()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }

    fn unix_seconds(&self) -> u64 {
        self.now.get().as_secs()
    }
}

/// Enforces a minimum spacing of `1 / max_rps` between requests.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    interval: Duration,
    last: Option<Duration>,
}

impl RateLimiter {
    pub fn new(max_rps: f64) -> Result<Self> {
        if !(max_rps > 0.0 && max_rps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max_rps must be positive, got {max_rps}"
            )));
        }
        Ok(RateLimiter {
            interval: Duration::from_secs_f64(1.0 / max_rps),
            last: None,
        })
    }

    pub fn wait<C: Clock>(&mut self, clock: &C) {
        if let Some(last) = self.last {
            let ready = last + self.interval;
            let now = clock.elapsed();
            if now < ready {
                clock.sleep(ready - now);
            }
        }
        self.last = Some(clock.elapsed());
    }
}

/// Lowercased, trimmed, inner whitespace collapsed to `_`.
pub fn normalize_word(word: &str) -> String {
    word.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase()
}

/// JSON-lines cache split by the first character of the normalized word.
pub struct FetchCache {
    dir: PathBuf,
    shards: HashMap<String, HashMap<String, FetchCacheEntry>>,
}

impl FetchCache {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        FetchCache {
            dir: dir.into(),
            shards: HashMap::new(),
        }
    }

    pub fn shard_name(key: &str) -> String {
        match key.chars().next() {
            Some(c) if c.is_ascii_alphanumeric() => c.to_ascii_lowercase().to_string(),
            _ => "_other".to_owned(),
        }
    }

    fn shard_path(&self, shard: &str) -> PathBuf {
        self.dir.join(format!("{shard}.jsonl"))
    }

    fn shard(&mut self, shard: &str) -> Result<&mut HashMap<String, FetchCacheEntry>> {
        if !self.shards.contains_key(shard) {
            let path = self.shard_path(shard);
            let mut entries = HashMap::new();
            if path.exists() {
                let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                for (idx, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: FetchCacheEntry =
                        serde_json::from_str(&line).map_err(|e| Error::parse(&path, idx + 1, e.to_string()))?;
                    entries.insert(normalize_word(&entry.word), entry);
                }
            }
            self.shards.insert(shard.to_owned(), entries);
        }
        Ok(self.shards.get_mut(shard).expect("shard just loaded"))
    }

    pub fn get(&mut self, word: &str) -> Result<Option<FetchCacheEntry>> {
        let key = normalize_word(word);
        let shard = Self::shard_name(&key);
        Ok(self.shard(&shard)?.get(&key).cloned())
    }

    pub fn put(&mut self, entry: &FetchCacheEntry) -> Result<()> {
        let key = normalize_word(&entry.word);
        let shard = Self::shard_name(&key);
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.shard_path(&shard);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        self.shard(&shard)?.insert(key, entry.clone());
        Ok(())
    }
}

#[derive(Deserialize)]
struct SummaryResponse {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    extract: String,
}

#[derive(Deserialize)]
struct SearchResponse {
    query: SearchQuery,
}

#[derive(Deserialize)]
struct SearchQuery {
    search: Vec<SearchHit>,
}

#[derive(Deserialize)]
struct SearchHit {
    title: String,
}

#[derive(Deserialize)]
struct DefinitionSense {
    #[serde(default)]
    definitions: Vec<DefinitionEntry>,
}

#[derive(Deserialize)]
struct DefinitionEntry {
    #[serde(default)]
    definition: String,
}

/// Drops markup tags, decodes the common entities and flattens tabs and
/// newlines so the text fits in one TSV field.
pub fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if in_tag => {}
            _ => out.push(c),
        }
    }
    let out = out
        .replace("&nbsp;", " ")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&");
    flatten(&out)
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

enum Lookup<T> {
    Found(T),
    Missing,
}

pub struct Fetcher<T: Transport, C: Clock> {
    cfg: FetchConfig,
    transport: T,
    clock: C,
    limiter: RateLimiter,
    cache: FetchCache,
    network_calls: usize,
}

impl Fetcher<UreqTransport, SystemClock> {
    pub fn live(cfg: FetchConfig, cache_dir: impl Into<PathBuf>) -> Result<Self> {
        let transport = UreqTransport::new(cfg.user_agent.clone());
        Fetcher::new(cfg, cache_dir, transport, SystemClock::default())
    }
}

impl<T: Transport, C: Clock> Fetcher<T, C> {
    pub fn new(cfg: FetchConfig, cache_dir: impl Into<PathBuf>, transport: T, clock: C) -> Result<Self> {
        let limiter = RateLimiter::new(cfg.max_rps)?;
        Ok(Fetcher {
            cfg,
            transport,
            clock,
            limiter,
            cache: FetchCache::open(cache_dir),
            network_calls: 0,
        })
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn request(&mut self, url: &str) -> std::result::Result<HttpResponse, String> {
        self.limiter.wait(&self.clock);
        self.network_calls += 1;
        log::debug!("GET {url}");
        self.transport.get(url)
    }

    fn get_json<D: for<'de> Deserialize<'de>>(&mut self, url: &str) -> std::result::Result<Lookup<D>, String> {
        let resp = self.request(url)?;
        match resp.status {
            200 => serde_json::from_str(&resp.body)
                .map(Lookup::Found)
                .map_err(|e| format!("{url}: malformed response: {e}")),
            404 => Ok(Lookup::Missing),
            code => Err(format!("{url}: HTTP {code}")),
        }
    }

    fn summary(&mut self, title: &str) -> std::result::Result<Lookup<SummaryResponse>, String> {
        let url = format!("{}{}", self.cfg.summary_url, encode_title(title));
        self.get_json(&url)
    }

    fn search_top_hit(&mut self, word: &str) -> std::result::Result<Option<String>, String> {
        let url = url::Url::parse_with_params(
            &self.cfg.search_url,
            &[
                ("action", "query"),
                ("list", "search"),
                ("srsearch", word),
                ("srlimit", "1"),
                ("format", "json"),
            ],
        )
        .map_err(|e| format!("bad search url: {e}"))?;
        Ok(match self.get_json::<SearchResponse>(url.as_str())? {
            Lookup::Found(r) => r.query.search.into_iter().next().map(|h| h.title),
            Lookup::Missing => None,
        })
    }

    fn definitions(&mut self, word: &str) -> std::result::Result<String, String> {
        let url = format!("{}{}", self.cfg.definition_url, encode_title(word));
        Ok(match self.get_json::<HashMap<String, Vec<DefinitionSense>>>(&url)? {
            Lookup::Found(mut by_lang) => by_lang
                .remove("en")
                .unwrap_or_default()
                .iter()
                .flat_map(|sense| &sense.definitions)
                .map(|d| strip_markup(&d.definition))
                .filter(|d| !d.is_empty())
                .collect::<Vec<_>>()
                .join(" "),
            Lookup::Missing => String::new(),
        })
    }

    fn fetch_remote(&mut self, word: &str) -> std::result::Result<FetchCacheEntry, String> {
        let title = word.split_whitespace().collect::<Vec<_>>().join("_");
        let (summary, resolved_title, resolution) = match self.summary(&title)? {
            Lookup::Found(s) => (s.extract, s.title.or(Some(title.clone())), Some("exact")),
            Lookup::Missing => match self.search_top_hit(word)? {
                Some(hit) => match self.summary(&hit)? {
                    Lookup::Found(s) => (s.extract, s.title.or(Some(hit)), Some("search")),
                    Lookup::Missing => (String::new(), None, None),
                },
                None => (String::new(), None, None),
            },
        };
        let definition = self.definitions(&title)?;
        let summary = flatten(&summary);
        let status = if summary.is_empty() && definition.is_empty() {
            FetchStatus::NotFound
        } else {
            FetchStatus::Ok
        };
        Ok(FetchCacheEntry {
            word: word.to_owned(),
            fetched_at: self.clock.unix_seconds(),
            summary_text: summary,
            definition_text: definition,
            status,
            resolved_title,
            resolution: resolution.map(str::to_owned),
            error: None,
        })
    }

    /// Returns the cached entry for `word`, fetching it first when online.
    /// Failures come back as `status = Error` entries and are not cached.
    pub fn fetch_word(&mut self, word: &str) -> Result<FetchCacheEntry> {
        if let Some(hit) = self.cache.get(word)? {
            return Ok(hit);
        }
        if self.cfg.offline {
            return Ok(FetchCacheEntry::failed(
                word,
                self.clock.unix_seconds(),
                "offline cache miss",
            ));
        }
        match self.fetch_remote(word) {
            Ok(entry) => {
                self.cache.put(&entry)?;
                Ok(entry)
            }
            Err(message) => {
                log::warn!("fetch {word:?} failed: {message}");
                Ok(FetchCacheEntry::failed(word, self.clock.unix_seconds(), message))
            }
        }
    }

    /// Writes a grounding corpus with one line per `ok` word, in input order.
    pub fn build_corpus(&mut self, words: &[String], out: impl AsRef<Path>) -> Result<FetchCounts> {
        let out = out.as_ref();
        let file = File::create(out).map_err(|e| Error::io(out, e))?;
        let mut writer = BufWriter::new(file);
        let mut counts = FetchCounts::default();
        for word in words {
            let entry = self.fetch_word(word)?;
            match entry.status {
                FetchStatus::Ok => {
                    counts.ok += 1;
                    let key = word.split_whitespace().collect::<Vec<_>>().join("_");
                    writeln!(
                        writer,
                        "{key}\t{}\t{}",
                        flatten(&entry.summary_text),
                        flatten(&entry.definition_text)
                    )
                    .map_err(|e| Error::io(out, e))?;
                }
                FetchStatus::NotFound => counts.not_found += 1,
                FetchStatus::Error => counts.error += 1,
            }
        }
        writer.flush().map_err(|e| Error::io(out, e))?;
        Ok(counts)
    }
}

fn encode_title(title: &str) -> String {
    url::form_urlencoded::byte_serialize(title.as_bytes())
        .collect::<String>()
        .replace('+', "%20")
}

/// Reads a word list, one word per line, skipping blanks.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}
