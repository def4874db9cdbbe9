//! Fetchers for advertiser lists and targeting reports, with a shared rate
//! limiter and retry policy.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{parse_advertiser_list, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("transport: {message}")]
    Transport {
        message: String,
        retryable: bool,
        retry_after: Option<Duration>,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl FetchError {
    pub fn transport(message: impl Into<String>, retryable: bool) -> Self {
        FetchError::Transport { message: message.into(), retryable, retry_after: None }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawReport {
    Payload(Vec<u8>),
    /// The source answered but holds no targeting data for this request.
    MissingData,
}

pub trait Fetcher: Send + Sync {
    fn advertiser_list(&self, date: NaiveDate) -> Result<Vec<u8>, FetchError>;
    fn report(&self, advertiser_id: &str, date: NaiveDate) -> Result<RawReport, FetchError>;
}

/// Directory of `{advertiser_id}_{date}.json` payloads, `{advertiser_id}_{date}.missing`
/// markers and `advertisers_{date}.json` lists.
#[derive(Debug, Clone)]
pub struct ReplayFetcher {
    dir: PathBuf,
}

impl ReplayFetcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayFetcher { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn report_path(dir: &Path, advertiser_id: &str, date: NaiveDate) -> PathBuf {
        dir.join(format!("{advertiser_id}_{date}.json"))
    }

    pub fn missing_path(dir: &Path, advertiser_id: &str, date: NaiveDate) -> PathBuf {
        dir.join(format!("{advertiser_id}_{date}.missing"))
    }

    pub fn list_path(dir: &Path, date: NaiveDate) -> PathBuf {
        dir.join(format!("advertisers_{date}.json"))
    }

    /// Dates for which the directory holds an advertiser list, ascending.
    pub fn list_dates(&self) -> std::io::Result<Vec<NaiveDate>> {
        let mut dates = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(d) = name.strip_prefix("advertisers_").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(d) = d.parse() {
                    dates.push(d);
                }
            }
        }
        dates.sort();
        Ok(dates)
    }

    fn read(path: &Path) -> Result<Vec<u8>, FetchError> {
        fs::read(path).map_err(|e| FetchError::transport(format!("{}: {e}", path.display()), false))
    }
}

impl Fetcher for ReplayFetcher {
    fn advertiser_list(&self, date: NaiveDate) -> Result<Vec<u8>, FetchError> {
        Self::read(&Self::list_path(&self.dir, date))
    }

    fn report(&self, advertiser_id: &str, date: NaiveDate) -> Result<RawReport, FetchError> {
        if Self::missing_path(&self.dir, advertiser_id, date).exists() {
            return Ok(RawReport::MissingData);
        }
        Self::read(&Self::report_path(&self.dir, advertiser_id, date)).map(RawReport::Payload)
    }
}

/// HTTP endpoint speaking the canonical schema:
/// `GET {base}/advertisers?date=D` and `GET {base}/report?advertiser_id=A&date=D`.
/// 204 means no data; 429 and 5xx are retryable.
pub struct HttpFetcher {
    base: String,
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpFetcher { base: base.trim_end_matches('/').to_string(), agent }
    }

    fn get(&self, path: &str, query: &[(&str, &str)]) -> Result<(u16, Vec<u8>), FetchError> {
        let mut req = self.agent.get(&format!("{}{path}", self.base));
        for (k, v) in query {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(resp) => {
                let status = resp.status();
                let mut body = Vec::new();
                std::io::Read::read_to_end(&mut resp.into_reader(), &mut body)
                    .map_err(|e| FetchError::transport(format!("reading body: {e}"), true))?;
                Ok((status, body))
            }
            Err(ureq::Error::Status(code, resp)) => {
                let retry_after = resp
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|s| s.is_finite() && *s >= 0.0)
                    .map(Duration::from_secs_f64);
                let retryable = code == 429 || code >= 500;
                Err(FetchError::Transport { message: format!("http status {code}"), retryable, retry_after })
            }
            Err(ureq::Error::Transport(t)) => Err(FetchError::transport(t.to_string(), true)),
        }
    }
}

impl Fetcher for HttpFetcher {
    fn advertiser_list(&self, date: NaiveDate) -> Result<Vec<u8>, FetchError> {
        let d = date.to_string();
        self.get("/advertisers", &[("date", &d)]).map(|(_, body)| body)
    }

    fn report(&self, advertiser_id: &str, date: NaiveDate) -> Result<RawReport, FetchError> {
        let d = date.to_string();
        match self.get("/report", &[("advertiser_id", advertiser_id), ("date", &d)])? {
            (204, _) => Ok(RawReport::MissingData),
            (_, body) => Ok(RawReport::Payload(body)),
        }
    }
}

/// Spaces request starts by at least `min_interval` and caps concurrent requests.
pub struct RateLimiter {
    min_interval: Duration,
    max_in_flight: usize,
    last_start: Mutex<Option<Instant>>,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
    pub started: Instant,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl RateLimiter {
    pub fn new(min_interval: Duration, max_in_flight: usize) -> Self {
        RateLimiter {
            min_interval,
            max_in_flight: max_in_flight.max(1),
            last_start: Mutex::new(None),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn min_interval(&self) -> Duration {
        self.min_interval
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Blocks until a request may start.
    pub fn acquire(&self) -> Permit<'_> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.max_in_flight {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        // held across the sleep so that waiting callers queue behind it
        let mut last = self.last_start.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let earliest = prev + self.min_interval;
            let now = Instant::now();
            if earliest > now {
                thread::sleep(earliest - now);
            }
        }
        let started = Instant::now();
        *last = Some(started);
        Permit { limiter: self, started }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_backoff: Duration::from_millis(200), max_backoff: Duration::from_secs(10) }
    }
}

impl RetryPolicy {
    /// Wait before retry number `attempt` (0-based); a server hint wins.
    pub fn backoff(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        hint.unwrap_or_else(|| self.base_backoff.saturating_mul(1u32 << attempt.min(16))).min(self.max_backoff)
    }
}

/// Runs `op` under the limiter, retrying retryable failures. Returns the
/// result and the number of retries used.
pub fn with_retries<T>(
    limiter: &RateLimiter,
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, FetchError>,
) -> (Result<T, FetchError>, u32) {
    let mut retries = 0;
    loop {
        let result = {
            let _permit = limiter.acquire();
            op()
        };
        match result {
            Err(FetchError::Transport { retryable: true, retry_after, ref message }) if retries < policy.max_retries => {
                let wait = policy.backoff(retries, retry_after);
                log::info!("retrying after {wait:?}: {message}");
                thread::sleep(wait);
                retries += 1;
            }
            other => return (other, retries),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvertiserList {
    pub date: NaiveDate,
    pub ids: Vec<String>,
    pub retries: u32,
}

pub fn fetch_advertiser_list(
    fetcher: &dyn Fetcher,
    date: NaiveDate,
    limiter: &RateLimiter,
    policy: &RetryPolicy,
) -> Result<AdvertiserList, FetchError> {
    let (raw, retries) = with_retries(limiter, policy, || fetcher.advertiser_list(date));
    let ids = parse_advertiser_list(&raw?)?;
    Ok(AdvertiserList { date, ids, retries })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FetchOutcome {
    Payload {
        #[serde(with = "payload_text")]
        body: Vec<u8>,
    },
    MissingData,
    Failed { reason: String },
}

mod payload_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        String::deserialize(d).map(String::into_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub advertiser_id: String,
    pub date: NaiveDate,
    pub outcome: FetchOutcome,
    pub retries: u32,
    /// Time from the first attempt's start to the final answer.
    #[serde(with = "millis")]
    pub latency: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Fetches one report. Exhausted retries produce a `Failed` record, never an error.
pub fn fetch_targeting_report(
    fetcher: &dyn Fetcher,
    advertiser_id: &str,
    date: NaiveDate,
    limiter: &RateLimiter,
    policy: &RetryPolicy,
) -> FetchRecord {
    let t0 = Instant::now();
    let (result, retries) = with_retries(limiter, policy, || fetcher.report(advertiser_id, date));
    let outcome = match result {
        Ok(RawReport::Payload(body)) => FetchOutcome::Payload { body },
        Ok(RawReport::MissingData) => FetchOutcome::MissingData,
        Err(e) => {
            log::warn!("report {advertiser_id} on {date}: {e}");
            FetchOutcome::Failed { reason: e.to_string() }
        }
    };
    FetchRecord { advertiser_id: advertiser_id.to_string(), date, outcome, retries, latency: t0.elapsed() }
}

/// Fetches every `(advertiser, date)` request with up to the limiter's
/// `max_in_flight` workers. Records come back in request order.
pub fn fetch_reports(
    fetcher: &dyn Fetcher,
    requests: &[(String, NaiveDate)],
    limiter: &RateLimiter,
    policy: &RetryPolicy,
) -> Vec<FetchRecord> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<FetchRecord>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let workers = limiter.max_in_flight().min(requests.len()).max(1);
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, date)) = requests.get(i) else { break };
                let rec = fetch_targeting_report(fetcher, id, *date, limiter, policy);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(rec);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every request fetched"))
        .collect()
}
