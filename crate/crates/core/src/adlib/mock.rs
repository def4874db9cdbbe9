//! Local HTTP server that serves canonical payloads for tests and demos and
//! logs when each request arrived.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use tiny_http::{Header, Response, Server};

use super::fetch::RawReport;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MockRoute {
    List(NaiveDate),
    Report(String, NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedFailure {
    pub status: u16,
    pub retry_after_secs: Option<u32>,
}

#[derive(Debug, Default)]
pub struct MockData {
    pub lists: HashMap<NaiveDate, Vec<u8>>,
    pub reports: HashMap<(String, NaiveDate), RawReport>,
    /// Served, in order, before the real answer for a route.
    pub failures: HashMap<MockRoute, VecDeque<ScriptedFailure>>,
}

impl MockData {
    /// Loads everything a replay directory holds.
    pub fn from_replay_dir(dir: &Path) -> std::io::Result<MockData> {
        let mut data = MockData::default();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if let Some(d) = name.strip_prefix("advertisers_").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(d) = d.parse() {
                    data.lists.insert(d, fs::read(&path)?);
                }
                continue;
            }
            let (stem, missing) = match (name.strip_suffix(".json"), name.strip_suffix(".missing")) {
                (Some(s), _) => (s, false),
                (_, Some(s)) => (s, true),
                _ => continue,
            };
            let Some((adv, d)) = stem.rsplit_once('_') else { continue };
            let Ok(d) = d.parse() else { continue };
            let body = if missing { RawReport::MissingData } else { RawReport::Payload(fs::read(&path)?) };
            let key = (adv.to_string(), d);
            // a missing marker wins over a payload, as in the replay fetcher
            if missing || !data.reports.contains_key(&key) {
                data.reports.insert(key, body);
            }
        }
        Ok(data)
    }

    pub fn fail_first(&mut self, route: MockRoute, failure: ScriptedFailure) {
        self.failures.entry(route).or_default().push_back(failure);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestLogEntry {
    pub url: String,
    pub received: Instant,
    pub completed: Instant,
    pub status: u16,
}

pub struct MockServer {
    addr: SocketAddr,
    log: Arc<Mutex<Vec<RequestLogEntry>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(data: MockData) -> std::io::Result<MockServer> {
        let server = Server::http("127.0.0.1:0").map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("mock server bound to a non-ip address"))?;
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (log, stop) = (Arc::clone(&log), Arc::clone(&stop));
            std::thread::spawn(move || serve(server, data, log, stop))
        };
        Ok(MockServer { addr, log, stop, handle: Some(handle) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Span from the first request's arrival to the last answer being ready.
    pub fn wall_time(&self) -> Option<Duration> {
        let log = self.log();
        let first = log.iter().map(|e| e.received).min()?;
        let last = log.iter().map(|e| e.completed).max()?;
        Some(last - first)
    }

    /// Smallest gap between consecutive request arrivals.
    pub fn min_arrival_gap(&self) -> Option<Duration> {
        let mut t: Vec<Instant> = self.log().iter().map(|e| e.received).collect();
        t.sort();
        t.windows(2).map(|w| w[1] - w[0]).min()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(server: Server, mut data: MockData, log: Arc<Mutex<Vec<RequestLogEntry>>>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        let request = match server.recv_timeout(Duration::from_millis(20)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("mock server: {e}");
                continue;
            }
        };
        let received = Instant::now();
        let url = request.url().to_string();
        let (status, body, retry_after) = answer(&mut data, &url);
        let mut response = Response::from_data(body).with_status_code(status);
        if let Some(secs) = retry_after {
            if let Ok(h) = Header::from_bytes("Retry-After", secs.to_string()) {
                response.add_header(h);
            }
        }
        // logged before responding so a client never sees its answer ahead of the log
        log.lock().unwrap_or_else(|e| e.into_inner()).push(RequestLogEntry {
            url: url.clone(),
            received,
            completed: Instant::now(),
            status,
        });
        if let Err(e) = request.respond(response) {
            log::warn!("mock server: responding to {url}: {e}");
        }
    }
}

fn answer(data: &mut MockData, url: &str) -> (u16, Vec<u8>, Option<u32>) {
    let Ok(parsed) = url::Url::parse(&format!("http://mock{url}")) else {
        return (400, b"bad url".to_vec(), None);
    };
    let q: HashMap<String, String> = parsed.query_pairs().into_owned().collect();
    let Some(date) = q.get("date").and_then(|d| d.parse::<NaiveDate>().ok()) else {
        return (400, b"missing date".to_vec(), None);
    };
    let route = match (parsed.path(), q.get("advertiser_id")) {
        ("/advertisers", _) => MockRoute::List(date),
        ("/report", Some(a)) => MockRoute::Report(a.clone(), date),
        _ => return (404, Vec::new(), None),
    };
    if let Some(f) = data.failures.get_mut(&route).and_then(VecDeque::pop_front) {
        return (f.status, Vec::new(), f.retry_after_secs);
    }
    match route {
        MockRoute::List(d) => match data.lists.get(&d) {
            Some(body) => (200, body.clone(), None),
            None => (404, Vec::new(), None),
        },
        MockRoute::Report(a, d) => match data.reports.get(&(a, d)) {
            Some(RawReport::Payload(body)) => (200, body.clone(), None),
            Some(RawReport::MissingData) => (204, Vec::new(), None),
            None => (404, Vec::new(), None),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adlib::fetch::*;

    #[test]
    fn retries_after_429_then_succeeds() {
        let d: NaiveDate = "2022-10-10".parse().unwrap();
        let mut data = MockData::default();
        data.lists.insert(d, br#"["x","y","x"]"#.to_vec());
        data.reports.insert(("x".into(), d), RawReport::MissingData);
        data.fail_first(MockRoute::List(d), ScriptedFailure { status: 429, retry_after_secs: Some(0) });
        let server = MockServer::start(data).unwrap();
        let fetcher = HttpFetcher::new(&server.base_url(), Duration::from_secs(5));
        let lim = RateLimiter::new(Duration::from_millis(5), 1);
        let list = fetch_advertiser_list(&fetcher, d, &lim, &RetryPolicy::default()).unwrap();
        assert_eq!(list.ids, vec!["x", "y"]);
        assert_eq!(list.retries, 1);

        let rec = fetch_targeting_report(&fetcher, "x", d, &lim, &RetryPolicy::default());
        assert_eq!(rec.outcome, FetchOutcome::MissingData);
        let rec = fetch_targeting_report(&fetcher, "nobody", d, &lim, &RetryPolicy::default());
        assert!(matches!(rec.outcome, FetchOutcome::Failed { .. }));
        assert_eq!(rec.retries, 0);
        let statuses: Vec<u16> = server.log().iter().map(|e| e.status).collect();
        assert_eq!(statuses, vec![429, 200, 204, 404]);
    }

    #[test]
    fn exhausted_retries_are_recorded() {
        let d: NaiveDate = "2022-10-10".parse().unwrap();
        let mut data = MockData::default();
        for _ in 0..5 {
            data.fail_first(MockRoute::Report("z".into(), d), ScriptedFailure { status: 503, retry_after_secs: None });
        }
        let server = MockServer::start(data).unwrap();
        let fetcher = HttpFetcher::new(&server.base_url(), Duration::from_secs(5));
        let lim = RateLimiter::new(Duration::ZERO, 1);
        let policy = RetryPolicy { max_retries: 2, base_backoff: Duration::from_millis(1), max_backoff: Duration::from_millis(4) };
        let rec = fetch_targeting_report(&fetcher, "z", d, &lim, &policy);
        assert!(matches!(rec.outcome, FetchOutcome::Failed { .. }));
        assert_eq!(rec.retries, 2);
        assert_eq!(server.log().len(), 3);
    }
}
