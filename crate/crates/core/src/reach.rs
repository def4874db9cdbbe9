//! Reach estimation behind the `delivery_estimate` capability.
//!
//! A backend answers "how many weekly-active users does this audience reach,
//! optionally restricted to one interest". The synthetic backend counts
//! directly over a generated [`Population`]; the replay backend serves counts
//! recorded in a fixture file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audience::AudienceSpec;
use crate::synthworld::Population;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error("no fixture for query ({audience}, {})", interest.as_deref().unwrap_or("<total>"))]
    NoFixture { audience: String, interest: Option<String> },
    #[error("backend failure: {message}")]
    Backend { message: String, retryable: bool },
    #[error("audience {0} is empty")]
    EmptyAudience(String),
    #[error("unknown interest `{0}`")]
    UnknownInterest(String),
    #[error("coverage undefined: audience {0} reaches nobody")]
    UndefinedFraction(String),
    #[error("{0}")]
    Io(String),
}

impl ReachError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ReachError::Backend { retryable: true, .. })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReachQuery<'a> {
    pub audience: &'a AudienceSpec,
    pub interest: Option<&'a str>,
}

impl<'a> ReachQuery<'a> {
    pub fn total(audience: &'a AudienceSpec) -> Self {
        ReachQuery { audience, interest: None }
    }

    pub fn with_interest(audience: &'a AudienceSpec, interest: &'a str) -> Self {
        ReachQuery { audience, interest: Some(interest) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachEstimate {
    pub count: u64,
    pub backend_id: String,
    pub rounded: bool,
}

pub trait ReachBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Non-retryable initialization problems surface here, before a batch starts.
    fn check_ready(&self) -> Result<(), ReachError> {
        Ok(())
    }

    fn estimate(&self, query: &ReachQuery<'_>) -> Result<ReachEstimate, ReachError>;
}

pub fn estimate_reach(
    backend: &dyn ReachBackend,
    query: &ReachQuery<'_>,
) -> Result<ReachEstimate, ReachError> {
    if query.audience.is_empty() {
        return Err(ReachError::EmptyAudience(query.audience.label.clone()));
    }
    backend.estimate(query)
}

/// `N_A^i / N_A` with both counts from the same backend.
pub fn coverage_fraction(
    backend: &dyn ReachBackend,
    audience: &AudienceSpec,
    interest: &str,
) -> Result<f64, ReachError> {
    let total = estimate_reach(backend, &ReachQuery::total(audience))?.count;
    if total == 0 {
        return Err(ReachError::UndefinedFraction(audience.label.clone()));
    }
    let with = estimate_reach(backend, &ReachQuery::with_interest(audience, interest))?.count;
    Ok(with as f64 / total as f64)
}

/// How the synthetic backend degrades exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Exact,
    SignificantFigures { figures: u32 },
    /// Multiplicative `1 + sigma * z`, deterministic per (seed, audience, interest).
    Gaussian { sigma: f64, seed: u64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::SignificantFigures { figures: 2 }
    }
}

impl NoiseModel {
    pub fn is_exact(&self) -> bool {
        matches!(self, NoiseModel::Exact)
    }
}

/// Round half-up to `figures` significant decimal digits.
pub fn round_significant(n: u64, figures: u32) -> u64 {
    if n == 0 || figures == 0 {
        return n;
    }
    let digits = n.ilog10() + 1;
    if digits <= figures {
        return n;
    }
    let step = 10u64.pow(digits - figures);
    (n + step / 2) / step * step
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Exact counting over a synthetic population, followed by the configured noise model.
pub struct SyntheticBackend {
    population: Arc<Population>,
    by_voter: HashMap<String, usize>,
    noise: NoiseModel,
    resolved: Mutex<HashMap<(String, u64, usize), Arc<Vec<usize>>>>,
    id: String,
}

impl SyntheticBackend {
    pub fn new(population: Arc<Population>, noise: NoiseModel) -> Self {
        let by_voter = population
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        let id = match noise {
            NoiseModel::Exact => "synthetic/exact".to_string(),
            NoiseModel::SignificantFigures { figures } => format!("synthetic/sigfig{figures}"),
            NoiseModel::Gaussian { sigma, .. } => format!("synthetic/gaussian{sigma}"),
        };
        SyntheticBackend { population, by_voter, noise, resolved: Mutex::new(HashMap::new()), id }
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    /// Active population members belonging to the audience.
    fn active_members(&self, audience: &AudienceSpec) -> Arc<Vec<usize>> {
        let key = (audience.label.clone(), audience.sample_seed, audience.len());
        if let Some(hit) = self.resolved.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return hit.clone();
        }
        let members: Vec<usize> = audience
            .member_ids
            .iter()
            .filter_map(|id| self.by_voter.get(id).copied())
            .filter(|&i| self.population.members[i].active)
            .collect();
        let members = Arc::new(members);
        self.resolved
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, members.clone());
        members
    }

    pub fn exact_count(&self, query: &ReachQuery<'_>) -> Result<u64, ReachError> {
        let members = self.active_members(query.audience);
        match query.interest {
            None => Ok(members.len() as u64),
            Some(interest) => {
                let idx = self
                    .population
                    .interest_index(interest)
                    .ok_or_else(|| ReachError::UnknownInterest(interest.to_string()))?;
                Ok(members
                    .iter()
                    .filter(|&&i| self.population.members[i].has_interest(idx))
                    .count() as u64)
            }
        }
    }

    fn apply_noise(&self, exact: u64, audience: &str, interest: Option<&str>) -> u64 {
        match self.noise {
            NoiseModel::Exact => exact,
            NoiseModel::SignificantFigures { figures } => round_significant(exact, figures),
            NoiseModel::Gaussian { sigma, seed } => {
                let key = fnv1a(&[
                    &seed.to_le_bytes(),
                    audience.as_bytes(),
                    interest.unwrap_or("").as_bytes(),
                ]);
                let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(key));
                (exact as f64 * (1.0 + sigma * z)).round().max(0.0) as u64
            }
        }
    }
}

impl ReachBackend for SyntheticBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn estimate(&self, query: &ReachQuery<'_>) -> Result<ReachEstimate, ReachError> {
        let label = query.audience.label.as_str();
        let exact = self.exact_count(query)?;
        let mut count = self.apply_noise(exact, label, query.interest);
        if query.interest.is_some() && matches!(self.noise, NoiseModel::Gaussian { .. }) {
            // keep conjunction monotone under noise
            let total = self.exact_count(&ReachQuery::total(query.audience))?;
            count = count.min(self.apply_noise(total, label, None));
        }
        Ok(ReachEstimate { count, backend_id: self.id.clone(), rounded: !self.noise.is_exact() })
    }
}

pub const REPLAY_HEADER: [&str; 3] = ["audience_label", "interest_id", "count"];
pub const CHECKPOINT_HEADER: [&str; 4] = ["audience_label", "interest_id", "count", "status"];

type CellKey = (String, Option<String>);

/// Serves recorded estimates. Immutable after load.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    counts: HashMap<CellKey, u64>,
    id: String,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, ReachError> {
        let file = File::open(path).map_err(|e| ReachError::Io(format!("{}: {e}", path.display())))?;
        let mut backend = Self::from_reader(file)?;
        backend.id = format!("replay:{}", path.display());
        Ok(backend)
    }

    pub fn from_reader<R: Read>(source: R) -> Result<Self, ReachError> {
        let mut reader = csv::Reader::from_reader(source);
        let mut counts = HashMap::new();
        for (n, row) in reader.records().enumerate() {
            let row = row.map_err(|e| ReachError::Io(e.to_string()))?;
            if row.len() < 3 {
                return Err(ReachError::Io(format!("replay row {}: expected 3 fields", n + 2)));
            }
            let count: u64 = row[2]
                .trim()
                .parse()
                .map_err(|e| ReachError::Io(format!("replay row {}: bad count: {e}", n + 2)))?;
            let interest = Some(row[1].trim()).filter(|s| !s.is_empty()).map(str::to_string);
            counts.insert((row[0].trim().to_string(), interest), count);
        }
        Ok(ReplayBackend { counts, id: "replay".into() })
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (String, Option<String>, u64)>) -> Self {
        ReplayBackend {
            counts: counts.into_iter().map(|(a, i, c)| ((a, i), c)).collect(),
            id: "replay".into(),
        }
    }
}

impl ReachBackend for ReplayBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn estimate(&self, query: &ReachQuery<'_>) -> Result<ReachEstimate, ReachError> {
        let key = (query.audience.label.clone(), query.interest.map(str::to_string));
        match self.counts.get(&key) {
            Some(&count) => Ok(ReachEstimate { count, backend_id: self.id.clone(), rounded: false }),
            None => Err(ReachError::NoFixture { audience: key.0, interest: key.1 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellValue {
    Count(u64),
    Failed(String),
}

impl CellValue {
    pub fn count(&self) -> Option<u64> {
        match self {
            CellValue::Count(c) => Some(*c),
            CellValue::Failed(_) => None,
        }
    }
}

/// Audience totals and audience x interest estimates. Failed cells carry their error.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EstimateMatrix {
    pub audiences: Vec<String>,
    pub interests: Vec<String>,
    cells: BTreeMap<CellKey, CellValue>,
}

impl EstimateMatrix {
    pub fn new(audiences: Vec<String>, interests: Vec<String>) -> Self {
        EstimateMatrix { audiences, interests, cells: BTreeMap::new() }
    }

    pub fn insert(&mut self, audience: &str, interest: Option<&str>, value: CellValue) {
        self.cells.insert((audience.to_string(), interest.map(str::to_string)), value);
    }

    pub fn total(&self, audience: &str) -> Option<&CellValue> {
        self.cells.get(&(audience.to_string(), None))
    }

    pub fn cell(&self, audience: &str, interest: &str) -> Option<&CellValue> {
        self.cells.get(&(audience.to_string(), Some(interest.to_string())))
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn error_count(&self) -> usize {
        self.cells.values().filter(|c| matches!(c, CellValue::Failed(_))).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Option<&str>, &CellValue)> {
        self.cells.iter().map(|((a, i), v)| (a.as_str(), i.as_deref(), v))
    }

    /// Coverage `N_A^i / N_A`, `None` when either count is missing or the total is zero.
    pub fn coverage(&self, audience: &str, interest: &str) -> Option<f64> {
        let total = self.total(audience)?.count()?;
        let with = self.cell(audience, interest)?.count()?;
        (total > 0).then(|| with as f64 / total as f64)
    }

    /// Successful cells in replay-fixture format, totals first within each audience.
    pub fn write_replay<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPLAY_HEADER)?;
        for ((a, i), v) in &self.cells {
            if let CellValue::Count(c) = v {
                w.write_record([a.as_str(), i.as_deref().unwrap_or(""), &c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a matrix from a replay file; the audience and interest lists are inferred.
    pub fn from_replay(backend_rows: &Path) -> Result<Self, ReachError> {
        let text = std::fs::read_to_string(backend_rows)
            .map_err(|e| ReachError::Io(format!("{}: {e}", backend_rows.display())))?;
        let replay = ReplayBackend::from_reader(text.as_bytes())?;
        let mut audiences: Vec<String> =
            replay.counts.keys().map(|(a, _)| a.clone()).collect::<HashSet<_>>().into_iter().collect();
        let mut interests: Vec<String> =
            replay.counts.keys().filter_map(|(_, i)| i.clone()).collect::<HashSet<_>>().into_iter().collect();
        audiences.sort();
        interests.sort();
        let mut m = EstimateMatrix::new(audiences, interests);
        for ((a, i), c) in replay.counts {
            m.cells.insert((a, i), CellValue::Count(c));
        }
        Ok(m)
    }
}

pub struct BatchOptions<'a> {
    /// Append-only record of completed cells; existing `ok` rows are not re-queried.
    pub checkpoint: Option<PathBuf>,
    /// Extra attempts for retryable backend failures.
    pub retries: u32,
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

impl Default for BatchOptions<'_> {
    fn default() -> Self {
        BatchOptions { checkpoint: None, retries: 2, progress: None }
    }
}

fn read_checkpoint(path: &Path) -> Result<HashMap<CellKey, u64>, ReachError> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| ReachError::Io(e.to_string()))?;
    for row in reader.records() {
        // a torn final line from an interrupted run is skipped
        let Ok(row) = row else { continue };
        if row.len() != 4 || row[3].trim() != "ok" {
            continue;
        }
        if let Ok(c) = row[2].trim().parse::<u64>() {
            let interest = Some(row[1].trim()).filter(|s| !s.is_empty()).map(str::to_string);
            done.insert((row[0].trim().to_string(), interest), c);
        }
    }
    Ok(done)
}

/// Estimates every audience total and every audience x interest cell.
///
/// Cells run in parallel; checkpoint appends are serialized. Only a failed
/// [`ReachBackend::check_ready`] aborts the batch, every other failure is
/// recorded in its cell.
pub fn batch_estimate(
    backend: &dyn ReachBackend,
    audiences: &[AudienceSpec],
    interests: &[String],
    options: &BatchOptions<'_>,
) -> Result<EstimateMatrix, ReachError> {
    let mut matrix = EstimateMatrix::new(
        audiences.iter().map(|a| a.label.clone()).collect(),
        interests.to_vec(),
    );
    if interests.is_empty() {
        return Ok(matrix);
    }
    backend.check_ready()?;

    let done = match &options.checkpoint {
        Some(path) => read_checkpoint(path)?,
        None => HashMap::new(),
    };
    let writer = match &options.checkpoint {
        Some(path) => {
            let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ReachError::Io(format!("{}: {e}", path.display())))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
            if fresh {
                w.write_record(CHECKPOINT_HEADER).map_err(|e| ReachError::Io(e.to_string()))?;
                w.flush().map_err(|e| ReachError::Io(e.to_string()))?;
            }
            Some(Mutex::new(w))
        }
        None => None,
    };

    let mut queue: Vec<(usize, Option<usize>)> = Vec::new();
    for (ai, a) in audiences.iter().enumerate() {
        for interest in std::iter::once(None).chain((0..interests.len()).map(Some)) {
            let key = (a.label.clone(), interest.map(|i| interests[i].clone()));
            match done.get(&key) {
                Some(&c) => {
                    matrix.cells.insert(key, CellValue::Count(c));
                }
                None => queue.push((ai, interest)),
            }
        }
    }

    let total = audiences.len() * (interests.len() + 1);
    let finished = AtomicUsize::new(total - queue.len());
    let results: Vec<(CellKey, CellValue)> = queue
        .par_iter()
        .map(|&(ai, ii)| {
            let audience = &audiences[ai];
            let interest = ii.map(|i| interests[i].as_str());
            let query = ReachQuery { audience, interest };
            let mut attempt = 0;
            let value = loop {
                match estimate_reach(backend, &query) {
                    Ok(e) => break CellValue::Count(e.count),
                    Err(e) if e.is_retryable() && attempt < options.retries => attempt += 1,
                    Err(e) => break CellValue::Failed(e.to_string()),
                }
            };
            if let Some(w) = &writer {
                let (count, status) = match &value {
                    CellValue::Count(c) => (c.to_string(), "ok"),
                    CellValue::Failed(_) => (String::new(), "error"),
                };
                let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
                let written = w
                    .write_record([audience.label.as_str(), interest.unwrap_or(""), &count, status])
                    .and_then(|_| w.flush().map_err(csv::Error::from));
                if let Err(e) = written {
                    log::error!("checkpoint append failed: {e}");
                }
            }
            let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
            if let Some(progress) = options.progress {
                progress(n, total);
            }
            ((audience.label.clone(), interest.map(str::to_string)), value)
        })
        .collect();
    matrix.cells.extend(results);
    Ok(matrix)
}
