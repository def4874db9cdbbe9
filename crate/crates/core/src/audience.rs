//! Voter-file ingestion and construction of party- or race-uniform audiences.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::{Party, Race, Selector, StateCode};
use crate::synthworld::VOTER_FILE_HEADER;

/// Audiences of a compared pair whose sizes differ by more than this fraction trigger a warning.
pub const SIZE_MISMATCH_WARNING: f64 = 0.10;

#[derive(Debug, Error)]
pub enum AudienceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format mismatch: {rejected} of {total} rows rejected")]
    FormatMismatch { rejected: usize, total: usize },
    #[error("format mismatch: unexpected header {0:?}")]
    BadHeader(Vec<String>),
    #[error("no eligible voters for audience {0}")]
    EmptyPool(Selector),
    #[error("requested audience size must be positive")]
    ZeroSize,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VoterRecord {
    pub voter_id: String,
    pub state: StateCode,
    pub party: Party,
    pub race: Race,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectReport {
    pub total_rows: usize,
    pub rejected: Vec<RejectedRow>,
}

impl RejectReport {
    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// States accepted in the voter file.
    pub allowed_states: BTreeSet<StateCode>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            allowed_states: StateCode::SELF_REPORTED_RACE
                .iter()
                .filter_map(|s| s.parse().ok())
                .collect(),
        }
    }
}

pub fn load_voter_records(
    path: &Path,
    options: &LoadOptions,
) -> Result<(Vec<VoterRecord>, RejectReport), AudienceError> {
    let file = File::open(path).map_err(|source| AudienceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_voter_records(file, options)
}

pub fn read_voter_records<R: Read>(
    source: R,
    options: &LoadOptions,
) -> Result<(Vec<VoterRecord>, RejectReport), AudienceError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != VOTER_FILE_HEADER {
        return Err(AudienceError::BadHeader(header));
    }

    let mut records = Vec::new();
    let mut report = RejectReport::default();
    let mut seen = HashSet::new();
    for row in reader.records() {
        report.total_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.rejected.push(RejectedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, options) {
            Ok(rec) if !seen.insert(rec.voter_id.clone()) => report.rejected.push(RejectedRow {
                line,
                reason: format!("duplicate voter_id `{}`", rec.voter_id),
            }),
            Ok(rec) => records.push(rec),
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    if report.rejected.len() * 2 > report.total_rows {
        return Err(AudienceError::FormatMismatch {
            rejected: report.rejected.len(),
            total: report.total_rows,
        });
    }
    Ok((records, report))
}

fn parse_row(row: &csv::StringRecord, options: &LoadOptions) -> Result<VoterRecord, String> {
    if row.len() != 4 {
        return Err(format!("expected 4 fields, found {}", row.len()));
    }
    let voter_id = row[0].trim();
    if voter_id.is_empty() {
        return Err("empty voter_id".into());
    }
    let state: StateCode = row[1].parse().map_err(|e: crate::demographics::LabelError| e.to_string())?;
    if !options.allowed_states.contains(&state) {
        return Err(format!("state {state} not in allow-list"));
    }
    let party = row[2].parse::<Party>().map_err(|e| e.to_string())?;
    let race = row[3].parse::<Race>().map_err(|e| e.to_string())?;
    Ok(VoterRecord { voter_id: voter_id.to_string(), state, party, race })
}

/// A sampled, label-pure audience ready for upload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudienceSpec {
    pub label: String,
    #[serde(rename = "seed")]
    pub sample_seed: u64,
    pub requested_size: usize,
    /// Sorted, unique.
    pub member_ids: Vec<String>,
}

impl AudienceSpec {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Set when the eligible pool was smaller than the requested size.
    pub fn shortfall(&self) -> bool {
        self.member_ids.len() < self.requested_size
    }

    pub fn contains(&self, voter_id: &str) -> bool {
        self.member_ids.binary_search_by(|m| m.as_str().cmp(voter_id)).is_ok()
    }

    pub fn selector(&self) -> Option<Selector> {
        self.label.parse().ok()
    }

    pub fn to_json(&self) -> Result<String, AudienceError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AudienceError> {
        let mut spec: AudienceSpec = serde_json::from_str(text)?;
        spec.member_ids.sort();
        spec.member_ids.dedup();
        Ok(spec)
    }
}

/// Uniform sample without replacement of the records matching `selector`.
pub fn build_uniform_audience(
    records: &[VoterRecord],
    selector: Selector,
    requested_size: usize,
    seed: u64,
) -> Result<AudienceSpec, AudienceError> {
    if requested_size == 0 {
        return Err(AudienceError::ZeroSize);
    }
    let pool: Vec<&VoterRecord> =
        records.iter().filter(|r| selector.matches(r.party, r.race)).collect();
    if pool.is_empty() {
        return Err(AudienceError::EmptyPool(selector));
    }
    let mut member_ids: Vec<String> = if pool.len() <= requested_size {
        log::warn!(
            "audience {selector}: pool of {} is smaller than requested {requested_size}",
            pool.len()
        );
        pool.iter().map(|r| r.voter_id.clone()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, pool.len(), requested_size)
            .into_iter()
            .map(|i| pool[i].voter_id.clone())
            .collect()
    };
    member_ids.sort();
    member_ids.dedup();
    Ok(AudienceSpec {
        label: selector.label().to_string(),
        sample_seed: seed,
        requested_size,
        member_ids,
    })
}

/// Number of voters present in both audiences.
pub fn verify_disjoint(a: &AudienceSpec, b: &AudienceSpec) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.member_ids.iter().filter(|id| large.contains(id)).count()
}

/// Relative size difference of two audiences, `Some` when it exceeds
/// [`SIZE_MISMATCH_WARNING`]. Logs a warning in that case.
pub fn size_mismatch(a: &AudienceSpec, b: &AudienceSpec) -> Option<f64> {
    let (x, y) = (a.len() as f64, b.len() as f64);
    let larger = x.max(y);
    if larger == 0.0 {
        return None;
    }
    let diff = (x - y).abs() / larger;
    if diff > SIZE_MISMATCH_WARNING {
        log::warn!(
            "audiences {} ({}) and {} ({}) differ in size by {:.1}%",
            a.label,
            a.len(),
            b.label,
            b.len(),
            diff * 100.0
        );
        Some(diff)
    } else {
        None
    }
}
