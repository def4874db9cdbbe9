//! Page-based skew: average the known audience bias of external domains that
//! are popular among an interest's users.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DomainNormalizer;
use crate::skew::SkewRecord;
use crate::stats;

pub const PAGE_PAIR_LABEL: &str = "PAGE";

#[derive(Debug, Error)]
pub enum PageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("domain bias file: {0}")]
    Csv(#[from] csv::Error),
    #[error("no interest page records")]
    NoRecords,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainBiasTable {
    scores: BTreeMap<String, f64>,
}

impl DomainBiasTable {
    pub fn get(&self, domain: &str) -> Option<f64> {
        self.scores.get(domain).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn insert(&mut self, domain: impl Into<String>, score: f64) -> Option<f64> {
        self.scores.insert(domain.into(), score)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.scores.iter().map(|(d, s)| (d.as_str(), *s))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiasLoadReport {
    /// (line, reason)
    pub rejected: Vec<(u64, String)>,
    /// Domains seen more than once; the last row wins.
    pub duplicates: Vec<String>,
}

pub fn load_domain_bias(path: &Path) -> Result<(DomainBiasTable, BiasLoadReport), PageError> {
    let file = File::open(path).map_err(|source| PageError::Io { path: path.to_path_buf(), source })?;
    read_domain_bias(file, DomainNormalizer::bundled())
}

/// Reads `domain,score` rows. A leading `domain,score` header is optional.
pub fn read_domain_bias<R: Read>(
    source: R,
    normalizer: &DomainNormalizer,
) -> Result<(DomainBiasTable, BiasLoadReport), PageError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut table = DomainBiasTable::default();
    let mut report = BiasLoadReport::default();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(n as u64 + 1);
        if n == 0 && row.get(0).map(|s| s.trim()) == Some("domain") {
            continue;
        }
        if row.len() != 2 {
            report.rejected.push((line, format!("expected 2 fields, found {}", row.len())));
            continue;
        }
        let score: f64 = match row[1].trim().parse() {
            Ok(s) => s,
            Err(e) => {
                report.rejected.push((line, format!("bad score `{}`: {e}", &row[1])));
                continue;
            }
        };
        if !(-1.0..=1.0).contains(&score) {
            report.rejected.push((line, format!("score {score} outside [-1,1]")));
            continue;
        }
        let domain = match normalizer.normalize_domain(&row[0]) {
            Ok(d) => d,
            Err(e) => {
                report.rejected.push((line, e.to_string()));
                continue;
            }
        };
        if table.insert(domain.clone(), score).is_some() {
            log::warn!("domain bias: duplicate `{domain}` at line {line}, keeping the last value");
            report.duplicates.push(domain);
        }
    }
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestPagesRecord {
    pub interest_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Normalized registrable domains, first-mention order, no repeats.
    pub domains: Vec<String>,
}

#[derive(Deserialize)]
struct RawPagesLine {
    interest_id: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    urls: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PagesLoadReport {
    /// (line, url, reason)
    pub dropped_urls: Vec<(usize, String, String)>,
    /// (line, reason) for lines that are not valid records.
    pub rejected_lines: Vec<(usize, String)>,
}

pub fn load_interest_pages(path: &Path) -> Result<(Vec<InterestPagesRecord>, PagesLoadReport), PageError> {
    let file = File::open(path).map_err(|source| PageError::Io { path: path.to_path_buf(), source })?;
    read_interest_pages(BufReader::new(file), DomainNormalizer::bundled())
        .map_err(|source| PageError::Io { path: path.to_path_buf(), source })
}

/// JSON lines, one `{"interest_id": ..., "urls": [...]}` object per interest.
pub fn read_interest_pages<R: BufRead>(
    source: R,
    normalizer: &DomainNormalizer,
) -> Result<(Vec<InterestPagesRecord>, PagesLoadReport), std::io::Error> {
    let mut records = Vec::new();
    let mut report = PagesLoadReport::default();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPagesLine = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.rejected_lines.push((line_no, e.to_string()));
                continue;
            }
        };
        let mut domains = Vec::new();
        let mut seen = HashSet::new();
        for url in raw.urls {
            match normalizer.normalize_url(&url) {
                Ok(d) => {
                    if seen.insert(d.clone()) {
                        domains.push(d);
                    }
                }
                Err(e) => report.dropped_urls.push((line_no, url, e.to_string())),
            }
        }
        records.push(InterestPagesRecord { interest_id: raw.interest_id, name: raw.name, domains });
    }
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPrevalence {
    pub domain: String,
    /// Fraction of interests whose top pages mention the domain.
    pub fraction: f64,
}

/// Domains ordered by how many interests mention them; ties break by domain name.
pub fn rank_domain_prevalence(records: &[InterestPagesRecord]) -> Result<Vec<DomainPrevalence>, PageError> {
    if records.is_empty() {
        return Err(PageError::NoRecords);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        for d in r.domains.iter().collect::<HashSet<_>>() {
            *counts.entry(d.as_str()).or_default() += 1;
        }
    }
    let n = records.len() as f64;
    let mut ranked: Vec<(usize, &str)> = counts.into_iter().map(|(d, c)| (c, d)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked
        .into_iter()
        .map(|(c, d)| DomainPrevalence { domain: d.to_string(), fraction: c as f64 / n })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSkewResult {
    pub interest_id: String,
    pub value: Option<f64>,
    pub matched: usize,
    pub total: usize,
    pub dropped: usize,
}

/// Unweighted mean bias of the record's domains, after removing the
/// `drop_top_k` most prevalent domains of the corpus.
pub fn compute_page_skew(
    record: &InterestPagesRecord,
    table: &DomainBiasTable,
    drop_top_k: usize,
    prevalence: &[DomainPrevalence],
) -> PageSkewResult {
    let top: HashSet<&str> = prevalence.iter().take(drop_top_k).map(|p| p.domain.as_str()).collect();
    let mut dropped = 0;
    let mut scores = Vec::new();
    for d in &record.domains {
        if top.contains(d.as_str()) {
            dropped += 1;
        } else if let Some(s) = table.get(d) {
            scores.push(s);
        }
    }
    // summing in sorted order makes the mean independent of list order
    scores.sort_by(f64::total_cmp);
    let value = match (scores.first(), scores.last()) {
        (Some(&lo), Some(&hi)) => {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            Some(mean.clamp(lo, hi))
        }
        _ => None,
    };
    PageSkewResult {
        interest_id: record.interest_id.clone(),
        value,
        matched: scores.len(),
        total: record.domains.len(),
        dropped,
    }
}

pub fn compute_page_skews(
    records: &[InterestPagesRecord],
    table: &DomainBiasTable,
    drop_top_k: usize,
) -> Result<Vec<PageSkewResult>, PageError> {
    let prevalence = rank_domain_prevalence(records)?;
    Ok(records.iter().map(|r| compute_page_skew(r, table, drop_top_k, &prevalence)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub k: usize,
    /// Fraction of interests with a defined page skew.
    pub coverage: f64,
    /// Pearson r against the voter-based skew; `None` with fewer than 3 joint interests.
    pub r: Option<f64>,
    pub joint: usize,
}

pub fn pruning_tradeoff_curve(
    records: &[InterestPagesRecord],
    table: &DomainBiasTable,
    voter_skews: &HashMap<String, f64>,
    k_range: RangeInclusive<usize>,
) -> Result<Vec<TradeoffPoint>, PageError> {
    let prevalence = rank_domain_prevalence(records)?;
    let mut out = Vec::new();
    for k in k_range {
        let mut defined = 0usize;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for r in records {
            let res = compute_page_skew(r, table, k, &prevalence);
            if let Some(v) = res.value {
                defined += 1;
                if let Some(&voter) = voter_skews.get(&r.interest_id) {
                    xs.push(v);
                    ys.push(voter);
                }
            }
        }
        let r = if xs.len() >= 3 { stats::pearson(&xs, &ys) } else { None };
        out.push(TradeoffPoint {
            k,
            coverage: defined as f64 / records.len() as f64,
            r,
            joint: xs.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCoverage {
    /// Share of all domain mentions whose domain has a bias score.
    pub mention_fraction: f64,
    /// Share of distinct domains that have a bias score.
    pub unique_fraction: f64,
    pub mentions: usize,
    pub unique_domains: usize,
}

pub fn bias_coverage(records: &[InterestPagesRecord], table: &DomainBiasTable) -> BiasCoverage {
    let mut mentions = 0;
    let mut covered = 0;
    let mut unique = HashSet::new();
    for d in records.iter().flat_map(|r| &r.domains) {
        mentions += 1;
        covered += table.get(d).is_some() as usize;
        unique.insert(d.as_str());
    }
    let unique_covered = unique.iter().filter(|d| table.get(d).is_some()).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    BiasCoverage {
        mention_fraction: ratio(covered, mentions),
        unique_fraction: ratio(unique_covered, unique.len()),
        mentions,
        unique_domains: unique.len(),
    }
}

/// Skew-table rows with pair label `PAGE`: `n_a_i` holds matched domains,
/// `n_a` all domains and `n_b_i` the pruned ones.
pub fn page_skew_records(results: &[PageSkewResult], names: &HashMap<String, String>) -> Vec<SkewRecord> {
    results
        .iter()
        .map(|r| SkewRecord {
            interest_id: r.interest_id.clone(),
            interest_name: names.get(&r.interest_id).cloned().unwrap_or_else(|| r.interest_id.clone()),
            pair: PAGE_PAIR_LABEL.to_string(),
            value: r.value,
            reliable: r.value.is_some(),
            n_a_i: Some(r.matched as u64),
            n_a: Some(r.total as u64),
            n_b_i: Some(r.dropped as u64),
            n_b: None,
        })
        .collect()
}
