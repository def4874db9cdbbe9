//! Joins targeting data with advertiser affiliations and skew tables.

pub mod fit;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adlib::{CriterionKind, Micros, Mode, TargetingDataset};
use crate::demographics::Pair;
use crate::reach::EstimateMatrix;
use crate::skew::{Leaning, SkewScore, SkewTable, SkewThresholds};
use crate::stats;

pub use fit::{fit_scaled_sigmoid, scaled_sigmoid, FitError, FitResult, MIN_FIT_POINTS};

pub const DEFAULT_POLITICAL_CRITERIA: [&str; 3] = ["Politics", "Voting", "Election"];

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("affiliations: {0}")]
    Csv(#[from] csv::Error),
    #[error("no affiliation-labeled advertisers in the dataset")]
    NoLabeledAdvertisers,
    #[error("no spends for {group} {mode}")]
    EmptySelection { group: Group, mode: Mode },
    #[error("need at least 3 interests with coverage in both audiences, got {0}")]
    TooFewInterests(usize),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AffiliationLabel {
    Non,
    #[serde(rename = "GOP")]
    Gop,
    Dems,
    #[serde(rename = "R-PACs")]
    RPacs,
    #[serde(rename = "D-PACs")]
    DPacs,
    Conservative,
    Progressive,
    Independent,
    Other,
}

impl AffiliationLabel {
    pub const ALL: [AffiliationLabel; 9] = [
        AffiliationLabel::Non,
        AffiliationLabel::Gop,
        AffiliationLabel::Dems,
        AffiliationLabel::RPacs,
        AffiliationLabel::DPacs,
        AffiliationLabel::Conservative,
        AffiliationLabel::Progressive,
        AffiliationLabel::Independent,
        AffiliationLabel::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AffiliationLabel::Non => "Non",
            AffiliationLabel::Gop => "GOP",
            AffiliationLabel::Dems => "Dems",
            AffiliationLabel::RPacs => "R-PACs",
            AffiliationLabel::DPacs => "D-PACs",
            AffiliationLabel::Conservative => "Conservative",
            AffiliationLabel::Progressive => "Progressive",
            AffiliationLabel::Independent => "Independent",
            AffiliationLabel::Other => "Other",
        }
    }

    pub fn group(self) -> Group {
        match self {
            AffiliationLabel::Gop | AffiliationLabel::RPacs | AffiliationLabel::Conservative => Group::Conservatives,
            AffiliationLabel::Dems | AffiliationLabel::DPacs | AffiliationLabel::Progressive => Group::Progressives,
            AffiliationLabel::Non | AffiliationLabel::Independent | AffiliationLabel::Other => Group::Other,
        }
    }
}

impl FromStr for AffiliationLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown affiliation label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Conservatives,
    Progressives,
    Other,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Conservatives, Group::Progressives, Group::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Conservatives => "Conservatives",
            Group::Progressives => "Progressives",
            Group::Other => "Other",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffiliationRecord {
    pub advertiser_id: String,
    pub raw_label: AffiliationLabel,
    pub group: Group,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affiliations {
    pub records: Vec<AffiliationRecord>,
    by_id: HashMap<String, Group>,
}

impl Affiliations {
    pub fn new(records: Vec<AffiliationRecord>) -> Self {
        let by_id = records.iter().map(|r| (r.advertiser_id.clone(), r.group)).collect();
        Affiliations { records, by_id }
    }

    pub fn group_of(&self, advertiser_id: &str) -> Option<Group> {
        self.by_id.get(advertiser_id).copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffiliationReport {
    /// (line, reason)
    pub rejected: Vec<(u64, String)>,
}

pub fn load_affiliations(path: &Path) -> Result<(Affiliations, AffiliationReport), AnalyticsError> {
    let file = File::open(path).map_err(|source| AnalyticsError::Io { path: path.to_path_buf(), source })?;
    read_affiliations(file)
}

/// `advertiser_id,raw_label` rows; a header row is optional. A repeated
/// advertiser keeps its first label.
pub fn read_affiliations<R: Read>(source: R) -> Result<(Affiliations, AffiliationReport), AnalyticsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut report = AffiliationReport::default();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(n as u64 + 1);
        if n == 0 && row.get(0).map(str::trim) == Some("advertiser_id") {
            continue;
        }
        if row.len() != 2 {
            report.rejected.push((line, format!("expected 2 fields, found {}", row.len())));
            continue;
        }
        let id = row[0].trim();
        if id.is_empty() {
            report.rejected.push((line, "empty advertiser id".into()));
            continue;
        }
        match row[1].parse::<AffiliationLabel>() {
            Ok(label) if seen.insert(id.to_string()) => records.push(AffiliationRecord {
                advertiser_id: id.to_string(),
                raw_label: label,
                group: label.group(),
            }),
            Ok(_) => report.rejected.push((line, format!("duplicate advertiser `{id}`"))),
            Err(e) => report.rejected.push((line, e)),
        }
    }
    Ok((Affiliations::new(records), report))
}

/// Per-interest join keys: skew rows are matched to criteria by name, then id.
pub struct SkewLookup<'a> {
    by_key: HashMap<&'a str, usize>,
    table: &'a SkewTable,
}

impl<'a> SkewLookup<'a> {
    pub fn new(table: &'a SkewTable) -> Self {
        let mut by_key = HashMap::new();
        for (i, row) in table.rows.iter().enumerate() {
            by_key.entry(row.interest_id.as_str()).or_insert(i);
        }
        for (i, row) in table.rows.iter().enumerate() {
            by_key.insert(row.interest_name.as_str(), i);
        }
        SkewLookup { by_key, table }
    }

    pub fn score(&self, interest: &str, pair: Pair) -> Option<&'a SkewScore> {
        let row = &self.table.rows[*self.by_key.get(interest)?];
        self.table.get(&row.interest_id, pair)
    }

    pub fn leaning(&self, interest: &str, thresholds: &SkewThresholds) -> Leaning {
        match self.score(interest, Pair::RD) {
            Some(s) => crate::skew::classify_tertile(s, thresholds),
            None => Leaning::Unavailable,
        }
    }
}

/// Interest spend per (advertiser, interest, mode), from the dataset.
fn interest_spends(ds: &TargetingDataset) -> Vec<(String, String, Mode, Micros)> {
    ds.criterion_spends()
        .into_iter()
        .filter(|s| s.kind == CriterionKind::Interest)
        .map(|s| (s.advertiser_id, s.name, s.mode, s.spend))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupUsage {
    /// Uses per (mode, leaning); a use is one (advertiser, interest, mode).
    pub counts: BTreeMap<Mode, BTreeMap<Leaning, usize>>,
    /// Uses of interests with no tertile, left out of the fractions.
    pub unavailable: usize,
}

impl GroupUsage {
    pub fn classified(&self) -> usize {
        self.counts.values().flat_map(|m| m.values()).sum()
    }

    pub fn count(&self, mode: Mode, leaning: Leaning) -> usize {
        self.counts.get(&mode).and_then(|m| m.get(&leaning)).copied().unwrap_or(0)
    }

    /// Share of the group's classified uses; sums to 1 over all cells.
    pub fn fraction(&self, mode: Mode, leaning: Leaning) -> f64 {
        let total = self.classified();
        if total == 0 {
            0.0
        } else {
            self.count(mode, leaning) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageShares {
    pub groups: BTreeMap<Group, GroupUsage>,
}

pub fn usage_shares(
    ds: &TargetingDataset,
    affiliations: &Affiliations,
    skews: &SkewLookup<'_>,
    thresholds: &SkewThresholds,
) -> Result<UsageShares, AnalyticsError> {
    let mut out = UsageShares::default();
    let mut any = false;
    for (adv, name, mode, _) in interest_spends(ds) {
        let Some(group) = affiliations.group_of(&adv) else { continue };
        any = true;
        let usage = out.groups.entry(group).or_default();
        match skews.leaning(&name, thresholds) {
            Leaning::Unavailable => usage.unavailable += 1,
            l => *usage.counts.entry(mode).or_default().entry(l).or_default() += 1,
        }
    }
    if !any {
        return Err(AnalyticsError::NoLabeledAdvertisers);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendDistribution {
    pub group: Group,
    pub mode: Mode,
    pub leaning: Option<Leaning>,
    /// Spend per (advertiser, interest), currency units, ascending.
    pub sorted: Vec<f64>,
    pub median: f64,
    pub mean: f64,
}

/// Distribution of per-(advertiser, interest) spends for one group and mode,
/// optionally limited to interests of one leaning.
pub fn spend_distribution(
    ds: &TargetingDataset,
    affiliations: &Affiliations,
    group: Group,
    mode: Mode,
    leaning: Option<(Leaning, &SkewLookup<'_>, &SkewThresholds)>,
) -> Result<SpendDistribution, AnalyticsError> {
    let values = interest_spends(ds).into_iter().filter_map(|(adv, name, m, spend)| {
        let keep = m == mode
            && affiliations.group_of(&adv) == Some(group)
            && leaning.is_none_or(|(l, lookup, t)| lookup.leaning(&name, t) == l);
        keep.then(|| spend.units())
    });
    let sorted = stats::sorted(values);
    let (Some(median), Some(mean)) = (stats::median(&sorted), stats::mean(&sorted)) else {
        return Err(AnalyticsError::EmptySelection { group, mode });
    };
    Ok(SpendDistribution { group, mode, leaning: leaning.map(|l| l.0), sorted, median, mean })
}

/// `(r − d)/(r + d)`; `None` when both are zero.
pub fn spend_skew(spend_r: Micros, spend_d: Micros) -> Option<f64> {
    let (r, d) = (spend_r.0 as i128, spend_d.0 as i128);
    let sum = r + d;
    (sum != 0).then(|| (r - d) as f64 / sum as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendSkewPoint {
    pub interest_id: String,
    pub audience_skew: f64,
    pub spend_skew: f64,
    pub mode: Mode,
    pub spend_r: Micros,
    pub spend_d: Micros,
}

/// One point per interest with a reliable party skew and labeled-advertiser
/// spend in `mode`. Ordered by interest name.
pub fn compute_spend_skew_points(
    ds: &TargetingDataset,
    affiliations: &Affiliations,
    skews: &SkewLookup<'_>,
    mode: Mode,
) -> Vec<SpendSkewPoint> {
    let mut by_interest: BTreeMap<String, (Micros, Micros)> = BTreeMap::new();
    for (adv, name, m, spend) in interest_spends(ds) {
        if m != mode {
            continue;
        }
        let e = by_interest.entry(name).or_default();
        match affiliations.group_of(&adv) {
            Some(Group::Conservatives) => e.0 += spend,
            Some(Group::Progressives) => e.1 += spend,
            _ => {}
        }
    }
    by_interest
        .into_iter()
        .filter_map(|(name, (r, d))| {
            let audience_skew = skews.score(&name, Pair::RD)?.usable()?;
            let spend_skew = spend_skew(r, d)?;
            Some(SpendSkewPoint { interest_id: name, audience_skew, spend_skew, mode, spend_r: r, spend_d: d })
        })
        .collect()
}

pub fn fit_spend_vs_audience_skew(points: &[SpendSkewPoint]) -> Result<FitResult, FitError> {
    let xs: Vec<f64> = points.iter().map(|p| p.audience_skew).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.spend_skew).collect();
    fit_scaled_sigmoid(&xs, &ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub interest_id: String,
    pub coverage_a: f64,
    pub coverage_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCorrelation {
    pub pair: Pair,
    /// `None` when either axis has zero variance.
    pub r: Option<f64>,
    pub points: Vec<CoveragePoint>,
}

pub fn coverage_correlation(matrix: &EstimateMatrix, pair: Pair) -> Result<CoverageCorrelation, AnalyticsError> {
    let (a, b) = pair.selectors();
    let (la, lb) = (a.label(), b.label());
    let points: Vec<CoveragePoint> = matrix
        .interests
        .iter()
        .filter_map(|i| {
            Some(CoveragePoint {
                interest_id: i.clone(),
                coverage_a: matrix.coverage(la, i)?,
                coverage_b: matrix.coverage(lb, i)?,
            })
        })
        .collect();
    if points.len() < 3 {
        return Err(AnalyticsError::TooFewInterests(points.len()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.coverage_a).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.coverage_b).collect();
    Ok(CoverageCorrelation { pair, r: stats::pearson(&xs, &ys), points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSpendRow {
    pub interest: String,
    pub exclusion_spend: Micros,
    pub inclusion_spend: Micros,
    pub political: bool,
    /// Reliable skews in RD, WB, WH, BH order.
    pub skews: [Option<f64>; 4],
    pub leaning: Leaning,
}

impl TopSpendRow {
    pub fn total(&self) -> Micros {
        self.exclusion_spend + self.inclusion_spend
    }

    pub fn rendered(&self) -> [String; 8] {
        let s = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        [
            self.interest.clone(),
            self.exclusion_spend.render_millions(),
            self.inclusion_spend.render_millions(),
            if self.political { "x" } else { "" }.to_string(),
            s(self.skews[0]),
            s(self.skews[1]),
            s(self.skews[2]),
            s(self.skews[3]),
        ]
    }
}

pub const TOP_SPEND_HEADER: [&str; 8] =
    ["interest", "exclusion_spend", "inclusion_spend", "political", "S_RD", "S_WB", "S_WH", "S_BH"];

/// Interests ranked by inclusion plus exclusion spend over all advertisers,
/// ties broken by name.
pub fn top_spend_table(
    ds: &TargetingDataset,
    skews: &SkewLookup<'_>,
    n: usize,
    thresholds: &SkewThresholds,
    political_names: &[String],
) -> Vec<TopSpendRow> {
    let mut spend: BTreeMap<String, (Micros, Micros)> = BTreeMap::new();
    for (_, name, mode, s) in interest_spends(ds) {
        let e = spend.entry(name).or_default();
        match mode {
            Mode::Exclude => e.0 += s,
            Mode::Include => e.1 += s,
        }
    }
    let mut rows: Vec<TopSpendRow> = spend
        .into_iter()
        .map(|(name, (exc, inc))| {
            let usable = |p: Pair| skews.score(&name, p).and_then(SkewScore::usable);
            TopSpendRow {
                political: political_names.iter().any(|p| p.eq_ignore_ascii_case(&name)),
                skews: [usable(Pair::RD), usable(Pair::WB), usable(Pair::WH), usable(Pair::BH)],
                leaning: skews.leaning(&name, thresholds),
                interest: name,
                exclusion_spend: exc,
                inclusion_spend: inc,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.interest.cmp(&b.interest)));
    rows.truncate(n.max(1));
    rows
}

pub fn write_top_spend_csv<W: Write>(rows: &[TopSpendRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TOP_SPEND_HEADER)?;
    for r in rows {
        w.write_record(r.rendered())?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with aligned columns.
pub fn render_top_spend_text(rows: &[TopSpendRow]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(TopSpendRow::rendered).collect();
    let mut widths: Vec<usize> = TOP_SPEND_HEADER.iter().map(|h| h.len()).collect();
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |fields: Vec<&str>| {
        let parts: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, w))| if i == 0 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(TOP_SPEND_HEADER.to_vec());
    for r in &cells {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}
