//! Folding daily snapshots of weekly reports into one record per
//! (advertiser, window).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fetch::{FetchOutcome, FetchRecord};
use super::model::{parse_targeting_report, CriterionKind, Micros, Mode, ParseError, TargetingCriterion, TargetingReportSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub advertiser_id: String,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    /// Largest total seen for this window; reports accumulate during the week.
    pub total_spend: Micros,
    /// Every date the window was observed on, ascending.
    pub observed: Vec<NaiveDate>,
    /// Criteria from the latest observation.
    pub criteria: Vec<TargetingCriterion>,
}

impl WindowRecord {
    pub fn latest(&self) -> NaiveDate {
        *self.observed.last().expect("window observed at least once")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchSummary {
    pub requests: usize,
    pub payloads: usize,
    pub missing: usize,
    pub failed: usize,
    pub parse_errors: usize,
}

impl FetchSummary {
    /// Share of answered requests that carried no targeting data. Transport
    /// failures are not answers and are left out of the denominator.
    pub fn missing_rate(&self) -> f64 {
        let answered = self.payloads + self.missing;
        if answered == 0 {
            0.0
        } else {
            self.missing as f64 / answered as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetingDataset {
    pub windows: Vec<WindowRecord>,
    pub fetch: FetchSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpend {
    pub advertiser_id: String,
    pub name: String,
    pub kind: CriterionKind,
    pub mode: Mode,
    pub spend: Micros,
    pub num_ads: u64,
    pub windows: usize,
}

impl TargetingDataset {
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn advertisers(&self) -> BTreeSet<&str> {
        self.windows.iter().map(|w| w.advertiser_id.as_str()).collect()
    }

    /// Delay in days from window end to observation, over every observation.
    pub fn delay_histogram(&self) -> BTreeMap<i64, usize> {
        let mut h = BTreeMap::new();
        for w in &self.windows {
            for d in &w.observed {
                *h.entry((*d - w.window_end).num_days()).or_default() += 1;
            }
        }
        h
    }

    /// Spend per (advertiser, criterion, mode): fraction × window total,
    /// summed over windows. Ordered by advertiser, name, kind, mode.
    pub fn criterion_spends(&self) -> Vec<CriterionSpend> {
        let mut acc: BTreeMap<(&str, &str, &CriterionKind, Mode), (Micros, u64, usize)> = BTreeMap::new();
        for w in &self.windows {
            for c in &w.criteria {
                let e = acc.entry((&w.advertiser_id, &c.name, &c.kind, c.mode)).or_default();
                e.0 += w.total_spend.scale(c.spend_fraction);
                e.1 += c.num_ads as u64;
                e.2 += 1;
            }
        }
        acc.into_iter()
            .map(|((adv, name, kind, mode), (spend, num_ads, windows))| CriterionSpend {
                advertiser_id: adv.to_string(),
                name: name.to_string(),
                kind: kind.clone(),
                mode,
                spend,
                num_ads,
                windows,
            })
            .collect()
    }

    /// One snapshot per observation, each carrying the normalized window.
    pub fn export_snapshots(&self) -> Vec<TargetingReportSnapshot> {
        self.windows
            .iter()
            .flat_map(|w| {
                w.observed.iter().map(move |d| TargetingReportSnapshot {
                    advertiser_id: w.advertiser_id.clone(),
                    snapshot_date: *d,
                    window_start: w.window_start,
                    window_end: w.window_end,
                    total_spend: w.total_spend,
                    criteria: w.criteria.clone(),
                })
            })
            .collect()
    }

    pub fn write_criterion_spends<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["advertiser_id", "criterion", "kind", "mode", "spend_micros", "num_ads", "windows"])?;
        for s in self.criterion_spends() {
            w.write_record([
                s.advertiser_id.as_str(),
                &s.name,
                s.kind.as_str(),
                s.mode.as_str(),
                &s.spend.0.to_string(),
                &s.num_ads.to_string(),
                &s.windows.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn normalize_snapshots(snapshots: impl IntoIterator<Item = TargetingReportSnapshot>) -> TargetingDataset {
    let mut groups: BTreeMap<(String, NaiveDate), Vec<TargetingReportSnapshot>> = BTreeMap::new();
    for s in snapshots {
        groups.entry((s.advertiser_id.clone(), s.window_start)).or_default().push(s);
    }
    let windows = groups
        .into_values()
        .map(|mut group| {
            // stable, so equal dates keep arrival order
            group.sort_by_key(|s| s.snapshot_date);
            let mut running = Micros(0);
            for s in &group {
                if s.total_spend < running {
                    log::warn!(
                        "advertiser {} window {}: total fell to {} on {}, keeping {}",
                        s.advertiser_id,
                        s.window_start,
                        s.total_spend.units(),
                        s.snapshot_date,
                        running.units()
                    );
                }
                running = running.max(s.total_spend);
            }
            let observed: Vec<NaiveDate> = group.iter().map(|s| s.snapshot_date).collect::<BTreeSet<_>>().into_iter().collect();
            let latest_date = *observed.last().expect("non-empty group");
            let latest = group.iter().find(|s| s.snapshot_date == latest_date).expect("latest present");
            WindowRecord {
                advertiser_id: latest.advertiser_id.clone(),
                window_start: latest.window_start,
                window_end: latest.window_end,
                total_spend: running,
                observed,
                criteria: latest.criteria.clone(),
            }
        })
        .collect();
    TargetingDataset { windows, fetch: FetchSummary::default() }
}

/// Parses fetched payloads and normalizes them, counting missing and failed
/// requests. Payloads that fail to parse are returned alongside.
pub fn assemble_dataset(records: &[FetchRecord]) -> (TargetingDataset, Vec<(String, NaiveDate, ParseError)>) {
    let parsed: Vec<_> = records
        .par_iter()
        .filter_map(|r| match &r.outcome {
            FetchOutcome::Payload { body } => Some((r, parse_targeting_report(body, Some(r.date)))),
            _ => None,
        })
        .collect();
    let mut errors = Vec::new();
    let mut snapshots = Vec::new();
    for (r, res) in parsed {
        match res {
            Ok(s) => snapshots.push(s),
            Err(e) => {
                log::warn!("report {} on {}: {e}", r.advertiser_id, r.date);
                errors.push((r.advertiser_id.clone(), r.date, e));
            }
        }
    }
    let mut ds = normalize_snapshots(snapshots);
    ds.fetch = FetchSummary {
        requests: records.len(),
        payloads: records.iter().filter(|r| matches!(r.outcome, FetchOutcome::Payload { .. })).count(),
        missing: records.iter().filter(|r| r.outcome == FetchOutcome::MissingData).count(),
        failed: records.iter().filter(|r| matches!(r.outcome, FetchOutcome::Failed { .. })).count(),
        parse_errors: errors.len(),
    };
    (ds, errors)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub advertisers: usize,
    pub windows: usize,
    pub observations: usize,
    /// Distinct criterion names per kind; every known kind is listed.
    pub unique_criteria: BTreeMap<String, usize>,
    pub inclusion_uses: usize,
    pub exclusion_uses: usize,
    pub requests: usize,
    pub missing: usize,
    pub failed: usize,
    pub missing_rate: f64,
    pub delay_histogram: BTreeMap<i64, usize>,
}

pub fn dataset_stats(ds: &TargetingDataset) -> DatasetStats {
    let mut names: BTreeMap<String, BTreeSet<&str>> =
        CriterionKind::KNOWN.iter().map(|k| (k.as_str().to_string(), BTreeSet::new())).collect();
    let (mut inc, mut exc) = (0, 0);
    for w in &ds.windows {
        for c in &w.criteria {
            names.entry(c.kind.as_str().to_string()).or_default().insert(&c.name);
            match c.mode {
                Mode::Include => inc += 1,
                Mode::Exclude => exc += 1,
            }
        }
    }
    DatasetStats {
        advertisers: ds.advertisers().len(),
        windows: ds.windows.len(),
        observations: ds.windows.iter().map(|w| w.observed.len()).sum(),
        unique_criteria: names.into_iter().map(|(k, v)| (k, v.len())).collect(),
        inclusion_uses: inc,
        exclusion_uses: exc,
        requests: ds.fetch.requests,
        missing: ds.fetch.missing,
        failed: ds.fetch.failed,
        missing_rate: ds.fetch.missing_rate(),
        delay_histogram: ds.delay_histogram(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn snap(adv: &str, observed: &str, total: f64, crit: &[(&str, CriterionKind, Mode, f64)]) -> TargetingReportSnapshot {
        TargetingReportSnapshot {
            advertiser_id: adv.into(),
            snapshot_date: d(observed),
            window_start: d("2022-10-01"),
            window_end: d("2022-10-07"),
            total_spend: Micros::from_units(total).unwrap(),
            criteria: crit
                .iter()
                .map(|(n, k, m, f)| TargetingCriterion { name: n.to_string(), kind: k.clone(), mode: *m, num_ads: 1, spend_fraction: *f })
                .collect(),
        }
    }

    #[test]
    fn single_snapshot_spend() {
        let ds = normalize_snapshots([snap("A", "2022-10-09", 100.0, &[("Fishing", CriterionKind::Interest, Mode::Include, 0.5)])]);
        let spends = ds.criterion_spends();
        assert_eq!(spends.len(), 1);
        assert_eq!(spends[0].spend, Micros::from_units(50.0).unwrap());
    }

    #[test]
    fn repeated_window_keeps_max_and_latest() {
        let c = [("Fishing", CriterionKind::Interest, Mode::Include, 1.0)];
        let ds = normalize_snapshots([
            snap("A", "2022-10-11", 20.0, &c),
            snap("A", "2022-10-09", 10.0, &c),
            snap("A", "2022-10-13", 30.0, &c),
        ]);
        assert_eq!(ds.windows.len(), 1);
        assert_eq!(ds.windows[0].total_spend, Micros::from_units(30.0).unwrap());
        assert_eq!(ds.delay_histogram(), BTreeMap::from([(2, 1), (4, 1), (6, 1)]));

        let shrinking = normalize_snapshots([snap("A", "2022-10-09", 30.0, &c), snap("A", "2022-10-11", 5.0, &c)]);
        assert_eq!(shrinking.windows[0].total_spend, Micros::from_units(30.0).unwrap());
    }

    #[test]
    fn renormalizing_export_is_fixed_point() {
        let c1 = [("Fishing", CriterionKind::Interest, Mode::Include, 0.4), ("Age 18-24", CriterionKind::Age, Mode::Exclude, 0.2)];
        let c2 = [("Hunting", CriterionKind::Interest, Mode::Include, 0.9)];
        let ds = normalize_snapshots([
            snap("A", "2022-10-09", 10.0, &c1),
            snap("A", "2022-10-12", 12.0, &c2),
            snap("B", "2022-10-10", 7.0, &c1),
            snap("B", "2022-10-10", 7.0, &c1),
        ]);
        let again = normalize_snapshots(ds.export_snapshots());
        assert_eq!(again, ds);
        assert_eq!(again.criterion_spends(), ds.criterion_spends());
    }

    #[test]
    fn stats_counts() {
        let empty = dataset_stats(&TargetingDataset::default());
        assert_eq!(empty.advertisers, 0);
        assert!(empty.unique_criteria.values().all(|&n| n == 0));
        assert_eq!(empty.missing_rate, 0.0);

        let ds = normalize_snapshots([snap(
            "A",
            "2022-10-09",
            10.0,
            &[("X", CriterionKind::Interest, Mode::Exclude, 0.1), ("Y", CriterionKind::Unknown("job".into()), Mode::Exclude, 0.1)],
        )]);
        let s = dataset_stats(&ds);
        assert_eq!(s.inclusion_uses, 0);
        assert_eq!(s.exclusion_uses, 2);
        assert_eq!(s.unique_criteria["interest"], 1);
        assert_eq!(s.unique_criteria["job"], 1);
    }
}
