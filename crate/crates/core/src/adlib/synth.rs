//! Synthetic ad-library corpus with planted congruent targeting, missing
//! reports and reporting delays.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Duration as Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::fetch::{RawReport, ReplayFetcher};
use super::mock::MockData;
use super::model::{CriterionKind, Micros, Mode, TargetingCriterion, TargetingReportSnapshot, WINDOW_DAYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Republican,
    Democratic,
    Neutral,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Republican => 1.0,
            Side::Democratic => -1.0,
            Side::Neutral => 0.0,
        }
    }

    fn labels(self) -> &'static [&'static str] {
        match self {
            Side::Republican => &["GOP", "R-PACs", "Conservative"],
            Side::Democratic => &["Dems", "D-PACs", "Progressive"],
            Side::Neutral => &["Non", "Other", "Independent"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInterest {
    pub name: String,
    /// Party leaning used to plant targeting preferences, in [-1,1].
    pub lean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCorpusConfig {
    pub seed: u64,
    pub first_window_start: NaiveDate,
    pub weeks: u32,
    pub republican_advertisers: usize,
    pub democratic_advertisers: usize,
    pub neutral_advertisers: usize,
    /// Advertisers with no affiliation label.
    pub unlabeled_advertisers: usize,
    pub interests: Vec<CorpusInterest>,
    pub demographics: Vec<String>,
    pub behaviors: Vec<String>,
    pub missing_rate: f64,
    pub min_delay_days: i64,
    pub max_delay_days: i64,
    /// How many daily snapshots observe each window.
    pub observations_per_window: usize,
    /// Strength of the preference for congruent interests.
    pub congruence: f64,
    pub includes_per_window: usize,
    pub excludes_per_window: usize,
    /// Median weekly spend per advertiser, currency units.
    pub median_weekly_spend: f64,
}

impl AdCorpusConfig {
    pub fn new(seed: u64, interests: Vec<CorpusInterest>) -> Self {
        AdCorpusConfig {
            seed,
            first_window_start: NaiveDate::from_ymd_opt(2022, 9, 5).expect("valid date"),
            weeks: 8,
            republican_advertisers: 12,
            democratic_advertisers: 12,
            neutral_advertisers: 6,
            unlabeled_advertisers: 4,
            interests,
            demographics: ["Parents (All)", "Newlyweds", "Veterans", "Away from hometown"].map(String::from).to_vec(),
            behaviors: ["Frequent travelers", "Small business owners"].map(String::from).to_vec(),
            missing_rate: 0.049,
            min_delay_days: 2,
            max_delay_days: 6,
            observations_per_window: 3,
            congruence: 4.0,
            includes_per_window: 8,
            excludes_per_window: 3,
            median_weekly_spend: 150_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAdvertiser {
    pub id: String,
    pub side: Side,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdCorpus {
    pub advertisers: Vec<SyntheticAdvertiser>,
    /// Answer for every planned request; `None` is a missing-data report.
    pub reports: BTreeMap<(String, NaiveDate), Option<TargetingReportSnapshot>>,
}

pub fn generate_ad_corpus(cfg: &AdCorpusConfig) -> AdCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut advertisers = Vec::new();
    let groups = [
        (Side::Republican, cfg.republican_advertisers, true),
        (Side::Democratic, cfg.democratic_advertisers, true),
        (Side::Neutral, cfg.neutral_advertisers, true),
        (Side::Neutral, cfg.unlabeled_advertisers, false),
    ];
    for (side, count, labeled) in groups {
        for i in 0..count {
            let labels = side.labels();
            advertisers.push(SyntheticAdvertiser {
                id: format!("ADV{:05}", advertisers.len() + 1),
                side,
                label: labeled.then(|| labels[i % labels.len()].to_string()),
            });
        }
    }

    let spend_dist = LogNormal::new(cfg.median_weekly_spend.max(1.0).ln(), 0.8).expect("valid lognormal");
    let delay_span = (cfg.max_delay_days - cfg.min_delay_days + 1).max(1) as usize;
    let observations = cfg.observations_per_window.clamp(1, delay_span);
    let mut reports = BTreeMap::new();
    for adv in &advertisers {
        let scale = spend_dist.sample(&mut rng);
        let include_w = preference(cfg, adv.side, 1.0);
        let exclude_w = preference(cfg, adv.side, -1.0);
        for week in 0..cfg.weeks {
            let window_start = cfg.first_window_start + Days::days(WINDOW_DAYS * week as i64);
            let window_end = window_start + Days::days(WINDOW_DAYS - 1);
            let weekly = scale * rng.gen_range(0.5..1.5);
            let mut criteria = Vec::new();
            pick(&mut rng, cfg, &include_w, cfg.includes_per_window, Mode::Include, &mut criteria);
            pick(&mut rng, cfg, &exclude_w, cfg.excludes_per_window, Mode::Exclude, &mut criteria);
            if !cfg.demographics.is_empty() && rng.gen_bool(0.5) {
                let name = cfg.demographics.choose(&mut rng).expect("non-empty").clone();
                criteria.push(criterion(&mut rng, name, CriterionKind::Demographic, Mode::Include));
            }
            if !cfg.behaviors.is_empty() && rng.gen_bool(0.3) {
                let name = cfg.behaviors.choose(&mut rng).expect("non-empty").clone();
                criteria.push(criterion(&mut rng, name, CriterionKind::Behavior, Mode::Include));
            }

            let mut delays: Vec<i64> = (cfg.min_delay_days..=cfg.max_delay_days).collect();
            delays.shuffle(&mut rng);
            delays.truncate(observations);
            delays.sort();
            for (k, delay) in delays.iter().enumerate() {
                // later observations report more of the week's spend
                let share = (k + 1) as f64 / delays.len() as f64;
                let total = Micros::from_units(((weekly * share) * 100.0).round() / 100.0).expect("finite spend");
                let snapshot_date = window_end + Days::days(*delay);
                let snap = TargetingReportSnapshot {
                    advertiser_id: adv.id.clone(),
                    snapshot_date,
                    window_start,
                    window_end,
                    total_spend: total,
                    criteria: criteria.clone(),
                };
                reports.insert((adv.id.clone(), snapshot_date), Some(snap));
            }
        }
    }

    // exact planted count of missing answers
    let mut keys: Vec<(String, NaiveDate)> = reports.keys().cloned().collect();
    keys.shuffle(&mut rng);
    let n_missing = (cfg.missing_rate * keys.len() as f64).round() as usize;
    for k in keys.into_iter().take(n_missing) {
        reports.insert(k, None);
    }
    AdCorpus { advertisers, reports }
}

fn preference(cfg: &AdCorpusConfig, side: Side, direction: f64) -> Vec<f64> {
    cfg.interests.iter().map(|i| (cfg.congruence * direction * side.sign() * i.lean).exp()).collect()
}

fn pick(
    rng: &mut ChaCha8Rng,
    cfg: &AdCorpusConfig,
    weights: &[f64],
    count: usize,
    mode: Mode,
    out: &mut Vec<TargetingCriterion>,
) {
    if weights.is_empty() || count == 0 {
        return;
    }
    let mut w = weights.to_vec();
    for _ in 0..count.min(w.len()) {
        let Ok(dist) = WeightedIndex::new(&w) else { break };
        let i = dist.sample(rng);
        w[i] = 0.0;
        out.push(criterion(rng, cfg.interests[i].name.clone(), CriterionKind::Interest, mode));
    }
}

fn criterion(rng: &mut ChaCha8Rng, name: String, kind: CriterionKind, mode: Mode) -> TargetingCriterion {
    TargetingCriterion {
        name,
        kind,
        mode,
        num_ads: rng.gen_range(1..=20),
        spend_fraction: (rng.gen_range(0.05..=1.0f64) * 1000.0).round() / 1000.0,
    }
}

impl AdCorpus {
    /// Every planned `(advertiser, date)` request, in order.
    pub fn requests(&self) -> Vec<(String, NaiveDate)> {
        self.reports.keys().cloned().collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.reports.keys().map(|k| k.1).collect();
        d.sort();
        d.dedup();
        d
    }

    /// Advertisers with a report or missing marker on `date`.
    pub fn advertisers_on(&self, date: NaiveDate) -> Vec<String> {
        self.reports.keys().filter(|k| k.1 == date).map(|k| k.0.clone()).collect()
    }

    pub fn snapshots(&self) -> Vec<TargetingReportSnapshot> {
        self.reports.values().flatten().cloned().collect()
    }

    fn payload(snap: &TargetingReportSnapshot) -> Vec<u8> {
        // the observation day comes from the request, as with the live source
        let mut v = snap.to_payload();
        if let Some(o) = v.as_object_mut() {
            o.remove("snapshot_date");
        }
        serde_json::to_vec_pretty(&v).expect("json value serializes")
    }

    fn list_payload(&self, date: NaiveDate) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({ "advertisers": self.advertisers_on(date) })).expect("serializes")
    }

    pub fn write_replay_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for date in self.dates() {
            fs::write(ReplayFetcher::list_path(dir, date), self.list_payload(date))?;
        }
        for ((adv, date), snap) in &self.reports {
            match snap {
                Some(s) => fs::write(ReplayFetcher::report_path(dir, adv, *date), Self::payload(s))?,
                None => fs::write(ReplayFetcher::missing_path(dir, adv, *date), "")?,
            }
        }
        Ok(())
    }

    pub fn to_mock_data(&self) -> MockData {
        let mut data = MockData::default();
        for date in self.dates() {
            data.lists.insert(date, self.list_payload(date));
        }
        for (key, snap) in &self.reports {
            let raw = match snap {
                Some(s) => RawReport::Payload(Self::payload(s)),
                None => RawReport::MissingData,
            };
            data.reports.insert(key.clone(), raw);
        }
        data
    }

    /// `advertiser_id,raw_label` rows for labeled advertisers.
    pub fn write_affiliations<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["advertiser_id", "raw_label"])?;
        for a in &self.advertisers {
            if let Some(l) = &a.label {
                w.write_record([a.id.as_str(), l.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
