//! The audience-skew statistic, skew tables, and tertile classification.
//!
//! For an interest `i` and two disjoint audiences `A` and `B` with estimated
//! reach `N_A`, `N_B` and interest-restricted reach `N_A^i`, `N_B^i`:
//!
//! ```text
//! S = (N_A^i/N_A - N_B^i/N_B) / (N_A^i/N_A + N_B^i/N_B)
//! ```
//!
//! `S` ranges from -1 (only `B` holds the interest) to +1 (only `A`). When
//! neither audience holds the interest the statistic is undefined, which is
//! kept distinct from a balanced 0.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::Pair;
use crate::reach::{CellValue, EstimateMatrix};
use crate::stats;

/// Interest-restricted counts below this make a score unreliable at desk scale.
pub const DEFAULT_MIN_COUNT: u64 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkewError {
    #[error("invalid counts: {0}")]
    Argument(String),
    #[error("estimate matrix has no usable total for audience {0}")]
    MissingTotal(String),
    #[error("need at least 3 defined scores, found {0}")]
    TooFewScores(usize),
    #[error("thresholds must satisfy democratic_below < republican_at_or_above, got {0} and {1}")]
    Thresholds(f64, f64),
    #[error("skew table: {0}")]
    Format(String),
}

/// Evaluates the skew statistic from raw counts. `Ok(None)` means undefined.
///
/// The ratio is cleared of denominators and evaluated as one division of
/// integers, so swapping the audiences negates the result exactly.
pub fn compute_skew(n_a_i: u64, n_a: u64, n_b_i: u64, n_b: u64) -> Result<Option<f64>, SkewError> {
    if n_a == 0 || n_b == 0 {
        return Err(SkewError::Argument(format!("audience totals must be positive ({n_a}, {n_b})")));
    }
    if n_a_i > n_a || n_b_i > n_b {
        return Err(SkewError::Argument(format!(
            "interest counts exceed totals ({n_a_i} > {n_a} or {n_b_i} > {n_b})"
        )));
    }
    let x = n_a_i as i128 * n_b as i128;
    let y = n_b_i as i128 * n_a as i128;
    if x + y == 0 {
        return Ok(None);
    }
    Ok(Some((x - y) as f64 / (x + y) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewScore {
    pub pair: Pair,
    pub value: Option<f64>,
    pub n_a_i: u64,
    pub n_a: u64,
    pub n_b_i: u64,
    pub n_b: u64,
    pub reliable: bool,
    /// Why the value is missing, when it comes from a failed estimate.
    pub note: Option<String>,
}

impl SkewScore {
    pub fn from_counts(
        pair: Pair,
        n_a_i: u64,
        n_a: u64,
        n_b_i: u64,
        n_b: u64,
        min_count: u64,
    ) -> Result<Self, SkewError> {
        let value = compute_skew(n_a_i, n_a, n_b_i, n_b)?;
        Ok(SkewScore {
            pair,
            value,
            n_a_i,
            n_a,
            n_b_i,
            n_b,
            reliable: value.is_some() && n_a_i.min(n_b_i) >= min_count,
            note: None,
        })
    }

    pub fn failed(pair: Pair, note: impl Into<String>) -> Self {
        SkewScore {
            pair,
            value: None,
            n_a_i: 0,
            n_a: 0,
            n_b_i: 0,
            n_b: 0,
            reliable: false,
            note: Some(note.into()),
        }
    }

    /// The value when it is both defined and reliable.
    pub fn usable(&self) -> Option<f64> {
        self.value.filter(|_| self.reliable)
    }

    /// Report cell: two decimals, or "-" for unreliable or undefined scores.
    pub fn render(&self) -> String {
        match self.usable() {
            Some(v) => format!("{v:.2}"),
            None => "-".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewRow {
    pub interest_id: String,
    pub interest_name: String,
    pub score: SkewScore,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkewTable {
    pub rows: Vec<SkewRow>,
}

impl SkewTable {
    pub fn get(&self, interest_id: &str, pair: Pair) -> Option<&SkewScore> {
        self.rows
            .iter()
            .find(|r| r.interest_id == interest_id && r.score.pair == pair)
            .map(|r| &r.score)
    }

    pub fn scores(&self, pair: Pair) -> impl Iterator<Item = &SkewRow> {
        self.rows.iter().filter(move |r| r.score.pair == pair)
    }

    /// Interest id -> score for one pair.
    pub fn by_interest(&self, pair: Pair) -> HashMap<&str, &SkewScore> {
        self.scores(pair).map(|r| (r.interest_id.as_str(), &r.score)).collect()
    }

    pub fn to_records(&self) -> Vec<SkewRecord> {
        self.rows.iter().map(SkewRecord::from).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_skew_records(&self.to_records(), out)
    }

    /// Rebuilds a voter-based table from exported records, skipping other pair labels.
    pub fn from_records(records: &[SkewRecord], min_count: u64) -> Result<Self, SkewError> {
        let mut rows = Vec::new();
        for rec in records {
            let Ok(pair) = rec.pair.parse::<Pair>() else { continue };
            let score = match (rec.n_a_i, rec.n_a, rec.n_b_i, rec.n_b) {
                (Some(a_i), Some(a), Some(b_i), Some(b)) if a > 0 && b > 0 => {
                    SkewScore::from_counts(pair, a_i, a, b_i, b, min_count)?
                }
                _ => SkewScore::failed(pair, "counts unavailable"),
            };
            rows.push(SkewRow {
                interest_id: rec.interest_id.clone(),
                interest_name: rec.interest_name.clone(),
                score,
            });
        }
        Ok(SkewTable { rows })
    }
}

/// One line of the exported skew table. Shared with the page-based method,
/// which writes pair label `PAGE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewRecord {
    pub interest_id: String,
    pub interest_name: String,
    pub pair: String,
    pub value: Option<f64>,
    pub reliable: bool,
    pub n_a_i: Option<u64>,
    pub n_a: Option<u64>,
    pub n_b_i: Option<u64>,
    pub n_b: Option<u64>,
}

impl From<&SkewRow> for SkewRecord {
    fn from(row: &SkewRow) -> Self {
        let s = &row.score;
        let counts = s.note.is_none();
        SkewRecord {
            interest_id: row.interest_id.clone(),
            interest_name: row.interest_name.clone(),
            pair: s.pair.to_string(),
            value: s.value,
            reliable: s.reliable,
            n_a_i: counts.then_some(s.n_a_i),
            n_a: counts.then_some(s.n_a),
            n_b_i: counts.then_some(s.n_b_i),
            n_b: counts.then_some(s.n_b),
        }
    }
}

pub fn write_skew_records<W: Write>(records: &[SkewRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record([
            "interest_id", "interest_name", "pair", "value", "reliable", "n_a_i", "n_a", "n_b_i", "n_b",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_skew_records<R: Read>(source: R) -> Result<Vec<SkewRecord>, SkewError> {
    csv::Reader::from_reader(source)
        .deserialize()
        .collect::<Result<Vec<SkewRecord>, _>>()
        .map_err(|e| SkewError::Format(e.to_string()))
}

/// One score per interest and pair. Failed estimate cells become undefined
/// scores carrying the failure; a missing audience total is fatal.
pub fn skew_table(
    matrix: &EstimateMatrix,
    pairs: &[Pair],
    names: &HashMap<String, String>,
    min_count: u64,
) -> Result<SkewTable, SkewError> {
    let total = |label: &str| -> Result<u64, SkewError> {
        match matrix.total(label) {
            Some(CellValue::Count(c)) if *c > 0 => Ok(*c),
            _ => Err(SkewError::MissingTotal(label.to_string())),
        }
    };
    let mut totals = Vec::with_capacity(pairs.len());
    for &pair in pairs {
        let (a, b) = pair.selectors();
        totals.push((pair, a.label(), total(a.label())?, b.label(), total(b.label())?));
    }

    let mut rows = Vec::with_capacity(matrix.interests.len() * pairs.len());
    for interest in &matrix.interests {
        let name = names.get(interest).cloned().unwrap_or_else(|| interest.clone());
        for &(pair, a, n_a, b, n_b) in &totals {
            let cell = |label: &str| match matrix.cell(label, interest) {
                Some(CellValue::Count(c)) => Ok(*c),
                Some(CellValue::Failed(e)) => Err(format!("{label}: {e}")),
                None => Err(format!("{label}: no estimate")),
            };
            let score = match (cell(a), cell(b)) {
                (Ok(a_i), Ok(b_i)) => SkewScore::from_counts(pair, a_i, n_a, b_i, n_b, min_count)
                    .unwrap_or_else(|e| SkewScore::failed(pair, e.to_string())),
                (Err(e), _) | (_, Err(e)) => SkewScore::failed(pair, e),
            };
            rows.push(SkewRow { interest_id: interest.clone(), interest_name: name.clone(), score });
        }
    }
    Ok(SkewTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Leaning {
    DemocraticSkew,
    Neutral,
    RepublicanSkew,
    Unavailable,
}

impl Leaning {
    pub const DEFINED: [Leaning; 3] = [Leaning::DemocraticSkew, Leaning::Neutral, Leaning::RepublicanSkew];

    pub fn as_str(self) -> &'static str {
        match self {
            Leaning::DemocraticSkew => "democratic",
            Leaning::Neutral => "neutral",
            Leaning::RepublicanSkew => "republican",
            Leaning::Unavailable => "unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewThresholds {
    pub democratic_below: f64,
    pub republican_at_or_above: f64,
}

impl SkewThresholds {
    /// Tertile cut points of the 2022 midterm corpus.
    pub const MIDTERMS_2022: SkewThresholds =
        SkewThresholds { democratic_below: -0.073, republican_at_or_above: 0.063 };

    pub fn new(democratic_below: f64, republican_at_or_above: f64) -> Result<Self, SkewError> {
        if democratic_below < republican_at_or_above {
            Ok(SkewThresholds { democratic_below, republican_at_or_above })
        } else {
            Err(SkewError::Thresholds(democratic_below, republican_at_or_above))
        }
    }

    pub fn classify_value(&self, value: f64) -> Leaning {
        if value < self.democratic_below {
            Leaning::DemocraticSkew
        } else if value >= self.republican_at_or_above {
            Leaning::RepublicanSkew
        } else {
            Leaning::Neutral
        }
    }
}

/// Lower cut is exclusive on the Democratic side, upper cut inclusive on the Republican side.
pub fn classify_tertile(score: &SkewScore, thresholds: &SkewThresholds) -> Leaning {
    match score.usable() {
        Some(v) => thresholds.classify_value(v),
        None => Leaning::Unavailable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedThresholds {
    pub lower: f64,
    pub upper: f64,
    /// Set when the cut points coincide and no Neutral band exists.
    pub degenerate: bool,
}

impl DerivedThresholds {
    pub fn thresholds(&self) -> Result<SkewThresholds, SkewError> {
        SkewThresholds::new(self.lower, self.upper)
    }
}

/// 1/3 and 2/3 quantiles (linear interpolation) of the defined scores.
pub fn derive_tertile_thresholds<'a>(
    scores: impl IntoIterator<Item = &'a SkewScore>,
) -> Result<DerivedThresholds, SkewError> {
    let values = stats::sorted(scores.into_iter().filter_map(|s| s.value));
    if values.len() < 3 {
        return Err(SkewError::TooFewScores(values.len()));
    }
    let lower = stats::quantile_linear(&values, 1.0 / 3.0).unwrap_or(f64::NAN);
    let upper = stats::quantile_linear(&values, 2.0 / 3.0).unwrap_or(f64::NAN);
    Ok(DerivedThresholds { lower, upper, degenerate: !(lower < upper) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of each bin; the last bin also holds +1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub undefined: usize,
}

impl Histogram {
    pub fn empty(bin_width: f64) -> Self {
        let n = ((2.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
        Histogram {
            bin_width,
            edges: (0..n).map(|k| -1.0 + k as f64 * bin_width).collect(),
            counts: vec![0; n],
            undefined: 0,
        }
    }

    pub fn add(&mut self, value: Option<f64>) {
        match value {
            Some(v) if v.is_finite() => {
                let k = ((v.clamp(-1.0, 1.0) + 1.0) / self.bin_width + 1e-9).floor() as usize;
                let k = k.min(self.counts.len() - 1);
                self.counts[k] += 1;
            }
            _ => self.undefined += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Per-pair histograms over [-1, 1]; every pair gets one, undefined scores are tallied apart.
pub fn skew_histogram<'a>(
    scores: impl IntoIterator<Item = &'a SkewScore>,
    bin_width: f64,
) -> Result<BTreeMap<Pair, Histogram>, SkewError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(SkewError::Argument(format!("bin width {bin_width} must be positive")));
    }
    let mut out: BTreeMap<Pair, Histogram> =
        Pair::ALL.iter().map(|&p| (p, Histogram::empty(bin_width))).collect();
    for s in scores {
        if let Some(h) = out.get_mut(&s.pair) {
            h.add(s.value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let v = compute_skew(111_374, 903_884, 43_085, 822_108).unwrap().unwrap();
        assert!((v - 0.40).abs() <= 0.005, "{v}");
    }

    #[test]
    fn symmetry_and_boundaries() {
        assert_eq!(compute_skew(10, 100, 20, 200).unwrap(), Some(0.0));
        assert_eq!(compute_skew(5, 100, 0, 100).unwrap(), Some(1.0));
        assert_eq!(compute_skew(0, 100, 5, 100).unwrap(), Some(-1.0));
        assert_eq!(compute_skew(0, 100, 0, 100).unwrap(), None);
        assert!(compute_skew(1, 0, 1, 1).is_err());
        assert!(compute_skew(11, 10, 1, 1).is_err());
    }

    #[test]
    fn reliability_floor() {
        let s = SkewScore::from_counts(Pair::RD, 40, 1000, 900, 1000, 50).unwrap();
        assert!(!s.reliable);
        assert_eq!(s.render(), "-");
        let s = SkewScore::from_counts(Pair::RD, 400, 1000, 200, 1000, 50).unwrap();
        assert!(s.reliable);
        assert_eq!(s.render(), "0.33");
    }

    #[test]
    fn tertile_rules() {
        let t = SkewThresholds::MIDTERMS_2022;
        assert_eq!(t.classify_value(-0.074), Leaning::DemocraticSkew);
        assert_eq!(t.classify_value(-0.073), Leaning::Neutral);
        assert_eq!(t.classify_value(0.0629), Leaning::Neutral);
        assert_eq!(t.classify_value(0.063), Leaning::RepublicanSkew);
        assert_eq!(classify_tertile(&SkewScore::failed(Pair::RD, "x"), &t), Leaning::Unavailable);
        let unreliable = SkewScore::from_counts(Pair::RD, 1, 100, 0, 100, 50).unwrap();
        assert_eq!(classify_tertile(&unreliable, &t), Leaning::Unavailable);
        assert!(SkewThresholds::new(0.1, 0.1).is_err());
    }

    fn valued(v: f64) -> SkewScore {
        SkewScore { value: Some(v), reliable: true, ..SkewScore::failed(Pair::RD, "") }
    }

    #[test]
    fn derived_thresholds() {
        let scores: Vec<_> = [-1.0, 0.0, 1.0].into_iter().map(valued).collect();
        let d = derive_tertile_thresholds(&scores).unwrap();
        assert!((d.lower + 1.0 / 3.0).abs() < 1e-12 && (d.upper - 1.0 / 3.0).abs() < 1e-12);
        assert!(!d.degenerate);

        let flat: Vec<_> = (0..5).map(|_| valued(0.2)).collect();
        let d = derive_tertile_thresholds(&flat).unwrap();
        assert!(d.degenerate);
        assert!(d.thresholds().is_err());

        assert!(matches!(
            derive_tertile_thresholds(&scores[..2]),
            Err(SkewError::TooFewScores(2))
        ));
    }

    #[test]
    fn derived_thresholds_split_into_thirds() {
        // oracle: with 3k distinct values the cuts fall between the k-th and (k+1)-th,
        // so each class holds exactly k of them
        let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let scores: Vec<_> = values.iter().copied().map(valued).collect();
        let t = derive_tertile_thresholds(&scores).unwrap().thresholds().unwrap();
        let mut counts = [0; 3];
        for &v in &values {
            match t.classify_value(v) {
                Leaning::DemocraticSkew => counts[0] += 1,
                Leaning::Neutral => counts[1] += 1,
                _ => counts[2] += 1,
            }
        }
        assert!(counts.iter().all(|&c| (9..=11).contains(&c)), "{counts:?}");
    }

    #[test]
    fn histogram_bins() {
        let h = skew_histogram(Vec::<SkewScore>::new().iter(), 0.1).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.values().all(|h| h.total() == 0 && h.counts.len() == 20));

        let h = skew_histogram([&valued(0.40)], 0.1).unwrap();
        let rd = &h[&Pair::RD];
        let k = rd.counts.iter().position(|&c| c == 1).unwrap();
        assert!((rd.edges[k] - 0.4).abs() < 1e-9);

        let mut edge = Histogram::empty(0.5);
        edge.add(Some(1.0));
        edge.add(Some(-1.0));
        edge.add(None);
        assert_eq!(edge.counts, vec![1, 0, 0, 1]);
        assert_eq!(edge.undefined, 1);
        assert!(skew_histogram(Vec::<SkewScore>::new().iter(), 0.0).is_err());
    }

    #[test]
    fn table_requires_totals() {
        let mut m = EstimateMatrix::new(vec!["REP".into()], vec!["i".into()]);
        m.insert("REP", None, CellValue::Count(10));
        m.insert("REP", Some("i"), CellValue::Count(1));
        let err = skew_table(&m, &[Pair::RD], &HashMap::new(), 1).unwrap_err();
        assert_eq!(err, SkewError::MissingTotal("DEM".into()));
    }

    #[test]
    fn table_marks_failed_cells_and_absent_interests() {
        let mut m = EstimateMatrix::new(vec!["REP".into(), "DEM".into()], vec!["a".into(), "b".into()]);
        m.insert("REP", None, CellValue::Count(100));
        m.insert("DEM", None, CellValue::Count(100));
        m.insert("REP", Some("a"), CellValue::Count(0));
        m.insert("DEM", Some("a"), CellValue::Count(0));
        m.insert("REP", Some("b"), CellValue::Count(60));
        m.insert("DEM", Some("b"), CellValue::Failed("no fixture".into()));
        let names = HashMap::from([("b".to_string(), "Bee".to_string())]);
        let t = skew_table(&m, &[Pair::RD], &names, 1).unwrap();
        assert_eq!(t.get("a", Pair::RD).unwrap().value, None);
        let b = t.get("b", Pair::RD).unwrap();
        assert_eq!(b.value, None);
        assert!(b.note.as_deref().unwrap().contains("no fixture"));
        assert_eq!(t.rows[1].interest_name, "Bee");
    }

    #[test]
    fn csv_round_trip_keeps_undefined_empty() {
        let table = SkewTable {
            rows: vec![
                SkewRow {
                    interest_id: "i1".into(),
                    interest_name: "One".into(),
                    score: SkewScore::from_counts(Pair::WB, 60, 100, 30, 100, 10).unwrap(),
                },
                SkewRow {
                    interest_id: "i2".into(),
                    interest_name: "Two".into(),
                    score: SkewScore::from_counts(Pair::WB, 0, 100, 0, 100, 10).unwrap(),
                },
            ],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("interest_id,interest_name,pair,value,reliable,n_a_i,n_a,n_b_i,n_b\n"));
        assert!(text.contains("i2,Two,WB,,false,0,100,0,100"));
        let back = SkewTable::from_records(&read_skew_records(text.as_bytes()).unwrap(), 10).unwrap();
        assert_eq!(back, table);
    }

    fn counts() -> impl Strategy<Value = (u64, u64, u64, u64)> {
        (1u64..2_000_000, 1u64..2_000_000).prop_flat_map(|(a, b)| (0..=a, Just(a), 0..=b, Just(b)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn antisymmetric((a_i, a, b_i, b) in counts()) {
            let ab = compute_skew(a_i, a, b_i, b).unwrap();
            let ba = compute_skew(b_i, b, a_i, a).unwrap();
            prop_assert_eq!(ab.map(|v| -v), ba);
        }

        #[test]
        fn bounded((a_i, a, b_i, b) in counts()) {
            if let Some(v) = compute_skew(a_i, a, b_i, b).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn scale_invariant((a_i, a, b_i, b) in counts(), k in 1u64..1000) {
            let base = compute_skew(a_i, a, b_i, b).unwrap();
            let scaled = compute_skew(a_i * k, a * k, b_i, b).unwrap();
            prop_assert_eq!(base, scaled);
        }

        #[test]
        fn tertile_stable_under_small_perturbation(v in -1.0f64..1.0, frac in -0.99f64..0.99) {
            let t = SkewThresholds::MIDTERMS_2022;
            let gap = (v - t.democratic_below).abs().min((v - t.republican_at_or_above).abs());
            let moved = v + frac * gap;
            // a value sitting exactly on the inclusive cut has no room to move
            prop_assume!(gap > 0.0);
            prop_assert_eq!(t.classify_value(v), t.classify_value(moved));
        }
    }
}
