//! Canonical ad-library targeting report payloads.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const WINDOW_DAYS: i64 = 7;

/// Money in integer millionths of a currency unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Micros(pub i64);

impl Micros {
    pub const PER_UNIT: i64 = 1_000_000;
    /// Largest amount accepted from a payload, well inside f64 integer precision.
    pub const MAX_UNITS: f64 = 1e9;

    pub fn from_units(units: f64) -> Option<Micros> {
        if !units.is_finite() || !(0.0..=Self::MAX_UNITS).contains(&units) {
            return None;
        }
        Some(Micros((units * Self::PER_UNIT as f64).round() as i64))
    }

    pub fn units(self) -> f64 {
        self.0 as f64 / Self::PER_UNIT as f64
    }

    /// `fraction` of this amount, rounded to the nearest micro.
    pub fn scale(self, fraction: f64) -> Micros {
        Micros((self.0 as f64 * fraction).round() as i64)
    }

    /// Millions with one decimal, e.g. `6.6 M`.
    pub fn render_millions(self) -> String {
        format!("{:.1} M", self.units() / 1e6)
    }
}

impl std::ops::Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        Micros(iter.map(|m| m.0).sum())
    }
}

impl Serialize for Micros {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.0)
    }
}

impl<'de> Deserialize<'de> for Micros {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        i64::deserialize(d).map(Micros)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CriterionKind {
    Interest,
    Demographic,
    Behavior,
    Age,
    Gender,
    Location,
    CustomAudience,
    Lookalike,
    /// Kind string not in the schema, kept verbatim.
    Unknown(String),
}

impl CriterionKind {
    pub const KNOWN: [CriterionKind; 8] = [
        CriterionKind::Interest,
        CriterionKind::Demographic,
        CriterionKind::Behavior,
        CriterionKind::Age,
        CriterionKind::Gender,
        CriterionKind::Location,
        CriterionKind::CustomAudience,
        CriterionKind::Lookalike,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            CriterionKind::Interest => "interest",
            CriterionKind::Demographic => "demographic",
            CriterionKind::Behavior => "behavior",
            CriterionKind::Age => "age",
            CriterionKind::Gender => "gender",
            CriterionKind::Location => "location",
            CriterionKind::CustomAudience => "custom_audience",
            CriterionKind::Lookalike => "lookalike",
            CriterionKind::Unknown(s) => s,
        }
    }

    /// Never fails: unrecognized kinds become `Unknown`.
    pub fn parse(raw: &str) -> CriterionKind {
        let key = raw.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::KNOWN
            .iter()
            .find(|k| k.as_str() == key || (key == "behaviour" && **k == CriterionKind::Behavior))
            .cloned()
            .unwrap_or_else(|| CriterionKind::Unknown(raw.to_string()))
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, CriterionKind::Unknown(_))
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CriterionKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CriterionKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d).map(|s| CriterionKind::parse(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Include,
    Exclude,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Include, Mode::Exclude];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Include => "include",
            Mode::Exclude => "exclude",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "include" | "included" | "targeting" => Ok(Mode::Include),
            "exclude" | "excluded" | "exclusion" => Ok(Mode::Exclude),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingCriterion {
    pub name: String,
    pub kind: CriterionKind,
    pub mode: Mode,
    pub num_ads: u32,
    pub spend_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingReportSnapshot {
    pub advertiser_id: String,
    pub snapshot_date: NaiveDate,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub total_spend: Micros,
    pub criteria: Vec<TargetingCriterion>,
}

impl TargetingReportSnapshot {
    /// Days between the end of the reported week and the day it was observed.
    pub fn delay_days(&self) -> i64 {
        (self.snapshot_date - self.window_end).num_days()
    }

    /// Canonical JSON payload, including the snapshot date.
    pub fn to_payload(&self) -> Value {
        let criteria: Vec<Value> = self
            .criteria
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "kind": c.kind.as_str(),
                    "mode": c.mode.as_str(),
                    "num_ads": c.num_ads,
                    "spend_fraction": c.spend_fraction,
                })
            })
            .collect();
        serde_json::json!({
            "advertiser_id": self.advertiser_id,
            "snapshot_date": self.snapshot_date.to_string(),
            "window_start": self.window_start.to_string(),
            "window_end": self.window_end.to_string(),
            "total_spend": self.total_spend.units(),
            "criteria": criteria,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("payload {}: field `{field}`: {reason}", &payload_sha256[..12])]
pub struct ParseError {
    pub field: String,
    pub reason: String,
    pub payload_sha256: String,
}

pub fn payload_hash(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

struct FieldReader<'a> {
    hash: &'a str,
}

impl FieldReader<'_> {
    fn err(&self, field: &str, reason: impl Into<String>) -> ParseError {
        ParseError { field: field.to_string(), reason: reason.into(), payload_sha256: self.hash.to_string() }
    }

    fn get<'v>(&self, obj: &'v Map<String, Value>, prefix: &str, key: &str) -> Result<&'v Value, ParseError> {
        obj.get(key).ok_or_else(|| self.err(&join(prefix, key), "missing"))
    }

    fn string(&self, obj: &Map<String, Value>, prefix: &str, key: &str) -> Result<String, ParseError> {
        match self.get(obj, prefix, key)? {
            Value::String(s) if !s.trim().is_empty() => Ok(s.clone()),
            Value::String(_) => Err(self.err(&join(prefix, key), "empty string")),
            // numeric advertiser ids are common in exports
            Value::Number(n) => Ok(n.to_string()),
            other => Err(self.err(&join(prefix, key), format!("expected string, found {}", type_name(other)))),
        }
    }

    fn date(&self, obj: &Map<String, Value>, key: &str) -> Result<NaiveDate, ParseError> {
        let s = self.string(obj, "", key)?;
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| self.err(key, format!("bad date `{s}`: {e}")))
    }

    fn number(&self, obj: &Map<String, Value>, prefix: &str, key: &str) -> Result<f64, ParseError> {
        match self.get(obj, prefix, key)? {
            Value::Number(n) => n.as_f64().ok_or_else(|| self.err(&join(prefix, key), "not representable")),
            other => Err(self.err(&join(prefix, key), format!("expected number, found {}", type_name(other)))),
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Parses and validates one canonical payload. `observed_on` supplies the
/// snapshot date when the payload does not carry one.
pub fn parse_targeting_report(
    payload: &[u8],
    observed_on: Option<NaiveDate>,
) -> Result<TargetingReportSnapshot, ParseError> {
    let hash = payload_hash(payload);
    let r = FieldReader { hash: &hash };
    let root: Value = serde_json::from_slice(payload).map_err(|e| r.err("$", format!("invalid json: {e}")))?;
    let obj = root.as_object().ok_or_else(|| r.err("$", format!("expected object, found {}", type_name(&root))))?;

    let advertiser_id = r.string(obj, "", "advertiser_id")?;
    let window_start = r.date(obj, "window_start")?;
    let window_end = r.date(obj, "window_end")?;
    if (window_end - window_start).num_days() != WINDOW_DAYS - 1 {
        return Err(r.err(
            "window_end",
            format!("window {window_start}..{window_end} is not {WINDOW_DAYS} days"),
        ));
    }
    let snapshot_date = match (obj.get("snapshot_date"), observed_on) {
        (Some(Value::Null) | None, Some(d)) => d,
        (Some(Value::Null) | None, None) => return Err(r.err("snapshot_date", "missing and not given by the fetch")),
        (Some(_), _) => r.date(obj, "snapshot_date")?,
    };
    if snapshot_date < window_end {
        return Err(r.err("snapshot_date", format!("{snapshot_date} precedes window end {window_end}")));
    }
    let spend_units = r.number(obj, "", "total_spend")?;
    let total_spend = Micros::from_units(spend_units)
        .ok_or_else(|| r.err("total_spend", format!("{spend_units} outside [0, {}]", Micros::MAX_UNITS)))?;

    let list = match r.get(obj, "", "criteria")? {
        Value::Array(a) => a,
        other => return Err(r.err("criteria", format!("expected array, found {}", type_name(other)))),
    };
    let mut criteria = Vec::with_capacity(list.len());
    for (i, item) in list.iter().enumerate() {
        let prefix = format!("criteria[{i}]");
        let c = item.as_object().ok_or_else(|| r.err(&prefix, "expected object"))?;
        let name = r.string(c, &prefix, "name")?;
        let kind = CriterionKind::parse(&r.string(c, &prefix, "kind")?);
        if kind.is_unknown() {
            log::warn!("advertiser {advertiser_id}: unknown criterion kind `{kind}` on `{name}`, kept as opaque");
        }
        let mode: Mode = r.string(c, &prefix, "mode")?.parse().map_err(|e: String| r.err(&join(&prefix, "mode"), e))?;
        let num_ads = r.number(c, &prefix, "num_ads")?;
        if num_ads.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&num_ads) {
            return Err(r.err(&join(&prefix, "num_ads"), format!("{num_ads} is not a positive integer")));
        }
        let spend_fraction = r.number(c, &prefix, "spend_fraction")?;
        if !(0.0..=1.0).contains(&spend_fraction) {
            return Err(r.err(&join(&prefix, "spend_fraction"), format!("{spend_fraction} outside [0,1]")));
        }
        criteria.push(TargetingCriterion { name, kind, mode, num_ads: num_ads as u32, spend_fraction });
    }

    Ok(TargetingReportSnapshot { advertiser_id, snapshot_date, window_start, window_end, total_spend, criteria })
}

/// Advertiser list payloads: a JSON array of ids, or `{"advertisers": [...]}`.
/// Duplicates are removed keeping first appearance.
pub fn parse_advertiser_list(payload: &[u8]) -> Result<Vec<String>, ParseError> {
    let hash = payload_hash(payload);
    let r = FieldReader { hash: &hash };
    let root: Value = serde_json::from_slice(payload).map_err(|e| r.err("$", format!("invalid json: {e}")))?;
    let items = match &root {
        Value::Array(a) => a,
        Value::Object(o) => match o.get("advertisers") {
            Some(Value::Array(a)) => a,
            _ => return Err(r.err("advertisers", "missing or not an array")),
        },
        other => return Err(r.err("$", format!("expected array, found {}", type_name(other)))),
    };
    let mut seen = std::collections::HashSet::new();
    let mut ids = Vec::new();
    for (i, v) in items.iter().enumerate() {
        let id = match v {
            Value::String(s) if !s.trim().is_empty() => s.trim().to_string(),
            Value::Number(n) => n.to_string(),
            other => return Err(r.err(&format!("advertisers[{i}]"), format!("expected id, found {}", type_name(other)))),
        };
        if seen.insert(id.clone()) {
            ids.push(id);
        }
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn payload(fraction: &str) -> String {
        format!(
            r#"{{"advertiser_id": "A1", "window_start": "2022-10-01", "window_end": "2022-10-07",
                "total_spend": 100.0,
                "criteria": [{{"name": "Fishing", "kind": "interest", "mode": "include", "num_ads": 2, "spend_fraction": {fraction}}}]}}"#
        )
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn parses_single_include_interest() {
        let snap = parse_targeting_report(payload("1.0").as_bytes(), Some(d("2022-10-10"))).unwrap();
        assert_eq!(snap.criteria.len(), 1);
        assert_eq!(snap.criteria[0].kind, CriterionKind::Interest);
        assert_eq!(snap.criteria[0].mode, Mode::Include);
        assert_eq!(snap.total_spend, Micros(100_000_000));
        assert_eq!(snap.delay_days(), 3);
    }

    #[test]
    fn rejects_fraction_above_one_naming_field() {
        let err = parse_targeting_report(payload("1.2").as_bytes(), Some(d("2022-10-10"))).unwrap_err();
        assert_eq!(err.field, "criteria[0].spend_fraction");
        assert_eq!(err.payload_sha256.len(), 64);
    }

    #[test]
    fn structural_violations() {
        let day = Some(d("2022-10-10"));
        let e = parse_targeting_report(b"[]", day).unwrap_err();
        assert_eq!(e.field, "$");
        let short = payload("0.5").replace("2022-10-07", "2022-10-05");
        assert_eq!(parse_targeting_report(short.as_bytes(), day).unwrap_err().field, "window_end");
        assert_eq!(parse_targeting_report(payload("0.5").as_bytes(), None).unwrap_err().field, "snapshot_date");
        assert_eq!(
            parse_targeting_report(payload("0.5").as_bytes(), Some(d("2022-10-06"))).unwrap_err().field,
            "snapshot_date"
        );
        let zero_ads = payload("0.5").replace("\"num_ads\": 2", "\"num_ads\": 0");
        assert_eq!(parse_targeting_report(zero_ads.as_bytes(), day).unwrap_err().field, "criteria[0].num_ads");
    }

    #[test]
    fn unknown_kind_is_preserved() {
        let p = payload("0.5").replace("\"interest\"", "\"Job Title\"");
        let snap = parse_targeting_report(p.as_bytes(), Some(d("2022-10-10"))).unwrap();
        assert_eq!(snap.criteria[0].kind, CriterionKind::Unknown("Job Title".into()));
        let back = serde_json::to_string(&snap.to_payload()).unwrap();
        let again = parse_targeting_report(back.as_bytes(), None).unwrap();
        assert_eq!(again, snap);
    }

    #[test]
    fn advertiser_lists_dedupe() {
        assert_eq!(parse_advertiser_list(br#"["a","b","c"]"#).unwrap().len(), 3);
        assert_eq!(parse_advertiser_list(br#"{"advertisers": ["a","a"]}"#).unwrap(), vec!["a"]);
        assert!(parse_advertiser_list(br#"[]"#).unwrap().is_empty());
        assert!(parse_advertiser_list(br#"{"x": 1}"#).is_err());
    }

    #[test]
    fn millions_rendering() {
        assert_eq!(Micros::from_units(6_612_345.0).unwrap().render_millions(), "6.6 M");
        assert_eq!(Micros::from_units(-1.0), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn parser_is_total_on_bytes(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_targeting_report(&bytes, None);
            let _ = parse_advertiser_list(&bytes);
        }

        #[test]
        fn parser_is_total_on_mutated_payloads(
            pos in 0usize..400, ch in prop::sample::select(vec!['"', '{', '}', '[', ']', ',', ':', '-', '9', 'e', ' ', 'n']),
            num in prop::num::f64::ANY,
        ) {
            let base = payload(&format!("{num:?}"));
            let mut s: Vec<char> = base.chars().collect();
            if pos < s.len() {
                s[pos] = ch;
            }
            let mutated: String = s.into_iter().collect();
            let _ = parse_targeting_report(mutated.as_bytes(), Some(NaiveDate::from_ymd_opt(2022, 10, 10).unwrap()));
        }
    }
}
