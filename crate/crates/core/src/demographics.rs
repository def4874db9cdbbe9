//! Party, race and audience-pair labels shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} label `{value}`")]
pub struct LabelError {
    pub kind: &'static str,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Party {
    Rep,
    Dem,
    Oth,
}

impl Party {
    pub const ALL: [Party; 3] = [Party::Rep, Party::Dem, Party::Oth];

    pub fn as_str(self) -> &'static str {
        match self {
            Party::Rep => "REP",
            Party::Dem => "DEM",
            Party::Oth => "OTH",
        }
    }
}

impl FromStr for Party {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "REP" => Ok(Party::Rep),
            "DEM" => Ok(Party::Dem),
            "OTH" => Ok(Party::Oth),
            other => Err(LabelError { kind: "party", value: other.to_string() }),
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Race {
    White,
    Black,
    Hispanic,
    Other,
}

impl Race {
    pub const ALL: [Race; 4] = [Race::White, Race::Black, Race::Hispanic, Race::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "WHITE",
            Race::Black => "BLACK",
            Race::Hispanic => "HISPANIC",
            Race::Other => "OTHER",
        }
    }
}

impl FromStr for Race {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "WHITE" => Ok(Race::White),
            "BLACK" => Ok(Race::Black),
            "HISPANIC" => Ok(Race::Hispanic),
            "OTHER" => Ok(Race::Other),
            other => Err(LabelError { kind: "race", value: other.to_string() }),
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Predicate selecting one homogeneous group of voters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Selector {
    Party(Party),
    Race(Race),
}

impl Selector {
    /// The five audiences the measurement uses.
    pub const STANDARD: [Selector; 5] = [
        Selector::Party(Party::Rep),
        Selector::Party(Party::Dem),
        Selector::Race(Race::White),
        Selector::Race(Race::Black),
        Selector::Race(Race::Hispanic),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Selector::Party(p) => p.as_str(),
            Selector::Race(r) => r.as_str(),
        }
    }

    pub fn matches(self, party: Party, race: Race) -> bool {
        match self {
            Selector::Party(p) => p == party,
            Selector::Race(r) => r == race,
        }
    }
}

impl FromStr for Selector {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(p) = s.parse::<Party>() {
            return Ok(Selector::Party(p));
        }
        if let Ok(r) = s.parse::<Race>() {
            return Ok(Selector::Race(r));
        }
        Err(LabelError { kind: "audience", value: s.to_string() })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// An ordered pair of disjoint audiences compared by the skew statistic.
///
/// Positive skew leans toward the first audience of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pair {
    RD,
    WB,
    WH,
    BH,
}

impl Pair {
    pub const ALL: [Pair; 4] = [Pair::RD, Pair::WB, Pair::WH, Pair::BH];

    pub fn as_str(self) -> &'static str {
        match self {
            Pair::RD => "RD",
            Pair::WB => "WB",
            Pair::WH => "WH",
            Pair::BH => "BH",
        }
    }

    pub fn selectors(self) -> (Selector, Selector) {
        match self {
            Pair::RD => (Selector::Party(Party::Rep), Selector::Party(Party::Dem)),
            Pair::WB => (Selector::Race(Race::White), Selector::Race(Race::Black)),
            Pair::WH => (Selector::Race(Race::White), Selector::Race(Race::Hispanic)),
            Pair::BH => (Selector::Race(Race::Black), Selector::Race(Race::Hispanic)),
        }
    }

    pub fn is_racial(self) -> bool {
        !matches!(self, Pair::RD)
    }
}

impl FromStr for Pair {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "RD" => Ok(Pair::RD),
            "WB" => Ok(Pair::WB),
            "WH" => Ok(Pair::WH),
            "BH" => Ok(Pair::BH),
            other => Err(LabelError { kind: "pair", value: other.to_string() }),
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two-letter US state code, stored uppercase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateCode([u8; 2]);

impl StateCode {
    /// States whose voter files carry self-reported race.
    pub const SELF_REPORTED_RACE: [&'static str; 7] = ["AL", "FL", "GA", "LA", "NC", "SC", "TN"];

    pub fn as_str(&self) -> &str {
        // constructor guarantees ASCII
        std::str::from_utf8(&self.0).unwrap_or("??")
    }
}

impl FromStr for StateCode {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().as_bytes();
        if t.len() == 2 && t.iter().all(|b| b.is_ascii_alphabetic()) {
            Ok(StateCode([t[0].to_ascii_uppercase(), t[1].to_ascii_uppercase()]))
        } else {
            Err(LabelError { kind: "state", value: s.to_string() })
        }
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for StateCode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StateCode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
