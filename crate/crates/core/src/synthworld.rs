//! Synthetic voter populations with planted interest skews.
//!
//! A generated [`Population`] plays two roles: it is the platform-side ground
//! truth behind the synthetic reach backend, and it is the brute-force oracle
//! ([`true_skew`]) that every measured skew is checked against.
//!
//! Interest membership is planted multiplicatively. For an interest with base
//! rate `p`, a member's probability of holding it is `p * f_party * f_race`,
//! where the party factor is `1 + S_RD` for REP, `1 - S_RD` for DEM and 1 for
//! OTH, and the race factors are chained the same way from the planted racial
//! pairs. Because the skew statistic only depends on rate ratios, a planted
//! pair recovers its target in expectation whenever race and party are drawn
//! independently.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::{Pair, Party, Race, Selector, StateCode};

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("interest `{interest}`: {reason}")]
    InfeasibleSkew { interest: String, reason: String },
    #[error("unknown interest `{0}`")]
    UnknownInterest(String),
    #[error("no active members in audience {0}")]
    EmptyGroup(Selector),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInterest {
    pub interest_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base_rate: f64,
    /// Target skew per audience pair; unplanted pairs fall out of the others.
    #[serde(default)]
    pub planted_skew: BTreeMap<Pair, f64>,
}

impl PlantedInterest {
    pub fn new(interest_id: impl Into<String>, base_rate: f64) -> Self {
        PlantedInterest {
            interest_id: interest_id.into(),
            name: None,
            base_rate,
            planted_skew: BTreeMap::new(),
        }
    }

    pub fn with_skew(mut self, pair: Pair, skew: f64) -> Self {
        self.planted_skew.insert(pair, skew);
        self
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.interest_id)
    }

    fn party_factor(&self, party: Party) -> f64 {
        let s = self.planted_skew.get(&Pair::RD).copied().unwrap_or(0.0);
        match party {
            Party::Rep => 1.0 + s,
            Party::Dem => 1.0 - s,
            Party::Oth => 1.0,
        }
    }

    /// Resolves per-race multipliers from the planted racial pairs, chaining
    /// ratios when a group appears in more than one pair.
    fn race_factors(&self) -> Result<[f64; 4], WorldError> {
        let mut factors: [Option<f64>; 4] = [None; 4];
        let slot = |r: Race| Race::ALL.iter().position(|&x| x == r).unwrap_or(3);
        for pair in [Pair::WB, Pair::WH, Pair::BH] {
            let Some(&s) = self.planted_skew.get(&pair) else { continue };
            let (Selector::Race(a), Selector::Race(b)) = pair.selectors() else { continue };
            let (ia, ib) = (slot(a), slot(b));
            let ratio = (1.0 + s) / (1.0 - s);
            match (factors[ia], factors[ib]) {
                (None, None) => {
                    factors[ia] = Some(1.0 + s);
                    factors[ib] = Some(1.0 - s);
                }
                (Some(fa), None) => factors[ib] = Some(fa / ratio),
                (None, Some(fb)) => factors[ia] = Some(fb * ratio),
                (Some(fa), Some(fb)) => {
                    if ((fa / fb) - ratio).abs() > 1e-9 * ratio.max(1.0) {
                        return Err(WorldError::InfeasibleSkew {
                            interest: self.interest_id.clone(),
                            reason: format!("racial skews are mutually inconsistent at pair {pair}"),
                        });
                    }
                }
            }
        }
        Ok(factors.map(|f| f.unwrap_or(1.0)))
    }

    /// Membership probability for every (party, race) cell.
    fn membership_table(&self) -> Result<[[f64; 4]; 3], WorldError> {
        let infeasible = |reason: String| WorldError::InfeasibleSkew {
            interest: self.interest_id.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(infeasible(format!("base_rate {} outside [0,1]", self.base_rate)));
        }
        for (pair, s) in &self.planted_skew {
            if !(s.is_finite() && *s > -1.0 && *s < 1.0) {
                return Err(infeasible(format!("planted skew {s} for {pair} outside (-1,1)")));
            }
        }
        let race = self.race_factors()?;
        let mut table = [[0.0; 4]; 3];
        for (pi, &party) in Party::ALL.iter().enumerate() {
            for ri in 0..4 {
                let p = self.base_rate * self.party_factor(party) * race[ri];
                if !(0.0..=1.0 + 1e-12).contains(&p) {
                    return Err(infeasible(format!(
                        "implied membership probability {p:.4} for {party}/{} outside [0,1]",
                        Race::ALL[ri]
                    )));
                }
                table[pi][ri] = p.min(1.0);
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCell {
    pub party: Party,
    pub race: Race,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub population_size: usize,
    pub party_mix: BTreeMap<Party, f64>,
    pub race_mix: BTreeMap<Race, f64>,
    /// Party x race table; when present it replaces the independent mixes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<Vec<JointCell>>,
    #[serde(default)]
    pub interests: Vec<PlantedInterest>,
    pub activity_rate: f64,
    pub rng_seed: u64,
    #[serde(default = "default_states")]
    pub states: Vec<String>,
}

fn default_states() -> Vec<String> {
    StateCode::SELF_REPORTED_RACE.iter().map(|s| s.to_string()).collect()
}

impl WorldConfig {
    /// Even REP/DEM split, a Southern-style racial mix, no interests.
    pub fn balanced(population_size: usize, rng_seed: u64) -> Self {
        WorldConfig {
            population_size,
            party_mix: BTreeMap::from([(Party::Rep, 0.5), (Party::Dem, 0.5), (Party::Oth, 0.0)]),
            race_mix: BTreeMap::from([
                (Race::White, 0.55),
                (Race::Black, 0.25),
                (Race::Hispanic, 0.15),
                (Race::Other, 0.05),
            ]),
            joint: None,
            interests: Vec::new(),
            activity_rate: 0.8,
            rng_seed,
            states: default_states(),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        check_mix("party_mix", self.party_mix.values())?;
        check_mix("race_mix", self.race_mix.values())?;
        if let Some(joint) = &self.joint {
            check_mix("joint", joint.iter().map(|c| &c.fraction))?;
        }
        if !(0.0..=1.0).contains(&self.activity_rate) {
            return Err(WorldError::Config(format!(
                "activity_rate {} outside [0,1]",
                self.activity_rate
            )));
        }
        if self.states.is_empty() {
            return Err(WorldError::Config("states list is empty".into()));
        }
        for s in &self.states {
            s.parse::<StateCode>().map_err(|e| WorldError::Config(e.to_string()))?;
        }
        let mut seen = std::collections::HashSet::new();
        for interest in &self.interests {
            if !seen.insert(interest.interest_id.as_str()) {
                return Err(WorldError::Config(format!(
                    "duplicate interest id `{}`",
                    interest.interest_id
                )));
            }
            interest.membership_table()?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<((Party, Race), f64)> {
        match &self.joint {
            Some(joint) => joint.iter().map(|c| ((c.party, c.race), c.fraction)).collect(),
            None => {
                let mut out = Vec::new();
                for (&p, &pf) in &self.party_mix {
                    for (&r, &rf) in &self.race_mix {
                        out.push(((p, r), pf * rf));
                    }
                }
                out
            }
        }
    }
}

fn check_mix<'a>(name: &str, values: impl Iterator<Item = &'a f64>) -> Result<(), WorldError> {
    let mut sum = 0.0;
    for &v in values {
        if !(v.is_finite() && v >= 0.0) {
            return Err(WorldError::Config(format!("{name} has invalid fraction {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > MIX_TOLERANCE {
        return Err(WorldError::Config(format!("{name} fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub id: String,
    pub state: StateCode,
    pub party: Party,
    pub race: Race,
    pub active: bool,
    /// Sorted indices into [`Population::interest_ids`].
    pub interests: Vec<u32>,
}

impl Member {
    pub fn has_interest(&self, index: u32) -> bool {
        self.interests.binary_search(&index).is_ok()
    }
}

/// Immutable generated world. Safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Population {
    pub interest_ids: Vec<String>,
    pub interest_names: Vec<String>,
    pub members: Vec<Member>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn interest_index(&self, interest_id: &str) -> Option<u32> {
        self.interest_ids.iter().position(|i| i == interest_id).map(|i| i as u32)
    }
}

pub fn generate_population(config: &WorldConfig) -> Result<Population, WorldError> {
    config.validate()?;
    let tables = config
        .interests
        .iter()
        .map(PlantedInterest::membership_table)
        .collect::<Result<Vec<_>, _>>()?;
    let states = config
        .states
        .iter()
        .map(|s| s.parse::<StateCode>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| WorldError::Config(e.to_string()))?;

    let cells = config.cells();
    let mut cumulative = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for (cell, w) in &cells {
        acc += w;
        cumulative.push((*cell, acc));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut members = Vec::with_capacity(config.population_size);
    for n in 0..config.population_size {
        let u: f64 = rng.gen::<f64>() * acc;
        let (party, race) = cumulative
            .iter()
            .find(|(_, c)| u < *c)
            .or(cumulative.last())
            .map(|(cell, _)| *cell)
            .ok_or_else(|| WorldError::Config("empty demographic mix".into()))?;
        let state = states[rng.gen_range(0..states.len())];
        let active = rng.gen::<f64>() < config.activity_rate;
        let pi = Party::ALL.iter().position(|&p| p == party).unwrap_or(2);
        let ri = Race::ALL.iter().position(|&r| r == race).unwrap_or(3);
        let interests = tables
            .iter()
            .enumerate()
            .filter_map(|(i, t)| (rng.gen::<f64>() < t[pi][ri]).then_some(i as u32))
            .collect();
        members.push(Member {
            id: format!("V{:08}", n + 1),
            state,
            party,
            race,
            active,
            interests,
        });
    }

    Ok(Population {
        interest_ids: config.interests.iter().map(|i| i.interest_id.clone()).collect(),
        interest_names: config.interests.iter().map(|i| i.display_name().to_string()).collect(),
        members,
    })
}

/// Exhaustive counts behind one oracle skew evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSkew {
    pub a_with: u64,
    pub a_total: u64,
    pub b_with: u64,
    pub b_total: u64,
    /// `None` when neither group holds the interest.
    pub value: Option<f64>,
}

/// Ground-truth skew of `interest` between the two groups of `pair`,
/// counted over active members and evaluated as one exact ratio of integers.
pub fn true_skew(pop: &Population, interest: &str, pair: Pair) -> Result<ExactSkew, WorldError> {
    let (sel_a, sel_b) = pair.selectors();
    true_skew_between(pop, interest, sel_a, sel_b)
}

pub fn true_skew_between(
    pop: &Population,
    interest: &str,
    sel_a: Selector,
    sel_b: Selector,
) -> Result<ExactSkew, WorldError> {
    let idx = pop
        .interest_index(interest)
        .ok_or_else(|| WorldError::UnknownInterest(interest.to_string()))?;
    let (mut a_with, mut a_total, mut b_with, mut b_total) = (0u64, 0u64, 0u64, 0u64);
    for m in pop.members.iter().filter(|m| m.active) {
        if sel_a.matches(m.party, m.race) {
            a_total += 1;
            a_with += m.has_interest(idx) as u64;
        } else if sel_b.matches(m.party, m.race) {
            b_total += 1;
            b_with += m.has_interest(idx) as u64;
        }
    }
    if a_total == 0 {
        return Err(WorldError::EmptyGroup(sel_a));
    }
    if b_total == 0 {
        return Err(WorldError::EmptyGroup(sel_b));
    }
    // (a_with/a_total - b_with/b_total) / (a_with/a_total + b_with/b_total),
    // cleared of denominators.
    let x = a_with as i128 * b_total as i128;
    let y = b_with as i128 * a_total as i128;
    let value = if x + y == 0 { None } else { Some((x - y) as f64 / (x + y) as f64) };
    Ok(ExactSkew { a_with, a_total, b_with, b_total, value })
}

pub const VOTER_FILE_HEADER: [&str; 4] = ["voter_id", "state", "party", "race"];

pub fn write_voter_records<W: Write>(pop: &Population, out: W) -> Result<usize, csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VOTER_FILE_HEADER)?;
    for m in &pop.members {
        w.write_record([m.id.as_str(), m.state.as_str(), m.party.as_str(), m.race.as_str()])?;
    }
    w.flush()?;
    Ok(pop.members.len())
}

/// Writes the voter file. Interest memberships stay platform-side and are not exported.
pub fn export_voter_file(pop: &Population, destination: &Path) -> Result<usize, WorldError> {
    let file = File::create(destination).map_err(|source| WorldError::Io {
        path: destination.to_path_buf(),
        source,
    })?;
    write_voter_records(pop, BufWriter::new(file)).map_err(|source| WorldError::Csv {
        path: destination.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(size: usize, interests: Vec<PlantedInterest>) -> WorldConfig {
        WorldConfig { interests, ..WorldConfig::balanced(size, 7) }
    }

    fn group_rate(pop: &Population, idx: u32, sel: Selector) -> f64 {
        let group: Vec<_> = pop.members.iter().filter(|m| sel.matches(m.party, m.race)).collect();
        group.iter().filter(|m| m.has_interest(idx)).count() as f64 / group.len() as f64
    }

    #[test]
    fn empty_population() {
        let pop = generate_population(&world(0, vec![PlantedInterest::new("i", 0.1)])).unwrap();
        assert!(pop.is_empty());
        assert_eq!(pop.interest_ids, vec!["i"]);
    }

    #[test]
    fn planted_rates_follow_multiplicative_scheme() {
        let interest = PlantedInterest::new("nugent", 0.0875).with_skew(Pair::RD, 0.40);
        let pop = generate_population(&world(200_000, vec![interest])).unwrap();
        let rep = group_rate(&pop, 0, Selector::Party(Party::Rep));
        let dem = group_rate(&pop, 0, Selector::Party(Party::Dem));
        assert!((rep - 0.1225).abs() < 0.004, "rep rate {rep}");
        assert!((dem - 0.0525).abs() < 0.004, "dem rate {dem}");
    }

    #[test]
    fn zero_skew_gives_equal_rates() {
        let pop = generate_population(&world(100_000, vec![PlantedInterest::new("flat", 0.2)])).unwrap();
        let rep = group_rate(&pop, 0, Selector::Party(Party::Rep));
        let dem = group_rate(&pop, 0, Selector::Party(Party::Dem));
        assert!((rep - dem).abs() < 0.01);
    }

    #[test]
    fn infeasible_skew_names_interest() {
        let interest = PlantedInterest::new("too-common", 0.8).with_skew(Pair::RD, 0.5);
        let err = generate_population(&world(10, vec![interest])).unwrap_err();
        assert!(err.to_string().contains("too-common"), "{err}");
    }

    #[test]
    fn inconsistent_racial_chain_rejected() {
        let interest = PlantedInterest::new("chain", 0.1)
            .with_skew(Pair::WB, 0.5)
            .with_skew(Pair::WH, 0.0)
            .with_skew(Pair::BH, 0.5);
        assert!(matches!(
            generate_population(&world(10, vec![interest])),
            Err(WorldError::InfeasibleSkew { .. })
        ));
    }

    #[test]
    fn bad_mix_rejected() {
        let mut cfg = world(10, vec![]);
        cfg.party_mix.insert(Party::Oth, 0.1);
        assert!(matches!(generate_population(&cfg), Err(WorldError::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = world(2_000, vec![PlantedInterest::new("a", 0.3).with_skew(Pair::WB, 0.2)]);
        assert_eq!(generate_population(&cfg).unwrap(), generate_population(&cfg).unwrap());
        let other = WorldConfig { rng_seed: 8, ..cfg.clone() };
        assert_ne!(generate_population(&cfg).unwrap(), generate_population(&other).unwrap());
    }

    fn hand_population(rep_with: usize, rep: usize, dem_with: usize, dem: usize) -> Population {
        let mut members = Vec::new();
        let mut push = |party, has: bool| {
            members.push(Member {
                id: format!("m{}", members.len()),
                state: "NC".parse().unwrap(),
                party,
                race: Race::White,
                active: true,
                interests: if has { vec![0] } else { vec![] },
            })
        };
        for k in 0..rep {
            push(Party::Rep, k < rep_with);
        }
        for k in 0..dem {
            push(Party::Dem, k < dem_with);
        }
        Population { interest_ids: vec!["i".into()], interest_names: vec!["i".into()], members }
    }

    #[test]
    fn oracle_matches_worked_example() {
        // 12.32% vs 5.24%, the unrounded coverages behind the 0.40 example
        let pop = hand_population(1232, 10_000, 524, 10_000);
        let s = true_skew(&pop, "i", Pair::RD).unwrap().value.unwrap();
        assert!((s - 0.40).abs() <= 0.005, "{s}");
    }

    #[test]
    fn oracle_boundaries() {
        let equal = hand_population(10, 100, 20, 200);
        assert_eq!(true_skew(&equal, "i", Pair::RD).unwrap().value, Some(0.0));
        let only_a = hand_population(10, 100, 0, 50);
        assert_eq!(true_skew(&only_a, "i", Pair::RD).unwrap().value, Some(1.0));
        let nobody = hand_population(0, 100, 0, 50);
        assert_eq!(true_skew(&nobody, "i", Pair::RD).unwrap().value, None);
        assert!(matches!(
            true_skew(&nobody, "i", Pair::WB),
            Err(WorldError::EmptyGroup(_))
        ));
    }

    #[test]
    fn oracle_is_antisymmetric() {
        let pop = hand_population(37, 311, 91, 577);
        let ab = true_skew(&pop, "i", Pair::RD).unwrap().value.unwrap();
        let ba = true_skew_between(&pop, "i", Selector::Party(Party::Dem), Selector::Party(Party::Rep))
            .unwrap()
            .value
            .unwrap();
        assert_eq!(ab, -ba);
    }

    #[test]
    fn export_writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let empty = generate_population(&world(0, vec![])).unwrap();
        let path = dir.path().join("empty.csv");
        assert_eq!(export_voter_file(&empty, &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "voter_id,state,party,race\n");

        let pop = generate_population(&world(100, vec![PlantedInterest::new("platform-only", 0.5)])).unwrap();
        let path = dir.path().join("pop.csv");
        assert_eq!(export_voter_file(&pop, &path).unwrap(), 100);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert!(text.contains(",REP,") && text.contains(",DEM,"));
        assert!(!text.contains("platform-only"));
    }

    #[test]
    fn export_reports_path_on_failure() {
        let pop = generate_population(&world(1, vec![])).unwrap();
        let err = export_voter_file(&pop, Path::new("/nonexistent-dir/v.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/v.csv"));
    }
}
