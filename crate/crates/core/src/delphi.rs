//! Delphi estimation sessions.
//!
//! A session walks through rounds of anonymous estimates until every quantity
//! has reached consensus, after which the moderator finalizes it. Aggregate
//! outputs ([`ConsensusReport`], [`EstimateSet`]) never carry participant
//! handles; raw per-participant estimates are only reachable through
//! [`DelphiSession::raw_estimates`] and [`DelphiSession::own_estimates`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONSENSUS_THRESHOLD: f64 = 0.85;
pub const DEFAULT_AGREEMENT_BAND: f64 = 0.05;
pub const DEFAULT_MAX_ROUNDS: u32 = 10;

/// Slack on the agreement band so that decimal inputs like 0.65 vs a median
/// of 0.60 count as inside a 0.05 band.
const BAND_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelphiError {
    #[error("a session needs at least two participants")]
    RosterTooSmall,
    #[error("duplicate participant `{0}`")]
    DuplicateParticipant(String),
    #[error("a session needs at least one quantity")]
    NoQuantities,
    #[error("duplicate quantity `{0}`")]
    DuplicateQuantity(QuantityRef),
    #[error("{name} = {value} must lie in (0, 1]")]
    ParameterRange { name: &'static str, value: f64 },
    #[error("maximum round count must be at least 1")]
    ZeroRoundCap,
    #[error("invalid quantity reference `{0}`")]
    BadQuantity(String),
    #[error("quantity `{0}` is not part of this session")]
    UnknownQuantity(QuantityRef),
    #[error("quantity `{quantity}` refers to unknown {kind} `{id}`")]
    UnresolvedTarget { quantity: QuantityRef, kind: &'static str, id: String },
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("estimate {0} is outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("cannot estimate an empty list")]
    EmptyEstimates,
    #[error("session is finalized")]
    Finalized,
    #[error("session is deadlocked after {0} rounds; only a forced finalization is possible")]
    Deadlocked(u32),
    #[error("no round is active")]
    NoActiveRound,
    #[error("round {0} is still active")]
    RoundActive(u32),
    #[error("round cap of {0} reached")]
    RoundCapReached(u32),
    #[error("round {round} is incomplete; missing {}", format_missing(.missing))]
    IncompleteRound { round: u32, missing: Vec<MissingCell> },
    #[error("consensus has not been reached")]
    ConsensusNotReached,
    #[error("`{0}` is not the moderator of this session")]
    NotModerator(String),
    #[error("session is not deadlocked; forced finalization is not allowed")]
    NotDeadlocked,
    #[error("round {0} does not exist")]
    NoSuchRound(u32),
    #[error("weight estimates sum to zero and cannot be renormalized")]
    ZeroWeightSum,
}

fn format_missing(missing: &[MissingCell]) -> String {
    missing.iter().map(|m| format!("{} for {}", m.participant, m.quantity)).collect::<Vec<_>>().join(", ")
}

/// One quantity being estimated.
///
/// Written as `weight:<objective>`, `likelihood:<risk>`,
/// `impact:<risk>:<objective>` or `levelred:<risk>:<countermeasure>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum QuantityRef {
    Weight { objective: String },
    Likelihood { risk: String },
    Impact { risk: String, objective: String },
    LevelRed { risk: String, countermeasure: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantityKind {
    Weight,
    Likelihood,
    Impact,
    LevelRed,
}

impl QuantityRef {
    pub fn kind(&self) -> QuantityKind {
        match self {
            QuantityRef::Weight { .. } => QuantityKind::Weight,
            QuantityRef::Likelihood { .. } => QuantityKind::Likelihood,
            QuantityRef::Impact { .. } => QuantityKind::Impact,
            QuantityRef::LevelRed { .. } => QuantityKind::LevelRed,
        }
    }
}

impl fmt::Display for QuantityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantityRef::Weight { objective } => write!(f, "weight:{objective}"),
            QuantityRef::Likelihood { risk } => write!(f, "likelihood:{risk}"),
            QuantityRef::Impact { risk, objective } => write!(f, "impact:{risk}:{objective}"),
            QuantityRef::LevelRed { risk, countermeasure } => write!(f, "levelred:{risk}:{countermeasure}"),
        }
    }
}

impl FromStr for QuantityRef {
    type Err = DelphiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || DelphiError::BadQuantity(s.to_string());
        if parts.iter().any(|p| p.is_empty()) {
            return Err(bad());
        }
        let q = match parts.as_slice() {
            ["weight", o] => QuantityRef::Weight { objective: o.to_string() },
            ["likelihood", r] => QuantityRef::Likelihood { risk: r.to_string() },
            ["impact", r, o] => QuantityRef::Impact { risk: r.to_string(), objective: o.to_string() },
            ["levelred", r, c] => QuantityRef::LevelRed { risk: r.to_string(), countermeasure: c.to_string() },
            _ => return Err(bad()),
        };
        Ok(q)
    }
}

impl From<QuantityRef> for String {
    fn from(q: QuantityRef) -> Self {
        q.to_string()
    }
}

impl TryFrom<String> for QuantityRef {
    type Error = DelphiError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Middle value; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
        a + (b - a) / 2.0
    })
}

/// Fraction of estimates within `band` of the median.
pub fn consensus_ratio(estimates: &[f64], band: f64) -> Result<f64, DelphiError> {
    let m = median(estimates).ok_or(DelphiError::EmptyEstimates)?;
    let inside = estimates.iter().filter(|e| (*e - m).abs() <= band + BAND_EPSILON).count();
    Ok(inside as f64 / estimates.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDefinition {
    pub session_id: String,
    pub moderator: String,
    pub roster: Vec<String>,
    pub quantities: Vec<QuantityRef>,
    #[serde(default = "default_threshold")]
    pub consensus_threshold: f64,
    #[serde(default = "default_band")]
    pub agreement_band: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
}

fn default_threshold() -> f64 {
    DEFAULT_CONSENSUS_THRESHOLD
}
fn default_band() -> f64 {
    DEFAULT_AGREEMENT_BAND
}
fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Open,
    RoundActive,
    Deadlocked,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundStatus {
    Collecting,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// False while the value is only carried over from the previous round.
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub participant: String,
    pub quantity: QuantityRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub number: u32,
    pub status: RoundStatus,
    estimates: BTreeMap<QuantityRef, BTreeMap<String, Estimate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ConsensusReport>,
}

impl Round {
    pub fn estimates(&self) -> &BTreeMap<QuantityRef, BTreeMap<String, Estimate>> {
        &self.estimates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityConsensus {
    pub quantity: QuantityRef,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub round: u32,
    pub threshold: f64,
    pub band: f64,
    pub quantities: Vec<QuantityConsensus>,
    pub overall_reached: bool,
}

impl ConsensusReport {
    /// Aggregate statistics for one round. Participant identities are
    /// dropped before anything is computed.
    pub fn compute(
        round: u32,
        threshold: f64,
        band: f64,
        columns: &[(QuantityRef, Vec<f64>)],
    ) -> Result<Self, DelphiError> {
        let mut quantities = Vec::with_capacity(columns.len());
        for (q, values) in columns {
            let median = median(values).ok_or(DelphiError::EmptyEstimates)?;
            let ratio = consensus_ratio(values, band)?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            quantities.push(QuantityConsensus {
                quantity: q.clone(),
                median,
                mean,
                min,
                max,
                ratio,
                reached: ratio >= threshold,
            });
        }
        let overall_reached = quantities.iter().all(|q| q.reached);
        Ok(Self { round, threshold, band, quantities, overall_reached })
    }

    pub fn get(&self, quantity: &QuantityRef) -> Option<&QuantityConsensus> {
        self.quantities.iter().find(|q| &q.quantity == quantity)
    }
}

/// Final values handed to the next phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub session_id: String,
    pub rounds: u32,
    /// Set when the moderator overrode a deadlock.
    pub forced: bool,
    pub values: BTreeMap<QuantityRef, f64>,
}

impl EstimateSet {
    pub fn get(&self, quantity: &QuantityRef) -> Option<f64> {
        self.values.get(quantity).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u32,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelphiSession {
    id: String,
    moderator: String,
    roster: Vec<String>,
    quantities: Vec<QuantityRef>,
    threshold: f64,
    band: f64,
    max_rounds: u32,
    state: SessionState,
    rounds: Vec<Round>,
    audit: Vec<AuditEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    result: Option<EstimateSet>,
}

impl DelphiSession {
    pub fn create(def: SessionDefinition) -> Result<Self, DelphiError> {
        if def.roster.len() < 2 {
            return Err(DelphiError::RosterTooSmall);
        }
        let mut seen = BTreeSet::new();
        for p in &def.roster {
            if !seen.insert(p) {
                return Err(DelphiError::DuplicateParticipant(p.clone()));
            }
        }
        if def.quantities.is_empty() {
            return Err(DelphiError::NoQuantities);
        }
        let mut seen = BTreeSet::new();
        for q in &def.quantities {
            if !seen.insert(q) {
                return Err(DelphiError::DuplicateQuantity(q.clone()));
            }
        }
        for (name, value) in [("consensus threshold", def.consensus_threshold), ("agreement band", def.agreement_band)]
        {
            if !(value > 0.0 && value <= 1.0) {
                return Err(DelphiError::ParameterRange { name, value });
            }
        }
        if def.max_rounds == 0 {
            return Err(DelphiError::ZeroRoundCap);
        }
        let mut s = Self {
            id: def.session_id,
            moderator: def.moderator,
            roster: def.roster,
            quantities: def.quantities,
            threshold: def.consensus_threshold,
            band: def.agreement_band,
            max_rounds: def.max_rounds,
            state: SessionState::Open,
            rounds: Vec::new(),
            audit: Vec::new(),
            result: None,
        };
        s.log("session created".into());
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn moderator(&self) -> &str {
        &self.moderator
    }
    pub fn roster(&self) -> &[String] {
        &self.roster
    }
    pub fn quantities(&self) -> &[QuantityRef] {
        &self.quantities
    }
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
    pub fn band(&self) -> f64 {
        self.band
    }
    pub fn max_rounds(&self) -> u32 {
        self.max_rounds
    }
    pub fn state(&self) -> SessionState {
        self.state
    }
    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }
    pub fn result(&self) -> Option<&EstimateSet> {
        self.result.as_ref()
    }
    pub fn round_count(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn is_participant(&self, handle: &str) -> bool {
        self.roster.iter().any(|p| p == handle)
    }

    /// Latest round, active or closed.
    pub fn current_round(&self) -> Option<&Round> {
        self.rounds.last()
    }

    pub fn latest_report(&self) -> Option<&ConsensusReport> {
        self.rounds.iter().rev().find_map(|r| r.report.as_ref())
    }

    pub fn report(&self, round: u32) -> Result<Option<&ConsensusReport>, DelphiError> {
        self.round(round).map(|r| r.report.as_ref())
    }

    fn round(&self, number: u32) -> Result<&Round, DelphiError> {
        number.checked_sub(1).and_then(|i| self.rounds.get(i as usize)).ok_or(DelphiError::NoSuchRound(number))
    }

    /// Moderator-only view of who estimated what in a round.
    pub fn raw_estimates(&self, round: u32) -> Result<&BTreeMap<QuantityRef, BTreeMap<String, Estimate>>, DelphiError> {
        self.round(round).map(|r| &r.estimates)
    }

    /// A participant's own cells in the latest round.
    pub fn own_estimates(&self, participant: &str) -> Result<BTreeMap<QuantityRef, Estimate>, DelphiError> {
        if !self.is_participant(participant) {
            return Err(DelphiError::UnknownParticipant(participant.to_string()));
        }
        Ok(self
            .rounds
            .last()
            .map(|r| {
                r.estimates.iter().filter_map(|(q, cells)| cells.get(participant).map(|e| (q.clone(), *e))).collect()
            })
            .unwrap_or_default())
    }

    /// Checks that every quantity names known objectives, risks and countermeasures.
    pub fn check_targets(
        &self,
        objectives: &BTreeSet<String>,
        risks: &BTreeSet<String>,
        countermeasures: &BTreeSet<String>,
    ) -> Result<(), DelphiError> {
        for q in &self.quantities {
            let targets: Vec<(&'static str, &String, &BTreeSet<String>)> = match q {
                QuantityRef::Weight { objective } => vec![("objective", objective, objectives)],
                QuantityRef::Likelihood { risk } => vec![("risk", risk, risks)],
                QuantityRef::Impact { risk, objective } => {
                    vec![("risk", risk, risks), ("objective", objective, objectives)]
                }
                QuantityRef::LevelRed { risk, countermeasure } => {
                    vec![("risk", risk, risks), ("countermeasure", countermeasure, countermeasures)]
                }
            };
            for (kind, id, known) in targets {
                if !known.contains(id) {
                    return Err(DelphiError::UnresolvedTarget { quantity: q.clone(), kind, id: id.clone() });
                }
            }
        }
        Ok(())
    }

    fn ensure_mutable(&self) -> Result<(), DelphiError> {
        match self.state {
            SessionState::Finalized => Err(DelphiError::Finalized),
            SessionState::Deadlocked => Err(DelphiError::Deadlocked(self.round_count())),
            _ => Ok(()),
        }
    }

    fn log(&mut self, event: String) {
        let seq = self.audit.len() as u32 + 1;
        self.audit.push(AuditEntry { seq, event });
    }

    /// Starts the next round. Estimates from the previous round are carried
    /// over as unconfirmed defaults.
    pub fn open_round(&mut self) -> Result<u32, DelphiError> {
        self.ensure_mutable()?;
        if self.state == SessionState::RoundActive {
            return Err(DelphiError::RoundActive(self.round_count()));
        }
        if self.round_count() >= self.max_rounds {
            return Err(DelphiError::RoundCapReached(self.max_rounds));
        }
        let estimates = match self.rounds.last() {
            Some(prev) => prev
                .estimates
                .iter()
                .map(|(q, cells)| {
                    let carried =
                        cells.iter().map(|(p, e)| (p.clone(), Estimate { value: e.value, confirmed: false })).collect();
                    (q.clone(), carried)
                })
                .collect(),
            None => self.quantities.iter().map(|q| (q.clone(), BTreeMap::new())).collect(),
        };
        let number = self.round_count() + 1;
        self.rounds.push(Round { number, status: RoundStatus::Collecting, estimates, report: None });
        self.state = SessionState::RoundActive;
        self.log(format!("round {number} opened"));
        Ok(number)
    }

    fn active_round_mut(&mut self) -> Result<&mut Round, DelphiError> {
        self.ensure_mutable()?;
        if self.state != SessionState::RoundActive {
            return Err(DelphiError::NoActiveRound);
        }
        self.rounds.last_mut().ok_or(DelphiError::NoActiveRound)
    }

    /// Records (or overwrites) an estimate in the active round.
    pub fn submit_estimate(
        &mut self,
        participant: &str,
        quantity: &QuantityRef,
        value: f64,
    ) -> Result<u32, DelphiError> {
        self.ensure_mutable()?;
        if !self.is_participant(participant) {
            return Err(DelphiError::UnknownParticipant(participant.to_string()));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(DelphiError::ValueOutOfRange(value));
        }
        let round = self.active_round_mut()?;
        let cells = round.estimates.get_mut(quantity).ok_or_else(|| DelphiError::UnknownQuantity(quantity.clone()))?;
        cells.insert(participant.to_string(), Estimate { value, confirmed: true });
        Ok(round.number)
    }

    /// Affirms a carried-over estimate without changing it.
    pub fn confirm_estimate(&mut self, participant: &str, quantity: &QuantityRef) -> Result<f64, DelphiError> {
        self.ensure_mutable()?;
        if !self.is_participant(participant) {
            return Err(DelphiError::UnknownParticipant(participant.to_string()));
        }
        let round = self.active_round_mut()?;
        let number = round.number;
        let cells = round.estimates.get_mut(quantity).ok_or_else(|| DelphiError::UnknownQuantity(quantity.clone()))?;
        match cells.get_mut(participant) {
            Some(e) => {
                e.confirmed = true;
                Ok(e.value)
            }
            None => Err(DelphiError::IncompleteRound {
                round: number,
                missing: vec![MissingCell { participant: participant.to_string(), quantity: quantity.clone() }],
            }),
        }
    }

    /// Cells of the active round that are empty or only carried over.
    pub fn missing_cells(&self) -> Vec<MissingCell> {
        let Some(round) = self.rounds.last().filter(|r| r.status == RoundStatus::Collecting) else {
            return Vec::new();
        };
        let mut missing = Vec::new();
        for p in &self.roster {
            for q in &self.quantities {
                let ok = round.estimates.get(q).and_then(|c| c.get(p)).is_some_and(|e| e.confirmed);
                if !ok {
                    missing.push(MissingCell { participant: p.clone(), quantity: q.clone() });
                }
            }
        }
        missing
    }

    pub fn close_round(&mut self) -> Result<ConsensusReport, DelphiError> {
        let missing = self.missing_cells();
        let (threshold, band) = (self.threshold, self.band);
        let quantities = self.quantities.clone();
        let round = self.active_round_mut()?;
        if !missing.is_empty() {
            return Err(DelphiError::IncompleteRound { round: round.number, missing });
        }
        let columns: Vec<(QuantityRef, Vec<f64>)> =
            quantities.iter().map(|q| (q.clone(), round.estimates[q].values().map(|e| e.value).collect())).collect();
        let report = ConsensusReport::compute(round.number, threshold, band, &columns)?;
        round.status = RoundStatus::Closed;
        round.report = Some(report.clone());
        let number = round.number;
        self.state = if !report.overall_reached && number >= self.max_rounds {
            SessionState::Deadlocked
        } else {
            SessionState::Open
        };
        self.log(format!(
            "round {number} closed; consensus {}",
            if report.overall_reached { "reached" } else { "not reached" }
        ));
        if self.state == SessionState::Deadlocked {
            self.log(format!("deadlocked at round cap {}", self.max_rounds));
        }
        Ok(report)
    }

    /// Moderator finalization after consensus.
    pub fn finalize(&mut self, actor: &str) -> Result<EstimateSet, DelphiError> {
        self.check_moderator(actor)?;
        match self.state {
            SessionState::Finalized => return Err(DelphiError::Finalized),
            SessionState::Deadlocked => return Err(DelphiError::ConsensusNotReached),
            SessionState::RoundActive => return Err(DelphiError::RoundActive(self.round_count())),
            SessionState::Open => {}
        }
        let report = self.rounds.last().and_then(|r| r.report.as_ref()).ok_or(DelphiError::ConsensusNotReached)?;
        if !report.overall_reached {
            return Err(DelphiError::ConsensusNotReached);
        }
        self.seal(false, "finalized by moderator".into())
    }

    /// Moderator override for a deadlocked session; flagged in the result and
    /// the audit trail.
    pub fn force_finalize(&mut self, actor: &str, reason: &str) -> Result<EstimateSet, DelphiError> {
        self.check_moderator(actor)?;
        match self.state {
            SessionState::Finalized => Err(DelphiError::Finalized),
            SessionState::Deadlocked => self.seal(true, format!("FORCED finalization by moderator: {reason}")),
            _ => Err(DelphiError::NotDeadlocked),
        }
    }

    fn check_moderator(&self, actor: &str) -> Result<(), DelphiError> {
        if actor == self.moderator {
            Ok(())
        } else {
            Err(DelphiError::NotModerator(actor.to_string()))
        }
    }

    fn seal(&mut self, forced: bool, event: String) -> Result<EstimateSet, DelphiError> {
        let report = self.rounds.last().and_then(|r| r.report.as_ref()).ok_or(DelphiError::ConsensusNotReached)?;
        let mut values: BTreeMap<QuantityRef, f64> =
            report.quantities.iter().map(|q| (q.quantity.clone(), q.median)).collect();
        let weight_sum: f64 = values.iter().filter(|(q, _)| q.kind() == QuantityKind::Weight).map(|(_, v)| v).sum();
        let has_weights = values.keys().any(|q| q.kind() == QuantityKind::Weight);
        if has_weights {
            if weight_sum <= 0.0 {
                return Err(DelphiError::ZeroWeightSum);
            }
            for (q, v) in values.iter_mut() {
                if q.kind() == QuantityKind::Weight {
                    *v /= weight_sum;
                }
            }
        }
        let set = EstimateSet { session_id: self.id.clone(), rounds: self.round_count(), forced, values };
        self.result = Some(set.clone());
        self.state = SessionState::Finalized;
        self.log(event);
        Ok(set)
    }
}
