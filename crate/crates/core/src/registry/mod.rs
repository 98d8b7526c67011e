//! Documents the tool reads and writes: organization profiles, risk
//! registers, countermeasure catalogs, Delphi session definitions, and
//! assessment snapshots, plus comma-separated tables for matrices and Delphi
//! rounds.
//!
//! Every structured document is JSON carrying a `format` tag such as
//! `secrisk.profile/1`. Documents with a missing or unknown tag are rejected.

mod snapshot;
mod store;
mod tabular;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delphi::{EstimateSet, QuantityRef, SessionDefinition};
use crate::model::{self, ImpactMatrix, ModelError, ObjectiveSet, RiskRecord};
use crate::treatment::ReductionMatrix;

pub use snapshot::{
    diff_snapshots, AssessmentInputs, AssessmentResults, AssessmentSnapshot, MonitoringReport, RiskDelta,
    TreatmentInputs,
};
pub use store::{DocKind, Store, Versioned};
pub use tabular::{
    impact_matrix_to_csv, parse_impact_matrix, parse_reduction_matrix, parse_round_table, reduction_matrix_to_csv,
    round_table_to_csv, RoundTable,
};

pub const PROFILE_FORMAT: &str = "secrisk.profile/1";
pub const REGISTER_FORMAT: &str = "secrisk.risks/1";
pub const CATALOG_FORMAT: &str = "secrisk.catalog/1";
pub const SESSION_FORMAT: &str = "secrisk.delphi-session/1";
pub const ESTIMATES_FORMAT: &str = "secrisk.estimates/1";
pub const SNAPSHOT_FORMAT: &str = "secrisk.snapshot/1";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{document}: {field}: {message}")]
    Invalid { document: &'static str, field: String, message: String },
    #[error("{document}: unsupported format `{found}` (expected `{expected}`)")]
    UnknownFormat { document: &'static str, found: String, expected: &'static str },
    #[error("{document}: missing cell at ({row}, {column})")]
    MissingCell { document: &'static str, row: String, column: String },
    #[error("{document}: unknown id `{id}` at ({row}, {column})")]
    UnknownId { document: &'static str, id: String, row: String, column: String },
    #[error("{document}: value `{value}` at ({row}, {column}) {reason}")]
    BadValue { document: &'static str, row: String, column: String, value: String, reason: &'static str },
    #[error("cannot diff snapshots of different organizations (`{0}` vs `{1}`)")]
    CrossOrgDiff(String, String),
    #[error("snapshot `{0}` already exists and cannot be modified")]
    SnapshotImmutable(String),
    #[error("snapshot `{id}` does not reproduce its stored results")]
    SnapshotMismatch { id: String },
    #[error("version conflict on {key}: expected {expected}, found {found}")]
    VersionConflict { key: String, expected: u64, found: u64 },
    #[error("{0} not found")]
    NotFound(String),
    #[error("store at {0} is locked by another instance")]
    StoreLocked(PathBuf),
    #[error("store at {path} is not writable: {source}")]
    StoreUnwritable { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Treatment(#[from] crate::treatment::TreatmentError),
    #[error(transparent)]
    Delphi(#[from] crate::delphi::DelphiError),
}

impl RegistryError {
    fn invalid(document: &'static str, field: impl Into<String>, message: impl Into<String>) -> Self {
        RegistryError::Invalid { document, field: field.into(), message: message.into() }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io { path: path.to_path_buf(), source }
}

/// A JSON document with a `format` tag and validation rules.
pub trait Document: Serialize + DeserializeOwned {
    const FORMAT: &'static str;
    const NAME: &'static str;

    fn validate(&self) -> Result<(), RegistryError> {
        Ok(())
    }

    fn from_json(text: &str) -> Result<Self, RegistryError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| RegistryError::invalid(Self::NAME, format!("line {}", e.line()), e.to_string()))?;
        let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("");
        if found != Self::FORMAT {
            return Err(RegistryError::UnknownFormat {
                document: Self::NAME,
                found: found.to_string(),
                expected: Self::FORMAT,
            });
        }
        let doc: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            RegistryError::invalid(Self::NAME, path, e.into_inner().to_string())
        })?;
        doc.validate()?;
        Ok(doc)
    }

    fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("documents serialize");
        text.push('\n');
        text
    }

    fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    fn save(&self, path: &Path) -> Result<(), RegistryError> {
        self.validate()?;
        fs::write(path, self.to_json()).map_err(io_err(path))
    }
}

fn check_unit(document: &'static str, field: String, value: f64) -> Result<(), RegistryError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RegistryError::invalid(document, field, format!("{value} is outside [0, 1]")))
    }
}

fn check_unique<'a>(
    document: &'static str,
    field: &str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<(), RegistryError> {
    let mut seen = BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if id.trim().is_empty() {
            return Err(RegistryError::invalid(document, format!("{field}[{i}].id"), "id must not be empty"));
        }
        if !seen.insert(id) {
            return Err(RegistryError::invalid(document, format!("{field}[{i}].id"), format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequirementLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityRequirement {
    pub attribute: String,
    pub level: RequirementLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizationProfile {
    pub format: String,
    pub org_id: String,
    pub name: String,
    pub objectives: ObjectiveSet,
    #[serde(default)]
    pub security_requirements: Vec<SecurityRequirement>,
    /// Risks with a level strictly below this are acceptable.
    pub tolerance: f64,
}

impl OrganizationProfile {
    pub fn new(org_id: &str, name: &str, objectives: ObjectiveSet, tolerance: f64) -> Self {
        Self {
            format: PROFILE_FORMAT.to_string(),
            org_id: org_id.to_string(),
            name: name.to_string(),
            objectives,
            security_requirements: Vec::new(),
            tolerance,
        }
    }

    /// Copy with objective weights scaled to sum to exactly 1.
    pub fn renormalized(&self) -> Result<Self, RegistryError> {
        Ok(Self { objectives: self.objectives.renormalized()?, ..self.clone() })
    }
}

impl Document for OrganizationProfile {
    const FORMAT: &'static str = PROFILE_FORMAT;
    const NAME: &'static str = "profile";

    fn validate(&self) -> Result<(), RegistryError> {
        if self.objectives.is_empty() {
            return Err(RegistryError::invalid(Self::NAME, "objectives", "at least one objective is required"));
        }
        check_unique(Self::NAME, "objectives", self.objectives.ids())?;
        for (i, o) in self.objectives.iter().enumerate() {
            check_unit(Self::NAME, format!("objectives[{i}].weight"), o.weight)?;
        }
        model::validate_weights(&self.objectives)
            .map_err(|e| RegistryError::invalid(Self::NAME, "objectives", e.to_string()))?;
        check_unit(Self::NAME, "tolerance".into(), self.tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskRegister {
    pub format: String,
    pub org_id: String,
    pub risks: Vec<RiskRecord>,
    /// Optional embedded impact matrix; the CLI normally reads it from a
    /// separate table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impacts: Option<ImpactMatrix>,
}

impl RiskRegister {
    pub fn new(org_id: &str, risks: Vec<RiskRecord>) -> Self {
        Self { format: REGISTER_FORMAT.to_string(), org_id: org_id.to_string(), risks, impacts: None }
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.risks.iter().map(|r| r.id.clone()).collect()
    }
}

impl Document for RiskRegister {
    const FORMAT: &'static str = REGISTER_FORMAT;
    const NAME: &'static str = "risk register";

    fn validate(&self) -> Result<(), RegistryError> {
        check_unique(Self::NAME, "risks", self.risks.iter().map(|r| r.id.as_str()))?;
        for (i, r) in self.risks.iter().enumerate() {
            check_unit(Self::NAME, format!("risks[{i}].likelihood"), r.likelihood)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountermeasureRecord {
    pub id: String,
    pub name: String,
    /// Risk tags this countermeasure applies to.
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "default_cost")]
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

fn default_cost() -> f64 {
    crate::treatment::DEFAULT_COST
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountermeasureCatalog {
    pub format: String,
    pub countermeasures: Vec<CountermeasureRecord>,
}

impl CountermeasureCatalog {
    pub fn new(countermeasures: Vec<CountermeasureRecord>) -> Self {
        Self { format: CATALOG_FORMAT.to_string(), countermeasures }
    }

    pub fn get(&self, id: &str) -> Option<&CountermeasureRecord> {
        self.countermeasures.iter().find(|c| c.id == id)
    }

    pub fn costs(&self) -> BTreeMap<String, f64> {
        self.countermeasures.iter().map(|c| (c.id.clone(), c.cost)).collect()
    }

    /// Records sharing at least one tag with the query, ordered by id. Tags
    /// compare case-insensitively after trimming.
    pub fn lookup<S: AsRef<str>>(&self, tags: &[S]) -> Vec<&CountermeasureRecord> {
        let wanted: BTreeSet<String> = tags.iter().map(|t| normalize_tag(t.as_ref())).collect();
        let mut hits: Vec<&CountermeasureRecord> =
            self.countermeasures.iter().filter(|c| c.tags.iter().any(|t| wanted.contains(&normalize_tag(t)))).collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits
    }
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase()
}

impl Document for CountermeasureCatalog {
    const FORMAT: &'static str = CATALOG_FORMAT;
    const NAME: &'static str = "catalog";

    fn validate(&self) -> Result<(), RegistryError> {
        check_unique(Self::NAME, "countermeasures", self.countermeasures.iter().map(|c| c.id.as_str()))?;
        for (i, c) in self.countermeasures.iter().enumerate() {
            if !(c.cost >= 0.0 && c.cost.is_finite()) {
                return Err(RegistryError::invalid(
                    Self::NAME,
                    format!("countermeasures[{i}].cost"),
                    format!("{} must be a non-negative number", c.cost),
                ));
            }
        }
        Ok(())
    }
}

/// Session definition file driving a batch Delphi replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub format: String,
    #[serde(flatten)]
    pub definition: SessionDefinition,
}

impl Document for SessionDocument {
    const FORMAT: &'static str = SESSION_FORMAT;
    const NAME: &'static str = "delphi session";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesDocument {
    pub format: String,
    #[serde(flatten)]
    pub estimates: EstimateSet,
}

impl EstimatesDocument {
    pub fn new(estimates: EstimateSet) -> Self {
        Self { format: ESTIMATES_FORMAT.to_string(), estimates }
    }
}

impl Document for EstimatesDocument {
    const FORMAT: &'static str = ESTIMATES_FORMAT;
    const NAME: &'static str = "estimates";
}

/// Writes finalized Delphi values into a profile, register and impact matrix.
///
/// Impact cells not covered by the estimate set are taken from `impacts`; if
/// that is absent too the cell is reported missing.
pub fn apply_estimates(
    profile: &OrganizationProfile,
    register: &RiskRegister,
    impacts: Option<&ImpactMatrix>,
    estimates: &EstimateSet,
) -> Result<(OrganizationProfile, RiskRegister, ImpactMatrix), RegistryError> {
    let mut profile = profile.clone();
    let mut register = register.clone();
    let objective_ids: Vec<String> = profile.objectives.ids().map(str::to_string).collect();
    let risk_ids = register.ids();
    for o in profile.objectives.0.iter_mut() {
        if let Some(w) = estimates.get(&QuantityRef::Weight { objective: o.id.clone() }) {
            o.weight = w;
        }
    }
    for r in register.risks.iter_mut() {
        if let Some(l) = estimates.get(&QuantityRef::Likelihood { risk: r.id.clone() }) {
            r.likelihood = l;
        }
    }
    for q in estimates.values.keys() {
        let unknown = match q {
            QuantityRef::Weight { objective } => (!objective_ids.contains(objective)).then_some(objective),
            QuantityRef::Likelihood { risk } => (!risk_ids.contains(risk)).then_some(risk),
            QuantityRef::Impact { risk, objective } => {
                if !risk_ids.contains(risk) {
                    Some(risk)
                } else {
                    (!objective_ids.contains(objective)).then_some(objective)
                }
            }
            QuantityRef::LevelRed { .. } => None,
        };
        if let Some(id) = unknown {
            return Err(RegistryError::invalid("estimates", q.to_string(), format!("unknown id `{id}`")));
        }
    }
    let mut rows = Vec::with_capacity(register.risks.len());
    for r in &register.risks {
        let mut row = BTreeMap::new();
        for o in &objective_ids {
            let q = QuantityRef::Impact { risk: r.id.clone(), objective: o.clone() };
            let v = estimates.get(&q).or_else(|| impacts.and_then(|m| m.get(&r.id, o))).ok_or_else(|| {
                RegistryError::MissingCell { document: "impact matrix", row: r.id.clone(), column: o.clone() }
            })?;
            row.insert(o.clone(), v);
        }
        rows.push((r.id.clone(), row));
    }
    let matrix = ImpactMatrix::from_rows(&objective_ids, rows)?;
    profile.validate()?;
    register.validate()?;
    Ok((profile, register, matrix))
}

/// Reduction matrix assembled from `levelred:` estimates, one column per risk
/// in first-seen order.
pub fn reductions_from_estimates(estimates: &EstimateSet) -> Result<Option<ReductionMatrix>, RegistryError> {
    let mut risks: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (q, v) in &estimates.values {
        if let QuantityRef::LevelRed { risk, countermeasure } = q {
            if !risks.contains(risk) {
                risks.push(risk.clone());
            }
            table.entry(countermeasure.clone()).or_default().insert(risk.clone(), *v);
        }
    }
    if table.is_empty() {
        return Ok(None);
    }
    let rows = table
        .into_iter()
        .map(|(c, cells)| {
            let values = risks.iter().map(|r| cells.get(r).copied().unwrap_or(0.0)).collect();
            (c, values)
        })
        .collect();
    Ok(Some(ReductionMatrix::new(risks, rows)?))
}
