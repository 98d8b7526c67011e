//! Objective-weighted risk arithmetic.
//!
//! Everything here is a pure function of its inputs. The other modules call
//! into this one for every level, reduction, and aggregate they report, so
//! there is exactly one place where the formulas live.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of the objective weight sum from 1.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("objective set is empty")]
    EmptyObjectives,
    #[error("{0}")]
    Weights(WeightViolation),
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: String, value: f64 },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("impact row for risk `{risk}` has no entry for objective `{objective}`")]
    MissingImpact { risk: String, objective: String },
    #[error("impact row for risk `{risk}` names unknown objective `{objective}`")]
    UnknownObjective { risk: String, objective: String },
    #[error("impact matrix has no row for risk `{0}`")]
    MissingRow(String),
    #[error("impact matrix has a row for unknown risk `{0}`")]
    UnknownRisk(String),
    #[error("weights sum to zero and cannot be renormalized")]
    ZeroWeightSum,
}

/// Why a set of weights was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightViolation {
    /// Objectives whose individual weight lies outside [0, 1].
    pub out_of_range: Vec<String>,
    pub sum: f64,
}

impl fmt::Display for WeightViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "objective weights sum to {} (must be 1 within {WEIGHT_SUM_TOLERANCE:e})", self.sum)?;
        if !self.out_of_range.is_empty() {
            write!(f, "; weights outside [0, 1]: {}", self.out_of_range.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub id: String,
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveSet(pub Vec<Objective>);

impl ObjectiveSet {
    pub fn new(objectives: Vec<Objective>) -> Self {
        Self(objectives)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Objective> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|o| o.id.as_str())
    }

    pub fn weight_sum(&self) -> f64 {
        self.0.iter().map(|o| o.weight).sum()
    }

    /// Copy with weights scaled proportionally so they sum to 1.
    pub fn renormalized(&self) -> Result<Self, ModelError> {
        let sum = self.weight_sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(ModelError::ZeroWeightSum);
        }
        Ok(Self(self.0.iter().map(|o| Objective { weight: o.weight / sum, ..o.clone() }).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub id: String,
    pub name: String,
    pub likelihood: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Acceptable,
    Unacceptable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Acceptable => "acceptable",
            Classification::Unacceptable => "unacceptable",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLevelResult {
    pub risk: String,
    pub level: f64,
    pub classification: Classification,
}

/// Dense risk × objective impact table.
///
/// Rows follow the order the risks were supplied in, columns the order of the
/// objectives. Every cell must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImpactRows", into = "ImpactRows")]
pub struct ImpactMatrix {
    risks: Vec<String>,
    objectives: Vec<String>,
    cells: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImpactRows {
    objectives: Vec<String>,
    rows: Vec<ImpactRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImpactRow {
    risk: String,
    impacts: Vec<f64>,
}

impl TryFrom<ImpactRows> for ImpactMatrix {
    type Error = ModelError;

    fn try_from(raw: ImpactRows) -> Result<Self, Self::Error> {
        let mut rows = Vec::with_capacity(raw.rows.len());
        for row in raw.rows {
            if row.impacts.len() != raw.objectives.len() {
                let objective =
                    raw.objectives.get(row.impacts.len()).cloned().unwrap_or_else(|| format!("#{}", row.impacts.len()));
                return Err(ModelError::MissingImpact { risk: row.risk, objective });
            }
            let cells = raw.objectives.iter().cloned().zip(row.impacts).collect();
            rows.push((row.risk, cells));
        }
        ImpactMatrix::from_rows(&raw.objectives, rows)
    }
}

impl From<ImpactMatrix> for ImpactRows {
    fn from(m: ImpactMatrix) -> Self {
        let width = m.objectives.len();
        let rows = m
            .risks
            .iter()
            .enumerate()
            .map(|(i, risk)| ImpactRow { risk: risk.clone(), impacts: m.cells[i * width..(i + 1) * width].to_vec() })
            .collect();
        ImpactRows { objectives: m.objectives, rows }
    }
}

impl ImpactMatrix {
    /// Build from per-risk rows keyed by objective id. Each row must name every
    /// objective exactly once.
    pub fn from_rows<I>(objectives: &[String], rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (String, BTreeMap<String, f64>)>,
    {
        let mut seen_objectives = BTreeSet::new();
        for o in objectives {
            if !seen_objectives.insert(o.as_str()) {
                return Err(ModelError::DuplicateId(o.clone()));
            }
        }
        let mut risks = Vec::new();
        let mut seen_risks = BTreeSet::new();
        let mut cells = Vec::new();
        for (risk, row) in rows {
            if !seen_risks.insert(risk.clone()) {
                return Err(ModelError::DuplicateId(risk));
            }
            for key in row.keys() {
                if !seen_objectives.contains(key.as_str()) {
                    return Err(ModelError::UnknownObjective { risk: risk.clone(), objective: key.clone() });
                }
            }
            for o in objectives {
                let v = *row
                    .get(o)
                    .ok_or_else(|| ModelError::MissingImpact { risk: risk.clone(), objective: o.clone() })?;
                check_unit(&format!("impact({risk}, {o})"), v)?;
                cells.push(v);
            }
            risks.push(risk);
        }
        Ok(Self { risks, objectives: objectives.to_vec(), cells })
    }

    pub fn risks(&self) -> &[String] {
        &self.risks
    }

    pub fn objectives(&self) -> &[String] {
        &self.objectives
    }

    pub fn get(&self, risk: &str, objective: &str) -> Option<f64> {
        let i = self.risks.iter().position(|r| r == risk)?;
        let j = self.objectives.iter().position(|o| o == objective)?;
        Some(self.cells[i * self.objectives.len() + j])
    }

    pub fn row(&self, risk: &str) -> Option<BTreeMap<String, f64>> {
        let i = self.risks.iter().position(|r| r == risk)?;
        let width = self.objectives.len();
        Some(self.objectives.iter().cloned().zip(self.cells[i * width..(i + 1) * width].iter().copied()).collect())
    }

    /// Checks that rows match `risks` and columns match `objectives` as sets.
    pub fn check_shape(&self, risks: &[RiskRecord], objectives: &ObjectiveSet) -> Result<(), ModelError> {
        let want: BTreeSet<&str> = objectives.ids().collect();
        let have: BTreeSet<&str> = self.objectives.iter().map(String::as_str).collect();
        if let Some(o) = want.difference(&have).next() {
            let risk = self.risks.first().cloned().unwrap_or_default();
            return Err(ModelError::MissingImpact { risk, objective: (*o).to_string() });
        }
        if let Some(o) = have.difference(&want).next() {
            let risk = self.risks.first().cloned().unwrap_or_default();
            return Err(ModelError::UnknownObjective { risk, objective: (*o).to_string() });
        }
        let want: BTreeSet<&str> = risks.iter().map(|r| r.id.as_str()).collect();
        let have: BTreeSet<&str> = self.risks.iter().map(String::as_str).collect();
        if let Some(r) = want.difference(&have).next() {
            return Err(ModelError::MissingRow((*r).to_string()));
        }
        if let Some(r) = have.difference(&want).next() {
            return Err(ModelError::UnknownRisk((*r).to_string()));
        }
        Ok(())
    }
}

fn check_unit(field: &str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::OutOfRange { field: field.to_string(), value })
    }
}

pub fn validate_weights(objectives: &ObjectiveSet) -> Result<(), ModelError> {
    if objectives.is_empty() {
        return Err(ModelError::EmptyObjectives);
    }
    let out_of_range: Vec<String> =
        objectives.iter().filter(|o| !(0.0..=1.0).contains(&o.weight)).map(|o| o.id.clone()).collect();
    let sum = objectives.weight_sum();
    if out_of_range.is_empty() && (sum - 1.0).abs() <= WEIGHT_SUM_TOLERANCE {
        Ok(())
    } else {
        Err(ModelError::Weights(WeightViolation { out_of_range, sum }))
    }
}

/// Likelihood times the weighted sum of the risk's impacts on each objective.
///
/// Capped at 1 so weight sums inside the tolerance cannot push a level past it.
pub fn risk_level(
    risk: &RiskRecord,
    objectives: &ObjectiveSet,
    impact_row: &BTreeMap<String, f64>,
) -> Result<f64, ModelError> {
    check_unit(&format!("likelihood({})", risk.id), risk.likelihood)?;
    if let Some(extra) = impact_row.keys().find(|k| !objectives.ids().any(|o| o == k.as_str())) {
        return Err(ModelError::UnknownObjective { risk: risk.id.clone(), objective: extra.clone() });
    }
    let mut weighted = 0.0;
    for o in objectives.iter() {
        let impact = *impact_row
            .get(&o.id)
            .ok_or_else(|| ModelError::MissingImpact { risk: risk.id.clone(), objective: o.id.clone() })?;
        check_unit(&format!("impact({}, {})", risk.id, o.id), impact)?;
        weighted += o.weight * impact;
    }
    Ok((risk.likelihood * weighted).min(1.0))
}

pub fn global_risk_level(levels: &[f64]) -> f64 {
    levels.iter().sum()
}

/// A level is acceptable only when strictly below the tolerance.
pub fn classify(level: f64, alpha: f64) -> Classification {
    if level < alpha {
        Classification::Acceptable
    } else {
        Classification::Unacceptable
    }
}

/// Joint reduction from independently applied countermeasures.
pub fn combined_risk_reduction<I>(reductions: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let remaining: f64 = reductions.into_iter().map(|r| 1.0 - r).product();
    1.0 - remaining
}

pub fn residual_level(level: f64, crr: f64) -> f64 {
    level * (1.0 - crr)
}

pub fn global_risk_reduction(crrs: &[f64]) -> f64 {
    crrs.iter().sum()
}

/// Levels and classifications for a whole register.
pub fn evaluate_register(
    objectives: &ObjectiveSet,
    risks: &[RiskRecord],
    matrix: &ImpactMatrix,
    alpha: f64,
) -> Result<Vec<RiskLevelResult>, ModelError> {
    validate_weights(objectives)?;
    check_unit("tolerance", alpha)?;
    matrix.check_shape(risks, objectives)?;
    let mut seen = BTreeSet::new();
    risks
        .iter()
        .map(|risk| {
            if !seen.insert(risk.id.as_str()) {
                return Err(ModelError::DuplicateId(risk.id.clone()));
            }
            let row = matrix.row(&risk.id).ok_or_else(|| ModelError::MissingRow(risk.id.clone()))?;
            let level = risk_level(risk, objectives, &row)?;
            Ok(RiskLevelResult { risk: risk.id.clone(), level, classification: classify(level, alpha) })
        })
        .collect()
}
