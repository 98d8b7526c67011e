//! Frozen assessments and the monitoring diff between two of them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{self, Classification, ImpactMatrix, ObjectiveSet, RiskLevelResult, RiskRecord};
use crate::treatment::{self, PlanEvaluation, ReductionMatrix, TreatmentContext};

use super::{Document, RegistryError, SNAPSHOT_FORMAT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentInputs {
    pub reductions: ReductionMatrix,
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
    pub plan: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentInputs {
    pub objectives: ObjectiveSet,
    pub risks: Vec<RiskRecord>,
    pub impacts: ImpactMatrix,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<TreatmentInputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentResults {
    pub levels: Vec<RiskLevelResult>,
    pub grl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<PlanEvaluation>,
}

impl AssessmentInputs {
    pub fn compute(&self) -> Result<AssessmentResults, RegistryError> {
        let levels = model::evaluate_register(&self.objectives, &self.risks, &self.impacts, self.alpha)?;
        let grl = model::global_risk_level(&levels.iter().map(|l| l.level).collect::<Vec<_>>());
        let treatment = match &self.treatment {
            Some(t) => {
                let ctx = TreatmentContext::new(
                    levels.iter().map(|l| (l.risk.clone(), l.level)).collect(),
                    t.reductions.clone(),
                    t.costs.clone(),
                    self.alpha,
                )?;
                Some(treatment::evaluate_plan(&ctx, &t.plan)?)
            }
            None => None,
        };
        Ok(AssessmentResults { levels, grl, treatment })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentSnapshot {
    pub format: String,
    /// Content hash of the inputs and results.
    pub id: String,
    pub timestamp: String,
    pub org_id: String,
    pub profile_version: u64,
    pub inputs: AssessmentInputs,
    pub results: AssessmentResults,
}

impl AssessmentSnapshot {
    pub fn build(
        org_id: &str,
        profile_version: u64,
        inputs: AssessmentInputs,
        timestamp: String,
    ) -> Result<Self, RegistryError> {
        let results = inputs.compute()?;
        let id = content_id(org_id, profile_version, &inputs, &results);
        Ok(Self {
            format: SNAPSHOT_FORMAT.to_string(),
            id,
            timestamp,
            org_id: org_id.to_string(),
            profile_version,
            inputs,
            results,
        })
    }

    /// Recomputes from the stored inputs and requires a bit-exact match.
    pub fn verify(&self) -> Result<(), RegistryError> {
        let recomputed = self.inputs.compute()?;
        let same = recomputed == self.results
            && self.id == content_id(&self.org_id, self.profile_version, &self.inputs, &self.results)
            && bits_equal(&recomputed, &self.results);
        if same {
            Ok(())
        } else {
            Err(RegistryError::SnapshotMismatch { id: self.id.clone() })
        }
    }

    pub fn alpha(&self) -> f64 {
        self.inputs.alpha
    }

    /// Post-treatment level per risk if a plan was applied, else the assessed level.
    pub fn effective_levels(&self) -> Vec<(String, f64)> {
        match &self.results.treatment {
            Some(t) => t.risks.iter().map(|o| (o.risk.clone(), o.residual)).collect(),
            None => self.results.levels.iter().map(|l| (l.risk.clone(), l.level)).collect(),
        }
    }

    pub fn effective_grl(&self) -> f64 {
        match &self.results.treatment {
            Some(t) => t.grl_after,
            None => self.results.grl,
        }
    }
}

impl Document for AssessmentSnapshot {
    const FORMAT: &'static str = SNAPSHOT_FORMAT;
    const NAME: &'static str = "snapshot";

    fn validate(&self) -> Result<(), RegistryError> {
        self.verify()
    }
}

fn bits_equal(a: &AssessmentResults, b: &AssessmentResults) -> bool {
    let flat = |r: &AssessmentResults| -> Vec<u64> {
        let mut v: Vec<u64> = r.levels.iter().map(|l| l.level.to_bits()).collect();
        v.push(r.grl.to_bits());
        if let Some(t) = &r.treatment {
            for o in &t.risks {
                v.extend([o.level.to_bits(), o.crr.to_bits(), o.residual.to_bits()]);
            }
            v.extend([t.grl_before.to_bits(), t.grl_after.to_bits(), t.grr.to_bits(), t.plan.total_cost.to_bits()]);
        }
        v
    };
    flat(a) == flat(b)
}

fn content_id(org_id: &str, profile_version: u64, inputs: &AssessmentInputs, results: &AssessmentResults) -> String {
    let mut hasher = Sha256::new();
    hasher.update(org_id.as_bytes());
    hasher.update(profile_version.to_le_bytes());
    hasher.update(serde_json::to_vec(inputs).expect("inputs serialize"));
    hasher.update(serde_json::to_vec(results).expect("results serialize"));
    format!("snap-{}", &hex::encode(hasher.finalize())[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDelta {
    pub risk: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
    pub before_class: Classification,
    pub after_class: Classification,
}

impl RiskDelta {
    pub fn flipped(&self) -> bool {
        self.before_class != self.after_class
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringReport {
    pub org_id: String,
    pub from: String,
    pub to: String,
    /// Risks present in both snapshots, in the order of the later one.
    pub risks: Vec<RiskDelta>,
    /// Newly identified risks and their level.
    pub added: Vec<(String, f64)>,
    /// Risks no longer present and their last level.
    pub retired: Vec<(String, f64)>,
    pub grl_before: f64,
    pub grl_after: f64,
    pub grl_delta: f64,
}

impl MonitoringReport {
    pub fn flips(&self) -> Vec<&RiskDelta> {
        self.risks.iter().filter(|d| d.flipped()).collect()
    }
}

/// Level changes from `a` to `b`, using post-treatment levels where a plan
/// was applied.
pub fn diff_snapshots(a: &AssessmentSnapshot, b: &AssessmentSnapshot) -> Result<MonitoringReport, RegistryError> {
    if a.org_id != b.org_id {
        return Err(RegistryError::CrossOrgDiff(a.org_id.clone(), b.org_id.clone()));
    }
    let before: BTreeMap<String, f64> = a.effective_levels().into_iter().collect();
    let after_levels = b.effective_levels();
    let after_ids: BTreeSet<&str> = after_levels.iter().map(|(r, _)| r.as_str()).collect();
    let mut risks = Vec::new();
    let mut added = Vec::new();
    for (risk, after) in &after_levels {
        match before.get(risk) {
            Some(&prev) => risks.push(RiskDelta {
                risk: risk.clone(),
                before: prev,
                after: *after,
                delta: after - prev,
                before_class: model::classify(prev, a.alpha()),
                after_class: model::classify(*after, b.alpha()),
            }),
            None => added.push((risk.clone(), *after)),
        }
    }
    let retired = a.effective_levels().into_iter().filter(|(r, _)| !after_ids.contains(r.as_str())).collect();
    let (grl_before, grl_after) = (a.effective_grl(), b.effective_grl());
    Ok(MonitoringReport {
        org_id: a.org_id.clone(),
        from: a.id.clone(),
        to: b.id.clone(),
        risks,
        added,
        retired,
        grl_before,
        grl_after,
        grl_delta: grl_after - grl_before,
    })
}
