//! The computations the service delegates to.
//!
//! Handlers only move values between requests, the store and these calls.
//! Tests swap in a recording implementation to check that every number in a
//! response came out of one of them.

use secrisk_core::registry::{diff_snapshots, AssessmentInputs, AssessmentSnapshot, MonitoringReport, RegistryError};
use secrisk_core::report::{display_evaluation, DisplayedEvaluation, RoundingMode};
use secrisk_core::treatment::{self, OptimizeMode, PlanEvaluation, TreatmentContext, TreatmentError};

pub trait Engine: Send + Sync + 'static {
    fn assess(
        &self,
        org_id: &str,
        profile_version: u64,
        inputs: AssessmentInputs,
        timestamp: String,
    ) -> Result<AssessmentSnapshot, RegistryError>;

    fn evaluate(&self, ctx: &TreatmentContext, plan: &[String]) -> Result<PlanEvaluation, TreatmentError>;

    fn optimize(&self, ctx: &TreatmentContext, mode: OptimizeMode) -> Result<PlanEvaluation, TreatmentError>;

    fn what_if(
        &self,
        ctx: &TreatmentContext,
        current: &PlanEvaluation,
        toggle: &str,
    ) -> Result<PlanEvaluation, TreatmentError>;

    fn display(&self, eval: &PlanEvaluation, mode: RoundingMode) -> DisplayedEvaluation;

    fn diff(&self, from: &AssessmentSnapshot, to: &AssessmentSnapshot) -> Result<MonitoringReport, RegistryError>;
}

/// Straight calls into `secrisk-core`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CoreEngine;

impl Engine for CoreEngine {
    fn assess(
        &self,
        org_id: &str,
        profile_version: u64,
        inputs: AssessmentInputs,
        timestamp: String,
    ) -> Result<AssessmentSnapshot, RegistryError> {
        AssessmentSnapshot::build(org_id, profile_version, inputs, timestamp)
    }

    fn evaluate(&self, ctx: &TreatmentContext, plan: &[String]) -> Result<PlanEvaluation, TreatmentError> {
        treatment::evaluate_plan(ctx, plan)
    }

    fn optimize(&self, ctx: &TreatmentContext, mode: OptimizeMode) -> Result<PlanEvaluation, TreatmentError> {
        treatment::optimize_plan(ctx, mode, treatment::DEFAULT_EXACT_CAP)
    }

    fn what_if(
        &self,
        ctx: &TreatmentContext,
        current: &PlanEvaluation,
        toggle: &str,
    ) -> Result<PlanEvaluation, TreatmentError> {
        treatment::what_if(ctx, current, toggle)
    }

    fn display(&self, eval: &PlanEvaluation, mode: RoundingMode) -> DisplayedEvaluation {
        display_evaluation(eval, mode)
    }

    fn diff(&self, from: &AssessmentSnapshot, to: &AssessmentSnapshot) -> Result<MonitoringReport, RegistryError> {
        diff_snapshots(from, to)
    }
}
