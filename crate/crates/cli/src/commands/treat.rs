use std::collections::BTreeSet;

use secrisk_core::registry::{
    diff_snapshots, parse_reduction_matrix, AssessmentSnapshot, CountermeasureCatalog, Document, TreatmentInputs,
};
use secrisk_core::report::{before_after_table, monitoring_table, reduction_table};
use secrisk_core::treatment::{evaluate_plan, optimize_plan, TreatmentContext, DEFAULT_EXACT_CAP};

use super::read;
use crate::args::{GlobalArgs, MonitorArgs, TreatArgs};
use crate::exit::{CliError, Status};

pub fn run(g: &GlobalArgs, a: &TreatArgs) -> Result<Status, CliError> {
    let base = g.load_snapshot(&a.snapshot)?;
    let alpha = a.alpha_override.unwrap_or(base.alpha());
    let catalog = a.catalog.as_deref().map(CountermeasureCatalog::load).transpose()?;
    let risks: BTreeSet<String> = base.inputs.risks.iter().map(|r| r.id.clone()).collect();
    let known: Option<BTreeSet<String>> =
        catalog.as_ref().map(|c| c.countermeasures.iter().map(|m| m.id.clone()).collect());
    let reductions = parse_reduction_matrix(&read(&a.reductions)?, Some(&risks), known.as_ref())?;
    let costs = catalog.map(|c| c.costs()).unwrap_or_default();
    let levels = base.results.levels.iter().map(|l| (l.risk.clone(), l.level)).collect();
    let ctx = TreatmentContext::new(levels, reductions.clone(), costs.clone(), alpha)?;
    let eval = match (&a.plan, a.optimize) {
        (Some(plan), _) => evaluate_plan(&ctx, plan)?,
        (None, Some(method)) => optimize_plan(&ctx, method.into(), DEFAULT_EXACT_CAP)?,
        (None, None) => return Err(CliError::Invalid("give --plan or --optimize".into())),
    };

    let mut inputs = base.inputs.clone();
    inputs.alpha = alpha;
    inputs.treatment =
        Some(TreatmentInputs { reductions: reductions.clone(), costs, plan: eval.plan.countermeasures.clone() });
    let treated = AssessmentSnapshot::build(&base.org_id, base.profile_version, inputs, a.snapshot_out.timestamp()?)?;
    g.keep_snapshot(&treated, &a.snapshot_out)?;

    let mut report = g.report();
    report.push(reduction_table(&eval, &reductions, g.rounding()));
    report.push(before_after_table(&eval, g.rounding()));
    g.emit(&report)?;
    Ok(if eval.feasible { Status::Success } else { Status::Infeasible })
}

pub fn monitor(g: &GlobalArgs, a: &MonitorArgs) -> Result<Status, CliError> {
    let from = g.load_snapshot(&a.from)?;
    let to = g.load_snapshot(&a.to)?;
    let diff = diff_snapshots(&from, &to)?;
    let mut report = g.report();
    report.push(monitoring_table(&diff, g.rounding()));
    g.emit(&report)?;
    Ok(Status::Success)
}
