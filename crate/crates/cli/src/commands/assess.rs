use secrisk_core::registry::{AssessmentInputs, AssessmentSnapshot, CountermeasureCatalog, Document};
use secrisk_core::report::{levels_table, Table};

use super::load_context;
use crate::args::{AssessArgs, CheckArgs, GlobalArgs, LookupArgs};
use crate::exit::{CliError, Status};

/// Profile version recorded for assessments built from loose files.
const FILE_PROFILE_VERSION: u64 = 1;

pub fn check(g: &GlobalArgs, a: &CheckArgs) -> Result<Status, CliError> {
    let (profile, register) = load_context(&a.profile, &a.risks, a.matrix.as_deref(), false)?;
    let mut rows = vec![
        vec!["profile".to_string(), profile.org_id.clone(), format!("{} objectives", profile.objectives.0.len())],
        vec!["register".to_string(), register.org_id.clone(), format!("{} risks", register.risks.len())],
    ];
    rows.push(vec![
        "impact matrix".into(),
        String::new(),
        if register.impacts.is_some() { "complete" } else { "absent" }.into(),
    ]);
    if let Some(path) = &a.catalog {
        let catalog = CountermeasureCatalog::load(path)?;
        rows.push(vec!["catalog".into(), String::new(), format!("{} countermeasures", catalog.countermeasures.len())]);
    }
    let mut report = g.report();
    report.push(Table {
        title: "Input check".into(),
        header: vec!["document".into(), "organization".into(), "contents".into()],
        rows,
        notes: vec![format!("tolerance: {}", profile.tolerance)],
    });
    g.emit(&report)?;
    Ok(Status::Success)
}

pub fn lookup(g: &GlobalArgs, a: &LookupArgs) -> Result<Status, CliError> {
    let catalog = CountermeasureCatalog::load(&a.catalog)?;
    let hits = catalog.lookup(&a.tags);
    let mut report = g.report();
    report.push(Table {
        title: format!("Countermeasures for {}", a.tags.join(", ")),
        header: vec!["countermeasure".into(), "name".into(), "tags".into()],
        rows: hits.iter().map(|c| vec![c.id.clone(), c.name.clone(), c.tags.join("; ")]).collect(),
        notes: vec![format!("{} match(es)", hits.len())],
    });
    g.emit(&report)?;
    Ok(Status::Success)
}

pub fn run(g: &GlobalArgs, a: &AssessArgs) -> Result<Status, CliError> {
    let (profile, register) = load_context(&a.profile, &a.risks, a.matrix.as_deref(), true)?;
    let alpha = a.alpha_override.unwrap_or(profile.tolerance);
    let inputs = AssessmentInputs {
        objectives: profile.objectives.clone(),
        risks: register.risks.clone(),
        impacts: register.impacts.clone().expect("load_context checked"),
        alpha,
        treatment: None,
    };
    let snapshot = AssessmentSnapshot::build(&profile.org_id, FILE_PROFILE_VERSION, inputs, a.snapshot.timestamp()?)?;
    g.keep_snapshot(&snapshot, &a.snapshot)?;
    let mut report = g.report();
    report.push(levels_table(&snapshot.results.levels, snapshot.results.grl, alpha, g.rounding()));
    g.emit(&report)?;
    Ok(Status::Success)
}
