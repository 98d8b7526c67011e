use std::fs;
use std::path::Path;

use secrisk_core::delphi::{ConsensusReport, DelphiSession, EstimateSet, SessionState};
use secrisk_core::registry::{
    apply_estimates, impact_matrix_to_csv, parse_round_table, reduction_matrix_to_csv, reductions_from_estimates,
    Document, EstimatesDocument, SessionDocument,
};
use secrisk_core::report::{consensus_table, estimates_table, Display, Table};

use super::{load_context, read};
use crate::args::{DelphiArgs, GlobalArgs};
use crate::exit::{CliError, Status};

pub fn run(g: &GlobalArgs, a: &DelphiArgs) -> Result<Status, CliError> {
    let doc = SessionDocument::load(&a.session)?;
    let mut session = DelphiSession::create(doc.definition)?;
    let mut report = g.report();
    let mut last: Option<ConsensusReport> = None;
    for path in &a.rounds {
        if let Some(r) = last.as_ref().filter(|r| r.overall_reached) {
            return Err(CliError::Invalid(format!(
                "{}: consensus was already reached in round {}",
                path.display(),
                r.round
            )));
        }
        let closed = replay_round(&mut session, path)?;
        report.push(consensus_table(&closed, g.rounding()));
        last = Some(closed);
    }
    let moderator = session.moderator().to_string();
    let (status, estimates) = match session.state() {
        SessionState::Deadlocked => match &a.force {
            Some(reason) => (Status::Success, Some(session.force_finalize(&moderator, reason)?)),
            None => {
                report.push(deadlock_table(&session, last.as_ref(), g));
                (Status::Deadlocked, None)
            }
        },
        _ if last.as_ref().is_some_and(|r| r.overall_reached) => (Status::Success, Some(session.finalize(&moderator)?)),
        _ => (Status::Unresolved, None),
    };
    if let Some(set) = &estimates {
        report.push(estimates_table(set, g.rounding()));
        if let Some(dir) = &a.emit {
            emit(a, dir, set)?;
        }
    }
    g.emit(&report)?;
    Ok(status)
}

/// Opens a round, submits every cell of the file and closes it.
fn replay_round(session: &mut DelphiSession, path: &Path) -> Result<ConsensusReport, CliError> {
    let in_file = |e: CliError| match e.status() {
        Status::Invalid => CliError::Invalid(format!("{}: {e}", path.display())),
        _ => e,
    };
    let table = parse_round_table(&read(path)?).map_err(|e| in_file(e.into()))?;
    session.open_round().map_err(|e| in_file(e.into()))?;
    table.apply(session).map_err(|e| in_file(e.into()))?;
    session.close_round().map_err(|e| in_file(e.into()))
}

fn deadlock_table(session: &DelphiSession, last: Option<&ConsensusReport>, g: &GlobalArgs) -> Table {
    let d = Display::new(g.rounding());
    let rows = last
        .map(|r| {
            r.quantities
                .iter()
                .filter(|q| !q.reached)
                .map(|q| vec![q.quantity.to_string(), d.value(q.median), d.value(q.ratio)])
                .collect()
        })
        .unwrap_or_default();
    Table {
        title: format!("Session {} deadlocked after {} rounds", session.id(), session.round_count()),
        header: vec!["quantity".into(), "median".into(), "ratio".into()],
        rows,
        notes: vec!["rerun with --force REASON to accept the last medians".into()],
    }
}

/// Writes the finalized set and, when inputs were given, the updated documents.
fn emit(a: &DelphiArgs, dir: &Path, set: &EstimateSet) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    EstimatesDocument::new(set.clone()).save(&dir.join("estimates.json"))?;
    if let Some(matrix) = reductions_from_estimates(set)? {
        let path = dir.join("reductions.csv");
        fs::write(&path, reduction_matrix_to_csv(&matrix)).map_err(CliError::io(path))?;
    }
    if let (Some(profile), Some(risks)) = (&a.profile, &a.risks) {
        let (profile, register) = load_context(profile, risks, a.matrix.as_deref(), false)?;
        let (profile, mut register, impacts) = apply_estimates(&profile, &register, register.impacts.as_ref(), set)?;
        register.impacts = None;
        profile.save(&dir.join("profile.json"))?;
        register.save(&dir.join("risks.json"))?;
        let path = dir.join("impact.csv");
        fs::write(&path, impact_matrix_to_csv(&impacts)).map_err(CliError::io(path))?;
    }
    Ok(())
}
