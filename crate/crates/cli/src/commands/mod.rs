mod assess;
mod delphi;
mod serve;
mod treat;

use std::fs;
use std::io::Write;
use std::path::Path;

use secrisk_core::registry::{
    parse_impact_matrix, AssessmentSnapshot, Document, OrganizationProfile, RegistryError, RiskRegister, Store,
};
use secrisk_core::report::{ReportDocument, RoundingMode};

use crate::args::{Cli, Command, GlobalArgs, SnapshotOut};
use crate::exit::{CliError, Status};

pub fn dispatch(cli: Cli) -> Result<Status, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Check(a) => assess::check(g, a),
        Command::Lookup(a) => assess::lookup(g, a),
        Command::Delphi(a) => delphi::run(g, a),
        Command::Assess(a) => assess::run(g, a),
        Command::Treat(a) => treat::run(g, a),
        Command::Monitor(a) => treat::monitor(g, a),
        Command::Serve(a) => serve::run(g, a),
    }
}

impl GlobalArgs {
    fn rounding(&self) -> RoundingMode {
        self.mode.into()
    }

    fn report(&self) -> ReportDocument {
        ReportDocument::new(self.rounding())
    }

    /// Renders the report to `--out` or standard output.
    fn emit(&self, report: &ReportDocument) -> Result<(), CliError> {
        let text = report.render(self.format.into());
        match &self.out {
            Some(path) => fs::write(path, text).map_err(CliError::io(path)),
            None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(CliError::io("<stdout>")),
        }
    }

    fn open_store(&self) -> Result<Option<Store>, CliError> {
        self.store.as_ref().map(|root| Store::open(root.as_path())).transpose().map_err(CliError::from)
    }

    /// A snapshot file if `reference` names one, otherwise a store id.
    fn load_snapshot(&self, reference: &str) -> Result<AssessmentSnapshot, CliError> {
        let path = Path::new(reference);
        let snapshot = if path.is_file() {
            AssessmentSnapshot::load(path)?
        } else if let Some(store) = self.open_store()? {
            store.snapshot(reference)?
        } else {
            return Err(CliError::Invalid(format!(
                "`{reference}` is not a file and no store is configured to look it up in"
            )));
        };
        snapshot.verify()?;
        Ok(snapshot)
    }

    /// Records the snapshot in the store and/or a file, and notes where on stderr.
    fn keep_snapshot(&self, snapshot: &AssessmentSnapshot, out: &SnapshotOut) -> Result<(), CliError> {
        if let Some(store) = self.open_store()? {
            match store.record_snapshot(snapshot) {
                Ok(_) | Err(RegistryError::SnapshotImmutable(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if let Some(path) = &out.snapshot_out {
            snapshot.save(path)?;
        }
        eprintln!("snapshot {} at {}", snapshot.id, snapshot.timestamp);
        Ok(())
    }
}

impl SnapshotOut {
    fn timestamp(&self) -> Result<String, CliError> {
        match &self.timestamp {
            Some(t) => chrono::DateTime::parse_from_rfc3339(t)
                .map(|_| t.clone())
                .map_err(|e| CliError::Invalid(format!("--timestamp `{t}`: {e}"))),
            None => Ok(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

/// Profile and register from disk, with the impact matrix attached.
///
/// The matrix comes from `matrix` when given, else from the register. With
/// `require_impacts` unset a register without one is accepted as is.
fn load_context(
    profile: &Path,
    risks: &Path,
    matrix: Option<&Path>,
    require_impacts: bool,
) -> Result<(OrganizationProfile, RiskRegister), CliError> {
    let profile = OrganizationProfile::load(profile)?;
    let mut register = RiskRegister::load(risks)?;
    if profile.org_id != register.org_id {
        return Err(CliError::Invalid(format!(
            "profile is for `{}` but the register is for `{}`",
            profile.org_id, register.org_id
        )));
    }
    if let Some(path) = matrix {
        register.impacts = Some(parse_impact_matrix(&read(path)?, &profile, &register)?);
    }
    if require_impacts && register.impacts.is_none() {
        return Err(CliError::Invalid("no impact matrix: pass --matrix or embed `impacts` in the register".into()));
    }
    Ok((profile, register))
}
