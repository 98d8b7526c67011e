//! Comma-separated tables: impact matrices, reduction matrices and Delphi
//! round submissions.

use std::collections::{BTreeMap, BTreeSet};

use crate::delphi::{DelphiError, DelphiSession, QuantityRef};
use crate::model::ImpactMatrix;
use crate::treatment::ReductionMatrix;

use super::{OrganizationProfile, RegistryError, RiskRegister};

fn records(document: &'static str, text: &str) -> Result<Vec<Vec<String>>, RegistryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| RegistryError::Invalid {
            document,
            field: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push(rec.iter().map(str::to_string).collect());
    }
    if out.is_empty() {
        return Err(RegistryError::Invalid { document, field: "header".into(), message: "table is empty".into() });
    }
    Ok(out)
}

fn parse_cell(document: &'static str, row: &str, column: &str, cell: Option<&String>) -> Result<f64, RegistryError> {
    let text = cell.map(String::as_str).unwrap_or("");
    if text.is_empty() {
        return Err(RegistryError::MissingCell { document, row: row.into(), column: column.into() });
    }
    let value: f64 = text.parse().map_err(|_| RegistryError::BadValue {
        document,
        row: row.into(),
        column: column.into(),
        value: text.into(),
        reason: "is not a number",
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(RegistryError::BadValue {
            document,
            row: row.into(),
            column: column.into(),
            value: text.into(),
            reason: "is outside [0, 1]",
        });
    }
    Ok(value)
}

/// Shortest decimal text that parses back to the same value.
fn fmt_real(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Reads `risk,<objective ids...>` followed by one row per risk.
pub fn parse_impact_matrix(
    text: &str,
    profile: &OrganizationProfile,
    register: &RiskRegister,
) -> Result<ImpactMatrix, RegistryError> {
    const DOC: &str = "impact matrix";
    let rows = records(DOC, text)?;
    let header = &rows[0];
    let objective_ids: BTreeSet<&str> = profile.objectives.ids().collect();
    let risk_ids = register.ids();
    let columns: Vec<String> = header.iter().skip(1).cloned().collect();
    let mut seen = BTreeSet::new();
    for c in &columns {
        if !objective_ids.contains(c.as_str()) {
            return Err(RegistryError::UnknownId {
                document: DOC,
                id: c.clone(),
                row: "header".into(),
                column: c.clone(),
            });
        }
        if !seen.insert(c.as_str()) {
            return Err(RegistryError::Invalid {
                document: DOC,
                field: format!("header column `{c}`"),
                message: "duplicate column".into(),
            });
        }
    }
    if let Some(o) = profile.objectives.ids().find(|o| !seen.contains(o)) {
        return Err(RegistryError::MissingCell { document: DOC, row: "header".into(), column: o.to_string() });
    }

    let mut parsed: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in &rows[1..] {
        let risk = rec[0].clone();
        if !risk_ids.contains(&risk) {
            return Err(RegistryError::UnknownId {
                document: DOC,
                id: risk.clone(),
                row: risk,
                column: header[0].clone(),
            });
        }
        if parsed.contains_key(&risk) {
            return Err(RegistryError::Invalid {
                document: DOC,
                field: format!("row `{risk}`"),
                message: "duplicate row".into(),
            });
        }
        if rec.len() > columns.len() + 1 {
            return Err(RegistryError::Invalid {
                document: DOC,
                field: format!("row `{risk}`"),
                message: format!("{} cells for {} objectives", rec.len() - 1, columns.len()),
            });
        }
        let mut cells = BTreeMap::new();
        for (j, objective) in columns.iter().enumerate() {
            let v = parse_cell(DOC, &risk, objective, rec.get(j + 1))?;
            cells.insert(objective.clone(), v);
        }
        parsed.insert(risk, cells);
    }

    let objectives: Vec<String> = profile.objectives.ids().map(str::to_string).collect();
    let mut ordered = Vec::with_capacity(register.risks.len());
    for r in &register.risks {
        let row = parsed.remove(&r.id).ok_or_else(|| RegistryError::MissingCell {
            document: DOC,
            row: r.id.clone(),
            column: objectives[0].clone(),
        })?;
        ordered.push((r.id.clone(), row));
    }
    Ok(ImpactMatrix::from_rows(&objectives, ordered)?)
}

pub fn impact_matrix_to_csv(matrix: &ImpactMatrix) -> String {
    let mut out = String::from("risk");
    for o in matrix.objectives() {
        out.push(',');
        out.push_str(o);
    }
    out.push('\n');
    for r in matrix.risks() {
        out.push_str(r);
        for o in matrix.objectives() {
            out.push(',');
            out.push_str(&fmt_real(matrix.get(r, o).unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

/// Reads `countermeasure,<risk ids...>` followed by one row per
/// countermeasure. Ids are checked against `risks` / `countermeasures` when
/// given.
pub fn parse_reduction_matrix(
    text: &str,
    risks: Option<&BTreeSet<String>>,
    countermeasures: Option<&BTreeSet<String>>,
) -> Result<ReductionMatrix, RegistryError> {
    const DOC: &str = "reduction matrix";
    let rows = records(DOC, text)?;
    let header = &rows[0];
    let columns: Vec<String> = header.iter().skip(1).cloned().collect();
    if let Some(known) = risks {
        if let Some(r) = columns.iter().find(|r| !known.contains(*r)) {
            return Err(RegistryError::UnknownId {
                document: DOC,
                id: r.clone(),
                row: "header".into(),
                column: r.clone(),
            });
        }
    }
    let mut out = Vec::new();
    for rec in &rows[1..] {
        let c = rec[0].clone();
        if let Some(known) = countermeasures {
            if !known.contains(&c) {
                return Err(RegistryError::UnknownId {
                    document: DOC,
                    id: c.clone(),
                    row: c,
                    column: header[0].clone(),
                });
            }
        }
        if rec.len() > columns.len() + 1 {
            return Err(RegistryError::Invalid {
                document: DOC,
                field: format!("row `{c}`"),
                message: format!("{} cells for {} risks", rec.len() - 1, columns.len()),
            });
        }
        let values = columns
            .iter()
            .enumerate()
            .map(|(j, r)| parse_cell(DOC, &c, r, rec.get(j + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((c, values));
    }
    Ok(ReductionMatrix::new(columns, out)?)
}

pub fn reduction_matrix_to_csv(matrix: &ReductionMatrix) -> String {
    let mut out = String::from("countermeasure");
    for r in matrix.risks() {
        out.push(',');
        out.push_str(r);
    }
    out.push('\n');
    for c in matrix.countermeasures() {
        out.push_str(c);
        for r in matrix.risks() {
            out.push(',');
            out.push_str(&fmt_real(matrix.reduction(c, r)));
        }
        out.push('\n');
    }
    out
}

/// One Delphi round in tabular form: a row per participant, a column per
/// quantity. Blank cells are estimates not yet given.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTable {
    pub quantities: Vec<QuantityRef>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl RoundTable {
    /// Submits every non-blank cell into the session's active round.
    pub fn apply(&self, session: &mut DelphiSession) -> Result<usize, DelphiError> {
        let mut count = 0;
        for (participant, values) in &self.rows {
            for (q, v) in self.quantities.iter().zip(values) {
                if let Some(v) = v {
                    session.submit_estimate(participant, q, *v)?;
                    count += 1;
                }
            }
        }
        Ok(count)
    }
}

pub fn parse_round_table(text: &str) -> Result<RoundTable, RegistryError> {
    const DOC: &str = "delphi round";
    let rows = records(DOC, text)?;
    let header = &rows[0];
    let quantities = header
        .iter()
        .skip(1)
        .map(|h| {
            h.parse::<QuantityRef>().map_err(|_| RegistryError::UnknownId {
                document: DOC,
                id: h.clone(),
                row: "header".into(),
                column: h.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in &rows[1..] {
        let participant = rec[0].clone();
        if !seen.insert(participant.clone()) {
            return Err(RegistryError::Invalid {
                document: DOC,
                field: format!("row `{participant}`"),
                message: "duplicate participant row".into(),
            });
        }
        let mut values = Vec::with_capacity(quantities.len());
        for (j, q) in quantities.iter().enumerate() {
            let cell = rec.get(j + 1).filter(|c| !c.is_empty());
            values.push(match cell {
                Some(_) => Some(parse_cell(DOC, &participant, &q.to_string(), cell)?),
                None => None,
            });
        }
        out.push((participant, values));
    }
    Ok(RoundTable { quantities, rows: out })
}

pub fn round_table_to_csv(table: &RoundTable) -> String {
    let mut out = String::from("participant");
    for q in &table.quantities {
        out.push(',');
        out.push_str(&q.to_string());
    }
    out.push('\n');
    for (p, values) in &table.rows {
        out.push_str(p);
        for v in values {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&fmt_real(*v));
            }
        }
        out.push('\n');
    }
    out
}
