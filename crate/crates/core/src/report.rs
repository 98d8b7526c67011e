//! Report tables and display rounding.
//!
//! Two rounding modes exist. `full` prints six significant digits and
//! aggregates at full precision. `paper-compat` rounds every displayed value
//! to two decimals (half-up) and builds displayed totals from those rounded
//! values.
//! Classifications always come from full-precision values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::delphi::{ConsensusReport, EstimateSet};
use crate::model::{Classification, RiskLevelResult};
use crate::registry::MonitoringReport;
use crate::treatment::{PlanEvaluation, ReductionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingMode {
    #[default]
    Full,
    PaperCompat,
}

impl FromStr for RoundingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "paper-compat" => Ok(Self::PaperCompat),
            other => Err(format!("unknown rounding mode `{other}` (expected full or paper-compat)")),
        }
    }
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundingMode::Full => "full",
            RoundingMode::PaperCompat => "paper-compat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderTarget {
    #[default]
    Text,
    Csv,
}

impl FromStr for RenderTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format `{other}` (expected text or csv)")),
        }
    }
}

const PAPER_DECIMALS: u32 = 2;
const FULL_SIGNIFICANT: i32 = 6;
/// Decimal places used to read a binary value as decimal text before
/// rounding; absorbs representation error such as 0.105 being stored as
/// 0.10499999999999999611.
const DECIMAL_GUARD: usize = 12;

/// Half-up (away from zero) rounding to `decimals` places, applied to the
/// value's decimal expansion rather than its binary one.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let decimals = decimals.min(DECIMAL_GUARD as u32);
    let text = format!("{:.*}", DECIMAL_GUARD, x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let digits: String = format!("{int_part}{frac_part}");
    let Ok(scaled) = digits.parse::<i128>() else {
        return x;
    };
    let factor = 10i128.pow(DECIMAL_GUARD as u32 - decimals);
    let mut q = scaled / factor;
    if (scaled % factor) * 2 >= factor {
        q += 1;
    }
    let magnitude = q as f64 / 10f64.powi(decimals as i32);
    if x.is_sign_negative() {
        -magnitude
    } else {
        magnitude
    }
}

pub fn format_fixed(x: f64, decimals: u32) -> String {
    let s = format!("{:.*}", decimals as usize, round_half_up(x, decimals));
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn format_significant(x: f64, significant: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", (significant - 1) as usize, x.abs());
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (significant - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Turns numbers into display strings for one rounding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Display {
    pub mode: RoundingMode,
}

impl Display {
    pub fn new(mode: RoundingMode) -> Self {
        Self { mode }
    }

    /// The number a reader sees, before formatting.
    pub fn shown(&self, x: f64) -> f64 {
        match self.mode {
            RoundingMode::Full => x,
            RoundingMode::PaperCompat => round_half_up(x, PAPER_DECIMALS),
        }
    }

    pub fn value(&self, x: f64) -> String {
        match self.mode {
            RoundingMode::Full => format_significant(x, FULL_SIGNIFICANT),
            RoundingMode::PaperCompat => format_fixed(x, PAPER_DECIMALS),
        }
    }

    /// Displayed total: full-precision sum, or the sum of displayed parts.
    pub fn total_shown(&self, parts: &[f64], full_total: f64) -> f64 {
        match self.mode {
            RoundingMode::Full => full_total,
            RoundingMode::PaperCompat => round_half_up(parts.iter().map(|&p| self.shown(p)).sum(), PAPER_DECIMALS),
        }
    }

    pub fn total(&self, parts: &[f64], full_total: f64) -> String {
        self.value(self.total_shown(parts, full_total))
    }

    /// Relative reduction from `before` to `after`, in whole percent.
    pub fn percent_reduction(&self, before: f64, after: f64) -> String {
        if before <= 0.0 {
            return "n/a".to_string();
        }
        format!("{}%", format_fixed((before - after) / before * 100.0, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Table {
    fn render_text(&self, out: &mut String) {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate().take(cols) {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate().take(cols) {
                if i > 0 {
                    s.push_str("  ");
                }
                if i == 0 {
                    s.push_str(&format!("{cell:<w$}", w = widths[i]));
                } else {
                    s.push_str(&format!("{cell:>w$}", w = widths[i]));
                }
            }
            s.trim_end().to_string()
        };
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&line(&self.header));
        out.push('\n');
        let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        for note in &self.notes {
            out.push_str(note);
            out.push('\n');
        }
    }

    fn render_csv(&self, out: &mut String) {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row).expect("in-memory write");
        }
        let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input");
        out.push_str(&format!("# {}\n", self.title));
        out.push_str(&body);
        for note in &self.notes {
            out.push_str(&format!("# {note}\n"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub mode: RoundingMode,
    pub tables: Vec<Table>,
}

impl ReportDocument {
    pub fn new(mode: RoundingMode) -> Self {
        Self { mode, tables: Vec::new() }
    }

    pub fn push(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn render(&self, target: RenderTarget) -> String {
        let mut out = String::new();
        for (i, table) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            match target {
                RenderTarget::Text => table.render_text(&mut out),
                RenderTarget::Csv => table.render_csv(&mut out),
            }
        }
        out
    }
}

fn mode_suffix(mode: RoundingMode) -> String {
    format!("[rounding: {mode}]")
}

/// Risk levels, classifications and the global level.
pub fn levels_table(results: &[RiskLevelResult], grl: f64, alpha: f64, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let mut rows: Vec<Vec<String>> =
        results.iter().map(|r| vec![r.risk.clone(), d.value(r.level), r.classification.to_string()]).collect();
    let levels: Vec<f64> = results.iter().map(|r| r.level).collect();
    rows.push(vec!["GRL".into(), d.total(&levels, grl), String::new()]);
    let unacceptable: Vec<&str> =
        results.iter().filter(|r| r.classification == Classification::Unacceptable).map(|r| r.risk.as_str()).collect();
    Table {
        title: format!("Risk levels {}", mode_suffix(mode)),
        header: vec!["risk".into(), "level".into(), "classification".into()],
        rows,
        notes: vec![
            format!("tolerance: {alpha}"),
            format!(
                "requires treatment: {}",
                if unacceptable.is_empty() { "none".to_string() } else { unacceptable.join(", ") }
            ),
        ],
    }
}

/// Reductions of the plan's countermeasures with the combined reduction row.
pub fn reduction_table(eval: &PlanEvaluation, matrix: &ReductionMatrix, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let risks = matrix.risks();
    let mut header = vec!["countermeasure".to_string()];
    header.extend(risks.iter().map(|r| format!("levelred({r})")));
    let mut rows: Vec<Vec<String>> = eval
        .plan
        .countermeasures
        .iter()
        .map(|c| {
            let mut row = vec![c.clone()];
            row.extend(risks.iter().map(|r| d.value(matrix.reduction(c, r))));
            row
        })
        .collect();
    let mut crr_row = vec!["CRR".to_string()];
    crr_row.extend(risks.iter().map(|r| d.value(eval.outcome(r).map_or(0.0, |o| o.crr))));
    rows.push(crr_row);
    Table { title: format!("Risk reduction matrix {}", mode_suffix(mode)), header, rows, notes: Vec::new() }
}

/// Levels before and after the plan, with GRL, reduction and GRR lines.
pub fn before_after_table(eval: &PlanEvaluation, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let mut rows: Vec<Vec<String>> = eval
        .risks
        .iter()
        .map(|o| vec![o.risk.clone(), d.value(o.level), d.value(o.residual), o.after.to_string()])
        .collect();
    let levels: Vec<f64> = eval.risks.iter().map(|o| o.level).collect();
    let residuals: Vec<f64> = eval.risks.iter().map(|o| o.residual).collect();
    let before = d.total_shown(&levels, eval.grl_before);
    let after = d.total_shown(&residuals, eval.grl_after);
    rows.push(vec!["GRL".into(), d.value(before), d.value(after), String::new()]);
    let crrs: Vec<f64> = eval.risks.iter().filter(|o| o.treated).map(|o| o.crr).collect();
    Table {
        title: format!("Risk levels before and after treatment {}", mode_suffix(mode)),
        header: vec!["risk".into(), "before".into(), "after".into(), "classification".into()],
        rows,
        notes: vec![
            format!(
                "plan: {}",
                if eval.plan.countermeasures.is_empty() {
                    "(none)".into()
                } else {
                    eval.plan.countermeasures.join(", ")
                }
            ),
            format!("plan cost: {}", format_significant(eval.plan.total_cost, 6)),
            format!("GRL reduction: {}", d.percent_reduction(before, after)),
            format!("GRR: {}", d.total(&crrs, eval.grr)),
            format!("feasible: {}", if eval.feasible { "yes" } else { "no" }),
        ],
    }
}

pub fn monitoring_table(report: &MonitoringReport, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let mut rows: Vec<Vec<String>> = report
        .risks
        .iter()
        .map(|r| {
            let flip = if r.flipped() { format!("{} -> {}", r.before_class, r.after_class) } else { String::new() };
            let delta = match mode {
                RoundingMode::Full => r.delta,
                RoundingMode::PaperCompat => d.shown(r.after) - d.shown(r.before),
            };
            vec![r.risk.clone(), d.value(r.before), d.value(r.after), d.value(delta), flip]
        })
        .collect();
    for (risk, level) in &report.added {
        rows.push(vec![risk.clone(), "-".into(), d.value(*level), "new".into(), String::new()]);
    }
    for (risk, level) in &report.retired {
        rows.push(vec![risk.clone(), d.value(*level), "-".into(), "retired".into(), String::new()]);
    }
    let before_parts: Vec<f64> =
        report.risks.iter().map(|r| r.before).chain(report.retired.iter().map(|(_, l)| *l)).collect();
    let after_parts: Vec<f64> =
        report.risks.iter().map(|r| r.after).chain(report.added.iter().map(|(_, l)| *l)).collect();
    let before = d.total_shown(&before_parts, report.grl_before);
    let after = d.total_shown(&after_parts, report.grl_after);
    let delta = match mode {
        RoundingMode::Full => report.grl_delta,
        RoundingMode::PaperCompat => after - before,
    };
    rows.push(vec!["GRL".into(), d.value(before), d.value(after), d.value(delta), String::new()]);
    Table {
        title: format!("Monitoring {} -> {} {}", report.from, report.to, mode_suffix(mode)),
        header: vec!["risk".into(), "before".into(), "after".into(), "delta".into(), "flip".into()],
        rows,
        notes: Vec::new(),
    }
}

/// Display strings for a plan evaluation, for clients that must not round
/// on their own.
/// Aggregate feedback for one closed Delphi round. Carries no participant ids.
pub fn consensus_table(report: &ConsensusReport, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let rows = report
        .quantities
        .iter()
        .map(|q| {
            vec![
                q.quantity.to_string(),
                d.value(q.median),
                d.value(q.min),
                d.value(q.max),
                d.value(q.ratio),
                if q.reached { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    let reached = report.quantities.iter().filter(|q| q.reached).count();
    Table {
        title: format!("Delphi round {} {}", report.round, mode_suffix(mode)),
        header: ["quantity", "median", "min", "max", "ratio", "agreed"].map(String::from).to_vec(),
        rows,
        notes: vec![
            format!("agreement band: {}, threshold: {}", report.band, report.threshold),
            format!(
                "consensus: {} ({reached} of {} quantities)",
                if report.overall_reached { "reached" } else { "not reached" },
                report.quantities.len()
            ),
        ],
    }
}

pub fn estimates_table(estimates: &EstimateSet, mode: RoundingMode) -> Table {
    let d = Display::new(mode);
    let mut notes = vec![format!("rounds: {}", estimates.rounds)];
    if estimates.forced {
        notes.push("FORCED: finalized by moderator override without consensus".into());
    }
    Table {
        title: format!("Final estimates for {} {}", estimates.session_id, mode_suffix(mode)),
        header: vec!["quantity".into(), "value".into()],
        rows: estimates.values.iter().map(|(q, v)| vec![q.to_string(), d.value(*v)]).collect(),
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayedEvaluation {
    pub mode: RoundingMode,
    pub risks: Vec<DisplayedOutcome>,
    pub grl_before: String,
    pub grl_after: String,
    pub grr: String,
    pub reduction: String,
    pub alpha: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayedOutcome {
    pub risk: String,
    pub level: String,
    pub crr: String,
    pub residual: String,
    pub classification: Classification,
}

pub fn display_evaluation(eval: &PlanEvaluation, mode: RoundingMode) -> DisplayedEvaluation {
    let d = Display::new(mode);
    let levels: Vec<f64> = eval.risks.iter().map(|o| o.level).collect();
    let residuals: Vec<f64> = eval.risks.iter().map(|o| o.residual).collect();
    let crrs: Vec<f64> = eval.risks.iter().filter(|o| o.treated).map(|o| o.crr).collect();
    let before = d.total_shown(&levels, eval.grl_before);
    let after = d.total_shown(&residuals, eval.grl_after);
    DisplayedEvaluation {
        mode,
        risks: eval
            .risks
            .iter()
            .map(|o| DisplayedOutcome {
                risk: o.risk.clone(),
                level: d.value(o.level),
                crr: d.value(o.crr),
                residual: d.value(o.residual),
                classification: o.after,
            })
            .collect(),
        grl_before: d.value(before),
        grl_after: d.value(after),
        grr: d.total(&crrs, eval.grr),
        reduction: d.percent_reduction(before, after),
        alpha: d.value(eval.alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_on_decimal_expansion() {
        assert_eq!(format_fixed(0.105, 2), "0.11");
        assert_eq!(format_fixed(0.1225, 2), "0.12");
        assert_eq!(format_fixed(0.45899999999999996, 2), "0.46");
        assert_eq!(format_fixed(0.10699999999999998, 2), "0.11");
        assert_eq!(format_fixed(0.504, 2), "0.50");
        assert_eq!(format_fixed(0.125, 2), "0.13");
        assert_eq!(format_fixed(-0.125, 2), "-0.13");
        assert_eq!(format_fixed(-0.001, 2), "0.00");
        assert_eq!(format_fixed(69.23, 0), "69");
        assert_eq!(format_fixed(0.5, 0), "1");
    }

    #[test]
    fn full_mode_significant_digits() {
        let d = Display::new(RoundingMode::Full);
        assert_eq!(d.value(0.45899999999999996), "0.459000");
        assert_eq!(d.value(1.2974999999999999), "1.29750");
        assert_eq!(d.value(0.00918), "0.00918000");
        assert_eq!(d.value(0.0), "0.00000");
    }

    #[test]
    fn paper_totals_sum_rounded_parts() {
        let d = Display::new(RoundingMode::PaperCompat);
        let residuals = [0.00918, 0.107, 0.1225, 0.0504, 0.105];
        assert_eq!(d.total(&residuals, 0.39408), "0.40");
        let full = Display::new(RoundingMode::Full);
        assert_eq!(full.total(&residuals, 0.39408), "0.394080");
        assert_eq!(d.percent_reduction(1.30, 0.40), "69%");
        assert_eq!(d.percent_reduction(0.0, 0.0), "n/a");
    }

    #[test]
    fn csv_and_text_render() {
        let t = Table {
            title: "T".into(),
            header: vec!["a".into(), "b".into()],
            rows: vec![vec!["x".into(), "1,5".into()]],
            notes: vec!["n".into()],
        };
        let mut doc = ReportDocument::new(RoundingMode::Full);
        doc.push(t);
        assert_eq!(doc.render(RenderTarget::Csv), "# T\na,b\nx,\"1,5\"\n# n\n");
        assert_eq!(doc.render(RenderTarget::Text), "T\na    b\n------\nx  1,5\nn\n");
    }

    #[test]
    fn monitoring_totals_follow_the_mode() {
        let delta = |risk: &str, before: f64, after: f64| crate::registry::RiskDelta {
            risk: risk.into(),
            before,
            after,
            delta: after - before,
            before_class: Classification::Acceptable,
            after_class: Classification::Acceptable,
        };
        let report = MonitoringReport {
            org_id: "o".into(),
            from: "a".into(),
            to: "b".into(),
            risks: vec![delta("r1", 0.459, 0.00918), delta("r4", 0.504, 0.0504)],
            added: vec![("r6".into(), 0.105)],
            retired: vec![("r2".into(), 0.107)],
            grl_before: 1.07,
            grl_after: 0.16458,
            grl_delta: 0.16458 - 1.07,
        };
        let paper = monitoring_table(&report, RoundingMode::PaperCompat);
        assert_eq!(paper.rows[0][3], "-0.45");
        assert_eq!(paper.rows.last().unwrap()[1..4], ["1.07", "0.17", "-0.90"]);
        let full = monitoring_table(&report, RoundingMode::Full);
        assert_eq!(full.rows.last().unwrap()[2], "0.164580");
    }

    #[test]
    fn delphi_tables_carry_no_participants() {
        use crate::delphi::QuantityRef;
        let q: QuantityRef = "weight:o1".parse().unwrap();
        let report = ConsensusReport::compute(2, 0.85, 0.05, &[(q.clone(), vec![0.2, 0.2, 0.9])]).unwrap();
        let t = consensus_table(&report, RoundingMode::PaperCompat);
        assert_eq!(t.rows, vec![vec!["weight:o1", "0.20", "0.20", "0.90", "0.67", "no"]]);
        assert!(t.notes[1].starts_with("consensus: not reached"));
        let set =
            EstimateSet { session_id: "s".into(), rounds: 2, forced: true, values: [(q, 1.0)].into_iter().collect() };
        let t = estimates_table(&set, RoundingMode::Full);
        assert_eq!(t.rows, vec![vec!["weight:o1", "1.00000"]]);
        assert!(t.notes.iter().any(|n| n.starts_with("FORCED")));
    }
}
