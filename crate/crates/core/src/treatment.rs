//! Countermeasure plans: evaluation under combined reduction and selection of
//! cost-effective portfolios that drive every risk below tolerance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Classification};

pub const DEFAULT_COST: f64 = 1.0;
pub const DEFAULT_EXACT_CAP: usize = 20;

/// Slack used only when pruning the exact search, so borderline branches are
/// explored rather than discarded.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreatmentError {
    #[error("unknown countermeasure `{0}`")]
    UnknownCountermeasure(String),
    #[error("reduction matrix names risk `{0}` which has no level")]
    UnknownRisk(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("reduction for ({countermeasure}, {risk}) = {value} is outside [0, 1]")]
    OutOfRange { countermeasure: String, risk: String, value: f64 },
    #[error("cost of `{0}` must be a non-negative number")]
    BadCost(String),
    #[error("tolerance {0} is outside [0, 1]")]
    BadTolerance(f64),
    #[error("exact search is capped at {cap} countermeasures, catalog has {count}")]
    ExactCapExceeded { cap: usize, count: usize },
}

/// Countermeasure × risk table of fractional level reductions.
///
/// Risks that have no column are treated as unaffected by every
/// countermeasure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReductionRows", into = "ReductionRows")]
pub struct ReductionMatrix {
    countermeasures: Vec<String>,
    risks: Vec<String>,
    cells: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReductionRows {
    risks: Vec<String>,
    rows: Vec<ReductionRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReductionRow {
    countermeasure: String,
    reductions: Vec<f64>,
}

impl TryFrom<ReductionRows> for ReductionMatrix {
    type Error = TreatmentError;

    fn try_from(raw: ReductionRows) -> Result<Self, Self::Error> {
        let rows = raw
            .rows
            .into_iter()
            .map(|r| {
                if r.reductions.len() != raw.risks.len() {
                    return Err(TreatmentError::UnknownCountermeasure(format!(
                        "{} (row has {} cells, expected {})",
                        r.countermeasure,
                        r.reductions.len(),
                        raw.risks.len()
                    )));
                }
                Ok((r.countermeasure, r.reductions))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ReductionMatrix::new(raw.risks, rows)
    }
}

impl From<ReductionMatrix> for ReductionRows {
    fn from(m: ReductionMatrix) -> Self {
        let width = m.risks.len();
        let rows = m
            .countermeasures
            .iter()
            .enumerate()
            .map(|(k, c)| ReductionRow {
                countermeasure: c.clone(),
                reductions: m.cells[k * width..(k + 1) * width].to_vec(),
            })
            .collect();
        ReductionRows { risks: m.risks, rows }
    }
}

impl ReductionMatrix {
    pub fn new(risks: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self, TreatmentError> {
        let mut seen = BTreeSet::new();
        for r in &risks {
            if !seen.insert(r) {
                return Err(TreatmentError::DuplicateId(r.clone()));
            }
        }
        let mut countermeasures = Vec::with_capacity(rows.len());
        let mut seen = BTreeSet::new();
        let mut cells = Vec::with_capacity(rows.len() * risks.len());
        for (c, values) in rows {
            if !seen.insert(c.clone()) {
                return Err(TreatmentError::DuplicateId(c));
            }
            for (r, &v) in risks.iter().zip(&values) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(TreatmentError::OutOfRange { countermeasure: c, risk: r.clone(), value: v });
                }
            }
            cells.extend(values);
            countermeasures.push(c);
        }
        Ok(Self { countermeasures, risks, cells })
    }

    pub fn countermeasures(&self) -> &[String] {
        &self.countermeasures
    }

    pub fn risks(&self) -> &[String] {
        &self.risks
    }

    pub fn contains(&self, countermeasure: &str) -> bool {
        self.countermeasures.iter().any(|c| c == countermeasure)
    }

    pub fn reduction(&self, countermeasure: &str, risk: &str) -> f64 {
        let (Some(k), Some(i)) =
            (self.countermeasures.iter().position(|c| c == countermeasure), self.risks.iter().position(|r| r == risk))
        else {
            return 0.0;
        };
        self.cells[k * self.risks.len() + i]
    }

    /// Combined reduction of every listed countermeasure per risk column.
    pub fn column_crr(&self) -> Vec<(String, f64)> {
        self.risks
            .iter()
            .map(|r| {
                let crr = model::combined_risk_reduction(self.countermeasures.iter().map(|c| self.reduction(c, r)));
                (r.clone(), crr)
            })
            .collect()
    }
}

/// Everything a plan is evaluated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentContext {
    /// Pre-treatment level per risk, in report order.
    pub levels: Vec<(String, f64)>,
    pub reductions: ReductionMatrix,
    /// Missing entries cost [`DEFAULT_COST`].
    #[serde(default)]
    pub costs: BTreeMap<String, f64>,
    pub alpha: f64,
}

impl TreatmentContext {
    pub fn new(
        levels: Vec<(String, f64)>,
        reductions: ReductionMatrix,
        costs: BTreeMap<String, f64>,
        alpha: f64,
    ) -> Result<Self, TreatmentError> {
        let ctx = Self { levels, reductions, costs, alpha };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), TreatmentError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TreatmentError::BadTolerance(self.alpha));
        }
        let known: BTreeSet<&str> = self.levels.iter().map(|(r, _)| r.as_str()).collect();
        if known.len() != self.levels.len() {
            let mut seen = BTreeSet::new();
            let dup = self.levels.iter().find(|(r, _)| !seen.insert(r)).map(|(r, _)| r.clone());
            return Err(TreatmentError::DuplicateId(dup.unwrap_or_default()));
        }
        if let Some(r) = self.reductions.risks().iter().find(|r| !known.contains(r.as_str())) {
            return Err(TreatmentError::UnknownRisk(r.clone()));
        }
        for (c, &cost) in &self.costs {
            if !(cost >= 0.0 && cost.is_finite()) {
                return Err(TreatmentError::BadCost(c.clone()));
            }
        }
        Ok(())
    }

    pub fn cost(&self, countermeasure: &str) -> f64 {
        self.costs.get(countermeasure).copied().unwrap_or(DEFAULT_COST)
    }

    fn plan_cost(&self, sorted_ids: &[String]) -> f64 {
        sorted_ids.iter().map(|c| self.cost(c)).sum()
    }

    fn unacceptable(&self) -> Vec<usize> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| model::classify(*l, self.alpha) == Classification::Unacceptable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Countermeasures with a positive reduction on some unacceptable risk.
    pub fn applicable(&self) -> Vec<String> {
        let bad = self.unacceptable();
        let mut ids: Vec<String> = self
            .reductions
            .countermeasures()
            .iter()
            .filter(|c| bad.iter().any(|&i| self.reductions.reduction(c, &self.levels[i].0) > 0.0))
            .cloned()
            .collect();
        ids.sort();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPlan {
    /// Sorted, unique.
    pub countermeasures: Vec<String>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskOutcome {
    pub risk: String,
    pub level: f64,
    pub crr: f64,
    pub residual: f64,
    /// At least one selected countermeasure reduces this risk.
    pub treated: bool,
    pub before: Classification,
    pub after: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub plan: TreatmentPlan,
    pub alpha: f64,
    pub risks: Vec<RiskOutcome>,
    pub grl_before: f64,
    pub grl_after: f64,
    pub grr: f64,
    /// Every residual is below tolerance.
    pub feasible: bool,
}

impl PlanEvaluation {
    pub fn outcome(&self, risk: &str) -> Option<&RiskOutcome> {
        self.risks.iter().find(|o| o.risk == risk)
    }
}

fn normalize_plan<S: AsRef<str>>(ctx: &TreatmentContext, ids: &[S]) -> Result<Vec<String>, TreatmentError> {
    let mut set = BTreeSet::new();
    for id in ids {
        let id = id.as_ref();
        if !ctx.reductions.contains(id) {
            return Err(TreatmentError::UnknownCountermeasure(id.to_string()));
        }
        set.insert(id.to_string());
    }
    Ok(set.into_iter().collect())
}

pub fn evaluate_plan<S: AsRef<str>>(ctx: &TreatmentContext, plan: &[S]) -> Result<PlanEvaluation, TreatmentError> {
    ctx.validate()?;
    let selected = normalize_plan(ctx, plan)?;
    Ok(evaluate_sorted(ctx, selected))
}

fn evaluate_sorted(ctx: &TreatmentContext, selected: Vec<String>) -> PlanEvaluation {
    let mut risks = Vec::with_capacity(ctx.levels.len());
    for (risk, level) in &ctx.levels {
        let reds: Vec<f64> = selected.iter().map(|c| ctx.reductions.reduction(c, risk)).collect();
        let treated = reds.iter().any(|&r| r > 0.0);
        let crr = model::combined_risk_reduction(reds);
        let residual = model::residual_level(*level, crr);
        risks.push(RiskOutcome {
            risk: risk.clone(),
            level: *level,
            crr,
            residual,
            treated,
            before: model::classify(*level, ctx.alpha),
            after: model::classify(residual, ctx.alpha),
        });
    }
    let levels: Vec<f64> = risks.iter().map(|o| o.level).collect();
    let residuals: Vec<f64> = risks.iter().map(|o| o.residual).collect();
    let crrs: Vec<f64> = risks.iter().filter(|o| o.treated).map(|o| o.crr).collect();
    let feasible = risks.iter().all(|o| o.after == Classification::Acceptable);
    let total_cost = ctx.plan_cost(&selected);
    PlanEvaluation {
        plan: TreatmentPlan { countermeasures: selected, total_cost },
        alpha: ctx.alpha,
        grl_before: model::global_risk_level(&levels),
        grl_after: model::global_risk_level(&residuals),
        grr: model::global_risk_reduction(&crrs),
        feasible,
        risks,
    }
}

/// Re-evaluates with one countermeasure switched in or out of the plan.
pub fn what_if(
    ctx: &TreatmentContext,
    current: &PlanEvaluation,
    toggle: &str,
) -> Result<PlanEvaluation, TreatmentError> {
    if !ctx.reductions.contains(toggle) {
        return Err(TreatmentError::UnknownCountermeasure(toggle.to_string()));
    }
    let mut ids: BTreeSet<String> = current.plan.countermeasures.iter().cloned().collect();
    if !ids.remove(toggle) {
        ids.insert(toggle.to_string());
    }
    evaluate_plan(ctx, &ids.into_iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizeMode {
    Exact,
    Greedy,
}

impl std::str::FromStr for OptimizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "greedy" => Ok(Self::Greedy),
            other => Err(format!("unknown optimize mode `{other}` (expected exact or greedy)")),
        }
    }
}

/// Orders candidate plans: lower cost, then fewer members, then the
/// lexicographically smaller sorted id list.
pub fn plan_order(a: (f64, &[String]), b: (f64, &[String])) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.len().cmp(&b.1.len())).then_with(|| a.1.cmp(b.1))
}

/// Selects a plan. Returns the all-applicable plan, flagged infeasible, when
/// no selection can bring every risk below tolerance.
pub fn optimize_plan(
    ctx: &TreatmentContext,
    mode: OptimizeMode,
    exact_cap: usize,
) -> Result<PlanEvaluation, TreatmentError> {
    ctx.validate()?;
    if ctx.unacceptable().is_empty() {
        return Ok(evaluate_sorted(ctx, Vec::new()));
    }
    let found = match mode {
        OptimizeMode::Exact => {
            let count = ctx.reductions.countermeasures().len();
            if count > exact_cap {
                return Err(TreatmentError::ExactCapExceeded { cap: exact_cap, count });
            }
            exact_search(ctx)
        }
        OptimizeMode::Greedy => greedy_search(ctx),
    };
    Ok(match found {
        Some(ids) => evaluate_sorted(ctx, ids),
        None => evaluate_sorted(ctx, ctx.applicable()),
    })
}

struct Search<'a> {
    ctx: &'a TreatmentContext,
    ids: Vec<String>,
    /// red[k][i]: reduction of risk i by countermeasure k
    red: Vec<Vec<f64>>,
    /// suffix[k][i]: product of (1 - red) over countermeasures k.. for risk i
    suffix: Vec<Vec<f64>>,
    costs: Vec<f64>,
    best: Option<(f64, Vec<String>)>,
}

impl Search<'_> {
    fn feasible(&self, remaining: &[f64]) -> bool {
        self.ctx.levels.iter().zip(remaining).all(|((_, level), p)| {
            let crr = 1.0 - p;
            model::classify(model::residual_level(*level, crr), self.ctx.alpha) == Classification::Acceptable
        })
    }

    fn hopeless(&self, k: usize, remaining: &[f64]) -> bool {
        self.ctx
            .levels
            .iter()
            .zip(remaining)
            .zip(&self.suffix[k])
            .any(|(((_, level), p), s)| level * p * s >= self.ctx.alpha + PRUNE_SLACK)
    }

    fn dominated(&self, cost: f64, len: usize) -> bool {
        match &self.best {
            Some((best_cost, best_ids)) => cost > *best_cost || (cost == *best_cost && len >= best_ids.len()),
            None => false,
        }
    }

    fn dfs(&mut self, k: usize, chosen: &mut Vec<usize>, cost: f64, remaining: &[f64]) {
        if self.feasible(remaining) {
            let ids: Vec<String> = chosen.iter().map(|&c| self.ids[c].clone()).collect();
            let better = match &self.best {
                Some((bc, bi)) => plan_order((cost, &ids), (*bc, bi)).is_lt(),
                None => true,
            };
            if better {
                self.best = Some((cost, ids));
            }
            return;
        }
        if k == self.ids.len() || self.dominated(cost, chosen.len()) || self.hopeless(k, remaining) {
            return;
        }
        let next: Vec<f64> = remaining.iter().zip(&self.red[k]).map(|(p, r)| p * (1.0 - r)).collect();
        chosen.push(k);
        let with = cost + self.costs[k];
        if !self.dominated(with, chosen.len()) {
            self.dfs(k + 1, chosen, with, &next);
        }
        chosen.pop();
        self.dfs(k + 1, chosen, cost, remaining);
    }
}

/// Branch and bound over countermeasures in id order, including before
/// excluding, so the first optimum found is also the lexicographic one.
fn exact_search(ctx: &TreatmentContext) -> Option<Vec<String>> {
    let mut ids = ctx.reductions.countermeasures().to_vec();
    ids.sort();
    let red: Vec<Vec<f64>> =
        ids.iter().map(|c| ctx.levels.iter().map(|(r, _)| ctx.reductions.reduction(c, r)).collect()).collect();
    let n = ids.len();
    let mut suffix = vec![vec![1.0; ctx.levels.len()]; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1].iter().zip(&red[k]).map(|(s, r)| s * (1.0 - r)).collect();
    }
    let costs = ids.iter().map(|c| ctx.cost(c)).collect();
    let mut search = Search { ctx, ids, red, suffix, costs, best: None };
    let start = vec![1.0; ctx.levels.len()];
    search.dfs(0, &mut Vec::new(), 0.0, &start);
    search.best.map(|(_, ids)| ids)
}

fn greedy_search(ctx: &TreatmentContext) -> Option<Vec<String>> {
    let mut candidates = ctx.reductions.countermeasures().to_vec();
    candidates.sort();
    let mut selected: Vec<String> = Vec::new();
    let mut current = evaluate_sorted(ctx, selected.clone());
    while !current.feasible {
        let mut best: Option<(f64, String, PlanEvaluation)> = None;
        for c in candidates.iter().filter(|c| !selected.contains(c)) {
            let mut trial = selected.clone();
            trial.push(c.clone());
            trial.sort();
            let eval = evaluate_sorted(ctx, trial);
            let gain = current.grl_after - eval.grl_after;
            if gain <= 0.0 {
                continue;
            }
            let cost = ctx.cost(c);
            let score = if cost > 0.0 { gain / cost } else { f64::INFINITY };
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, c.clone(), eval));
            }
        }
        let Some((_, c, eval)) = best else { break };
        selected.push(c);
        selected.sort();
        current = eval;
    }
    current.feasible.then_some(selected)
}
