//! Randomized invariants for the risk arithmetic, the Delphi engine, the
//! treatment planner, and document round-trips.
//!
//! Each check is a plain function so the same suites can be driven from the
//! `properties` test target and from the acceptance runner.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::{TestCaseError, TestRunner};
use secrisk_core::delphi::{self, DelphiSession, QuantityRef, SessionDefinition};
use secrisk_core::model::{self, Classification, ImpactMatrix, Objective, ObjectiveSet, RiskRecord};
use secrisk_core::registry::{
    impact_matrix_to_csv, parse_impact_matrix, parse_reduction_matrix, reduction_matrix_to_csv, AssessmentInputs,
    AssessmentSnapshot, CountermeasureCatalog, CountermeasureRecord, Document, OrganizationProfile, RiskRegister,
    TreatmentInputs,
};
use secrisk_core::treatment::{self, OptimizeMode, ReductionMatrix, TreatmentContext};

pub const CASES: u32 = 1000;

pub type Check = fn() -> Result<(), String>;

/// `(group, name, check)` for every suite.
pub const ALL: &[(&str, &str, Check)] = &[
    ("risk arithmetic", "level_is_bounded", level_is_bounded),
    ("risk arithmetic", "level_is_monotone", level_is_monotone),
    ("risk arithmetic", "crr_permutation_invariant", crr_permutation_invariant),
    ("risk arithmetic", "crr_monotone_and_absorbing", crr_monotone_and_absorbing),
    ("risk arithmetic", "residual_identity", residual_identity),
    ("risk arithmetic", "aggregates_are_linear", aggregates_are_linear),
    ("optimizer", "exact_matches_brute_force", exact_matches_brute_force),
    ("optimizer", "greedy_feasible_when_possible", greedy_feasible_when_possible),
    ("optimizer", "plans_order_independent_and_monotone", plans_order_independent_and_monotone),
    ("optimizer", "what_if_is_an_involution", what_if_is_an_involution),
    ("delphi", "ratio_permutation_invariant", ratio_permutation_invariant),
    ("delphi", "ratio_is_one_inside_band", ratio_is_one_inside_band),
    ("delphi", "finalized_weights_validate", finalized_weights_validate),
    ("delphi", "rounds_immutable_and_anonymous", rounds_immutable_and_anonymous),
    ("registry", "documents_round_trip", documents_round_trip),
    ("registry", "reduction_csv_round_trip", reduction_csv_round_trip),
    ("registry", "snapshots_recompute_exactly", snapshots_recompute_exactly),
];

fn check<S>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() };
    TestRunner::new(config).run(&strategy, test).map_err(|e| e.to_string())
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

/// Weights that pass validation: random positives scaled to sum to 1.
fn weights(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 1..=max).prop_map(|raw| {
        let sum: f64 = raw.iter().sum();
        raw.iter().map(|w| w / sum).collect()
    })
}

fn objective_set(ws: &[f64]) -> ObjectiveSet {
    ObjectiveSet::new(
        ws.iter()
            .enumerate()
            .map(|(j, &w)| Objective { id: format!("o{}", j + 1), name: format!("objective {j}"), weight: w })
            .collect(),
    )
}

fn row(impacts: &[f64]) -> BTreeMap<String, f64> {
    impacts.iter().enumerate().map(|(j, &v)| (format!("o{}", j + 1), v)).collect()
}

fn risk(l: f64) -> RiskRecord {
    RiskRecord { id: "r".into(), name: String::new(), likelihood: l, tags: vec![] }
}

fn level_case() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>)> {
    weights(6).prop_flat_map(|ws| {
        let n = ws.len();
        (Just(ws), unit(), prop::collection::vec(unit(), n))
    })
}

pub fn level_is_bounded() -> Result<(), String> {
    check(level_case(), |(ws, l, impacts)| {
        let objs = objective_set(&ws);
        prop_assert!(model::validate_weights(&objs).is_ok());
        let level = model::risk_level(&risk(l), &objs, &row(&impacts)).unwrap();
        prop_assert!((0.0..=1.0).contains(&level));
        prop_assert_eq!(model::risk_level(&risk(0.0), &objs, &row(&impacts)).unwrap(), 0.0);
        let zeros = vec![0.0; ws.len()];
        prop_assert_eq!(model::risk_level(&risk(l), &objs, &row(&zeros)).unwrap(), 0.0);
        // a clearly sub-unit likelihood or impact keeps the level below 1
        if l < 0.999 || impacts.iter().zip(&ws).any(|(i, w)| *i < 0.999 && *w > 0.01) {
            prop_assert!(level < 1.0);
        }
        let ones = vec![1.0; ws.len()];
        prop_assert!((model::risk_level(&risk(1.0), &objs, &row(&ones)).unwrap() - 1.0).abs() <= 1e-9);
        Ok(())
    })
}

pub fn level_is_monotone() -> Result<(), String> {
    check((level_case(), unit(), any::<prop::sample::Index>()), |((ws, l, impacts), bump, idx)| {
        let objs = objective_set(&ws);
        let base = model::risk_level(&risk(l), &objs, &row(&impacts)).unwrap();
        let higher_l = l + (1.0 - l) * bump;
        prop_assert!(model::risk_level(&risk(higher_l), &objs, &row(&impacts)).unwrap() >= base);
        let k = idx.index(impacts.len());
        let mut raised = impacts.clone();
        raised[k] += (1.0 - raised[k]) * bump;
        prop_assert!(model::risk_level(&risk(l), &objs, &row(&raised)).unwrap() >= base);
        Ok(())
    })
}

pub fn crr_permutation_invariant() -> Result<(), String> {
    check((prop::collection::vec(unit(), 0..10), any::<u64>()), |(mut reds, seed)| {
        let a = model::combined_risk_reduction(reds.iter().copied());
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..reds.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            reds.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = model::combined_risk_reduction(reds.iter().copied());
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        Ok(())
    })
}

pub fn crr_monotone_and_absorbing() -> Result<(), String> {
    check((prop::collection::vec(unit(), 0..10), unit()), |(reds, extra)| {
        let base = model::combined_risk_reduction(reds.iter().copied());
        let more = model::combined_risk_reduction(reds.iter().copied().chain([extra]));
        prop_assert!(more >= base);
        let eliminated = model::combined_risk_reduction(reds.iter().copied().chain([1.0]));
        prop_assert_eq!(eliminated, 1.0);
        Ok(())
    })
}

pub fn residual_identity() -> Result<(), String> {
    check((unit(), prop::collection::vec(unit(), 0..10)), |(level, reds)| {
        let via_crr = model::residual_level(level, model::combined_risk_reduction(reds.iter().copied()));
        let direct = level * reds.iter().map(|r| 1.0 - r).product::<f64>();
        prop_assert!((via_crr - direct).abs() <= 1e-12);
        Ok(())
    })
}

pub fn aggregates_are_linear() -> Result<(), String> {
    check((prop::collection::vec(unit(), 0..20), prop::collection::vec(unit(), 0..20)), |(a, b)| {
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let grl = model::global_risk_level(&joined);
        prop_assert!((grl - (model::global_risk_level(&a) + model::global_risk_level(&b))).abs() <= 1e-12);
        let grr = model::global_risk_reduction(&joined);
        prop_assert!((grr - (model::global_risk_reduction(&a) + model::global_risk_reduction(&b))).abs() <= 1e-12);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// treatment planner

#[derive(Debug, Clone)]
pub struct Instance {
    levels: Vec<f64>,
    /// reductions[k][i]
    reductions: Vec<Vec<f64>>,
    costs: Vec<f64>,
    alpha: f64,
}

fn grid(steps: u32) -> impl Strategy<Value = f64> {
    (0..=steps).prop_map(move |k| k as f64 / steps as f64)
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=8, 0usize..=12).prop_flat_map(|(risks, cms)| {
        let reduction = prop_oneof![3 => Just(0.0), 7 => grid(20)];
        let cost = prop_oneof![1 => Just(0.0), 8 => (1u32..=8).prop_map(|c| c as f64 * 0.5), 1 => Just(1.0)];
        (
            prop::collection::vec(grid(100), risks),
            prop::collection::vec(prop::collection::vec(reduction, risks), cms),
            prop::collection::vec(cost, cms),
            grid(20),
        )
            .prop_map(|(levels, reductions, costs, alpha)| Instance { levels, reductions, costs, alpha })
    })
}

fn cm_id(k: usize) -> String {
    format!("c{}", k + 1)
}

fn context(inst: &Instance) -> TreatmentContext {
    let risks: Vec<String> = (0..inst.levels.len()).map(|i| format!("r{}", i + 1)).collect();
    let rows = inst.reductions.iter().enumerate().map(|(k, r)| (cm_id(k), r.clone())).collect();
    let matrix = ReductionMatrix::new(risks.clone(), rows).unwrap();
    let costs = inst.costs.iter().enumerate().map(|(k, &c)| (cm_id(k), c)).collect();
    TreatmentContext::new(risks.into_iter().zip(inst.levels.iter().copied()).collect(), matrix, costs, inst.alpha)
        .unwrap()
}

/// Brute force over every subset. Feasibility is computed straight from the
/// risk-model formulas; cost sums follow sorted id order.
fn brute_force(inst: &Instance) -> Option<(f64, Vec<String>)> {
    let n = inst.reductions.len();
    let mut best: Option<(f64, Vec<String>)> = None;
    for mask in 0u32..(1 << n) {
        let mut ids: Vec<(String, usize)> = (0..n).filter(|k| mask & (1 << k) != 0).map(|k| (cm_id(k), k)).collect();
        ids.sort();
        let feasible = inst.levels.iter().enumerate().all(|(i, &level)| {
            let crr = model::combined_risk_reduction(ids.iter().map(|(_, k)| inst.reductions[*k][i]));
            model::classify(model::residual_level(level, crr), inst.alpha) == Classification::Acceptable
        });
        if !feasible {
            continue;
        }
        let cost: f64 = ids.iter().map(|(_, k)| inst.costs[*k]).sum();
        let names: Vec<String> = ids.into_iter().map(|(id, _)| id).collect();
        let better = match &best {
            None => true,
            Some((bc, bn)) => {
                cost < *bc || (cost == *bc && (names.len() < bn.len() || (names.len() == bn.len() && names < *bn)))
            }
        };
        if better {
            best = Some((cost, names));
        }
    }
    best
}

pub fn exact_matches_brute_force() -> Result<(), String> {
    check(instance(), |inst| {
        let ctx = context(&inst);
        let got = treatment::optimize_plan(&ctx, OptimizeMode::Exact, 20).unwrap();
        let any_unacceptable =
            inst.levels.iter().any(|&l| model::classify(l, inst.alpha) == Classification::Unacceptable);
        match brute_force(&inst) {
            Some((cost, ids)) => {
                prop_assert!(got.feasible);
                if any_unacceptable {
                    prop_assert_eq!(got.plan.total_cost, cost);
                    prop_assert_eq!(&got.plan.countermeasures, &ids);
                } else {
                    prop_assert!(got.plan.countermeasures.is_empty());
                }
            }
            None => {
                prop_assert!(!got.feasible);
                prop_assert_eq!(got.plan.countermeasures, ctx.applicable());
            }
        }
        Ok(())
    })
}

pub fn greedy_feasible_when_possible() -> Result<(), String> {
    check(instance(), |inst| {
        let ctx = context(&inst);
        let all: Vec<String> = (0..inst.reductions.len()).map(cm_id).collect();
        let everything = treatment::evaluate_plan(&ctx, &all).unwrap();
        let greedy = treatment::optimize_plan(&ctx, OptimizeMode::Greedy, 20).unwrap();
        prop_assert_eq!(greedy.feasible, everything.feasible);
        Ok(())
    })
}

pub fn plans_order_independent_and_monotone() -> Result<(), String> {
    let strategy = (instance(), prop::collection::vec(any::<bool>(), 12), any::<prop::sample::Index>());
    check(strategy, |(inst, picks, extra)| {
        let ctx = context(&inst);
        let n = inst.reductions.len();
        let chosen: Vec<String> = (0..n).filter(|&k| picks[k]).map(cm_id).collect();
        let reversed: Vec<String> = chosen.iter().rev().cloned().collect();
        let a = treatment::evaluate_plan(&ctx, &chosen).unwrap();
        let b = treatment::evaluate_plan(&ctx, &reversed).unwrap();
        prop_assert_eq!(&a, &b);
        if n > 0 {
            let mut bigger = chosen.clone();
            bigger.push(cm_id(extra.index(n)));
            let c = treatment::evaluate_plan(&ctx, &bigger).unwrap();
            for (small, large) in a.risks.iter().zip(&c.risks) {
                prop_assert!(large.residual <= small.residual);
            }
            prop_assert!(c.grr >= a.grr);
        }
        Ok(())
    })
}

pub fn what_if_is_an_involution() -> Result<(), String> {
    let strategy = (instance(), prop::collection::vec(any::<bool>(), 12), any::<prop::sample::Index>());
    check(strategy, |(inst, picks, toggle)| {
        if inst.reductions.is_empty() {
            return Ok(());
        }
        let ctx = context(&inst);
        let n = inst.reductions.len();
        let chosen: Vec<String> = (0..n).filter(|&k| picks[k]).map(cm_id).collect();
        let base = treatment::evaluate_plan(&ctx, &chosen).unwrap();
        let id = cm_id(toggle.index(n));
        let once = treatment::what_if(&ctx, &base, &id).unwrap();
        let mut toggled: BTreeSet<String> = chosen.iter().cloned().collect();
        if !toggled.remove(&id) {
            toggled.insert(id.clone());
        }
        prop_assert_eq!(&once, &treatment::evaluate_plan(&ctx, &toggled.into_iter().collect::<Vec<_>>()).unwrap());
        prop_assert_eq!(treatment::what_if(&ctx, &once, &id).unwrap(), base);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Delphi

fn handle() -> impl Strategy<Value = String> {
    "[A-Z]{3}[a-z]{5}".prop_map(|s| format!("participant-{s}"))
}

pub fn ratio_permutation_invariant() -> Result<(), String> {
    check((prop::collection::vec(unit(), 1..15), 0.001f64..=1.0), |(values, band)| {
        let a = delphi::consensus_ratio(&values, band).unwrap();
        let mut rev = values.clone();
        rev.reverse();
        rev.rotate_left(values.len() / 2);
        prop_assert_eq!(a, delphi::consensus_ratio(&rev, band).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        Ok(())
    })
}

pub fn ratio_is_one_inside_band() -> Result<(), String> {
    check((unit(), prop::collection::vec(0.0f64..=1.0, 1..15), 0.001f64..=0.5), |(center, offsets, band)| {
        let values: Vec<f64> = offsets.iter().map(|o| (center + o * band).min(1.0)).collect();
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        if hi - lo <= band {
            prop_assert_eq!(delphi::consensus_ratio(&values, band).unwrap(), 1.0);
        }
        Ok(())
    })
}

fn definition(roster: &[String], quantities: &[QuantityRef], max_rounds: u32) -> SessionDefinition {
    SessionDefinition {
        session_id: "s".into(),
        moderator: "mod".into(),
        roster: roster.to_vec(),
        quantities: quantities.to_vec(),
        consensus_threshold: 0.85,
        agreement_band: 0.05,
        max_rounds,
    }
}

pub fn finalized_weights_validate() -> Result<(), String> {
    let strategy = (prop::collection::btree_set(handle(), 2..6), prop::collection::vec(0.01f64..=1.0, 1..6));
    check(strategy, |(roster, medians)| {
        let roster: Vec<String> = roster.into_iter().collect();
        let quantities: Vec<QuantityRef> =
            (0..medians.len()).map(|j| QuantityRef::Weight { objective: format!("o{}", j + 1) }).collect();
        let mut s = DelphiSession::create(definition(&roster, &quantities, 3)).unwrap();
        s.open_round().unwrap();
        for (q, m) in quantities.iter().zip(&medians) {
            for p in &roster {
                s.submit_estimate(p, q, *m).unwrap();
            }
        }
        s.close_round().unwrap();
        let set = s.finalize("mod").unwrap();
        let objs = ObjectiveSet::new(
            quantities
                .iter()
                .map(|q| Objective { id: q.to_string(), name: String::new(), weight: set.get(q).unwrap() })
                .collect(),
        );
        prop_assert!(model::validate_weights(&objs).is_ok());
        Ok(())
    })
}

pub fn rounds_immutable_and_anonymous() -> Result<(), String> {
    let strategy = (
        prop::collection::btree_set(handle(), 2..6),
        prop::collection::vec(unit(), 6),
        prop::collection::vec(unit(), 6),
    );
    check(strategy, |(roster, first, second)| {
        let roster: Vec<String> = roster.into_iter().collect();
        let q = QuantityRef::Likelihood { risk: "r1".into() };
        let mut s = DelphiSession::create(definition(&roster, std::slice::from_ref(&q), 2)).unwrap();
        s.open_round().unwrap();
        for (p, v) in roster.iter().zip(&first) {
            s.submit_estimate(p, &q, *v).unwrap();
        }
        let r1 = s.close_round().unwrap();
        let frozen = s.raw_estimates(1).unwrap().clone();
        let mut outputs = vec![serde_json::to_string(&r1).unwrap()];
        if s.open_round().is_ok() {
            for (p, v) in roster.iter().zip(&second) {
                s.submit_estimate(p, &q, *v).unwrap();
            }
            outputs.push(serde_json::to_string(&s.close_round().unwrap()).unwrap());
            prop_assert!(s.submit_estimate(&roster[0], &q, 0.5).is_err());
        }
        prop_assert_eq!(s.raw_estimates(1).unwrap(), &frozen);
        prop_assert_eq!(s.report(1).unwrap(), Some(&r1));
        let set = match s.finalize("mod") {
            Ok(set) => set,
            Err(_) => s.force_finalize("mod", "test").unwrap(),
        };
        outputs.push(serde_json::to_string(&set).unwrap());
        for text in &outputs {
            for p in &roster {
                prop_assert!(!text.contains(p.as_str()), "{} leaked into {}", p, text);
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// registry

fn id_text() -> impl Strategy<Value = String> {
    "[a-z]{1,6}[0-9]{0,2}"
}

type DocumentCase = (Vec<f64>, Vec<(f64, String)>, Vec<Vec<f64>>, f64);

fn document_case() -> impl Strategy<Value = DocumentCase> {
    (weights(5), prop::collection::vec((unit(), "[ -~]{0,20}"), 1..6)).prop_flat_map(|(ws, risks)| {
        let m = ws.len();
        let n = risks.len();
        (Just(ws), Just(risks), prop::collection::vec(prop::collection::vec(unit(), m), n), unit())
    })
}

fn build_documents(case: &DocumentCase) -> (OrganizationProfile, RiskRegister, ImpactMatrix) {
    let (ws, risks, impacts, alpha) = case;
    let mut profile = OrganizationProfile::new("org", "Org", objective_set(ws), *alpha);
    profile.objectives.0[0].name = risks[0].1.clone();
    let register = RiskRegister::new(
        "org",
        risks
            .iter()
            .enumerate()
            .map(|(i, (l, name))| RiskRecord {
                id: format!("r{}", i + 1),
                name: name.clone(),
                likelihood: *l,
                tags: vec![name.clone()],
            })
            .collect(),
    );
    let ids: Vec<String> = profile.objectives.ids().map(str::to_string).collect();
    let rows = impacts
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("r{}", i + 1), ids.iter().cloned().zip(r.iter().copied()).collect()));
    let matrix = ImpactMatrix::from_rows(&ids, rows).unwrap();
    (profile, register, matrix)
}

pub fn documents_round_trip() -> Result<(), String> {
    let cms = prop::collection::btree_map(id_text(), (0.0f64..1e6, "[ -~]{0,12}"), 0..5);
    check((document_case(), cms), |(case, cms)| {
        let (profile, register, matrix) = build_documents(&case);
        prop_assert_eq!(&OrganizationProfile::from_json(&profile.to_json()).unwrap(), &profile);
        prop_assert_eq!(&RiskRegister::from_json(&register.to_json()).unwrap(), &register);
        prop_assert_eq!(&parse_impact_matrix(&impact_matrix_to_csv(&matrix), &profile, &register).unwrap(), &matrix);
        let catalog = CountermeasureCatalog::new(
            cms.into_iter()
                .map(|(id, (cost, name))| CountermeasureRecord {
                    id,
                    name: name.clone(),
                    tags: vec![name],
                    cost,
                    provenance: Some("p".into()),
                })
                .collect(),
        );
        prop_assert_eq!(&CountermeasureCatalog::from_json(&catalog.to_json()).unwrap(), &catalog);
        Ok(())
    })
}

pub fn reduction_csv_round_trip() -> Result<(), String> {
    let strategy = (1usize..6, 1usize..6)
        .prop_flat_map(|(risks, cms)| prop::collection::vec(prop::collection::vec(unit(), risks), cms));
    check(strategy, |rows| {
        let risks: Vec<String> = (0..rows[0].len()).map(|i| format!("r{}", i + 1)).collect();
        let matrix =
            ReductionMatrix::new(risks, rows.into_iter().enumerate().map(|(k, r)| (cm_id(k), r)).collect()).unwrap();
        prop_assert_eq!(&parse_reduction_matrix(&reduction_matrix_to_csv(&matrix), None, None).unwrap(), &matrix);
        Ok(())
    })
}

pub fn snapshots_recompute_exactly() -> Result<(), String> {
    check((document_case(), prop::collection::vec(unit(), 1..6), any::<u8>()), |(case, reds, plan_mask)| {
        let (profile, register, matrix) = build_documents(&case);
        let risk_ids: Vec<String> = register.risks.iter().map(|r| r.id.clone()).collect();
        let rows = reds.iter().enumerate().map(|(k, &r)| (cm_id(k), vec![r; risk_ids.len()])).collect();
        let plan = (0..reds.len()).filter(|k| plan_mask & (1 << k) != 0).map(cm_id).collect();
        let inputs = AssessmentInputs {
            objectives: profile.objectives.clone(),
            risks: register.risks.clone(),
            impacts: matrix,
            alpha: profile.tolerance,
            treatment: Some(TreatmentInputs {
                reductions: ReductionMatrix::new(risk_ids, rows).unwrap(),
                costs: BTreeMap::new(),
                plan,
            }),
        };
        let snap = AssessmentSnapshot::build("org", 3, inputs, "2026-01-01T00:00:00Z".into()).unwrap();
        let back = AssessmentSnapshot::from_json(&snap.to_json()).unwrap();
        prop_assert_eq!(&back, &snap);
        prop_assert!(back.verify().is_ok());
        for (a, b) in back.results.levels.iter().zip(&snap.results.levels) {
            prop_assert_eq!(a.level.to_bits(), b.level.to_bits());
        }
        Ok(())
    })
}
