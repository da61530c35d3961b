//! Acceptance checks. Each returns one outcome with its tolerances fixed
//! here; `verify` runs them all and fails on any miss.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use amf::adversaries::{Distribution, GreedyRegret, IidAdversary, LabelBestResponse, SurrogateBestResponse, TraceAdversary};
use amf::amf_core::{play_round, regret_bound, AmfRng, MinimaxSolver, RoundEnvironment, SurrogateState};
use amf::blackwell::{margin_bound, sign_game, ApproachLearner};
use amf::calibeat::{
    brier, bucketed_scores, build_multicalibeating_groups, calibration_refinement, evaluate_calibeating, joint_refinement,
    CellReport, Forecaster,
};
use amf::game_solver::{max_weighted_objective, solve_zero_sum, MatrixGame, SolverCertificate};
use amf::groups::{Group, RoundContext};
use amf::multical::{alpha_bound_high_probability, measure_alpha, CalibrationConfig, LabelAdversary, MulticalLearner};
use amf::oracle::{exhaustive_swap_regret, grid_minimax};
use amf::subsequence::{
    algorithm6_mixture, build_external, build_internal, exponential_weights_mixture, external_regret, internal_regret,
    play_subsequence_round, swap_regret, FnFamily, RegretTranscript, SubsequenceInstance, SubsequenceMethod,
    SubsequenceRound,
};
use amf::Result as AmfResult;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::config::{Config, Overrides};
use crate::runner;

/// Seeds for the repeated-run checks.
pub const SEEDS: u64 = 20;
/// Runs allowed to miss a high-probability bound.
pub const ALLOWED_MISSES: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {} {}: {}", self.id, self.name, self.details)
    }
}

/// Deliberate defects for checking that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// The per-round solver puts all mass on the first action.
    PointMassSolver,
}

/// Honest certificate for the point-mass mixture.
struct PointMass;

impl MinimaxSolver for PointMass {
    fn solve(&mut self, env: &RoundEnvironment, _: &SurrogateState, chi: &[f64]) -> AmfResult<SolverCertificate> {
        let mut mixture = vec![0.0; env.actions().len()];
        mixture[0] = 1.0;
        let (_, value) = max_weighted_objective(env, chi, &mixture)?;
        Ok(SolverCertificate { mixture, value, method: "point-mass" })
    }
}

fn outcome(id: u32, name: &'static str, result: Result<(bool, String), String>) -> CheckOutcome {
    match result {
        Ok((passed, details)) => CheckOutcome { id, name, passed, details },
        Err(e) => CheckOutcome {
            id,
            name,
            passed: false,
            details: format!("error: {e}"),
        },
    }
}

/// One framework round of a subsequence instance, through the faulty solver
/// when asked.
fn subsequence_round(
    inst: &SubsequenceInstance,
    round: &SubsequenceRound,
    state: &mut SurrogateState,
    method: SubsequenceMethod,
    adv: &mut dyn amf::amf_core::Adversary,
    rng: &mut AmfRng,
    fault: Fault,
) -> AmfResult<amf::amf_core::RoundRecord> {
    match fault {
        Fault::None => play_subsequence_round(inst, round, state, method, adv, rng),
        Fault::PointMassSolver => {
            let env = inst.environment(round)?;
            play_round(state, &env, &mut PointMass, adv, rng)
        }
    }
}

fn regret_run(
    inst: &SubsequenceInstance,
    horizon: usize,
    method: SubsequenceMethod,
    adv: &mut dyn amf::amf_core::Adversary,
    seed: u64,
    fault: Fault,
) -> AmfResult<RegretTranscript> {
    let k = inst.num_actions();
    let mut state = SurrogateState::new(inst.dim(), horizon, 1.0)?;
    let mut rng = AmfRng::seed_from_u64(seed);
    let mut tr = RegretTranscript::new(k);
    for t in 1..=horizon {
        let round = SubsequenceRound::full(t, k);
        let rec = subsequence_round(inst, &round, &mut state, method, adv, &mut rng, fault)?;
        tr.push(rec.action, rec.adversary);
    }
    Ok(tr)
}

/// Runtime budget for the 20 best-response runs.
pub const EXTERNAL_TIME_LIMIT_SECS: f64 = 10.0;

pub fn external_regret_bound(fault: Fault) -> CheckOutcome {
    let (k, horizon) = (10, 2000);
    let bound = regret_bound(k as f64, horizon, 1.0);
    let run = || -> Result<(bool, String), String> {
        let inst = build_external(k).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let mut regrets = Vec::new();
        for seed in 0..SEEDS {
            let tr = regret_run(&inst, horizon, SubsequenceMethod::Minimax, &mut SurrogateBestResponse, seed, fault)
                .map_err(|e| e.to_string())?;
            regrets.push(external_regret(&tr));
        }
        let secs = start.elapsed().as_secs_f64();
        let within = regrets.iter().filter(|r| **r <= bound).count();
        let worst = regrets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Against exponential weights every loss vector ties for the
        // surrogate best response, so also run an adversary that builds regret.
        let greedy: Vec<f64> = (0..SEEDS)
            .into_par_iter()
            .map(|seed| regret_run(&inst, horizon, SubsequenceMethod::Minimax, &mut GreedyRegret, seed, fault).map(|tr| external_regret(&tr)))
            .collect::<AmfResult<_>>()
            .map_err(|e| e.to_string())?;
        let g_within = greedy.iter().filter(|r| **r <= bound).count();
        let g_worst = greedy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let enough = |n: usize| n + ALLOWED_MISSES >= SEEDS as usize;
        let passed = enough(within) && enough(g_within) && secs < EXTERNAL_TIME_LIMIT_SECS;
        Ok((
            passed,
            format!(
                "best response {within}/{SEEDS} seeds within {bound:.4} (max {worst:.4}) in {secs:.2}s; greedy {g_within}/{SEEDS} (max {g_worst:.4})"
            ),
        ))
    };
    outcome(1, "external regret bound", run())
}

/// Per-coordinate tolerance against the closed-form exponential weights.
pub const EW_TOL: f64 = 1e-8;

pub fn exponential_weights_equivalence(fault: Fault) -> CheckOutcome {
    let run = || -> Result<(bool, String), String> {
        let mut worst: f64 = 0.0;
        for h in 0..50u64 {
            let mut gen = AmfRng::seed_from_u64(1000 + h);
            let k = gen.random_range(2..=8);
            let horizon = gen.random_range(1..=80);
            let rows: Vec<Vec<f64>> = (0..horizon).map(|_| (0..k).map(|_| gen.random::<f64>()).collect()).collect();
            let inst = build_external(k).map_err(|e| e.to_string())?;
            let mut adv = TraceAdversary::new(rows);
            let mut state = SurrogateState::new(k, horizon, 1.0).map_err(|e| e.to_string())?;
            let mut rng = AmfRng::seed_from_u64(h);
            let mut cum = vec![0.0; k];
            for t in 1..=horizon {
                let round = SubsequenceRound::full(t, k);
                let ew = exponential_weights_mixture(&cum, state.eta());
                let rec = subsequence_round(&inst, &round, &mut state, SubsequenceMethod::Minimax, &mut adv, &mut rng, fault)
                    .map_err(|e| e.to_string())?;
                for (a, b) in rec.mixture.iter().zip(&ew) {
                    worst = worst.max((a - b).abs());
                }
                cum.iter_mut().zip(&rec.adversary).for_each(|(c, r)| *c += r);
            }
        }
        Ok((worst <= EW_TOL, format!("50 histories, max coordinate gap {worst:.3e} (limit {EW_TOL:e})")))
    };
    outcome(2, "exponential weights equivalence", run())
}

/// Slack on `swap ≤ |A|·internal` for float summation.
pub const SWAP_RELATION_TOL: f64 = 1e-9;

pub fn internal_and_swap_regret(fault: Fault) -> CheckOutcome {
    let (k, horizon) = (4usize, 2000usize);
    let bound = 4.0 * (2.0 * horizon as f64 * (k as f64).ln()).sqrt();
    let run = || -> Result<(bool, String), String> {
        let inst = build_internal(k).map_err(|e| e.to_string())?;
        let one = |seed: u64, adv: &mut dyn amf::amf_core::Adversary| -> Result<(f64, f64, f64), String> {
            let tr = regret_run(&inst, horizon, SubsequenceMethod::Feasibility, adv, seed, fault).map_err(|e| e.to_string())?;
            let exact = exhaustive_swap_regret(k, &tr.actions, &tr.losses)?;
            Ok((internal_regret(&tr), swap_regret(&tr), exact))
        };
        let mut passed = true;
        let mut parts = Vec::new();
        for (label, greedy) in [("best response", false), ("greedy", true)] {
            let runs: Vec<(f64, f64, f64)> = (0..SEEDS)
                .into_par_iter()
                .map(|seed| if greedy { one(seed, &mut GreedyRegret) } else { one(seed, &mut SurrogateBestResponse) })
                .collect::<Result<_, String>>()?;
            let within = runs.iter().filter(|r| r.0 <= bound).count();
            let exact = runs.iter().all(|r| r.1.to_bits() == r.2.to_bits());
            let related = runs.iter().all(|r| r.1 <= k as f64 * r.0 + SWAP_RELATION_TOL);
            let worst = runs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
            let worst_swap = runs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            passed &= within + ALLOWED_MISSES >= SEEDS as usize && exact && related;
            parts.push(format!(
                "{label}: {within}/{SEEDS} internal within {bound:.4} (max {worst:.4}, max swap {worst_swap:.4}), swap equals enumeration {exact}, swap <= {k}x internal {related}"
            ));
        }
        Ok((passed, parts.join("; ")))
    };
    outcome(3, "internal and swap regret", run())
}

/// Slack on the per-round certified value.
pub const CERTIFICATE_SLACK: f64 = 1e-9;

/// Eight groups over two uniform features.
pub fn calibration_groups() -> Vec<Group> {
    let b = |lo: [f64; 2], hi: [f64; 2]| Group::Box { lo: lo.to_vec(), hi: hi.to_vec() };
    vec![
        Group::All,
        b([0.0, 0.0], [0.5, 1.0]),
        b([0.5, 0.0], [1.0, 1.0]),
        b([0.0, 0.0], [1.0, 0.5]),
        b([0.0, 0.5], [1.0, 1.0]),
        b([0.0, 0.0], [0.5, 0.5]),
        b([0.25, 0.0], [0.75, 1.0]),
        b([0.0, 0.5], [0.5, 1.0]),
    ]
}

fn uniform_contexts(seed: u64, horizon: usize, dim: usize) -> Vec<RoundContext> {
    let mut rng = AmfRng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..horizon)
        .map(|_| RoundContext::new((0..dim).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

/// Final measured α and the largest per-round certified value.
fn multical_run(n: usize, r: usize, horizon: usize, seed: u64, adaptive: bool) -> AmfResult<(f64, f64)> {
    let groups = calibration_groups();
    let mut learner = MulticalLearner::new(CalibrationConfig::new(n, r, groups.clone(), horizon)?);
    let mut rng = AmfRng::seed_from_u64(seed);
    let mut adv: Box<dyn LabelAdversary> = if adaptive {
        Box::new(LabelBestResponse)
    } else {
        Box::new(IidAdversary::new(Distribution::Feature, None, None)?)
    };
    for ctx in uniform_contexts(seed, horizon, 2) {
        learner.step(ctx, adv.as_mut(), &mut rng)?;
    }
    Ok((measure_alpha(learner.state().rounds(), &groups, n)?, learner.max_certified()))
}

pub fn multicalibration() -> CheckOutcome {
    let (n, r, horizon, delta) = (10, 2, 5000, 0.05);
    let g = calibration_groups().len();
    let bound = alpha_bound_high_probability(n, r, g, horizon, delta);
    let certificate_limit = 1.0 / (r * n) as f64 + CERTIFICATE_SLACK;
    let run = || -> Result<(bool, String), String> {
        let mut passed = true;
        let mut parts = Vec::new();
        for (label, adaptive) in [("best response", true), ("iid", false)] {
            let runs: Vec<(f64, f64)> = (0..SEEDS)
                .into_par_iter()
                .map(|s| multical_run(n, r, horizon, s, adaptive).map_err(|e| e.to_string()))
                .collect::<Result<_, String>>()?;
            let within = runs.iter().filter(|x| x.0 <= bound).count();
            let worst = runs.iter().map(|x| x.0).fold(0.0, f64::max);
            let cert = runs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            passed &= within + ALLOWED_MISSES >= SEEDS as usize && cert <= certificate_limit;
            parts.push(format!("{label}: {within}/{SEEDS} within {bound:.4} (max alpha {worst:.4}), max certified {cert:.6}"));
        }
        Ok((passed, parts.join("; ")))
    };
    outcome(4, "multicalibration", run())
}

/// Tolerance on the Brier decomposition.
pub const DECOMPOSITION_TOL: f64 = 1e-9;
/// Slack on the score inequalities.
pub const SCORE_SLACK: f64 = 1e-12;

/// Independent Brier score: plain mean of squared errors.
fn naive_brier(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn score_identities() -> Result<String, String> {
    let e = |e: amf::AmfError| e.to_string();
    let mut worst_gap: f64 = 0.0;
    for i in 0..1000u64 {
        let mut rng = AmfRng::seed_from_u64(50_000 + i);
        let t = rng.random_range(1..=200);
        let levels: Vec<f64> = (0..rng.random_range(1..=6)).map(|_| rng.random::<f64>()).collect();
        let f: Vec<f64> = (0..t).map(|_| levels[rng.random_range(0..levels.len())]).collect();
        let a: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..t).map(|_| if rng.random::<bool>() { rng.random::<f64>() } else { (rng.random::<f64>() < 0.5) as u8 as f64 }).collect();
        let n = rng.random_range(1..=20);

        let (k, r) = calibration_refinement(&f, &b).map_err(e)?;
        let bf = brier(&f, &b).map_err(e)?;
        let gap = (bf - (k + r)).abs().max((bf - naive_brier(&f, &b)).abs());
        worst_gap = worst_gap.max(gap);
        if gap > DECOMPOSITION_TOL {
            return Err(format!("instance {i}: Brier {bf} vs K + R = {}", k + r));
        }
        let (bn, _, rn) = bucketed_scores(&a, &b, n).map_err(e)?;
        let ba = brier(&a, &b).map_err(e)?;
        if ba > bn + 1.0 / n as f64 + SCORE_SLACK {
            return Err(format!("instance {i}: Brier {ba} > bucketed {bn} + 1/{n}"));
        }
        let joint = joint_refinement(&a, &f, &b, n).map_err(e)?;
        if joint > r.min(rn) + SCORE_SLACK {
            return Err(format!("instance {i}: joint refinement {joint} > min({r}, {rn})"));
        }
    }
    Ok(format!("1000 instances, max decomposition gap {worst_gap:.2e}"))
}

fn bin_forecaster(name: &str, levels: Vec<f64>, xs: &[f64]) -> AmfResult<Forecaster> {
    let m = levels.len();
    let f = xs.iter().map(|x| levels[((x * m as f64) as usize).min(m - 1)]).collect();
    Forecaster::new(name, levels, f)
}

fn calibeating_end_to_end() -> Result<String, String> {
    let e = |e: amf::AmfError| e.to_string();
    let (n, r, horizon, seed) = (10, 2, 5000, 7);
    let contexts = uniform_contexts(seed, horizon, 1);
    let xs: Vec<f64> = contexts.iter().map(|c| c.features[0]).collect();
    let fs = vec![
        bin_forecaster("thirds", vec![1.0 / 6.0, 0.5, 5.0 / 6.0], &xs).map_err(e)?,
        bin_forecaster("constant", vec![0.5], &xs).map_err(e)?,
        bin_forecaster("quarters", vec![0.125, 0.375, 0.625, 0.875], &xs).map_err(e)?,
    ];
    let groups = vec![Group::All, Group::Box { lo: vec![0.0], hi: vec![0.5] }];
    let augmented = build_multicalibeating_groups(&groups, &fs);
    let mut learner = MulticalLearner::new(CalibrationConfig::new(n, r, augmented, horizon).map_err(e)?);
    let mut adv = IidAdversary::new(Distribution::Feature, None, Some(seed)).map_err(e)?;
    let mut rng = AmfRng::seed_from_u64(seed);
    for (s, c) in contexts.into_iter().enumerate() {
        let ctx = RoundContext {
            features: c.features,
            forecasts: fs.iter().map(|f| f.forecasts[s]).collect(),
        };
        learner.step(ctx, &mut adv, &mut rng).map_err(e)?;
    }
    let report = evaluate_calibeating(learner.state().rounds(), &fs, &groups, n, r, 0.05).map_err(e)?;
    let mut tightest = f64::INFINITY;
    for cell in &report.cells {
        let CellReport::Scored(c) = cell else {
            return Err("a group never occurred".into());
        };
        let slack = c.forecaster_refinement + c.certified_bound - c.learner_brier;
        if slack < -SCORE_SLACK {
            return Err(format!("forecaster {} group {}: Brier {} > R {} + {}", c.forecaster, c.group, c.learner_brier, c.forecaster_refinement, c.certified_bound));
        }
        tightest = tightest.min(slack);
    }
    Ok(format!("{} cells at T={horizon}, smallest slack {tightest:.4}", report.cells.len()))
}

pub fn calibeating_identities() -> CheckOutcome {
    let run = || -> Result<(bool, String), String> {
        let a = score_identities()?;
        let b = calibeating_end_to_end()?;
        Ok((true, format!("{a}; end to end {b}")))
    };
    outcome(5, "calibeating identities", run())
}

/// Largest per-round LP value allowed on a satisfiable game.
pub const LP_VALUE_LIMIT: f64 = 1e-8;

pub fn approachability() -> CheckOutcome {
    let horizon = 4000;
    let run = || -> Result<(bool, String), String> {
        let game = sign_game(3, 0.1).map_err(|e| e.to_string())?;
        let h = game.halfspaces.len();
        let bound = margin_bound(h, horizon);
        let runs: Vec<(f64, f64)> = (0..SEEDS)
            .into_par_iter()
            .map(|seed| {
                let mut learner = ApproachLearner::new(&game, horizon)?;
                let mut rng = AmfRng::seed_from_u64(seed);
                let (mut max_v, mut m) = (f64::NEG_INFINITY, 0.0);
                for _ in 0..horizon {
                    let step = learner.step(&mut SurrogateBestResponse, &mut rng)?;
                    max_v = max_v.max(step.lp_value);
                    m = step.margin;
                }
                Ok((max_v, m))
            })
            .collect::<AmfResult<_>>()
            .map_err(|e| e.to_string())?;
        let max_v = runs.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        let mean = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
        let passed = h == 8 && max_v <= LP_VALUE_LIMIT && mean <= bound;
        Ok((
            passed,
            format!("|H| = {h}, max LP value {max_v:.3e}, mean final margin {mean:.5} vs {bound:.5}"),
        ))
    };
    outcome(6, "approachability", run())
}

/// Allowed gap between the LP value and the grid search.
pub const ORACLE_GAP: f64 = 2e-3;
pub const GRID_RESOLUTION: f64 = 1e-3;

pub fn solver_oracle(fault: Fault) -> CheckOutcome {
    let run = || -> Result<(bool, String), String> {
        let mut worst: f64 = 0.0;
        for i in 0..100u64 {
            let mut rng = AmfRng::seed_from_u64(70_000 + i);
            let (m, c) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let payoff: Vec<Vec<f64>> = (0..m).map(|_| (0..c).map(|_| rng.random::<f64>()).collect()).collect();
            let game = MatrixGame::new(payoff.clone()).map_err(|e| e.to_string())?;
            let value = match fault {
                Fault::None => solve_zero_sum(&game).map_err(|e| e.to_string())?.value,
                Fault::PointMassSolver => {
                    let mut x = vec![0.0; m];
                    x[0] = 1.0;
                    game.best_column(&x).1
                }
            };
            let reference = grid_minimax(&payoff, GRID_RESOLUTION)?;
            worst = worst.max((value - reference).abs());
        }
        Ok((worst <= ORACLE_GAP, format!("100 games, max gap {worst:.2e} (limit {ORACLE_GAP:e})")))
    };
    outcome(7, "solver matches grid search", run())
}

pub const FEASIBILITY_SLACK: f64 = 1e-9;

pub fn closed_form_feasibility() -> CheckOutcome {
    let run = || -> Result<(bool, String), String> {
        let mut worst = f64::NEG_INFINITY;
        let mut checked = 0;
        for i in 0..100u64 {
            let mut rng = AmfRng::seed_from_u64(90_000 + i);
            let k = rng.random_range(2..=6);
            let nf = rng.random_range(1..=5);
            let mut available: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() < 0.7).collect();
            if available.is_empty() {
                available.push(rng.random_range(0..k));
            }
            // Each comparator tracks a random subset of the families.
            let mut pairs: Vec<(usize, usize)> = (0..k)
                .flat_map(|j| (0..nf).map(move |f| (j, f)))
                .filter(|_| rng.random::<f64>() < 0.6)
                .collect();
            if pairs.is_empty() {
                pairs.push((available[0], 0));
            }
            // A family paired with an unavailable comparator must be off this round.
            let vals: Vec<f64> = (0..nf)
                .map(|f| {
                    let v = if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() };
                    let off = pairs.iter().any(|&(j, g)| g == f && available.binary_search(&j).is_err());
                    if off { 0.0 } else { v }
                })
                .collect();
            let family = Arc::new(FnFamily::new(nf, true, move |f, _, _| vals[f]));
            let inst = SubsequenceInstance::new(k, family, pairs).map_err(|e| e.to_string())?;
            let round = SubsequenceRound { t: 1, available, context: RoundContext::default() };
            inst.check_round(&round).map_err(|e| e.to_string())?;
            checked += 1;
            let spread = [1.0, 20.0, 200.0][rng.random_range(0..3)];
            let lw: Vec<f64> = (0..inst.dim()).map(|_| spread * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let x = algorithm6_mixture(&inst, &round, &lw).map_err(|e| e.to_string())?;
            let lhs = inst.feasibility_lhs(&round, &lw, &x).map_err(|e| e.to_string())?;
            worst = lhs.into_iter().fold(worst, f64::max);
        }
        Ok((
            checked == 100 && worst <= FEASIBILITY_SLACK,
            format!("{checked} instances, largest left-hand side {worst:.2e}"),
        ))
    };
    outcome(8, "closed form satisfies the feasibility system", run())
}

/// Small config of each experiment kind, for the determinism check.
pub fn sample_configs() -> Vec<(&'static str, String)> {
    let cfg = |experiment: &str, adversary: &str, params: &str| {
        format!(r#"{{"experiment": "{experiment}", "horizon": 60, "seed": 7, "adversary": {adversary}, "params": {params}}}"#)
    };
    let br = r#"{"kind": "best_response"}"#;
    let iid = r#"{"kind": "iid", "distribution": "uniform"}"#;
    vec![
        ("external", cfg("external", br, r#"{"actions": 3}"#)),
        ("internal", cfg("internal", r#"{"kind": "greedy"}"#, r#"{"actions": 3}"#)),
        ("swap", cfg("swap", br, r#"{"actions": 3}"#)),
        ("adaptive", cfg("adaptive", iid, r#"{"actions": 3}"#)),
        ("sleeping", cfg("sleeping", br, r#"{"actions": 4, "awake_probability": 0.6}"#)),
        (
            "multigroup",
            cfg(
                "multigroup",
                iid,
                r#"{"actions": 3, "groups": [{"kind": "all"}, {"kind": "members", "values": [0, 2]}], "contexts": {"kind": "uniform_int", "max": 4}}"#,
            ),
        ),
        (
            "multicalibration",
            cfg(
                "multicalibration",
                br,
                r#"{"n": 4, "r": 2, "groups": [{"kind": "all"}, {"kind": "box", "lo": [0.0], "hi": [0.5]}], "contexts": {"kind": "uniform", "dim": 1}}"#,
            ),
        ),
        (
            "multicalibeating",
            cfg(
                "multicalibeating",
                r#"{"kind": "iid", "distribution": "feature"}"#,
                r#"{"n": 4, "r": 2, "groups": [{"kind": "all"}], "contexts": {"kind": "uniform", "dim": 1},
                    "forecasters": [{"name": "halves", "levels": [0.25, 0.75], "source": {"kind": "nearest_feature"}},
                                    {"name": "coin", "levels": [0.3, 0.6], "source": {"kind": "random"}}]}"#,
            ),
        ),
        ("blackwell", cfg("blackwell", br, r#"{"game": {"kind": "sign", "lambda": 2, "width": 0.2}}"#)),
    ]
}

pub fn determinism() -> CheckOutcome {
    let run = || -> Result<(bool, String), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut same = Vec::new();
        let mut differ = Vec::new();
        for (name, text) in sample_configs() {
            let mut outputs = Vec::new();
            for rep in 0..2 {
                let mut cfg = Config::parse(&text, Path::new(".")).map_err(|e| format!("{name}: {e:#}"))?;
                let out = dir.path().join(format!("{name}-{rep}"));
                cfg.apply(&Overrides { out: Some(out.clone()), ..Default::default() }).map_err(|e| e.to_string())?;
                runner::run(&cfg).map_err(|e| format!("{name}: {e:#}"))?;
                outputs.push(std::fs::read(out.join("rounds.csv")).map_err(|e| e.to_string())?);
            }
            if outputs[0] == outputs[1] && !outputs[0].is_empty() {
                same.push(name);
            } else {
                differ.push(name);
            }
        }
        Ok((
            differ.is_empty(),
            format!("{} experiment kinds byte-identical; differing: {differ:?}", same.len()),
        ))
    };
    outcome(9, "determinism", run())
}

/// Every check, in order.
pub fn run_all(fault: Fault) -> Vec<CheckOutcome> {
    vec![
        external_regret_bound(fault),
        exponential_weights_equivalence(fault),
        internal_and_swap_regret(fault),
        multicalibration(),
        calibeating_identities(),
        approachability(),
        solver_oracle(fault),
        closed_form_feasibility(),
        determinism(),
    ]
}
