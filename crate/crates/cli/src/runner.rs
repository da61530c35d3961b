//! Seeded experiment runs. Each seed drives one learner; the run yields a
//! per-round curve and a summary comparing the final quantity to its bound.
//!
//! Randomness: the learner's sampling and any unseeded adversary draws use
//! stream 0 of the seed; contexts, availability and forecasters use stream 1,
//! so changing the adversary never changes the contexts.

use std::fs;
use std::path::{Path, PathBuf};

use amf::adversaries::TraceAdversary;
use amf::amf_core::{log_sum_exp, regret_bound, sample_index, AdversarySet, AmfRng, SurrogateState};
use amf::blackwell::{check_response_satisfiable, margin_bound, sign_game, ApproachLearner, PolytopeGame, Satisfiability};
use amf::calibeat::{build_multicalibeating_groups, evaluate_calibeating, CellReport, Forecaster};
use amf::groups::RoundContext;
use amf::multical::{alpha_bound_expectation, alpha_bound_high_probability, measure_alpha, CalibrationConfig, MulticalLearner};
use amf::numfmt::sig9;
use amf::subsequence::{
    adaptive_regret, build_external, build_internal, build_multigroup, build_sleeping, external_regret, internal_regret,
    multigroup_regret, play_subsequence_round, sleeping_regret, swap_regret, AdaptiveLearner, RegretTranscript,
    SubsequenceMethod, SubsequenceRound,
};
use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, ContextSource, ExperimentKind, ForecastSource, GameSource, Method};

/// One line of `rounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub t: usize,
    pub action: String,
    pub adversary: String,
    pub metric: f64,
    /// Realized certificate that the metric never exceeds.
    pub surrogate_bound: Option<f64>,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub horizon: usize,
    pub config_hash: String,
    pub metric_name: &'static str,
    pub final_metric: f64,
    pub bound: f64,
    pub ratio: f64,
    pub within_bound: bool,
    pub details: Value,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub rows: Vec<RoundRow>,
    pub summary: Summary,
}

/// Where each seed's files went.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summaries: Vec<Summary>,
    pub dirs: Vec<PathBuf>,
}

fn rngs(seed: u64) -> (AmfRng, AmfRng) {
    let main = AmfRng::seed_from_u64(seed);
    let mut env = AmfRng::seed_from_u64(seed);
    env.set_stream(1);
    (main, env)
}

fn metric_name(kind: ExperimentKind) -> &'static str {
    use ExperimentKind::*;
    match kind {
        External => "external_regret",
        Internal => "internal_regret",
        Swap => "swap_regret",
        Adaptive => "adaptive_regret",
        Sleeping => "sleeping_regret",
        Multigroup => "multigroup_regret",
        Multicalibration | Multicalibeating => "alpha",
        Blackwell => "margin",
    }
}

fn summary(cfg: &Config, seed: u64, final_metric: f64, bound: f64, details: Value) -> Summary {
    Summary {
        experiment: cfg.experiment,
        seed,
        horizon: cfg.horizon,
        config_hash: cfg.hash(),
        metric_name: metric_name(cfg.experiment),
        final_metric,
        bound,
        ratio: final_metric / bound,
        within_bound: final_metric <= bound,
        details,
    }
}

fn contexts(src: &ContextSource, cfg: &Config, rng: &mut AmfRng) -> Result<Vec<RoundContext>> {
    let t = cfg.horizon;
    Ok(match src {
        ContextSource::None => vec![RoundContext::default(); t],
        ContextSource::UniformInt { max } => {
            ensure!(*max >= 1, "uniform_int contexts need max >= 1");
            (0..t).map(|_| RoundContext::new(vec![rng.random_range(0..*max) as f64])).collect()
        }
        ContextSource::Uniform { dim } => (0..t)
            .map(|_| RoundContext::new((0..*dim).map(|_| rng.random::<f64>()).collect()))
            .collect(),
        ContextSource::Trace { path } => {
            let full = cfg.resolve(path);
            let tr = TraceAdversary::from_path(&full).with_context(|| format!("context trace {}", full.display()))?;
            (1..=t).map(|s| Ok(RoundContext::new(tr.row(s)?.to_vec()))).collect::<Result<_>>()?
        }
    })
}

/// Running regret in the same summation order as the batch evaluators.
struct RegretTracker {
    kind: ExperimentKind,
    k: usize,
    sums: Vec<f64>,
    ending_here: Vec<f64>,
    best: f64,
}

impl RegretTracker {
    fn new(kind: ExperimentKind, k: usize, groups: usize) -> Self {
        let len = match kind {
            ExperimentKind::Internal | ExperimentKind::Swap => k * k,
            ExperimentKind::Multigroup => k * groups,
            _ => k,
        };
        Self {
            kind,
            k,
            sums: vec![0.0; len],
            ending_here: vec![f64::NEG_INFINITY; k],
            best: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, a: usize, r: &[f64], available: &[usize], member: &[bool]) {
        let k = self.k;
        match self.kind {
            ExperimentKind::External => (0..k).for_each(|j| self.sums[j] += r[a] - r[j]),
            ExperimentKind::Internal | ExperimentKind::Swap => (0..k).for_each(|j| self.sums[a * k + j] += r[a] - r[j]),
            ExperimentKind::Sleeping => available.iter().for_each(|&j| self.sums[j] += r[a] - r[j]),
            ExperimentKind::Multigroup => {
                for (g, _) in member.iter().enumerate().filter(|(_, m)| **m) {
                    (0..k).for_each(|j| self.sums[g * k + j] += r[a] - r[j]);
                }
            }
            ExperimentKind::Adaptive => {
                for j in 0..k {
                    let x = r[a] - r[j];
                    let e = &mut self.ending_here[j];
                    *e = if *e > 0.0 { *e + x } else { x };
                }
            }
            _ => unreachable!("not a regret experiment"),
        }
    }

    fn value(&mut self) -> f64 {
        match self.kind {
            ExperimentKind::Internal => self.sums.iter().copied().fold(0.0, f64::max),
            ExperimentKind::Swap => self.sums.chunks(self.k).map(|row| row.iter().copied().fold(0.0, f64::max)).sum(),
            ExperimentKind::Adaptive => {
                // Kadane's best is monotone, so fold it in as rounds arrive.
                self.best = self.ending_here.iter().copied().fold(self.best, f64::max);
                // The batch evaluator scans action by action; the max is the same.
                self.best
            }
            _ => self.sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn method_for(kind: ExperimentKind, m: Option<Method>) -> SubsequenceMethod {
    let m = m.unwrap_or(match kind {
        ExperimentKind::External => Method::Minimax,
        ExperimentKind::Internal | ExperimentKind::Swap => Method::Feasibility,
        _ => Method::ClosedForm,
    });
    match m {
        Method::Minimax => SubsequenceMethod::Minimax,
        Method::Feasibility => SubsequenceMethod::Feasibility,
        Method::ClosedForm => SubsequenceMethod::ClosedForm,
    }
}

fn awake(k: usize, q: f64, rng: &mut AmfRng) -> Vec<usize> {
    let mut av: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() < q).collect();
    if av.is_empty() {
        av.push(rng.random_range(0..k));
    }
    av
}

fn run_regret(cfg: &Config, seed: u64) -> Result<SeedRun> {
    use ExperimentKind::*;
    let p = cfg.regret()?;
    let (k, horizon, kind) = (p.actions, cfg.horizon, cfg.experiment);
    if kind == Adaptive {
        return run_adaptive(cfg, seed);
    }
    let (mut rng, mut env_rng) = rngs(seed);
    let groups = p.groups.clone().unwrap_or_default();
    let instance = match kind {
        External => build_external(k),
        Internal | Swap => build_internal(k),
        Sleeping => build_sleeping(k),
        Multigroup => build_multigroup(k, groups.clone()),
        _ => unreachable!(),
    }?;
    let method = method_for(kind, p.method);
    let d = instance.dim() as f64;
    let (bound, scale) = match kind {
        Swap => (k as f64 * regret_bound(d, horizon, 1.0), k as f64),
        _ => (regret_bound(d, horizon, 1.0), 1.0),
    };
    let ctxs = contexts(&p.contexts, cfg, &mut env_rng)?;
    let q = p.awake_probability.unwrap_or(0.5);
    let mut adv = cfg.adversary.build(&cfg.base_dir, horizon)?;
    let mut state = SurrogateState::new(instance.dim(), horizon, 1.0)?;
    let mut tracker = RegretTracker::new(kind, k, groups.len());
    let mut tr = RegretTranscript::new(k);
    let (mut avail_log, mut member_log) = (Vec::new(), Vec::new());
    let mut rows = Vec::with_capacity(horizon);
    for (t, context) in (1..=horizon).zip(ctxs) {
        let available = if kind == Sleeping { awake(k, q, &mut env_rng) } else { (0..k).collect() };
        let member: Vec<bool> = groups.iter().map(|g| g.contains(&context)).collect();
        let round = SubsequenceRound { t, available, context };
        let rec = play_subsequence_round(&instance, &round, &mut state, method, adv.as_mut(), &mut rng)
            .with_context(|| format!("round {t}"))?;
        tracker.push(rec.action, &rec.adversary, &round.available, &member);
        rows.push(RoundRow {
            t,
            action: rec.action.to_string(),
            adversary: AdversarySet::encode(&rec.adversary),
            metric: tracker.value(),
            surrogate_bound: Some(scale * (state.cum_value_bound() + state.surrogate_regret_bound())),
            bound: Some(bound),
        });
        tr.push(rec.action, rec.adversary);
        avail_log.push(round.available);
        member_log.push(member);
    }
    let batch = match kind {
        External => external_regret(&tr),
        Internal => internal_regret(&tr),
        Swap => swap_regret(&tr),
        Sleeping => sleeping_regret(&tr, &avail_log),
        Multigroup => multigroup_regret(&tr, &member_log),
        _ => unreachable!(),
    };
    let final_metric = rows.last().map_or(0.0, |r| r.metric);
    ensure!(
        batch.to_bits() == final_metric.to_bits(),
        "running regret {final_metric} disagrees with the transcript evaluator {batch}"
    );
    let mut details = json!({
        "actions": k,
        "coordinates": instance.dim(),
        "method": format!("{method:?}"),
        "eta": state.eta(),
        "cum_value_bound": state.cum_value_bound(),
        "surrogate_bound": rows.last().and_then(|r| r.surrogate_bound),
    });
    if matches!(kind, Internal | Swap) {
        details["internal_regret"] = json!(internal_regret(&tr));
        details["swap_regret"] = json!(swap_regret(&tr));
    }
    Ok(SeedRun {
        rows,
        summary: summary(cfg, seed, final_metric, bound, details),
    })
}

fn run_adaptive(cfg: &Config, seed: u64) -> Result<SeedRun> {
    let p = cfg.regret()?;
    let (k, horizon) = (p.actions, cfg.horizon);
    let (mut rng, _) = rngs(seed);
    let mut learner = AdaptiveLearner::new(k, horizon)?;
    let mut src = cfg.adversary.build_oblivious(&cfg.base_dir, horizon)?;
    let set = AdversarySet::Cube { dim: k };
    let bound = regret_bound(learner.dim() as f64, horizon, 1.0);
    let mut tracker = RegretTracker::new(ExperimentKind::Adaptive, k, 0);
    let mut tr = RegretTranscript::new(k);
    let mut rows = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let x = learner.mixture();
        let r = src.next(t, &set, &mut rng).with_context(|| format!("round {t}"))?;
        let a = sample_index(&x, &mut rng);
        learner.update(a, &r);
        tracker.push(a, &r, &[], &[]);
        rows.push(RoundRow {
            t,
            action: a.to_string(),
            adversary: AdversarySet::encode(&r),
            metric: tracker.value(),
            surrogate_bound: Some(learner.surrogate_regret_bound()),
            bound: Some(bound),
        });
        tr.push(a, r);
    }
    let final_metric = rows.last().map_or(0.0, |r| r.metric);
    let batch = adaptive_regret(&tr);
    ensure!(
        batch.to_bits() == final_metric.to_bits(),
        "running regret {final_metric} disagrees with the transcript evaluator {batch}"
    );
    let details = json!({
        "actions": k,
        "coordinates": learner.dim(),
        "eta": learner.eta(),
        "surrogate_bound": learner.surrogate_regret_bound(),
    });
    Ok(SeedRun {
        rows,
        summary: summary(cfg, seed, final_metric, bound, details),
    })
}

fn nearest_level(levels: &[f64], x: f64) -> f64 {
    let mut best = levels[0];
    for &l in &levels[1..] {
        let (dl, db) = ((l - x).abs(), (best - x).abs());
        if dl < db || (dl == db && l < best) {
            best = l;
        }
    }
    best
}

fn trace_column(path: &Path, column: &str, horizon: usize) -> Result<Vec<f64>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let idx = rd
        .headers()?
        .iter()
        .position(|h| h == column)
        .with_context(|| format!("{} has no column {column:?}", path.display()))?;
    let mut out = Vec::with_capacity(horizon);
    for (line, rec) in rd.records().take(horizon).enumerate() {
        let rec = rec?;
        let v = rec.get(idx).unwrap_or_default();
        out.push(v.parse::<f64>().with_context(|| format!("{} row {}: {v:?}", path.display(), line + 1))?);
    }
    ensure!(out.len() == horizon, "{} has {} rows, horizon is {horizon}", path.display(), out.len());
    Ok(out)
}

fn forecasters(cfg: &Config, ctxs: &[RoundContext], rng: &mut AmfRng) -> Result<Vec<Forecaster>> {
    let p = cfg.calibration()?;
    let mut out = Vec::new();
    for f in &p.forecasters {
        ensure!(!f.levels.is_empty(), "forecaster {} declares no levels", f.name);
        let forecasts = match &f.source {
            ForecastSource::NearestFeature {} => ctxs
                .iter()
                .map(|c| match c.features.first() {
                    Some(&x) => Ok(nearest_level(&f.levels, x)),
                    None => bail!("forecaster {} reads the first feature, but contexts have none", f.name),
                })
                .collect::<Result<Vec<_>>>()?,
            ForecastSource::Random {} => (0..ctxs.len()).map(|_| f.levels[rng.random_range(0..f.levels.len())]).collect(),
            ForecastSource::Trace { path, column } => trace_column(&cfg.resolve(path), column, cfg.horizon)?,
        };
        out.push(Forecaster::new(f.name.clone(), f.levels.clone(), forecasts)?);
    }
    Ok(out)
}

fn run_calibration(cfg: &Config, seed: u64) -> Result<SeedRun> {
    let p = cfg.calibration()?;
    let (n, r, horizon) = (p.n, p.r, cfg.horizon);
    let (mut rng, mut env_rng) = rngs(seed);
    let ctxs = contexts(&p.contexts, cfg, &mut env_rng)?;
    let fs = forecasters(cfg, &ctxs, &mut env_rng)?;
    let groups = if fs.is_empty() { p.groups.clone() } else { build_multicalibeating_groups(&p.groups, &fs) };
    let config = CalibrationConfig::new(n, r, groups.clone(), horizon)?;
    let eta = config.eta();
    let floor = config.value_bound();
    let mut learner = MulticalLearner::new(config);
    let mut adv = cfg.adversary.build_label(&cfg.base_dir, horizon)?;
    let bound = alpha_bound_high_probability(n, r, groups.len(), horizon, p.delta);
    let mut rows = Vec::with_capacity(horizon);
    let mut logs = Vec::with_capacity(2 * n * groups.len());
    for (s, c) in ctxs.into_iter().enumerate() {
        let t = s + 1;
        let ctx = RoundContext {
            features: c.features,
            forecasts: fs.iter().map(|f| f.forecasts[s]).collect(),
        };
        let round = learner.step(ctx, adv.as_mut(), &mut rng).with_context(|| format!("round {t}"))?;
        let state = learner.state();
        let mut worst: f64 = 0.0;
        logs.clear();
        for g in 0..groups.len() {
            for i in 1..=n {
                let v = state.sum(i, g);
                worst = worst.max(v.abs());
                logs.push(eta * v);
                logs.push(-eta * v);
            }
        }
        // Every round certifies 1/(rn), so max|S| ≤ t/(rn) + ln(L)/η.
        let surrogate = floor + log_sum_exp(&logs) / eta / t as f64;
        rows.push(RoundRow {
            t,
            action: sig9(round.prediction),
            adversary: sig9(round.label),
            metric: worst / t as f64,
            surrogate_bound: Some(surrogate),
            bound: Some(bound),
        });
    }
    let rounds = learner.state().rounds();
    let measured = measure_alpha(rounds, &groups, n)?;
    let final_metric = rows.last().map_or(0.0, |r| r.metric);
    let mut details = json!({
        "n": n,
        "r": r,
        "groups": groups.len(),
        "measured_alpha": measured,
        "alpha_bound_expectation": alpha_bound_expectation(n, r, groups.len(), horizon),
        "alpha_bound_high_probability": bound,
        "delta": p.delta,
        "value_bound": floor,
        "max_certified": learner.max_certified(),
    });
    if !fs.is_empty() {
        let report = evaluate_calibeating(rounds, &fs, &p.groups, n, r, p.delta)?;
        let chain_holds = report.cells.iter().all(|c| match c {
            CellReport::Scored(c) => c.learner_brier <= c.forecaster_refinement + c.certified_bound + 1e-12,
            CellReport::NotApplicable { .. } => true,
        });
        details["base_groups"] = json!(p.groups.len());
        details["chain_holds"] = json!(chain_holds);
        details["scores"] = serde_json::to_value(&report)?;
    }
    Ok(SeedRun {
        rows,
        summary: summary(cfg, seed, final_metric, bound, details),
    })
}

fn load_game(cfg: &Config, src: &GameSource) -> Result<PolytopeGame> {
    Ok(match src {
        GameSource::File { path } => {
            let full = cfg.resolve(path);
            let text = fs::read_to_string(&full).with_context(|| format!("reading {}", full.display()))?;
            PolytopeGame::from_json_str(&text).with_context(|| format!("in game {}", full.display()))?
        }
        GameSource::Sign { lambda, width } => sign_game(*lambda, *width)?,
    })
}

fn run_blackwell(cfg: &Config, seed: u64) -> Result<SeedRun> {
    let game = load_game(cfg, &cfg.blackwell()?.game)?;
    game.validate()?;
    if let Satisfiability::Violated { adv_action } = check_response_satisfiable(&game)? {
        bail!("game is not response-satisfiable: no learner mixture answers adversary action {adv_action}");
    }
    let horizon = cfg.horizon;
    let (mut rng, _) = rngs(seed);
    let mut learner = ApproachLearner::new(&game, horizon)?;
    let mut adv = cfg.adversary.build(&cfg.base_dir, horizon)?;
    let bound = margin_bound(game.halfspaces.len(), horizon);
    let mut max_lp_value = f64::NEG_INFINITY;
    let mut rows = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let step = learner.step(adv.as_mut(), &mut rng).with_context(|| format!("round {t}"))?;
        max_lp_value = max_lp_value.max(step.lp_value);
        let s = learner.surrogate();
        rows.push(RoundRow {
            t,
            action: step.record.action.to_string(),
            adversary: AdversarySet::encode(&step.record.adversary),
            metric: step.margin,
            surrogate_bound: Some((s.cum_value_bound() + s.surrogate_regret_bound()) / t as f64),
            bound: Some(bound),
        });
    }
    let final_metric = rows.last().map_or(0.0, |r| r.metric);
    let details = json!({
        "halfspaces": game.halfspaces.len(),
        "lambda": game.lambda,
        "max_lp_value": max_lp_value,
        "average_play": learner.approach().average_play(),
        "consistency_gap": learner.approach().consistency_gap(&game),
    });
    Ok(SeedRun {
        rows,
        summary: summary(cfg, seed, final_metric, bound, details),
    })
}

/// Run one seed in memory.
pub fn run_seed(cfg: &Config, seed: u64) -> Result<SeedRun> {
    use ExperimentKind::*;
    match cfg.experiment {
        External | Internal | Swap | Adaptive | Sleeping | Multigroup => run_regret(cfg, seed),
        Multicalibration | Multicalibeating => run_calibration(cfg, seed),
        Blackwell => run_blackwell(cfg, seed),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig9).unwrap_or_default()
}

pub fn write_rounds_csv<W: std::io::Write>(rows: &[RoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "action", "adversary", "metric", "surrogate_bound", "bound"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.action.clone(),
            r.adversary.clone(),
            sig9(r.metric),
            opt(r.surrogate_bound),
            opt(r.bound),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_seed(dir: &Path, run: &SeedRun) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_rounds_csv(&run.rows, fs::File::create(dir.join("rounds.csv"))?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run.summary)? + "\n")?;
    Ok(())
}

/// Run every configured seed and write its files. A single seed writes into
/// `out_dir`; a seed list writes `out_dir/seed-<s>/` per seed plus
/// `out_dir/aggregate.json`.
pub fn run(cfg: &Config) -> Result<RunReport> {
    let seeds = cfg.seed_list();
    if cfg.seeds.is_none() {
        let run = run_seed(cfg, cfg.seed)?;
        write_seed(&cfg.out_dir, &run)?;
        return Ok(RunReport {
            summaries: vec![run.summary],
            dirs: vec![cfg.out_dir.clone()],
        });
    }
    let done: Vec<(PathBuf, Summary)> = seeds
        .par_iter()
        .map(|&s| {
            let run = run_seed(cfg, s).with_context(|| format!("seed {s}"))?;
            let dir = cfg.out_dir.join(format!("seed-{s}"));
            write_seed(&dir, &run)?;
            Ok((dir, run.summary))
        })
        .collect::<Result<_>>()?;
    let (dirs, summaries): (Vec<_>, Vec<_>) = done.into_iter().unzip();
    let finals: Vec<f64> = summaries.iter().map(|s| s.final_metric).collect();
    let aggregate = json!({
        "experiment": cfg.experiment,
        "horizon": cfg.horizon,
        "config_hash": cfg.hash(),
        "metric_name": metric_name(cfg.experiment),
        "seeds": seeds,
        "final_metrics": finals,
        "mean_final_metric": finals.iter().sum::<f64>() / finals.len() as f64,
        "bound": summaries[0].bound,
        "within_bound": summaries.iter().filter(|s| s.within_bound).count(),
    });
    fs::write(cfg.out_dir.join("aggregate.json"), serde_json::to_string_pretty(&aggregate)? + "\n")?;
    Ok(RunReport { summaries, dirs })
}
