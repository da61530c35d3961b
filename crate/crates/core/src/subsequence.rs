//! Subsequence regret: instances, the LP-feasibility and closed-form
//! learners, exponential weights, and evaluators for the common regret
//! notions (external, internal, swap, adaptive, sleeping, multigroup,
//! wide-range).

use std::sync::Arc;

use crate::amf_core::{
    log_sum_exp, play_round, softmax, Adversary, AdversarySet, AmfRng, LossFn, MinimaxSolver,
    RoundEnvironment, RoundRecord, SurrogateState,
};
use crate::error::{config_err, AmfError, Result};
use crate::game_solver::{max_weighted_objective, LpSolver, SolverCertificate};
use crate::groups::{Group, RoundContext};
use crate::lp::{LinearProgram, LpOutcome, Relation};

/// Tolerance on the feasibility inequalities of the LP learner.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Everything the family can depend on in round `t` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceRound {
    pub t: usize,
    /// Available actions, strictly increasing.
    pub available: Vec<usize>,
    pub context: RoundContext,
}

impl SubsequenceRound {
    /// Round with every one of `num_actions` actions available.
    pub fn full(t: usize, num_actions: usize) -> Self {
        Self {
            t,
            available: (0..num_actions).collect(),
            context: RoundContext::default(),
        }
    }
}

/// A finite family of subsequence indicators `f(t, a) ∈ [0, 1]`.
pub trait SubsequenceFamily: Send + Sync {
    fn len(&self) -> usize;
    fn value(&self, f: usize, round: &SubsequenceRound, action: usize) -> f64;
    /// True when `f(t, a)` never depends on `a`.
    fn action_independent(&self) -> bool;
}

/// The single subsequence `f ≡ 1`.
pub struct ConstantFamily;

impl SubsequenceFamily for ConstantFamily {
    fn len(&self) -> usize {
        1
    }
    fn value(&self, _: usize, _: &SubsequenceRound, _: usize) -> f64 {
        1.0
    }
    fn action_independent(&self) -> bool {
        true
    }
}

/// `f_i(t, a) = 1[a = i]`.
pub struct ActionIndicatorFamily {
    pub num_actions: usize,
}

impl SubsequenceFamily for ActionIndicatorFamily {
    fn len(&self) -> usize {
        self.num_actions
    }
    fn value(&self, f: usize, _: &SubsequenceRound, action: usize) -> f64 {
        if action == f {
            1.0
        } else {
            0.0
        }
    }
    fn action_independent(&self) -> bool {
        false
    }
}

/// Indicators of all contiguous intervals `[t1, t2] ⊆ [1, T]`, ordered by
/// `t1` then `t2`. Indices are decoded on demand.
pub struct IntervalFamily {
    horizon: usize,
    offsets: Vec<usize>,
}

impl IntervalFamily {
    pub fn new(horizon: usize) -> Self {
        let mut offsets = Vec::with_capacity(horizon + 1);
        let mut acc = 0;
        for t1 in 1..=horizon {
            offsets.push(acc);
            acc += horizon - t1 + 1;
        }
        offsets.push(acc);
        Self { horizon, offsets }
    }

    pub fn index(&self, t1: usize, t2: usize) -> usize {
        self.offsets[t1 - 1] + (t2 - t1)
    }

    pub fn interval(&self, f: usize) -> (usize, usize) {
        let t1 = self.offsets.partition_point(|&o| o <= f);
        (t1, t1 + f - self.offsets[t1 - 1])
    }
}

impl SubsequenceFamily for IntervalFamily {
    fn len(&self) -> usize {
        self.horizon * (self.horizon + 1) / 2
    }
    fn value(&self, f: usize, round: &SubsequenceRound, _: usize) -> f64 {
        let (t1, t2) = self.interval(f);
        if t1 <= round.t && round.t <= t2 {
            1.0
        } else {
            0.0
        }
    }
    fn action_independent(&self) -> bool {
        true
    }
}

/// `f_j(t, a) = 1[j is available at t]`.
pub struct AwakeFamily {
    pub num_actions: usize,
}

impl SubsequenceFamily for AwakeFamily {
    fn len(&self) -> usize {
        self.num_actions
    }
    fn value(&self, f: usize, round: &SubsequenceRound, _: usize) -> f64 {
        if round.available.binary_search(&f).is_ok() {
            1.0
        } else {
            0.0
        }
    }
    fn action_independent(&self) -> bool {
        true
    }
}

/// `f_g(t, a) = 1[θ^t ∈ g]`.
pub struct GroupFamily {
    pub groups: Vec<Group>,
}

impl SubsequenceFamily for GroupFamily {
    fn len(&self) -> usize {
        self.groups.len()
    }
    fn value(&self, f: usize, round: &SubsequenceRound, _: usize) -> f64 {
        if self.groups[f].contains(&round.context) {
            1.0
        } else {
            0.0
        }
    }
    fn action_independent(&self) -> bool {
        true
    }
}

type FamilyFn = dyn Fn(usize, &SubsequenceRound, usize) -> f64 + Send + Sync;

/// A family given by a closure.
pub struct FnFamily {
    len: usize,
    action_independent: bool,
    f: Box<FamilyFn>,
}

impl FnFamily {
    pub fn new(
        len: usize,
        action_independent: bool,
        f: impl Fn(usize, &SubsequenceRound, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            len,
            action_independent,
            f: Box::new(f),
        }
    }
}

impl SubsequenceFamily for FnFamily {
    fn len(&self) -> usize {
        self.len
    }
    fn value(&self, f: usize, round: &SubsequenceRound, action: usize) -> f64 {
        (self.f)(f, round, action)
    }
    fn action_independent(&self) -> bool {
        self.action_independent
    }
}

/// Action set, subsequence family and the pair set `H` of
/// `(comparator action, family index)`.
pub struct SubsequenceInstance {
    num_actions: usize,
    family: Arc<dyn SubsequenceFamily>,
    pairs: Vec<(usize, usize)>,
}

impl SubsequenceInstance {
    pub fn new(num_actions: usize, family: Arc<dyn SubsequenceFamily>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        if num_actions == 0 {
            return config_err("instance needs at least one action");
        }
        if pairs.is_empty() {
            return config_err("pair set is empty");
        }
        if let Some(p) = pairs.iter().find(|(j, f)| *j >= num_actions || *f >= family.len()) {
            return config_err(format!("pair {p:?} is out of range"));
        }
        Ok(Self {
            num_actions,
            family,
            pairs,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn family(&self) -> &Arc<dyn SubsequenceFamily> {
        &self.family
    }

    /// Number of loss coordinates, `|H|`.
    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Validate availability, value ranges and the
    /// no-regret-to-unavailable-actions property for one round.
    pub fn check_round(&self, round: &SubsequenceRound) -> Result<()> {
        let av = &round.available;
        if av.is_empty() {
            return Err(AmfError::Precondition(format!("round {}: no available actions", round.t)));
        }
        if av.windows(2).any(|w| w[0] >= w[1]) || av[av.len() - 1] >= self.num_actions {
            return Err(AmfError::Precondition(format!(
                "round {}: available set {av:?} must be strictly increasing action ids",
                round.t
            )));
        }
        for &(j, f) in &self.pairs {
            let awake = av.binary_search(&j).is_ok();
            for &a in av {
                let v = self.family.value(f, round, a);
                if !(0.0..=1.0).contains(&v) {
                    return Err(AmfError::Precondition(format!(
                        "round {}: subsequence {f} has value {v} outside [0, 1]",
                        round.t
                    )));
                }
                if !awake && v != 0.0 {
                    return Err(AmfError::Precondition(format!(
                        "round {}: regret to unavailable action {j} through subsequence {f}",
                        round.t
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loss vector: the coordinate for `(j, f)` is `f(t, a)·(r_a − r_j)`.
    pub fn losses_for(&self, round: &SubsequenceRound, action: usize, r: &[f64]) -> Result<Vec<f64>> {
        if round.available.binary_search(&action).is_err() {
            return Err(AmfError::Precondition(format!(
                "round {}: action {action} is not available",
                round.t
            )));
        }
        if r.len() != self.num_actions {
            return Err(AmfError::Dimension {
                expected: self.num_actions,
                got: r.len(),
                context: "action losses",
            });
        }
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AmfError::AdversaryOutOfSet(format!("action losses {r:?} outside [0, 1]")));
        }
        let mut out = vec![0.0; self.pairs.len()];
        self.fill_losses(round, action, r, &mut out);
        Ok(out)
    }

    fn fill_losses(&self, round: &SubsequenceRound, action: usize, r: &[f64], out: &mut [f64]) {
        for (o, &(j, f)) in out.iter_mut().zip(&self.pairs) {
            let v = self.family.value(f, round, action);
            *o = if v == 0.0 { 0.0 } else { v * (r[action] - r[j]) };
        }
    }

    /// The round as a framework environment: learner plays an available
    /// action, adversary picks `r ∈ [0,1]^{|A|}`, `C = 1`.
    pub fn environment<'s>(&'s self, round: &'s SubsequenceRound) -> Result<RoundEnvironment<'s>> {
        let loss: LossFn<'s> = Box::new(move |a, r, out| self.fill_losses(round, a, r, out));
        RoundEnvironment::new(
            round.available.clone(),
            AdversarySet::Cube { dim: self.num_actions },
            self.pairs.len(),
            1.0,
            loss,
        )
    }

    /// Log-domain weights of the active pairs, shifted so the largest is 0.
    /// Pairs whose subsequence is zero on every available action are dropped.
    fn active_weights(&self, round: &SubsequenceRound, log_weights: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        if log_weights.len() != self.pairs.len() {
            return Err(AmfError::Dimension {
                expected: self.pairs.len(),
                got: log_weights.len(),
                context: "pair weights",
            });
        }
        let active: Vec<(usize, usize, f64)> = self
            .pairs
            .iter()
            .zip(log_weights)
            .filter(|((_, f), _)| round.available.iter().any(|&a| self.family.value(*f, round, a) != 0.0))
            .map(|(&(j, f), &w)| (j, f, w))
            .collect();
        let max = active.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        Ok(active.into_iter().map(|(j, f, w)| (j, f, (w - max).exp())).collect())
    }

    /// Left-hand sides of the feasibility system at `x` (over available
    /// actions), using weights `exp(log_weights)`; all are ≤ 0 at a solution.
    pub fn feasibility_lhs(&self, round: &SubsequenceRound, log_weights: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let (w_out, v_in) = self.feasibility_terms(round, log_weights)?;
        let m = round.available.len();
        Ok((0..m)
            .map(|i| x[i] * w_out[i] - (0..m).map(|k| x[k] * v_in[i][k]).sum::<f64>())
            .collect())
    }

    /// `W_a = Σ_{(j,f)} w f(t,a)` and `V_{a,k} = Σ_{f:(a,f)} w f(t,k)` over
    /// the available actions, in shifted scale.
    fn feasibility_terms(&self, round: &SubsequenceRound, log_weights: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let av = &round.available;
        let m = av.len();
        let active = self.active_weights(round, log_weights)?;
        let mut w_out = vec![0.0; m];
        let mut v_in = vec![vec![0.0; m]; m];
        for &(j, f, w) in &active {
            let vals: Vec<f64> = av.iter().map(|&a| self.family.value(f, round, a)).collect();
            for i in 0..m {
                w_out[i] += w * vals[i];
            }
            if let Ok(row) = av.binary_search(&j) {
                for k in 0..m {
                    v_in[row][k] += w * vals[k];
                }
            }
        }
        Ok((w_out, v_in))
    }
}

/// LP-feasibility learner: a mixture over the available actions satisfying
/// `x_a W_a − Σ_k x_k V_{a,k} ≤ 0` for every available `a`.
pub fn algorithm5_mixture(instance: &SubsequenceInstance, round: &SubsequenceRound, log_weights: &[f64]) -> Result<Vec<f64>> {
    let (w_out, v_in) = instance.feasibility_terms(round, log_weights)?;
    let m = round.available.len();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let mut lp = LinearProgram::new(m);
    for i in 0..m {
        let row: Vec<f64> = (0..m)
            .map(|k| if k == i { w_out[i] - v_in[i][k] } else { -v_in[i][k] })
            .collect();
        lp.constrain(row, Relation::Le, 0.0);
    }
    lp.constrain(vec![1.0; m], Relation::Eq, 1.0);
    let worst = |x: &[f64]| {
        (0..m)
            .map(|i| x[i] * w_out[i] - (0..m).map(|k| x[k] * v_in[i][k]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    if let LpOutcome::Optimal { x, .. } = lp.solve() {
        let total: f64 = x.iter().map(|v| v.max(0.0)).sum();
        let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0) / total).collect();
        if worst(&x) <= FEASIBILITY_TOL {
            return Ok(x);
        }
    }
    // The simplex misjudges badly scaled systems whose feasible set is a
    // single point. With no regret to unavailable actions the system is the
    // balance equation of a chain with rates `k → i` of `V_{i,k}`, which
    // elimination without subtraction solves to full relative accuracy.
    let x = balance_solution(&v_in);
    let residual = worst(&x);
    if residual > FEASIBILITY_TOL {
        return Err(AmfError::Infeasible(format!(
            "round {}: subsequence feasibility system has no solution (best residual {residual})",
            round.t
        )));
    }
    Ok(x)
}

/// Stationary distribution of the chain with rate `v_in[i][k]` from `k` to
/// `i`, by Grassmann–Taksar–Heyman elimination. Reducible chains get the
/// distribution of one closed class.
fn balance_solution(v_in: &[Vec<f64>]) -> Vec<f64> {
    let m = v_in.len();
    // rate[k][i]: from k to i, diagonal ignored.
    let mut rate: Vec<Vec<f64>> = (0..m)
        .map(|k| (0..m).map(|i| if i == k { 0.0 } else { v_in[i][k] }).collect())
        .collect();
    let mut out = vec![0.0; m];
    let mut first = 0;
    for n in (1..m).rev() {
        let s: f64 = rate[n][..n].iter().sum();
        if s == 0.0 {
            // Nothing below n is reachable from n: start the closed class here.
            first = n;
            break;
        }
        out[n] = s;
        for i in 0..n {
            let f = rate[i][n] / s;
            if f != 0.0 {
                for j in 0..n {
                    rate[i][j] += f * rate[n][j];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    x[first] = 1.0;
    for j in first + 1..m {
        x[j] = (first..j).map(|i| x[i] * rate[i][j]).sum::<f64>() / out[j];
    }
    let total: f64 = x.iter().sum();
    x.into_iter().map(|v| v / total).collect()
}

/// Closed-form learner for action-independent families:
/// `x_a ∝ Σ_{f:(a,f)∈H} f(t)·exp(log_weight_(a,f))`, uniform when every
/// `f(t)` is zero.
pub fn algorithm6_mixture(instance: &SubsequenceInstance, round: &SubsequenceRound, log_weights: &[f64]) -> Result<Vec<f64>> {
    if !instance.family.action_independent() {
        return config_err("closed-form learner needs an action-independent family");
    }
    if log_weights.len() != instance.pairs.len() {
        return Err(AmfError::Dimension {
            expected: instance.pairs.len(),
            got: log_weights.len(),
            context: "pair weights",
        });
    }
    let av = &round.available;
    let probe = av[0];
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); av.len()];
    for (&(j, f), &w) in instance.pairs.iter().zip(log_weights) {
        let Ok(row) = av.binary_search(&j) else { continue };
        let v = instance.family.value(f, round, probe);
        if v > 0.0 {
            terms[row].push(v.ln() + w);
        }
    }
    if terms.iter().all(Vec::is_empty) {
        return Ok(vec![1.0 / av.len() as f64; av.len()]);
    }
    let logs: Vec<f64> = terms.iter().map(|t| log_sum_exp(t)).collect();
    Ok(softmax(&logs, 1.0))
}

/// Exponential weights: `Pr[a = j] ∝ exp(−η Σ_s r_j^s)`.
pub fn exponential_weights_mixture(cum_action_losses: &[f64], eta: f64) -> Vec<f64> {
    softmax(cum_action_losses, -eta)
}

/// Which per-round learner a subsequence run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsequenceMethod {
    /// The framework's generic minimax LP over the cube.
    Minimax,
    /// LP feasibility.
    Feasibility,
    /// Closed form for action-independent families.
    ClosedForm,
}

/// Minimax solver adaptor for one round of a subsequence instance.
pub struct SubsequenceSolver<'i> {
    pub instance: &'i SubsequenceInstance,
    pub round: &'i SubsequenceRound,
    pub method: SubsequenceMethod,
}

impl MinimaxSolver for SubsequenceSolver<'_> {
    fn solve(&mut self, env: &RoundEnvironment, state: &SurrogateState, chi: &[f64]) -> Result<SolverCertificate> {
        let log_weights: Vec<f64> = state.cum_loss().iter().map(|c| state.eta() * c).collect();
        let (mixture, method) = match self.method {
            SubsequenceMethod::Minimax => return LpSolver.solve(env, state, chi),
            SubsequenceMethod::Feasibility => (algorithm5_mixture(self.instance, self.round, &log_weights)?, "feasibility-lp"),
            SubsequenceMethod::ClosedForm => (algorithm6_mixture(self.instance, self.round, &log_weights)?, "closed-form"),
        };
        let (_, value) = max_weighted_objective(env, chi, &mixture)?;
        Ok(SolverCertificate { mixture, value, method })
    }
}

/// Play one round of a subsequence instance through the framework loop.
pub fn play_subsequence_round<A: Adversary + ?Sized>(
    instance: &SubsequenceInstance,
    round: &SubsequenceRound,
    state: &mut SurrogateState,
    method: SubsequenceMethod,
    adversary: &mut A,
    rng: &mut AmfRng,
) -> Result<RoundRecord> {
    instance.check_round(round)?;
    let env = instance.environment(round)?;
    let mut solver = SubsequenceSolver { instance, round, method };
    play_round(state, &env, &mut solver, adversary, rng)
}

fn check_actions(num_actions: usize) -> Result<()> {
    if num_actions < 2 {
        return config_err(format!("need at least 2 actions, got {num_actions}"));
    }
    Ok(())
}

/// External regret: `H = {(j, 1)}`.
pub fn build_external(num_actions: usize) -> Result<SubsequenceInstance> {
    check_actions(num_actions)?;
    SubsequenceInstance::new(num_actions, Arc::new(ConstantFamily), (0..num_actions).map(|j| (j, 0)).collect())
}

/// Internal regret: `f_i(t,a) = 1[a = i]`, `H = A × F`; pair `(j, f_i)` has
/// index `j·|A| + i`.
pub fn build_internal(num_actions: usize) -> Result<SubsequenceInstance> {
    check_actions(num_actions)?;
    let pairs = (0..num_actions)
        .flat_map(|j| (0..num_actions).map(move |i| (j, i)))
        .collect();
    SubsequenceInstance::new(num_actions, Arc::new(ActionIndicatorFamily { num_actions }), pairs)
}

/// Adaptive regret: every contiguous interval against every action.
pub fn build_adaptive(num_actions: usize, horizon: usize) -> Result<SubsequenceInstance> {
    check_actions(num_actions)?;
    if horizon == 0 {
        return config_err("horizon must be at least 1");
    }
    let family = IntervalFamily::new(horizon);
    let n = family.len();
    let pairs = (0..num_actions).flat_map(|j| (0..n).map(move |f| (j, f))).collect();
    SubsequenceInstance::new(num_actions, Arc::new(family), pairs)
}

/// Sleeping experts: regret to `j` on the rounds where `j` is awake.
pub fn build_sleeping(num_actions: usize) -> Result<SubsequenceInstance> {
    check_actions(num_actions)?;
    SubsequenceInstance::new(num_actions, Arc::new(AwakeFamily { num_actions }), (0..num_actions).map(|j| (j, j)).collect())
}

/// Multigroup regret: regret to every action on every group's rounds.
pub fn build_multigroup(num_actions: usize, groups: Vec<Group>) -> Result<SubsequenceInstance> {
    check_actions(num_actions)?;
    if groups.is_empty() {
        return config_err("group collection is empty");
    }
    let g = groups.len();
    let pairs = (0..num_actions).flat_map(|j| (0..g).map(move |f| (j, f))).collect();
    SubsequenceInstance::new(num_actions, Arc::new(GroupFamily { groups }), pairs)
}

/// Fast learner for adaptive regret. Keeps, per interval start `t1`, the
/// cumulative losses of every action since `t1`, and plays the closed-form
/// mixture over all live intervals. Intervals ending later than `t` share a
/// common multiplicity that cancels.
pub struct AdaptiveLearner {
    num_actions: usize,
    eta: f64,
    since: Vec<Vec<f64>>,
    horizon: usize,
    /// `ln Σ exp(η·cum)` over intervals that have already ended.
    ended_log: f64,
}

impl AdaptiveLearner {
    pub fn new(num_actions: usize, horizon: usize) -> Result<Self> {
        check_actions(num_actions)?;
        let d = num_actions * horizon * (horizon + 1) / 2;
        let eta = crate::amf_core::learning_rate(d, horizon, 1.0)?;
        Ok(Self {
            num_actions,
            eta,
            since: vec![vec![0.0; num_actions]],
            horizon,
            ended_log: f64::NEG_INFINITY,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of loss coordinates of the equivalent instance.
    pub fn dim(&self) -> usize {
        self.num_actions * self.horizon * (self.horizon + 1) / 2
    }

    pub fn mixture(&self) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.num_actions)
            .map(|j| {
                let terms: Vec<f64> = self.since.iter().map(|row| self.eta * row[j]).collect();
                log_sum_exp(&terms)
            })
            .collect();
        softmax(&logs, 1.0)
    }

    /// Fold in the played action and the round's action losses.
    pub fn update(&mut self, action: usize, r: &[f64]) {
        for row in &mut self.since {
            for (j, v) in row.iter_mut().enumerate() {
                *v += r[action] - r[j];
            }
        }
        // Intervals ending this round keep their value from now on.
        let mut terms: Vec<f64> = self.since.iter().flatten().map(|v| self.eta * v).collect();
        terms.push(self.ended_log);
        self.ended_log = log_sum_exp(&terms);
        self.since.push(vec![0.0; self.num_actions]);
    }

    /// Rounds folded in so far.
    pub fn rounds(&self) -> usize {
        self.since.len() - 1
    }

    /// `ln(L)/η` over every (action, interval) coordinate, with a zero
    /// per-round value: an upper bound on the adaptive regret so far.
    pub fn surrogate_regret_bound(&self) -> f64 {
        let t = self.rounds();
        let rest = (self.horizon - t) as f64;
        let mut terms = vec![self.ended_log];
        if rest > 0.0 {
            // Intervals that started and are still open share T − t ends.
            let open: Vec<f64> = self.since[..t].iter().flatten().map(|v| self.eta * v).collect();
            if !open.is_empty() {
                terms.push(rest.ln() + log_sum_exp(&open));
            }
            // Intervals that have not started: cumulative loss 0.
            terms.push((self.num_actions as f64 * rest * (rest + 1.0) / 2.0).ln());
        }
        log_sum_exp(&terms) / self.eta
    }
}

/// Realized play for regret evaluation: actions and full loss vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTranscript {
    pub num_actions: usize,
    pub actions: Vec<usize>,
    pub losses: Vec<Vec<f64>>,
}

impl RegretTranscript {
    pub fn new(num_actions: usize) -> Self {
        Self {
            num_actions,
            ..Default::default()
        }
    }

    pub fn push(&mut self, action: usize, losses: Vec<f64>) {
        self.actions.push(action);
        self.losses.push(losses);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn rows(&self) -> impl Iterator<Item = (usize, &Vec<f64>)> {
        self.actions.iter().copied().zip(&self.losses)
    }
}

/// `max_j Σ_t (r_{a^t} − r_j)`.
pub fn external_regret(tr: &RegretTranscript) -> f64 {
    let mut sums = vec![0.0; tr.num_actions];
    for (a, r) in tr.rows() {
        for (j, s) in sums.iter_mut().enumerate() {
            *s += r[a] - r[j];
        }
    }
    sums.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `M[i][j] = Σ_{t: a^t = i} (r_i − r_j)`, summed in time order.
pub fn pair_regret_matrix(tr: &RegretTranscript) -> Vec<Vec<f64>> {
    let k = tr.num_actions;
    let mut m = vec![vec![0.0; k]; k];
    for (a, r) in tr.rows() {
        for j in 0..k {
            m[a][j] += r[a] - r[j];
        }
    }
    m
}

/// `max_{i,j} M[i][j]`, never below 0 since `M[i][i] = 0`.
pub fn internal_regret(tr: &RegretTranscript) -> f64 {
    pair_regret_matrix(tr)
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max)
}

/// Swap regret by per-action best replacement:
/// `Σ_i max(0, max_j M[i][j])`, accumulated in action order.
pub fn swap_regret(tr: &RegretTranscript) -> f64 {
    pair_regret_matrix(tr)
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum()
}

/// Max over actions and nonempty intervals of the interval's regret.
pub fn adaptive_regret(tr: &RegretTranscript) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for j in 0..tr.num_actions {
        let mut ending_here = f64::NEG_INFINITY;
        for (a, r) in tr.rows() {
            let x = r[a] - r[j];
            ending_here = if ending_here > 0.0 { ending_here + x } else { x };
            best = best.max(ending_here);
        }
    }
    best
}

/// `max_j Σ_{t: j awake} (r_{a^t} − r_j)`.
pub fn sleeping_regret(tr: &RegretTranscript, available: &[Vec<usize>]) -> f64 {
    let mut sums = vec![0.0; tr.num_actions];
    for ((a, r), av) in tr.rows().zip(available) {
        for &j in av {
            sums[j] += r[a] - r[j];
        }
    }
    sums.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `max_{g,j} Σ_{t: θ^t ∈ g} (r_{a^t} − r_j)`; `membership[t][g]`.
pub fn multigroup_regret(tr: &RegretTranscript, membership: &[Vec<bool>]) -> f64 {
    let groups = membership.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; tr.num_actions]; groups];
    for ((a, r), member) in tr.rows().zip(membership) {
        for (g, _) in member.iter().enumerate().filter(|(_, m)| **m) {
            for j in 0..tr.num_actions {
                sums[g][j] += r[a] - r[j];
            }
        }
    }
    sums.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `max_{(j,f)∈H} Σ_t f(t, a^t)(r_{a^t} − r_j)` for any instance.
pub fn subsequence_regret(instance: &SubsequenceInstance, rounds: &[SubsequenceRound], tr: &RegretTranscript) -> f64 {
    let mut sums = vec![0.0; instance.dim()];
    for ((a, r), round) in tr.rows().zip(rounds) {
        for (s, &(j, f)) in sums.iter_mut().zip(instance.pairs()) {
            *s += instance.family.value(f, round, a) * (r[a] - r[j]);
        }
    }
    sums.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

type RuleFn = dyn Fn(usize, usize) -> usize + Send + Sync;

/// A modification rule `μ(t, a) → a'`.
pub struct ModificationRule(Box<RuleFn>);

impl ModificationRule {
    pub fn from_fn(f: impl Fn(usize, usize) -> usize + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }

    /// Time-invariant rule given as a lookup table.
    pub fn table(map: Vec<usize>) -> Self {
        Self::from_fn(move |_, a| map[a])
    }

    /// Always recommends `j`.
    pub fn constant(j: usize) -> Self {
        Self::from_fn(move |_, _| j)
    }

    pub fn apply(&self, t: usize, a: usize) -> usize {
        (self.0)(t, a)
    }
}

/// Modification rules plus the `(rule, subsequence)` pairs that define
/// wide-range regret.
pub struct ModificationRuleSet {
    pub rules: Vec<ModificationRule>,
    pub pairs: Vec<(usize, usize)>,
}

/// `φ^{(μ,f)}_j(t, a) = f(t, a)·1[μ(t, a) = j]`; index `p·|A| + j` for the
/// `p`-th `(μ, f)` pair.
pub struct DerivedFamily {
    rules: Arc<ModificationRuleSet>,
    base: Arc<dyn SubsequenceFamily>,
    num_actions: usize,
}

impl SubsequenceFamily for DerivedFamily {
    fn len(&self) -> usize {
        self.rules.pairs.len() * self.num_actions
    }
    fn value(&self, f: usize, round: &SubsequenceRound, action: usize) -> f64 {
        let (p, j) = (f / self.num_actions, f % self.num_actions);
        let (mu, base_f) = self.rules.pairs[p];
        if self.rules.rules[mu].apply(round.t, action) == j {
            self.base.value(base_f, round, action)
        } else {
            0.0
        }
    }
    fn action_independent(&self) -> bool {
        false
    }
}

impl ModificationRuleSet {
    /// The subsequence instance whose regret is `H_wide`: pairs
    /// `(j, φ^{(μ,f)}_j)` for every `(μ, f)` and every `j`.
    pub fn derived_instance(self: &Arc<Self>, num_actions: usize, base: Arc<dyn SubsequenceFamily>) -> Result<SubsequenceInstance> {
        if let Some(&(mu, f)) = self.pairs.iter().find(|(mu, f)| *mu >= self.rules.len() || *f >= base.len()) {
            return config_err(format!("wide-range pair ({mu}, {f}) is out of range"));
        }
        let family = DerivedFamily {
            rules: Arc::clone(self),
            base,
            num_actions,
        };
        let pairs = (0..self.pairs.len())
            .flat_map(|p| (0..num_actions).map(move |j| (j, p * num_actions + j)))
            .collect();
        SubsequenceInstance::new(num_actions, Arc::new(family), pairs)
    }
}

/// `max_{(μ,f)} Σ_t f(t, a^t)(r_{a^t} − r_{μ(t, a^t)})`.
pub fn widerange_regret(
    tr: &RegretTranscript,
    rounds: &[SubsequenceRound],
    rules: &ModificationRuleSet,
    base: &dyn SubsequenceFamily,
) -> f64 {
    let mut sums = vec![0.0; rules.pairs.len()];
    for ((a, r), round) in tr.rows().zip(rounds) {
        for (s, &(mu, f)) in sums.iter_mut().zip(&rules.pairs) {
            *s += base.value(f, round, a) * (r[a] - r[rules.rules[mu].apply(round.t, a)]);
        }
    }
    sums.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_pair_counts() {
        assert_eq!(build_external(5).unwrap().dim(), 5);
        assert_eq!(build_internal(3).unwrap().dim(), 9);
        let adaptive = build_adaptive(2, 3).unwrap();
        assert_eq!(adaptive.family().len(), 6);
        assert_eq!(adaptive.dim(), 12);
        assert_eq!(build_sleeping(4).unwrap().dim(), 4);
        assert_eq!(build_multigroup(3, vec![Group::All, Group::All]).unwrap().dim(), 6);
        assert!(build_external(1).is_err());
        assert!(build_multigroup(2, vec![]).is_err());
    }

    #[test]
    fn interval_indexing_round_trips() {
        let fam = IntervalFamily::new(5);
        let mut seen = 0;
        for t1 in 1..=5 {
            for t2 in t1..=5 {
                let i = fam.index(t1, t2);
                assert_eq!(i, seen);
                assert_eq!(fam.interval(i), (t1, t2));
                seen += 1;
            }
        }
        assert_eq!(seen, fam.len());
    }

    #[test]
    fn loss_coordinates() {
        let ext = build_external(2).unwrap();
        let round = SubsequenceRound::full(1, 2);
        let l = ext.losses_for(&round, 0, &[0.3, 0.8]).unwrap();
        assert!((l[1] + 0.5).abs() < 1e-15);
        assert_eq!(l[0], 0.0);

        let internal = build_internal(3).unwrap();
        let l = internal.losses_for(&round_of(3), 0, &[0.2, 0.5, 0.9]).unwrap();
        // Pair (j, f_i) sits at j*3 + i; f_i is off unless i = 0.
        for j in 0..3 {
            for i in 1..3 {
                assert_eq!(l[j * 3 + i], 0.0);
            }
        }
        assert!((l[2 * 3] - (0.2 - 0.9)).abs() < 1e-15);
    }

    fn round_of(k: usize) -> SubsequenceRound {
        SubsequenceRound::full(1, k)
    }

    #[test]
    fn zero_subsequence_gives_zero_losses() {
        let inst = SubsequenceInstance::new(2, Arc::new(FnFamily::new(1, true, |_, _, _| 0.0)), vec![(0, 0), (1, 0)]).unwrap();
        let l = inst.losses_for(&round_of(2), 1, &[1.0, 0.0]).unwrap();
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn first_round_mixtures_are_uniform() {
        for k in [2, 3, 5] {
            let ext = build_external(k).unwrap();
            let zeros = vec![0.0; ext.dim()];
            for x in [
                algorithm5_mixture(&ext, &round_of(k), &zeros).unwrap(),
                algorithm6_mixture(&ext, &round_of(k), &zeros).unwrap(),
            ] {
                assert!(x.iter().all(|p| (p - 1.0 / k as f64).abs() < 1e-12));
            }
        }
        let internal = build_internal(3).unwrap();
        let zeros = vec![0.0; 9];
        let lhs = internal.feasibility_lhs(&round_of(3), &zeros, &[1.0 / 3.0; 3]).unwrap();
        assert!(lhs.iter().all(|v| *v <= 1e-12));
    }

    #[test]
    fn singleton_availability_is_a_point_mass() {
        let inst = build_sleeping(3).unwrap();
        let round = SubsequenceRound {
            t: 1,
            available: vec![2],
            context: RoundContext::default(),
        };
        inst.check_round(&round).unwrap();
        assert_eq!(algorithm5_mixture(&inst, &round, &[0.0; 3]).unwrap(), vec![1.0]);
    }

    #[test]
    fn closed_form_example() {
        // Per-action pairs with exponent sums (0, ln 2) → (1/3, 2/3).
        let inst = SubsequenceInstance::new(2, Arc::new(ConstantFamily), vec![(0, 0), (1, 0)]).unwrap();
        let x = algorithm6_mixture(&inst, &round_of(2), &[0.0, 2f64.ln()]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_subsequences_fall_back_to_uniform() {
        let inst = build_multigroup(3, vec![Group::Members { values: vec![7] }]).unwrap();
        let round = SubsequenceRound {
            t: 1,
            available: vec![0, 1, 2],
            context: RoundContext::new(vec![1.0]),
        };
        let x = algorithm6_mixture(&inst, &round, &[5.0, 1.0, 0.0]).unwrap();
        assert!(x.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn exponential_weights_reference() {
        let x = exponential_weights_mixture(&[0.0, 1.0], 0.5);
        assert!((x[0] - 0.622_459_331_201_854_6).abs() < 1e-12);
        assert!((x[1] - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert_eq!(exponential_weights_mixture(&[0.0; 4], 0.3), vec![0.25; 4]);
    }

    #[test]
    fn unavailable_regret_is_rejected() {
        let inst = build_external(3).unwrap();
        let round = SubsequenceRound {
            t: 1,
            available: vec![0, 1],
            context: RoundContext::default(),
        };
        assert!(matches!(inst.check_round(&round), Err(AmfError::Precondition(_))));
        assert!(build_sleeping(3).unwrap().check_round(&round).is_ok());
    }

    #[test]
    fn swap_regret_examples() {
        let mut tr = RegretTranscript::new(2);
        for _ in 0..7 {
            tr.push(0, vec![1.0, 0.0]);
        }
        assert_eq!(swap_regret(&tr), 7.0);
        let mut best = RegretTranscript::new(3);
        best.push(1, vec![0.5, 0.1, 0.9]);
        best.push(2, vec![0.5, 0.4, 0.0]);
        assert_eq!(swap_regret(&best), 0.0);
    }

    #[test]
    fn adaptive_regret_finds_best_window() {
        let mut tr = RegretTranscript::new(2);
        for r in [[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            tr.push(0, r.to_vec());
        }
        assert_eq!(adaptive_regret(&tr), 2.0);
        assert_eq!(external_regret(&tr), 0.0);
    }

    #[test]
    fn adaptive_learner_matches_generic_closed_form() {
        let (k, horizon) = (2, 9);
        let inst = build_adaptive(k, horizon).unwrap();
        let mut learner = AdaptiveLearner::new(k, horizon).unwrap();
        let mut cum = vec![0.0; inst.dim()];
        let losses = [[0.1, 0.9], [0.7, 0.2], [0.3, 0.3], [1.0, 0.0], [0.0, 1.0], [0.5, 0.4], [0.9, 0.1], [0.2, 0.6], [0.4, 0.8]];
        for (t, r) in losses.iter().enumerate() {
            let round = round_of(k);
            let round = SubsequenceRound { t: t + 1, ..round };
            let logs: Vec<f64> = cum.iter().map(|c| learner.eta() * c).collect();
            let generic = algorithm6_mixture(&inst, &round, &logs).unwrap();
            let fast = learner.mixture();
            for (g, f) in generic.iter().zip(&fast) {
                assert!((g - f).abs() < 1e-12, "round {}: {generic:?} vs {fast:?}", t + 1);
            }
            let a = t % 2;
            let l = inst.losses_for(&round, a, r).unwrap();
            cum.iter_mut().zip(&l).for_each(|(c, v)| *c += v);
            learner.update(a, r);
            let generic = SurrogateState::from_parts(cum.clone(), 0.0, learner.eta(), horizon, t + 1).unwrap();
            let (x, y) = (learner.surrogate_regret_bound(), generic.surrogate_regret_bound());
            assert!((x - y).abs() < 1e-9 * y.abs().max(1.0), "round {}: {x} vs {y}", t + 1);
        }
    }

    #[test]
    fn widerange_with_constant_rules_is_external_regret() {
        let mut tr = RegretTranscript::new(3);
        let rounds: Vec<SubsequenceRound> = (1..=4).map(|t| SubsequenceRound::full(t, 3)).collect();
        for (a, r) in [(0, [0.2, 0.5, 0.1]), (1, [0.9, 0.3, 0.4]), (2, [0.0, 0.6, 0.8]), (0, [0.7, 0.2, 0.3])] {
            tr.push(a, r.to_vec());
        }
        let rules = ModificationRuleSet {
            rules: (0..3).map(ModificationRule::constant).collect(),
            pairs: (0..3).map(|m| (m, 0)).collect(),
        };
        let w = widerange_regret(&tr, &rounds, &rules, &ConstantFamily);
        assert!((w - external_regret(&tr)).abs() < 1e-12);
    }

    #[test]
    fn balance_solution_handles_tiny_and_reducible_chains() {
        // Two-state chain with a 1e-8 return rate.
        let v = vec![vec![0.0, 0.5], vec![1e-8, 0.0]];
        let x = balance_solution(&v);
        assert!((x[1] / x[0] - 2e-8).abs() < 1e-20);
        // State 1 has no way out: all mass goes there.
        let v = vec![vec![0.0, 0.0, 0.0], vec![0.3, 0.0, 0.2], vec![0.1, 0.0, 0.0]];
        assert_eq!(balance_solution(&v), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn feasibility_on_badly_scaled_weights() {
        // A single, nearly degenerate feasible point.
        let vals = [0.457_007_157_998_029_3, 0.0, 0.999_184_303_674_746_6];
        let family = Arc::new(FnFamily::new(3, true, move |f, _, _| vals[f]));
        let pairs: Vec<(usize, usize)> = (0..3).flat_map(|j| (0..3).map(move |f| (j, f))).collect();
        let inst = SubsequenceInstance::new(3, family, pairs).unwrap();
        let round = SubsequenceRound::full(1, 3);
        let lw = [19.158_912_336_863_4, 0.0, -14.403_101_549_012_67, -8.816_511_057_910_109, 0.0, 0.0, -18.256_217_513_581_063, 0.0, 0.048_484_773_909_199_55];
        let x = algorithm5_mixture(&inst, &round, &lw).unwrap();
        assert!(inst.feasibility_lhs(&round, &lw, &x).unwrap().iter().all(|v| *v <= FEASIBILITY_TOL));
    }
}
