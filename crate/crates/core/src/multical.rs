//! Online multicalibration: the two-point randomized learner over the grid
//! `{0, 1/(rn), …, 1}`, its per-round value certificate, and measurement of
//! the multicalibration constant.

use serde::Serialize;

use crate::amf_core::{
    learning_rate, sample_index, AdversarySet, AmfRng, LossFn, MinimaxSolver, RoundEnvironment,
    SurrogateState,
};
use crate::error::{config_err, AmfError, Result};
use crate::game_solver::{SolverCertificate, TIE_TOL};
use crate::groups::{memberships, Group, RoundContext};

/// Slack allowed above `1/(rn)` by the per-round certificate.
pub const CERTIFICATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    n: usize,
    r: usize,
    groups: Vec<Group>,
    horizon: usize,
    eta: f64,
}

impl CalibrationConfig {
    pub fn new(n: usize, r: usize, groups: Vec<Group>, horizon: usize) -> Result<Self> {
        if n == 0 || r == 0 {
            return config_err(format!("bucket count n and refinement r must be ≥ 1 (n={n}, r={r})"));
        }
        if groups.is_empty() {
            return config_err("group collection is empty");
        }
        let eta = learning_rate(2 * groups.len() * n, horizon, 1.0)?;
        Ok(Self {
            n,
            r,
            groups,
            horizon,
            eta,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of loss coordinates, `2|G|n`.
    pub fn dim(&self) -> usize {
        2 * self.groups.len() * self.n
    }

    pub fn grid_len(&self) -> usize {
        self.r * self.n + 1
    }

    pub fn grid_value(&self, index: usize) -> f64 {
        index as f64 / (self.r * self.n) as f64
    }

    /// The value bound certified every round, `1/(rn)`.
    pub fn value_bound(&self) -> f64 {
        1.0 / (self.r * self.n) as f64
    }

    /// Framework coordinate of `(bucket i (1-based), group g, sign)`.
    pub fn coordinate(&self, i: usize, g: usize, positive: bool) -> usize {
        2 * (g * self.n + (i - 1)) + usize::from(!positive)
    }

    /// Bucket (1-based) of grid point `index`.
    pub fn grid_bucket(&self, index: usize) -> usize {
        (index / self.r + 1).min(self.n)
    }
}

/// Bucket `i ∈ [1, n]` with `a ∈ [(i−1)/n, i/n)`; `a = 1` is in bucket `n`.
pub fn bucket_index(a: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&a) || n == 0 {
        return config_err(format!("cannot bucket {a} into {n} buckets"));
    }
    let x = a * n as f64;
    let nearest = x.round();
    // Snap values within rounding error of a boundary onto it.
    let floor = if (x - nearest).abs() < 1e-9 { nearest } else { x.floor() };
    Ok((floor as usize + 1).min(n))
}

/// Expected-value bound on α: `1/(rn) + 4 sqrt(ln(2|G|n)/T)`.
pub fn alpha_bound_expectation(n: usize, r: usize, num_groups: usize, horizon: usize) -> f64 {
    1.0 / (r * n) as f64 + 4.0 * ((2.0 * (num_groups * n) as f64).ln() / horizon as f64).sqrt()
}

/// Bound on α holding with probability `1 − δ`:
/// `1/(rn) + 8 sqrt(ln(2|G|n/δ)/T)`.
pub fn alpha_bound_high_probability(n: usize, r: usize, num_groups: usize, horizon: usize, delta: f64) -> f64 {
    1.0 / (r * n) as f64 + 8.0 * ((2.0 * (num_groups * n) as f64 / delta).ln() / horizon as f64).sqrt()
}

/// One calibration round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRound {
    pub context: RoundContext,
    pub prediction: f64,
    pub label: f64,
}

/// Signed sums `S_{i,g} = Σ_s 1[θ^s∈g] 1[a^s∈B_i] (b^s − a^s)` and the
/// transcript they came from. The negative-sign coordinate is `−S`.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    n: usize,
    num_groups: usize,
    sums: Vec<f64>,
    rounds: Vec<CalibrationRound>,
}

impl CalibrationState {
    pub fn new(config: &CalibrationConfig) -> Self {
        Self {
            n: config.n,
            num_groups: config.groups.len(),
            sums: vec![0.0; config.n * config.groups.len()],
            rounds: Vec::new(),
        }
    }

    /// `S_{i,g}` for 1-based bucket `i`.
    pub fn sum(&self, i: usize, g: usize) -> f64 {
        self.sums[g * self.n + i - 1]
    }

    pub fn rounds(&self) -> &[CalibrationRound] {
        &self.rounds
    }

    pub fn record(&mut self, member_of: &[usize], round: CalibrationRound) -> Result<()> {
        let i = bucket_index(round.prediction, self.n)?;
        for &g in member_of {
            self.sums[g * self.n + i - 1] += round.label - round.prediction;
        }
        self.rounds.push(round);
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }
}

/// Bucket scores `C^i` for the groups containing `θ`, all scaled by the same
/// positive factor so the largest exponent is 0. Signs and ratios are
/// unaffected by the scaling.
pub fn bucket_scores(sums: impl Fn(usize, usize) -> f64, member_of: &[usize], n: usize, eta: f64) -> Vec<f64> {
    let max = member_of
        .iter()
        .flat_map(|&g| (1..=n).map(move |i| (i, g)))
        .map(|(i, g)| (eta * sums(i, g)).abs())
        .fold(0.0, f64::max);
    (1..=n)
        .map(|i| {
            member_of
                .iter()
                .map(|&g| {
                    let e = eta * sums(i, g);
                    (e - max).exp() - (-e - max).exp()
                })
                .sum()
        })
        .collect()
}

/// The learner's distribution over grid indices from bucket scores.
pub fn grid_distribution(scores: &[f64], n: usize, r: usize) -> Vec<(usize, f64)> {
    let top = r * n;
    if scores.iter().all(|c| *c > 0.0) {
        return vec![(top, 1.0)];
    }
    if scores.iter().all(|c| *c < 0.0) {
        return vec![(0, 1.0)];
    }
    if n == 1 {
        // The only score is exactly 0; every grid point has zero loss. Use
        // the j = 1, q = 1 branch of the general rule.
        return vec![(r - 1, 1.0)];
    }
    let j = (1..n)
        .find(|&j| scores[j - 1] * scores[j] <= 0.0)
        .expect("a sign change or zero exists when scores are mixed");
    let (cj, cj1) = (scores[j - 1].abs(), scores[j].abs());
    let q = if cj + cj1 == 0.0 { 1.0 } else { cj1 / (cj + cj1) };
    vec![(j * r - 1, q), (j * r, 1.0 - q)]
}

fn full_mixture(support: &[(usize, f64)], len: usize) -> Vec<f64> {
    let mut x = vec![0.0; len];
    for &(i, p) in support {
        x[i] += p;
    }
    x
}

/// Normalized bucket coefficients `K^i = Σ_{g∋θ} (χ_{i,g,+} − χ_{i,g,−})`,
/// with the normalizer taken over every coordinate.
pub fn normalized_coefficients(sums: impl Fn(usize, usize) -> f64, member_of: &[usize], num_groups: usize, n: usize, eta: f64) -> Vec<f64> {
    let max = (0..num_groups)
        .flat_map(|g| (1..=n).map(move |i| (i, g)))
        .map(|(i, g)| (eta * sums(i, g)).abs())
        .fold(0.0, f64::max);
    let z: f64 = (0..num_groups)
        .flat_map(|g| (1..=n).map(move |i| (i, g)))
        .map(|(i, g)| {
            let e = eta * sums(i, g);
            (e - max).exp() + (-e - max).exp()
        })
        .sum();
    (1..=n)
        .map(|i| {
            member_of
                .iter()
                .map(|&g| {
                    let e = eta * sums(i, g);
                    ((e - max).exp() - (-e - max).exp()) / z
                })
                .sum()
        })
        .collect()
}

/// `max_{b ∈ {0,1}} Σ_a x_a (b − a) K^{i_a}` with the maximizing label.
/// Ties go to `b = 0`.
pub fn achieved_value(config: &CalibrationConfig, coefficients: &[f64], mixture: &[f64]) -> (f64, f64) {
    let mut at0 = 0.0;
    let mut at1 = 0.0;
    for (idx, &p) in mixture.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let a = config.grid_value(idx);
        let k = coefficients[config.grid_bucket(idx) - 1];
        at0 += p * (0.0 - a) * k;
        at1 += p * (1.0 - a) * k;
    }
    if at1 > at0 + TIE_TOL {
        (1.0, at1)
    } else {
        (0.0, at0)
    }
}

/// α: `(1/T) max_{g,i} |Σ_{t: θ^t∈g, a^t∈B_i} (b^t − a^t)|`, recomputed
/// from the transcript.
pub fn measure_alpha(rounds: &[CalibrationRound], groups: &[Group], n: usize) -> Result<f64> {
    if rounds.is_empty() {
        return Ok(0.0);
    }
    let mut cells = vec![0.0; groups.len() * n];
    for round in rounds {
        let i = bucket_index(round.prediction, n)?;
        for (g, group) in groups.iter().enumerate() {
            if group.contains(&round.context) {
                cells[g * n + i - 1] += round.label - round.prediction;
            }
        }
    }
    let worst = cells.iter().map(|c| c.abs()).fold(0.0, f64::max);
    Ok(worst / rounds.len() as f64)
}

/// What a label adversary sees.
pub struct LabelView<'v> {
    pub t: usize,
    pub context: &'v RoundContext,
    pub member_of: &'v [usize],
    /// Normalized bucket coefficients `K^i`.
    pub coefficients: &'v [f64],
    /// Learner mixture over grid indices.
    pub mixture: &'v [f64],
    pub config: &'v CalibrationConfig,
}

/// Chooses `b^t ∈ [0, 1]` after seeing the learner's mixture.
pub trait LabelAdversary {
    fn label(&mut self, view: &LabelView, rng: &mut AmfRng) -> Result<f64>;
}

/// The learner's output for one round before sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub mixture: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub certified: f64,
}

/// Standalone multicalibration learner.
pub struct MulticalLearner {
    config: CalibrationConfig,
    state: CalibrationState,
    max_certified: f64,
}

impl MulticalLearner {
    pub fn new(config: CalibrationConfig) -> Self {
        let state = CalibrationState::new(&config);
        Self {
            config,
            state,
            max_certified: f64::NEG_INFINITY,
        }
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.config
    }

    pub fn state(&self) -> &CalibrationState {
        &self.state
    }

    /// Largest per-round certified value seen so far.
    pub fn max_certified(&self) -> f64 {
        self.max_certified
    }

    /// Mixture for context `ctx`, with its certificate checked.
    pub fn predict(&self, member_of: &[usize]) -> Result<GridPrediction> {
        let c = &self.config;
        let sums = |i, g| self.state.sum(i, g);
        let scores = bucket_scores(sums, member_of, c.n, c.eta);
        let mixture = full_mixture(&grid_distribution(&scores, c.n, c.r), c.grid_len());
        let coefficients = normalized_coefficients(sums, member_of, c.groups.len(), c.n, c.eta);
        let (_, certified) = achieved_value(c, &coefficients, &mixture);
        if certified > c.value_bound() + CERTIFICATE_TOL {
            return Err(AmfError::Certification(format!(
                "round {}: weighted objective {certified} exceeds {}",
                self.state.rounds.len() + 1,
                c.value_bound()
            )));
        }
        Ok(GridPrediction {
            mixture,
            coefficients,
            certified,
        })
    }

    /// One full round: predict, query the label, sample the grid point.
    pub fn step<A: LabelAdversary + ?Sized>(&mut self, context: RoundContext, adversary: &mut A, rng: &mut AmfRng) -> Result<CalibrationRound> {
        let member_of = memberships(&self.config.groups, &context);
        let pred = self.predict(&member_of)?;
        self.max_certified = self.max_certified.max(pred.certified);
        let label = adversary.label(
            &LabelView {
                t: self.state.rounds.len() + 1,
                context: &context,
                member_of: &member_of,
                coefficients: &pred.coefficients,
                mixture: &pred.mixture,
                config: &self.config,
            },
            rng,
        )?;
        if !(0.0..=1.0).contains(&label) {
            return Err(AmfError::AdversaryOutOfSet(format!("label {label} outside [0, 1]")));
        }
        let idx = sample_index(&pred.mixture, rng);
        let round = CalibrationRound {
            context,
            prediction: self.config.grid_value(idx),
            label,
        };
        self.state.record(&member_of, round.clone())?;
        Ok(round)
    }
}

/// The multicalibration round as a framework environment: learner actions
/// are grid indices, the adversary picks `b ∈ [0, 1]`, and coordinate
/// `(i, g, ±)` is `±1[θ∈g] 1[a∈B_i] (b − a)`.
pub fn calibration_environment<'c>(config: &'c CalibrationConfig, member_of: Vec<usize>) -> Result<RoundEnvironment<'c>> {
    let loss: LossFn<'c> = Box::new(move |idx, y, out| {
        let a = config.grid_value(idx);
        let i = config.grid_bucket(idx);
        for &g in &member_of {
            let v = y[0] - a;
            out[config.coordinate(i, g, true)] = v;
            out[config.coordinate(i, g, false)] = -v;
        }
    });
    RoundEnvironment::new(
        (0..config.grid_len()).collect(),
        AdversarySet::Interval { lo: 0.0, hi: 1.0 },
        config.dim(),
        1.0,
        loss,
    )
}

/// Framework solver that plays the two-point learner and certifies `1/(rn)`.
pub struct CalibrationSolver<'c> {
    pub config: &'c CalibrationConfig,
    pub member_of: Vec<usize>,
}

impl MinimaxSolver for CalibrationSolver<'_> {
    fn solve(&mut self, _env: &RoundEnvironment, state: &SurrogateState, _chi: &[f64]) -> Result<SolverCertificate> {
        let c = self.config;
        let cum = state.cum_loss();
        let sums = |i, g| cum[c.coordinate(i, g, true)];
        let scores = bucket_scores(sums, &self.member_of, c.n, state.eta());
        let mixture = full_mixture(&grid_distribution(&scores, c.n, c.r), c.grid_len());
        let coefficients = normalized_coefficients(sums, &self.member_of, c.groups.len(), c.n, state.eta());
        let (_, certified) = achieved_value(c, &coefficients, &mixture);
        if certified > c.value_bound() + CERTIFICATE_TOL {
            return Err(AmfError::Certification(format!(
                "weighted objective {certified} exceeds {}",
                c.value_bound()
            )));
        }
        Ok(SolverCertificate {
            mixture,
            value: c.value_bound(),
            method: "two-point",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        assert_eq!(bucket_index(0.0, 10).unwrap(), 1);
        assert_eq!(bucket_index(1.0, 10).unwrap(), 10);
        assert_eq!(bucket_index(0.1, 10).unwrap(), 2);
        assert_eq!(bucket_index(0.3, 10).unwrap(), 4);
        assert_eq!(bucket_index(0.25, 10).unwrap(), 3);
        assert!(bucket_index(1.5, 10).is_err());
        let c = CalibrationConfig::new(10, 2, vec![Group::All], 100).unwrap();
        for idx in 0..c.grid_len() {
            assert_eq!(c.grid_bucket(idx), bucket_index(c.grid_value(idx), 10).unwrap());
        }
    }

    #[test]
    fn first_round_prediction() {
        let scores = vec![0.0; 10];
        assert_eq!(grid_distribution(&scores, 10, 2), vec![(1, 1.0), (2, 0.0)]);
    }

    #[test]
    fn extreme_cases() {
        assert_eq!(grid_distribution(&[0.5, 2.0, 1.0], 3, 2), vec![(6, 1.0)]);
        assert_eq!(grid_distribution(&[-0.5, -2.0], 2, 2), vec![(0, 1.0)]);
        assert_eq!(grid_distribution(&[0.0], 1, 3), vec![(2, 1.0)]);
    }

    #[test]
    fn two_bucket_split() {
        // C^1 = −1, C^2 = 3 → q = 3/4 on 1/2 − 1/(2r).
        let d = grid_distribution(&[-1.0, 3.0], 2, 3);
        assert_eq!(d, vec![(2, 0.75), (3, 0.25)]);
    }

    #[test]
    fn alpha_examples() {
        let ctx = RoundContext::default();
        let rounds = vec![
            CalibrationRound { context: ctx.clone(), prediction: 0.0, label: 1.0 },
            CalibrationRound { context: ctx.clone(), prediction: 0.0, label: 0.0 },
        ];
        assert_eq!(measure_alpha(&rounds, &[Group::All], 1).unwrap(), 0.5);
        let with_empty = measure_alpha(&rounds, &[Group::All, Group::Members { values: vec![99] }], 1).unwrap();
        assert_eq!(with_empty, 0.5);
        let exact: Vec<_> = [0.2, 0.7].iter().map(|&a| CalibrationRound { context: ctx.clone(), prediction: a, label: a }).collect();
        assert_eq!(measure_alpha(&exact, &[Group::All], 4).unwrap(), 0.0);
    }

    #[test]
    fn certificate_holds_for_mixed_scores() {
        let c = CalibrationConfig::new(4, 2, vec![Group::All, Group::All], 50).unwrap();
        let sums = |i: usize, g: usize| [[3.0, -1.0, 0.5, -2.0], [1.0, 2.0, -3.0, 0.0]][g][i - 1];
        let scores = bucket_scores(sums, &[0, 1], 4, c.eta());
        let x = full_mixture(&grid_distribution(&scores, 4, 2), c.grid_len());
        let k = normalized_coefficients(sums, &[0, 1], 2, 4, c.eta());
        let (_, v) = achieved_value(&c, &k, &x);
        assert!(v <= c.value_bound() + CERTIFICATE_TOL);
    }

    #[test]
    fn bounds() {
        let e = alpha_bound_expectation(10, 2, 8, 5000);
        assert!((e - 0.177_438_440_859_688_2).abs() < 1e-12);
        let h = alpha_bound_high_probability(10, 2, 8, 5000, 0.05);
        assert!((h - 0.371_414_993_328_693_5).abs() < 1e-12);
    }
}
