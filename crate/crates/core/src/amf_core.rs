//! The framework engine: cumulative coordinate losses, exponential coordinate
//! weights, the per-round play loop and regret accounting.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{config_err, AmfError, Result};
use crate::game_solver::SolverCertificate;
use crate::numfmt::sig9;

/// Seedable generator used everywhere a run draws randomness.
pub type AmfRng = ChaCha8Rng;

/// Tolerance on the mixture simplex constraint.
pub const MIXTURE_TOL: f64 = 1e-9;

/// The adversary's action set for one round.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySet {
    /// A finite list of points; played actions must equal one of them.
    Vertices(Vec<Vec<f64>>),
    /// A closed scalar interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// The unit cube `[0,1]^dim`. Losses over a cube must be affine in the
    /// adversary's point.
    Cube { dim: usize },
}

impl AdversarySet {
    fn validate(&self) -> Result<()> {
        match self {
            AdversarySet::Vertices(v) => {
                if v.is_empty() {
                    return config_err("adversary vertex list is empty");
                }
                let width = v[0].len();
                if v.iter().any(|p| p.len() != width) {
                    return config_err("adversary vertices have unequal lengths");
                }
            }
            AdversarySet::Interval { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return config_err(format!("degenerate adversary interval [{lo}, {hi}]"));
                }
            }
            AdversarySet::Cube { dim } => {
                if *dim == 0 {
                    return config_err("adversary cube has dimension 0");
                }
            }
        }
        Ok(())
    }

    /// Whether `y` is a legal play.
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            AdversarySet::Vertices(v) => v.iter().any(|p| p.as_slice() == y),
            AdversarySet::Interval { lo, hi } => y.len() == 1 && y[0] >= *lo && y[0] <= *hi,
            AdversarySet::Cube { dim } => {
                y.len() == *dim && y.iter().all(|v| (0.0..=1.0).contains(v))
            }
        }
    }

    /// Length of an adversary action.
    pub fn point_len(&self) -> usize {
        match self {
            AdversarySet::Vertices(v) => v[0].len(),
            AdversarySet::Interval { .. } => 1,
            AdversarySet::Cube { dim } => *dim,
        }
    }

    /// Semicolon-joined encoding used in transcript CSVs.
    pub fn encode(y: &[f64]) -> String {
        y.iter().map(|v| sig9(*v)).collect::<Vec<_>>().join(";")
    }
}

/// Loss evaluator: `(learner action id, adversary point, output buffer)`.
pub type LossFn<'a> = Box<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync + 'a>;

/// One round's learner actions, adversary set and vector loss.
pub struct RoundEnvironment<'a> {
    actions: Vec<usize>,
    adversary: AdversarySet,
    dim: usize,
    loss_bound: f64,
    loss: LossFn<'a>,
}

impl<'a> RoundEnvironment<'a> {
    pub fn new(
        actions: Vec<usize>,
        adversary: AdversarySet,
        dim: usize,
        loss_bound: f64,
        loss: LossFn<'a>,
    ) -> Result<Self> {
        if actions.is_empty() {
            return config_err("learner action list is empty");
        }
        if dim == 0 {
            return config_err("loss dimension must be positive");
        }
        if !(loss_bound > 0.0) || !loss_bound.is_finite() {
            return config_err(format!("loss bound must be positive, got {loss_bound}"));
        }
        adversary.validate()?;
        Ok(Self {
            actions,
            adversary,
            dim,
            loss_bound,
            loss,
        })
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn adversary(&self) -> &AdversarySet {
        &self.adversary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn loss_bound(&self) -> f64 {
        self.loss_bound
    }

    /// Evaluate the loss without validation, into `out`.
    pub fn loss_into(&self, action: usize, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        (self.loss)(action, y, out);
    }

    /// Evaluate and validate the loss vector for `(action, y)`.
    pub fn evaluate(&self, action: usize, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.loss_into(action, y, &mut out);
        let slack = 1e-12 * self.loss_bound.max(1.0);
        if let Some((j, v)) = out
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > self.loss_bound + slack)
        {
            return Err(AmfError::InvalidLoss(format!(
                "coordinate {j} = {v} exceeds bound {}",
                self.loss_bound
            )));
        }
        Ok(out)
    }
}

/// Learning rate `sqrt(ln d / (4 T C²))`.
pub fn learning_rate(d: usize, horizon: usize, loss_bound: f64) -> Result<f64> {
    if d < 2 {
        return config_err(format!("need at least 2 loss coordinates, got {d}"));
    }
    let ln_d = (d as f64).ln();
    if (horizon as f64) < ln_d {
        return config_err(format!("horizon {horizon} is below ln d = {ln_d:.4}"));
    }
    if !(loss_bound > 0.0) {
        return config_err("loss bound must be positive");
    }
    Ok((ln_d / (4.0 * horizon as f64 * loss_bound * loss_bound)).sqrt())
}

/// In-expectation regret bound `4 C sqrt(T ln d)`. `d` is real so callers
/// can pass non-integer counts.
pub fn regret_bound(d: f64, horizon: usize, loss_bound: f64) -> f64 {
    4.0 * loss_bound * (horizon as f64 * d.ln()).sqrt()
}

/// Bound holding with probability `1 - delta`: `8 C sqrt(T ln(d/delta))`.
pub fn high_probability_bound(d: f64, horizon: usize, loss_bound: f64, delta: f64) -> f64 {
    8.0 * loss_bound * (horizon as f64 * (d / delta).ln()).sqrt()
}

/// `ln Σ exp(v_j)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `scale · values` with max subtraction.
pub fn softmax(values: &[f64], scale: f64) -> Vec<f64> {
    let max = values
        .iter()
        .map(|v| scale * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|v| (scale * v - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Cumulative coordinate losses plus the achieved-value ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateState {
    cum_loss: Vec<f64>,
    cum_value_bound: f64,
    eta: f64,
    horizon: usize,
    round: usize,
}

impl SurrogateState {
    /// State with the standard learning rate for `(d, T, C)`.
    pub fn new(d: usize, horizon: usize, loss_bound: f64) -> Result<Self> {
        let eta = learning_rate(d, horizon, loss_bound)?;
        Self::with_eta(d, horizon, eta)
    }

    pub fn with_eta(d: usize, horizon: usize, eta: f64) -> Result<Self> {
        if d == 0 {
            return config_err("state dimension must be positive");
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return config_err(format!("learning rate must be positive, got {eta}"));
        }
        Ok(Self {
            cum_loss: vec![0.0; d],
            cum_value_bound: 0.0,
            eta,
            horizon,
            round: 0,
        })
    }

    /// Build a state from explicit history, mainly for tests.
    pub fn from_parts(cum_loss: Vec<f64>, cum_value_bound: f64, eta: f64, horizon: usize, round: usize) -> Result<Self> {
        let mut s = Self::with_eta(cum_loss.len(), horizon, eta)?;
        s.cum_loss = cum_loss;
        s.cum_value_bound = cum_value_bound;
        s.round = round;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.cum_loss.len()
    }

    pub fn cum_loss(&self) -> &[f64] {
        &self.cum_loss
    }

    pub fn cum_value_bound(&self) -> f64 {
        self.cum_value_bound
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Exponential weights over coordinates, `χ_j ∝ exp(η cum_loss_j)`.
    pub fn coordinate_weights(&self) -> Vec<f64> {
        softmax(&self.cum_loss, self.eta)
    }

    /// `ln L^t` where `L^t = Σ_j exp(η (cum_loss_j − cum_value_bound))`.
    pub fn log_surrogate_loss(&self) -> f64 {
        let shifted: Vec<f64> = self
            .cum_loss
            .iter()
            .map(|c| self.eta * (c - self.cum_value_bound))
            .collect();
        log_sum_exp(&shifted)
    }

    pub fn surrogate_loss(&self) -> f64 {
        self.log_surrogate_loss().exp()
    }

    /// Index and value of `max_j (cum_loss_j − cum_value_bound)`; ties go to
    /// the lowest index.
    pub fn amf_regret_argmax(&self) -> (usize, f64) {
        let mut best = (0, self.cum_loss[0]);
        for (j, &v) in self.cum_loss.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (j, v);
            }
        }
        (best.0, best.1 - self.cum_value_bound)
    }

    pub fn amf_regret(&self) -> f64 {
        self.amf_regret_argmax().1
    }

    /// The certificate `ln(L^t)/η`, always at least `amf_regret`.
    pub fn surrogate_regret_bound(&self) -> f64 {
        self.log_surrogate_loss() / self.eta
    }

    /// Fold one realized loss vector and value bound into the state.
    pub fn record(&mut self, loss: &[f64], value_bound: f64) -> Result<()> {
        if loss.len() != self.cum_loss.len() {
            return Err(AmfError::Dimension {
                expected: self.cum_loss.len(),
                got: loss.len(),
                context: "loss vector",
            });
        }
        if self.round >= self.horizon {
            return Err(AmfError::Precondition(format!(
                "round {} would exceed horizon {}",
                self.round + 1,
                self.horizon
            )));
        }
        for (c, l) in self.cum_loss.iter_mut().zip(loss) {
            *c += l;
        }
        self.cum_value_bound += value_bound;
        self.round += 1;
        Ok(())
    }
}

/// One played round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub actions: Vec<usize>,
    pub mixture: Vec<f64>,
    pub action: usize,
    pub adversary: Vec<f64>,
    pub loss: Vec<f64>,
    pub value_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptSummary {
    pub rounds: usize,
    pub final_regret: f64,
    pub bound: f64,
    pub ratio: f64,
    pub seed: u64,
}

/// Every round of one run, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl Transcript {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Recompute `max_j Σ_t loss_j − Σ_t w_bd` from the stored records.
    pub fn recompute_amf_regret(&self) -> Option<f64> {
        let d = self.records.first()?.loss.len();
        let mut sums = vec![0.0; d];
        let mut w = 0.0;
        for r in &self.records {
            for (s, l) in sums.iter_mut().zip(&r.loss) {
                *s += l;
            }
            w += r.value_bound;
        }
        Some(sums.iter().copied().fold(f64::NEG_INFINITY, f64::max) - w)
    }

    /// One row per round: `t, action, adversary, loss_0..loss_{d-1}, value_bound`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.records.first().map_or(0, |r| r.loss.len());
        let mut header = vec!["t".to_string(), "action".into(), "adversary".into()];
        header.extend((0..d).map(|j| format!("loss_{j}")));
        header.push("value_bound".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.t.to_string(),
                r.action.to_string(),
                AdversarySet::encode(&r.adversary),
            ];
            row.extend(r.loss.iter().map(|v| sig9(*v)));
            row.push(sig9(r.value_bound));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, bound: f64) -> TranscriptSummary {
        let final_regret = self.recompute_amf_regret().unwrap_or(0.0);
        TranscriptSummary {
            rounds: self.records.len(),
            final_regret,
            bound,
            ratio: if bound != 0.0 { final_regret / bound } else { f64::NAN },
            seed: self.seed,
        }
    }
}

/// A per-round minimax solver.
pub trait MinimaxSolver {
    /// Return a mixture over `env.actions()` and a certified upper bound on
    /// `max_y Σ_j χ_j ℓ_j(x, y)`.
    fn solve(
        &mut self,
        env: &RoundEnvironment,
        state: &SurrogateState,
        chi: &[f64],
    ) -> Result<SolverCertificate>;
}

/// What the adversary sees when choosing its action.
pub struct AdversaryView<'v, 'a> {
    pub env: &'v RoundEnvironment<'a>,
    pub chi: &'v [f64],
    pub mixture: &'v [f64],
    pub state: &'v SurrogateState,
    pub t: usize,
}

pub trait Adversary {
    fn respond(&mut self, view: &AdversaryView, rng: &mut AmfRng) -> Result<Vec<f64>>;
}

/// Inverse-CDF sample of an index from `mixture`, in declaration order.
pub fn sample_index(mixture: &[f64], rng: &mut AmfRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in mixture.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total; take the last action with mass.
    mixture.iter().rposition(|&p| p > 0.0).unwrap_or(mixture.len() - 1)
}

pub(crate) fn validate_mixture(mixture: &[f64], n: usize) -> Result<()> {
    if mixture.len() != n {
        return Err(AmfError::Dimension {
            expected: n,
            got: mixture.len(),
            context: "mixture",
        });
    }
    if mixture.iter().any(|p| !p.is_finite() || *p < -MIXTURE_TOL) {
        return Err(AmfError::InvalidMixture(format!("negative or non-finite entry in {mixture:?}")));
    }
    let total: f64 = mixture.iter().sum();
    if (total - 1.0).abs() > MIXTURE_TOL {
        return Err(AmfError::InvalidMixture(format!("entries sum to {total}")));
    }
    Ok(())
}

/// Play one round: weights, solver mixture, adversary response, sampled
/// action, realized loss, state update.
pub fn play_round<S, A>(
    state: &mut SurrogateState,
    env: &RoundEnvironment,
    solver: &mut S,
    adversary: &mut A,
    rng: &mut AmfRng,
) -> Result<RoundRecord>
where
    S: MinimaxSolver + ?Sized,
    A: Adversary + ?Sized,
{
    if env.dim() != state.dim() {
        return Err(AmfError::Dimension {
            expected: state.dim(),
            got: env.dim(),
            context: "environment vs state",
        });
    }
    let chi = state.coordinate_weights();
    let cert = solver.solve(env, state, &chi)?;
    validate_mixture(&cert.mixture, env.actions().len())?;
    let t = state.round() + 1;
    let y = adversary.respond(
        &AdversaryView {
            env,
            chi: &chi,
            mixture: &cert.mixture,
            state,
            t,
        },
        rng,
    )?;
    if !env.adversary().contains(&y) {
        return Err(AmfError::AdversaryOutOfSet(format!("{y:?}")));
    }
    let idx = sample_index(&cert.mixture, rng);
    let action = env.actions()[idx];
    let loss = env.evaluate(action, &y)?;
    let value_bound = cert.value.min(env.loss_bound());
    state.record(&loss, value_bound)?;
    Ok(RoundRecord {
        t,
        actions: env.actions().to_vec(),
        mixture: cert.mixture,
        action,
        adversary: y,
        loss,
        value_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn learning_rate_values() {
        // References from a 30-digit evaluator.
        let eta = learning_rate(4, 100, 1.0).unwrap();
        assert!((eta - 0.058_870_501_125_773_73).abs() < 1e-15);
        let eta = learning_rate(2, 1, 1.0).unwrap();
        assert!((eta - 0.416_277_305_578_848_9).abs() < 1e-15);
        assert!(learning_rate(1, 10, 1.0).is_err());
        assert!(learning_rate(100, 2, 1.0).is_err());
    }

    #[test]
    fn regret_bound_values() {
        assert!((regret_bound(2.0, 100, 1.0) - 33.302_184_446_307_91).abs() < 1e-10);
        assert!((regret_bound(2.0, 100, 2.0) - 2.0 * regret_bound(2.0, 100, 1.0)).abs() < 1e-12);
        assert!((regret_bound(std::f64::consts::E, 1, 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn weights_and_surrogate() {
        let s = SurrogateState::from_parts(vec![0.0, 1.0], 0.0, 0.5, 10, 1).unwrap();
        let chi = s.coordinate_weights();
        assert!((chi[0] - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert!((chi[1] - 0.622_459_331_201_854_6).abs() < 1e-12);

        let s = SurrogateState::new(5, 10, 1.0).unwrap();
        assert!((s.surrogate_loss() - 5.0).abs() < 1e-12);
        assert_eq!(s.amf_regret(), 0.0);
        assert!(s.coordinate_weights().iter().all(|w| (w - 0.2).abs() < 1e-15));

        let s = SurrogateState::from_parts(vec![1.0, -1.0], 0.0, 0.5, 10, 1).unwrap();
        assert!((s.surrogate_loss() - 2.255_251_930_412_761_5).abs() < 1e-12);

        let s = SurrogateState::from_parts(vec![3.0, 1.0], 0.5, 0.5, 10, 1).unwrap();
        assert_eq!(s.amf_regret(), 2.5);
    }

    #[test]
    fn huge_cumulative_losses_do_not_overflow() {
        let s = SurrogateState::from_parts(vec![1e6, 1e6 - 1.0, -1e6], 0.0, 1.0, 10, 1).unwrap();
        let chi = s.coordinate_weights();
        assert!(chi.iter().all(|w| w.is_finite()));
        assert!((chi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.log_surrogate_loss().is_finite());
    }

    #[test]
    fn regret_ties_pick_lowest_index() {
        let s = SurrogateState::from_parts(vec![2.0, 5.0, 5.0], 0.0, 1.0, 10, 1).unwrap();
        assert_eq!(s.amf_regret_argmax().0, 1);
    }

    #[test]
    fn sampling_follows_declaration_order() {
        let mut rng = AmfRng::seed_from_u64(3);
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], &mut rng), 1);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[sample_index(&[0.2, 0.5, 0.3], &mut rng)] += 1;
        }
        assert!((counts[1] as f64 / 30_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn record_checks_dimension_and_horizon() {
        let mut s = SurrogateState::new(2, 1, 1.0).unwrap();
        assert!(s.record(&[1.0], 0.0).is_err());
        s.record(&[1.0, 0.0], 0.0).unwrap();
        assert!(s.record(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn environment_rejects_bad_input() {
        let loss: LossFn = Box::new(|_, _, out| out[0] = 2.0);
        assert!(RoundEnvironment::new(vec![], AdversarySet::Cube { dim: 1 }, 1, 1.0, Box::new(|_, _, _| {})).is_err());
        assert!(RoundEnvironment::new(vec![0], AdversarySet::Interval { lo: 1.0, hi: 1.0 }, 1, 1.0, Box::new(|_, _, _| {})).is_err());
        let env = RoundEnvironment::new(vec![0], AdversarySet::Cube { dim: 1 }, 1, 1.0, loss).unwrap();
        assert!(matches!(env.evaluate(0, &[0.0]), Err(AmfError::InvalidLoss(_))));
    }
}
