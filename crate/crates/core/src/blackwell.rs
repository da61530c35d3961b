//! Approachability of polytopes given as halfspace intersections, with
//! finite learner and adversary action sets.

use serde::{Deserialize, Serialize};

use crate::amf_core::{
    learning_rate, play_round, Adversary, AdversarySet, AmfRng, LossFn, RoundEnvironment, RoundRecord, SurrogateState,
};
use crate::error::{config_err, AmfError, Result};
use crate::game_solver::LpSolver;
use crate::lp::{LinearProgram, LpOutcome, Relation};

/// Slack allowed on the unit-ball normalization checks.
pub const NORM_TOL: f64 = 1e-12;
/// A per-round game value above this means the game is not response-satisfiable.
pub const VALUE_FAILURE_TOL: f64 = 1e-6;
/// Per-halfspace loss range under the normalization.
pub const HALFSPACE_LOSS_BOUND: f64 = 2.0;

/// Norm exponent for halfspace normals; payoffs use the dual exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr", into = "NormRepr")]
pub enum Norm {
    One,
    Two,
    Inf,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Num(f64),
    Name(String),
}

impl TryFrom<NormRepr> for Norm {
    type Error = String;

    fn try_from(r: NormRepr) -> std::result::Result<Self, String> {
        match r {
            NormRepr::Num(p) if p == 1.0 => Ok(Norm::One),
            NormRepr::Num(p) if p == 2.0 => Ok(Norm::Two),
            NormRepr::Name(s) if s == "inf" || s == "infinity" => Ok(Norm::Inf),
            NormRepr::Num(p) => Err(format!("unsupported norm p = {p}; use 1, 2 or \"inf\"")),
            NormRepr::Name(s) => Err(format!("unsupported norm p = {s:?}; use 1, 2 or \"inf\"")),
        }
    }
}

impl From<Norm> for NormRepr {
    fn from(n: Norm) -> Self {
        match n {
            Norm::One => NormRepr::Num(1.0),
            Norm::Two => NormRepr::Num(2.0),
            Norm::Inf => NormRepr::Name("inf".into()),
        }
    }
}

impl Norm {
    pub fn dual(self) -> Norm {
        match self {
            Norm::One => Norm::Inf,
            Norm::Two => Norm::Two,
            Norm::Inf => Norm::One,
        }
    }

    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::One => v.iter().map(|x| x.abs()).sum(),
            Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// The target set `{x : ⟨alpha, x⟩ ≤ beta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Halfspace {
    pub alpha: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeGame {
    pub lambda: usize,
    pub p: Norm,
    pub halfspaces: Vec<Halfspace>,
    pub actions: usize,
    pub adv_actions: usize,
    /// `payoff[a][b]` is a `lambda`-vector.
    pub payoff: Vec<Vec<Vec<f64>>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolytopeGame {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let g: PolytopeGame = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 || self.actions == 0 || self.adv_actions == 0 || self.halfspaces.is_empty() {
            return config_err("lambda, actions, adv_actions and halfspaces must all be nonempty");
        }
        for (i, h) in self.halfspaces.iter().enumerate() {
            if h.alpha.len() != self.lambda {
                return config_err(format!("halfspace {i}: normal has length {}, expected {}", h.alpha.len(), self.lambda));
            }
            let norm = self.p.of(&h.alpha);
            if !(norm <= 1.0 + NORM_TOL) {
                return config_err(format!("halfspace {i}: normal has norm {norm} > 1"));
            }
            if !(h.beta.abs() <= 1.0) {
                return config_err(format!("halfspace {i}: |beta| = {} > 1", h.beta.abs()));
            }
        }
        if self.payoff.len() != self.actions {
            return config_err(format!("payoff has {} rows, expected {}", self.payoff.len(), self.actions));
        }
        let q = self.p.dual();
        for (a, row) in self.payoff.iter().enumerate() {
            if row.len() != self.adv_actions {
                return config_err(format!("payoff[{a}] has {} entries, expected {}", row.len(), self.adv_actions));
            }
            for (b, u) in row.iter().enumerate() {
                if u.len() != self.lambda {
                    return config_err(format!("payoff[{a}][{b}] has length {}, expected {}", u.len(), self.lambda));
                }
                let norm = q.of(u);
                if !(norm <= 1.0 + NORM_TOL) {
                    return config_err(format!("payoff[{a}][{b}] has dual norm {norm} > 1"));
                }
            }
        }
        Ok(())
    }

    pub fn payoff(&self, a: usize, b: usize) -> &[f64] {
        &self.payoff[a][b]
    }

    /// `⟨alpha_h, u(a, b)⟩ − beta_h` for each halfspace.
    pub fn halfspace_losses(&self, a: usize, b: usize) -> Vec<f64> {
        let u = self.payoff(a, b);
        self.halfspaces.iter().map(|h| dot(&h.alpha, u) - h.beta).collect()
    }

    /// Largest halfspace violation of the point `u`.
    pub fn violation(&self, u: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| dot(&h.alpha, u) - h.beta)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Satisfiability {
    /// A witness mixture per adversary action.
    Satisfiable(Vec<Vec<f64>>),
    /// No learner mixture keeps the expected payoff inside against this action.
    Violated { adv_action: usize },
}

/// For each adversary action, look for a learner mixture whose expected
/// payoff lies in the polytope.
pub fn check_response_satisfiable(game: &PolytopeGame) -> Result<Satisfiability> {
    let m = game.actions;
    let mut witnesses = Vec::with_capacity(game.adv_actions);
    for b in 0..game.adv_actions {
        let mut lp = LinearProgram::new(m);
        lp.minimize(vec![0.0; m]);
        for h in &game.halfspaces {
            let row = (0..m).map(|a| dot(&h.alpha, game.payoff(a, b))).collect();
            lp.constrain(row, Relation::Le, h.beta);
        }
        lp.constrain(vec![1.0; m], Relation::Eq, 1.0);
        match lp.solve() {
            LpOutcome::Optimal { x, .. } => witnesses.push(x),
            LpOutcome::Infeasible => return Ok(Satisfiability::Violated { adv_action: b }),
            other => return Err(AmfError::Internal(format!("satisfiability LP for b = {b}: {other:?}"))),
        }
    }
    Ok(Satisfiability::Satisfiable(witnesses))
}

/// Running totals of the realized play.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproachState {
    pub t: usize,
    pub cum_payoff: Vec<f64>,
    pub cum_halfspace_loss: Vec<f64>,
}

impl ApproachState {
    pub fn new(game: &PolytopeGame) -> Self {
        Self {
            t: 0,
            cum_payoff: vec![0.0; game.lambda],
            cum_halfspace_loss: vec![0.0; game.halfspaces.len()],
        }
    }

    pub fn record(&mut self, game: &PolytopeGame, a: usize, b: usize) {
        self.t += 1;
        for (c, u) in self.cum_payoff.iter_mut().zip(game.payoff(a, b)) {
            *c += u;
        }
        for (c, l) in self.cum_halfspace_loss.iter_mut().zip(game.halfspace_losses(a, b)) {
            *c += l;
        }
    }

    pub fn average_play(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.cum_payoff.iter().map(|c| c / t).collect()
    }

    /// Largest gap between a cumulative halfspace loss and the value implied
    /// by the cumulative payoff, `⟨alpha, Σu⟩ − t·beta`.
    pub fn consistency_gap(&self, game: &PolytopeGame) -> f64 {
        game.halfspaces
            .iter()
            .zip(&self.cum_halfspace_loss)
            .map(|(h, c)| (dot(&h.alpha, &self.cum_payoff) - self.t as f64 * h.beta - c).abs())
            .fold(0.0, f64::max)
    }
}

/// `max_h ⟨alpha_h, ū⟩ − beta_h` for the average play.
pub fn margin(state: &ApproachState, game: &PolytopeGame) -> Result<f64> {
    if state.t == 0 {
        return Err(AmfError::Precondition("margin needs at least one round".into()));
    }
    Ok(game.violation(&state.average_play()))
}

/// In-expectation margin bound `8·sqrt(ln|H| / T)`.
pub fn margin_bound(num_halfspaces: usize, horizon: usize) -> f64 {
    8.0 * ((num_halfspaces as f64).ln() / horizon as f64).sqrt()
}

/// Rounds after which the margin bound drops to `eps`: `64 ln|H| / eps²`.
pub fn rounds_to_epsilon(num_halfspaces: usize, eps: f64) -> f64 {
    64.0 * (num_halfspaces as f64).ln() / (eps * eps)
}

/// Learner environment: the adversary plays `[b]` for an action index `b`.
pub fn approach_environment(game: &PolytopeGame) -> Result<RoundEnvironment<'_>> {
    let vertices = (0..game.adv_actions).map(|b| vec![b as f64]).collect();
    let loss: LossFn = Box::new(move |a, y, out| {
        let u = game.payoff(a, y[0] as usize);
        for (o, h) in out.iter_mut().zip(&game.halfspaces) {
            *o = dot(&h.alpha, u) - h.beta;
        }
    });
    RoundEnvironment::new(
        (0..game.actions).collect(),
        AdversarySet::Vertices(vertices),
        game.halfspaces.len(),
        HALFSPACE_LOSS_BOUND,
        loss,
    )
}

/// One played round of the approachability learner.
#[derive(Debug, Clone)]
pub struct ApproachRound {
    pub record: RoundRecord,
    /// Certified game value of the per-round LP; nonpositive when the game
    /// is response-satisfiable.
    pub lp_value: f64,
    pub margin: f64,
}

/// The per-round LP learner over halfspace losses.
pub struct ApproachLearner<'g> {
    game: &'g PolytopeGame,
    env: RoundEnvironment<'g>,
    surrogate: SurrogateState,
    approach: ApproachState,
}

impl<'g> ApproachLearner<'g> {
    pub fn new(game: &'g PolytopeGame, horizon: usize) -> Result<Self> {
        game.validate()?;
        let d = game.halfspaces.len();
        // One halfspace gives no weighting to learn; any rate works.
        let eta = if d >= 2 { learning_rate(d, horizon, HALFSPACE_LOSS_BOUND)? } else { 1.0 / (horizon as f64).sqrt() };
        Ok(Self {
            game,
            env: approach_environment(game)?,
            surrogate: SurrogateState::with_eta(d, horizon, eta)?,
            approach: ApproachState::new(game),
        })
    }

    pub fn surrogate(&self) -> &SurrogateState {
        &self.surrogate
    }

    pub fn approach(&self) -> &ApproachState {
        &self.approach
    }

    pub fn environment(&self) -> &RoundEnvironment<'g> {
        &self.env
    }

    pub fn step<A: Adversary + ?Sized>(&mut self, adversary: &mut A, rng: &mut AmfRng) -> Result<ApproachRound> {
        let record = play_round(&mut self.surrogate, &self.env, &mut LpSolver, adversary, rng)?;
        // Values are at most 0 < C on satisfiable games, so the recorded bound
        // is the solver's certified value itself.
        let lp_value = record.value_bound;
        if lp_value > VALUE_FAILURE_TOL {
            return Err(AmfError::Precondition(format!(
                "round {}: game value {lp_value} > 0, the game is not response-satisfiable",
                record.t
            )));
        }
        self.approach.record(self.game, record.action, record.adversary[0] as usize);
        let margin = margin(&self.approach, self.game)?;
        Ok(ApproachRound { record, lp_value, margin })
    }
}

/// Sign-vector game in `lambda` dimensions: both players pick sign vectors
/// and the payoff is their coordinatewise product over `sqrt(lambda)`.
/// Targets are the slabs `|x_k| ≤ width` and `|Σx_k|/sqrt(lambda) ≤ width`.
pub fn sign_game(lambda: usize, width: f64) -> Result<PolytopeGame> {
    let signs: Vec<Vec<f64>> = (0..1usize << lambda)
        .map(|m| (0..lambda).map(|k| if m >> k & 1 == 1 { -1.0 } else { 1.0 }).collect())
        .collect();
    let scale = (lambda as f64).sqrt();
    let payoff = signs
        .iter()
        .map(|s| signs.iter().map(|t| s.iter().zip(t).map(|(a, b)| a * b / scale).collect()).collect())
        .collect();
    let mut halfspaces = Vec::new();
    for k in 0..lambda {
        for sign in [1.0, -1.0] {
            let mut alpha = vec![0.0; lambda];
            alpha[k] = sign;
            halfspaces.push(Halfspace { alpha, beta: width });
        }
    }
    for sign in [1.0, -1.0] {
        halfspaces.push(Halfspace {
            alpha: vec![sign / scale; lambda],
            beta: width,
        });
    }
    let game = PolytopeGame {
        lambda,
        p: Norm::Two,
        halfspaces,
        actions: signs.len(),
        adv_actions: signs.len(),
        payoff,
    };
    game.validate()?;
    Ok(game)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim(payoff: Vec<Vec<f64>>, halfspaces: Vec<(f64, f64)>) -> PolytopeGame {
        PolytopeGame {
            lambda: 1,
            p: Norm::Two,
            halfspaces: halfspaces.into_iter().map(|(a, b)| Halfspace { alpha: vec![a], beta: b }).collect(),
            actions: payoff.len(),
            adv_actions: payoff[0].len(),
            payoff: payoff.into_iter().map(|r| r.into_iter().map(|u| vec![u]).collect()).collect(),
        }
    }

    #[test]
    fn halfspace_loss_examples() {
        let g = one_dim(vec![vec![0.0]], vec![(1.0, 0.0)]);
        assert_eq!(g.halfspace_losses(0, 0), vec![0.0]);
        let g = PolytopeGame {
            lambda: 2,
            p: Norm::Two,
            halfspaces: vec![Halfspace { alpha: vec![1.0, 0.0], beta: 0.5 }],
            actions: 1,
            adv_actions: 1,
            payoff: vec![vec![vec![1.0, 0.0]]],
        };
        assert_eq!(g.halfspace_losses(0, 0), vec![0.5]);
    }

    #[test]
    fn normalization_is_enforced() {
        assert!(one_dim(vec![vec![1.0]], vec![(1.0, 0.0)]).validate().is_ok());
        assert!(one_dim(vec![vec![1.5]], vec![(1.0, 0.0)]).validate().is_err());
        assert!(one_dim(vec![vec![1.0]], vec![(1.1, 0.0)]).validate().is_err());
        assert!(one_dim(vec![vec![1.0]], vec![(1.0, -1.5)]).validate().is_err());
        // p = 1 allows payoffs up to 1 in the max norm.
        let mut g = sign_game(2, 0.1).unwrap();
        g.p = Norm::One;
        g.halfspaces = vec![Halfspace { alpha: vec![0.5, 0.5], beta: 0.0 }];
        g.payoff[0][0] = vec![1.0, 1.0];
        assert!(g.validate().is_ok());
        g.p = Norm::Inf;
        assert!(g.validate().is_err());
    }

    #[test]
    fn norm_parses_from_json() {
        let g = r#"{"lambda":1,"p":"inf","halfspaces":[{"alpha":[1],"beta":0}],"actions":1,"adv_actions":1,"payoff":[[[0.5]]]}"#;
        assert_eq!(PolytopeGame::from_json_str(g).unwrap().p, Norm::Inf);
        assert!(PolytopeGame::from_json_str(&g.replace("\"inf\"", "3")).is_err());
    }

    #[test]
    fn satisfiability_examples() {
        let g = one_dim(vec![vec![-0.5, 0.2], vec![0.1, -0.9]], vec![(1.0, 0.3)]);
        assert!(matches!(check_response_satisfiable(&g).unwrap(), Satisfiability::Satisfiable(_)));
        let g = one_dim(vec![vec![1.0, 1.0]], vec![(1.0, 0.0)]);
        assert_eq!(check_response_satisfiable(&g).unwrap(), Satisfiability::Violated { adv_action: 0 });
    }

    #[test]
    fn matching_pennies_orthant_agrees_with_grid() {
        // Payoff (s, -s) with s = ±1/sqrt(2); target the orthant shifted by c.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for c in [0.0, 0.2, -0.2] {
            let mut g = sign_game(2, 0.1).unwrap();
            g.actions = 2;
            g.adv_actions = 2;
            g.payoff = vec![
                vec![vec![r, -r], vec![-r, r]],
                vec![vec![-r, r], vec![r, -r]],
            ];
            g.halfspaces = vec![
                Halfspace { alpha: vec![1.0, 0.0], beta: c },
                Halfspace { alpha: vec![0.0, 1.0], beta: c },
            ];
            let lp = matches!(check_response_satisfiable(&g).unwrap(), Satisfiability::Satisfiable(_));
            let grid = (0..2).all(|b| {
                (0..=100).any(|i| {
                    let x = i as f64 / 100.0;
                    let u: Vec<f64> = (0..2).map(|k| x * g.payoff[0][b][k] + (1.0 - x) * g.payoff[1][b][k]).collect();
                    g.violation(&u) <= 1e-12
                })
            });
            assert_eq!(lp, grid, "c = {c}");
        }
    }

    #[test]
    fn margin_and_rates() {
        let g = PolytopeGame {
            lambda: 2,
            p: Norm::Two,
            halfspaces: vec![Halfspace { alpha: vec![1.0, 0.0], beta: 0.25 }],
            actions: 1,
            adv_actions: 1,
            payoff: vec![vec![vec![1.0, 0.0]]],
        };
        let mut s = ApproachState::new(&g);
        assert!(margin(&s, &g).is_err());
        s.record(&g, 0, 0);
        assert_eq!(margin(&s, &g).unwrap(), 0.75);
        assert!((rounds_to_epsilon(16, 0.5) - 709.782_712_893_384).abs() < 1e-9);
        assert!((margin_bound(8, 4000) - 0.182_403_576_354_405_3).abs() < 1e-12);
    }

    #[test]
    fn sign_game_is_satisfiable() {
        let g = sign_game(3, 0.1).unwrap();
        assert_eq!(g.halfspaces.len(), 8);
        assert!(matches!(check_response_satisfiable(&g).unwrap(), Satisfiability::Satisfiable(_)));
    }
}
