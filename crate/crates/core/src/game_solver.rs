//! Per-round minimax solving: finite zero-sum games by LP, endpoint reduction
//! for interval adversaries, and a compact LP for cube adversaries.

use serde::Serialize;

use crate::amf_core::{AdversarySet, MinimaxSolver, RoundEnvironment, SurrogateState};
use crate::error::{AmfError, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};

/// Objective differences below this are ties; ties go to the earlier
/// candidate (lower endpoint, first vertex, coordinate left at 0).
pub const TIE_TOL: f64 = 1e-12;

/// Tolerance for the affine-in-`y` check on interval and cube adversaries.
const LINEARITY_TOL: f64 = 1e-9;

/// Cube adversaries up to this dimension can be expanded into vertex lists.
pub const MAX_CUBE_VERTEX_DIM: usize = 12;

/// Payoff matrix; rows are learner actions, columns adversary actions, and
/// the adversary maximizes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    rows: usize,
    cols: usize,
    payoff: Vec<f64>,
}

impl MatrixGame {
    pub fn new(payoff: Vec<Vec<f64>>) -> Result<Self> {
        let rows = payoff.len();
        let cols = payoff.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(AmfError::Config("matrix game needs a row and a column".into()));
        }
        if payoff.iter().any(|r| r.len() != cols) {
            return Err(AmfError::Config("ragged payoff matrix".into()));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AmfError::Config("payoff entries must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            payoff: payoff.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.payoff[a * self.cols + b]
    }

    /// Mixture-weighted payoff of every column.
    pub fn column_payoffs(&self, mixture: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|b| (0..self.rows).map(|a| mixture[a] * self.get(a, b)).sum())
            .collect()
    }

    /// Best column against `mixture` and its payoff; ties go to the first.
    pub fn best_column(&self, mixture: &[f64]) -> (usize, f64) {
        let payoffs = self.column_payoffs(mixture);
        let mut best = (0, payoffs[0]);
        for (b, &v) in payoffs.iter().enumerate().skip(1) {
            if v > best.1 + TIE_TOL {
                best = (b, v);
            }
        }
        best
    }
}

/// A learner mixture with a guaranteed upper bound on the adversary's best
/// response value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverCertificate {
    pub mixture: Vec<f64>,
    pub value: f64,
    pub method: &'static str,
}

fn clean_mixture(mut x: Vec<f64>) -> Vec<f64> {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

fn lp_failure(outcome: LpOutcome, what: &str) -> AmfError {
    AmfError::Internal(format!("{what}: simplex returned {outcome:?}"))
}

/// Minimax row mixture of a zero-sum game, by simplex on the standard form.
pub fn solve_zero_sum(game: &MatrixGame) -> Result<SolverCertificate> {
    let m = game.rows;
    if m == 1 {
        let value = (0..game.cols).map(|b| game.get(0, b)).fold(f64::NEG_INFINITY, f64::max);
        return Ok(SolverCertificate {
            mixture: vec![1.0],
            value,
            method: "simplex",
        });
    }
    // Map payoffs affinely onto [1, 2]; the minimax mixture is unchanged.
    // Then with P > 0, x = u/Σu for the u maximizing Σu subject to Pᵀu ≤ 1.
    // Every row is `≤ 1`, so the slack basis is feasible from the start and
    // no artificial phase can lose accuracy on nearly tied games.
    let min = game.payoff.iter().copied().fold(f64::INFINITY, f64::min);
    let max = game.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok(SolverCertificate {
            mixture: vec![1.0 / m as f64; m],
            value: max,
            method: "simplex",
        });
    }
    let mut lp = LinearProgram::new(m);
    lp.minimize(vec![-1.0; m]);
    for b in 0..game.cols {
        let row: Vec<f64> = (0..m).map(|a| 1.0 + (game.get(a, b) - min) / range).collect();
        lp.constrain(row, Relation::Le, 1.0);
    }
    match lp.solve() {
        LpOutcome::Optimal { x, .. } if x.iter().sum::<f64>() > 0.0 => {
            let mixture = clean_mixture(x);
            let (_, value) = game.best_column(&mixture);
            Ok(SolverCertificate {
                mixture,
                value,
                method: "simplex",
            })
        }
        other => Err(lp_failure(other, "zero-sum game")),
    }
}

/// Adversary scalar maximizing an objective that is affine on `[lo, hi]`,
/// given its values at both endpoints. Ties go to `lo`.
pub fn interval_best_response(lo: f64, hi: f64, objective_at_lo: f64, objective_at_hi: f64) -> f64 {
    if objective_at_hi > objective_at_lo + TIE_TOL {
        hi
    } else {
        lo
    }
}

/// `ξ(a, y) = Σ_j χ_j ℓ_j(a, y)` for one learner action.
pub fn weighted_loss(env: &RoundEnvironment, chi: &[f64], action: usize, y: &[f64], buf: &mut [f64]) -> f64 {
    env.loss_into(action, y, buf);
    chi.iter().zip(buf.iter()).map(|(c, l)| c * l).sum()
}

fn check_chi(env: &RoundEnvironment, chi: &[f64]) -> Result<()> {
    if chi.len() != env.dim() {
        return Err(AmfError::Dimension {
            expected: env.dim(),
            got: chi.len(),
            context: "coordinate weights",
        });
    }
    Ok(())
}

fn nonlinear(what: &str) -> AmfError {
    AmfError::Config(format!(
        "loss is not affine in the adversary's {what}; only affine losses are supported"
    ))
}

/// Check affinity on an interval at its midpoint, per learner action.
fn check_interval_affine(env: &RoundEnvironment, lo: f64, hi: f64) -> Result<()> {
    let d = env.dim();
    let (mut a, mut b, mut c) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mid = 0.5 * (lo + hi);
    for &act in env.actions() {
        env.loss_into(act, &[lo], &mut a);
        env.loss_into(act, &[hi], &mut b);
        env.loss_into(act, &[mid], &mut c);
        let tol = LINEARITY_TOL * env.loss_bound().max(1.0);
        if a.iter().zip(&b).zip(&c).any(|((x, y), z)| (0.5 * (x + y) - z).abs() > tol) {
            return Err(nonlinear("interval action"));
        }
    }
    Ok(())
}

/// Affine form of the weighted objective over a cube: per learner action,
/// the value at the origin and the slope along each axis.
pub fn cube_affine_form(env: &RoundEnvironment, chi: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_chi(env, chi)?;
    let AdversarySet::Cube { dim } = *env.adversary() else {
        return Err(AmfError::Config("cube form requested for a non-cube adversary".into()));
    };
    let mut buf = vec![0.0; env.dim()];
    let mut y = vec![0.0; dim];
    let mut base = Vec::with_capacity(env.actions().len());
    let mut slopes = Vec::with_capacity(env.actions().len());
    for &a in env.actions() {
        y.iter_mut().for_each(|v| *v = 0.0);
        let b0 = weighted_loss(env, chi, a, &y, &mut buf);
        let mut s = Vec::with_capacity(dim);
        for k in 0..dim {
            y[k] = 1.0;
            s.push(weighted_loss(env, chi, a, &y, &mut buf) - b0);
            y[k] = 0.0;
        }
        // Affinity probe at the centre of the cube.
        y.iter_mut().for_each(|v| *v = 0.5);
        let centre = weighted_loss(env, chi, a, &y, &mut buf);
        let predicted = b0 + 0.5 * s.iter().sum::<f64>();
        if (centre - predicted).abs() > LINEARITY_TOL * env.loss_bound().max(1.0) * (dim as f64) {
            return Err(nonlinear("cube point"));
        }
        base.push(b0);
        slopes.push(s);
    }
    Ok((base, slopes))
}

/// All vertices of a small cube in binary counting order (coordinate 0 is
/// the least significant bit).
pub fn cube_vertices(dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim > MAX_CUBE_VERTEX_DIM {
        return Err(AmfError::Config(format!(
            "cube of dimension {dim} has too many vertices to enumerate"
        )));
    }
    Ok((0..1usize << dim)
        .map(|mask| (0..dim).map(|k| ((mask >> k) & 1) as f64).collect())
        .collect())
}

/// Finite list of adversary actions that attain every maximum of an affine
/// objective over the set.
pub fn adversary_candidates(set: &AdversarySet) -> Result<Vec<Vec<f64>>> {
    match set {
        AdversarySet::Vertices(v) => Ok(v.clone()),
        AdversarySet::Interval { lo, hi } => Ok(vec![vec![*lo], vec![*hi]]),
        AdversarySet::Cube { dim } => cube_vertices(*dim),
    }
}

/// The χ-weighted game: entry `(a, y) = Σ_j χ_j ℓ_j(a, y)` over the
/// adversary's vertices (interval endpoints, small-cube corners).
pub fn weighted_game(env: &RoundEnvironment, chi: &[f64]) -> Result<MatrixGame> {
    check_chi(env, chi)?;
    if let AdversarySet::Interval { lo, hi } = *env.adversary() {
        check_interval_affine(env, lo, hi)?;
    }
    let columns = adversary_candidates(env.adversary())?;
    let mut buf = vec![0.0; env.dim()];
    let payoff = env
        .actions()
        .iter()
        .map(|&a| {
            columns
                .iter()
                .map(|y| weighted_loss(env, chi, a, y, &mut buf))
                .collect()
        })
        .collect();
    MatrixGame::new(payoff)
}

/// Adversary best response to mixture `x` for the weighted objective, and the
/// attained value. Ties go to the first vertex, the lower endpoint, or a zero
/// cube coordinate.
pub fn max_weighted_objective(env: &RoundEnvironment, chi: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_chi(env, chi)?;
    if x.len() != env.actions().len() {
        return Err(AmfError::Dimension {
            expected: env.actions().len(),
            got: x.len(),
            context: "mixture",
        });
    }
    let mut buf = vec![0.0; env.dim()];
    let mut eval = |y: &[f64]| -> f64 {
        env.actions()
            .iter()
            .zip(x)
            .filter(|(_, p)| **p != 0.0)
            .map(|(&a, p)| p * weighted_loss(env, chi, a, y, &mut buf))
            .sum()
    };
    match env.adversary() {
        AdversarySet::Vertices(vs) => {
            let mut best = (0, eval(&vs[0]));
            for (i, v) in vs.iter().enumerate().skip(1) {
                let val = eval(v);
                if val > best.1 + TIE_TOL {
                    best = (i, val);
                }
            }
            Ok((vs[best.0].clone(), best.1))
        }
        &AdversarySet::Interval { lo, hi } => {
            check_interval_affine(env, lo, hi)?;
            let (vlo, vhi) = (eval(&[lo]), eval(&[hi]));
            let y = interval_best_response(lo, hi, vlo, vhi);
            Ok((vec![y], if y == hi { vhi } else { vlo }))
        }
        AdversarySet::Cube { .. } => {
            let (base, slopes) = cube_affine_form(env, chi)?;
            let dim = slopes.first().map_or(0, Vec::len);
            let mut value: f64 = x.iter().zip(&base).map(|(p, b)| p * b).sum();
            let mut y = vec![0.0; dim];
            for k in 0..dim {
                let g: f64 = x.iter().zip(&slopes).map(|(p, s)| p * s[k]).sum();
                if g > TIE_TOL {
                    y[k] = 1.0;
                    value += g;
                }
            }
            Ok((y, value))
        }
    }
}

/// Minimax mixture for an affine objective `c_a + Σ_k y_k s_{a,k}` with
/// `y ∈ [0,1]^k`: minimize `Σ_a x_a c_a + Σ_k max(0, Σ_a x_a s_{a,k})`.
pub fn solve_cube_game(base: &[f64], slopes: &[Vec<f64>]) -> Result<SolverCertificate> {
    let m = base.len();
    let k = slopes.first().map_or(0, Vec::len);
    let n = m + k;
    let mut lp = LinearProgram::new(n);
    let mut objective = base.to_vec();
    objective.extend(std::iter::repeat(1.0).take(k));
    lp.minimize(objective);
    for j in 0..k {
        // s_j − Σ_a x_a slope_{a,j} ≥ 0
        let mut row: Vec<f64> = slopes.iter().map(|s| -s[j]).collect();
        row.extend((0..k).map(|i| if i == j { 1.0 } else { 0.0 }));
        lp.constrain(row, Relation::Ge, 0.0);
    }
    let mut simplex = vec![1.0; m];
    simplex.extend(std::iter::repeat(0.0).take(k));
    lp.constrain(simplex, Relation::Eq, 1.0);
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => {
            let mixture = clean_mixture(x[..m].to_vec());
            let mut value: f64 = mixture.iter().zip(base).map(|(p, b)| p * b).sum();
            for j in 0..k {
                let g: f64 = mixture.iter().zip(slopes).map(|(p, s)| p * s[j]).sum();
                value += g.max(0.0);
            }
            Ok(SolverCertificate {
                mixture,
                value,
                method: "simplex-cube",
            })
        }
        other => Err(lp_failure(other, "cube game")),
    }
}

/// Exact per-round solver for any supported adversary set.
#[derive(Debug, Default, Clone, Copy)]
pub struct LpSolver;

impl MinimaxSolver for LpSolver {
    fn solve(&mut self, env: &RoundEnvironment, _state: &SurrogateState, chi: &[f64]) -> Result<SolverCertificate> {
        match env.adversary() {
            AdversarySet::Cube { .. } => {
                let (base, slopes) = cube_affine_form(env, chi)?;
                solve_cube_game(&base, &slopes)
            }
            _ => {
                let game = weighted_game(env, chi)?;
                solve_zero_sum(&game)
            }
        }
    }
}
