//! Adversaries: per-round best responses, a greedy regret maximizer, i.i.d.
//! draws and trace replay, for both vector-loss games and calibration labels.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::amf_core::{Adversary, AdversarySet, AdversaryView, AmfRng, RoundEnvironment};
use crate::error::{config_err, AmfError, Result};
use crate::game_solver::{adversary_candidates, cube_vertices, max_weighted_objective, TIE_TOL};
use crate::multical::{achieved_value, LabelAdversary, LabelView};

/// Plays the maximizer of the χ-weighted objective against the learner's
/// mixture, which is the quantity the minimax solver guards.
#[derive(Debug, Default, Clone, Copy)]
pub struct SurrogateBestResponse;

impl Adversary for SurrogateBestResponse {
    fn respond(&mut self, view: &AdversaryView, _rng: &mut AmfRng) -> Result<Vec<f64>> {
        Ok(max_weighted_objective(view.env, view.chi, view.mixture)?.0)
    }
}

/// Greedy stress test: maximizes the learner's expected next-round maximum
/// cumulative coordinate, `Σ_a x_a max_j (cum_j + ℓ_j(a, y))`.
#[derive(Debug, Default, Clone, Copy)]
pub struct GreedyRegret;

/// Cubes with at most this many corners are searched exhaustively.
pub const GREEDY_MAX_ENUMERATED: usize = 64;

fn greedy_objective(env: &RoundEnvironment, cum: &[f64], x: &[f64], y: &[f64], buf: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &p) in env.actions().iter().zip(x) {
        if p == 0.0 {
            continue;
        }
        env.loss_into(a, y, buf);
        let worst = cum.iter().zip(buf.iter()).map(|(c, l)| c + l).fold(f64::NEG_INFINITY, f64::max);
        total += p * worst;
    }
    total
}

impl Adversary for GreedyRegret {
    fn respond(&mut self, view: &AdversaryView, _rng: &mut AmfRng) -> Result<Vec<f64>> {
        let env = view.env;
        let cum = view.state.cum_loss();
        let mut buf = vec![0.0; env.dim()];
        let mut eval = |y: &[f64]| greedy_objective(env, cum, view.mixture, y, &mut buf);
        // The objective is convex in y for affine losses, so a vertex attains
        // the maximum.
        let enumerable = match env.adversary() {
            AdversarySet::Cube { dim } => *dim < usize::BITS as usize && 1usize << dim <= GREEDY_MAX_ENUMERATED,
            _ => true,
        };
        if enumerable {
            let candidates = match env.adversary() {
                AdversarySet::Cube { dim } => cube_vertices(*dim)?,
                set => adversary_candidates(set)?,
            };
            let mut best = (0, eval(&candidates[0]));
            for (i, y) in candidates.iter().enumerate().skip(1) {
                let v = eval(y);
                if v > best.1 + TIE_TOL {
                    best = (i, v);
                }
            }
            return Ok(candidates[best.0].clone());
        }
        let dim = env.adversary().point_len();
        let starts = [
            vec![0.0; dim],
            vec![1.0; dim],
            max_weighted_objective(env, view.chi, view.mixture)?.0,
        ];
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in starts {
            let mut y = start;
            let mut value = eval(&y);
            // Coordinate ascent over corners; each pass strictly improves.
            for _ in 0..dim.max(1) * 4 {
                let mut improved = false;
                for k in 0..dim {
                    y[k] = 1.0 - y[k];
                    let v = eval(&y);
                    if v > value + TIE_TOL {
                        value = v;
                        improved = true;
                    } else {
                        y[k] = 1.0 - y[k];
                    }
                }
                if !improved {
                    break;
                }
            }
            if best.as_ref().is_none_or(|(_, b)| value > *b + TIE_TOL) {
                best = Some((y, value));
            }
        }
        Ok(best.map(|(y, _)| y).unwrap_or_default())
    }
}

/// Distribution of i.i.d. adversary actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Each coordinate (or label) is the upper endpoint with probability `p`.
    Bernoulli,
    /// Uniform over vertices, the interval, or each cube coordinate.
    Uniform,
    /// Label is 1 with probability equal to the round's first feature.
    Feature,
}

/// I.i.d. draws, from the run's rng or from an own seeded stream.
#[derive(Debug, Clone)]
pub struct IidAdversary {
    pub distribution: Distribution,
    pub p: f64,
    own_rng: Option<AmfRng>,
}

impl IidAdversary {
    pub fn new(distribution: Distribution, p: Option<f64>, seed: Option<u64>) -> Result<Self> {
        let p = match (distribution, p) {
            (Distribution::Bernoulli, Some(p)) if (0.0..=1.0).contains(&p) => p,
            (Distribution::Bernoulli, Some(p)) => return config_err(format!("bernoulli p = {p} outside [0, 1]")),
            (Distribution::Bernoulli, None) => return config_err("bernoulli adversary needs p"),
            (_, Some(_)) => return config_err("p is only used by the bernoulli distribution"),
            (_, None) => 0.5,
        };
        Ok(Self {
            distribution,
            p,
            own_rng: seed.map(AmfRng::seed_from_u64),
        })
    }

    fn rng<'r>(&'r mut self, shared: &'r mut AmfRng) -> (&'r mut AmfRng, Distribution, f64) {
        let (d, p) = (self.distribution, self.p);
        (self.own_rng.as_mut().unwrap_or(shared), d, p)
    }

    /// One draw from `set`.
    pub fn draw(&mut self, set: &AdversarySet, shared: &mut AmfRng) -> Result<Vec<f64>> {
        let (rng, dist, p) = self.rng(shared);
        match (dist, set) {
            (Distribution::Uniform, AdversarySet::Vertices(v)) => Ok(v[rng.random_range(0..v.len())].clone()),
            (Distribution::Uniform, AdversarySet::Interval { lo, hi }) => Ok(vec![lo + (hi - lo) * rng.random::<f64>()]),
            (Distribution::Uniform, AdversarySet::Cube { dim }) => Ok((0..*dim).map(|_| rng.random::<f64>()).collect()),
            (Distribution::Bernoulli, AdversarySet::Interval { lo, hi }) => {
                Ok(vec![if rng.random::<f64>() < p { *hi } else { *lo }])
            }
            (Distribution::Bernoulli, AdversarySet::Cube { dim }) => {
                Ok((0..*dim).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect())
            }
            (d, set) => config_err(format!("distribution {d:?} does not apply to adversary set {set:?}")),
        }
    }
}

impl Adversary for IidAdversary {
    fn respond(&mut self, view: &AdversaryView, rng: &mut AmfRng) -> Result<Vec<f64>> {
        self.draw(view.env.adversary(), rng)
    }
}

impl LabelAdversary for IidAdversary {
    fn label(&mut self, view: &LabelView, shared: &mut AmfRng) -> Result<f64> {
        let (rng, dist, p) = self.rng(shared);
        let p = match dist {
            Distribution::Bernoulli => p,
            Distribution::Uniform => return Ok(rng.random::<f64>()),
            Distribution::Feature => match view.context.features.first() {
                Some(&f) if (0.0..=1.0).contains(&f) => f,
                other => return config_err(format!("feature-driven labels need a first feature in [0, 1], got {other:?}")),
            },
        };
        Ok(if rng.random::<f64>() < p { 1.0 } else { 0.0 })
    }
}

/// Replays recorded actions: row `t` (1-based) is the action for round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceAdversary {
    rows: Vec<Vec<f64>>,
}

impl TraceAdversary {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    /// Numeric CSV with a header row; each row is one action.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| AmfError::Config(format!("trace row {}: {s:?}: {e}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv(File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, t: usize) -> Result<&[f64]> {
        t.checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .map(Vec::as_slice)
            .ok_or(AmfError::TraceExhausted { round: t, len: self.rows.len() })
    }
}

impl Adversary for TraceAdversary {
    fn respond(&mut self, view: &AdversaryView, _rng: &mut AmfRng) -> Result<Vec<f64>> {
        Ok(self.row(view.t)?.to_vec())
    }
}

impl LabelAdversary for TraceAdversary {
    fn label(&mut self, view: &LabelView, _rng: &mut AmfRng) -> Result<f64> {
        match self.row(view.t)?.first() {
            Some(&b) => Ok(b),
            None => config_err(format!("trace row {} is empty", view.t)),
        }
    }
}

/// Label maximizing the learner's weighted objective: 1 when the weighted
/// slope is positive, otherwise 0.
#[derive(Debug, Default, Clone, Copy)]
pub struct LabelBestResponse;

impl LabelAdversary for LabelBestResponse {
    fn label(&mut self, view: &LabelView, _rng: &mut AmfRng) -> Result<f64> {
        Ok(achieved_value(view.config, view.coefficients, view.mixture).0)
    }
}

/// Adversaries that commit to a round's action without seeing the learner.
pub trait ObliviousSource {
    fn next(&mut self, t: usize, set: &AdversarySet, rng: &mut AmfRng) -> Result<Vec<f64>>;
}

impl ObliviousSource for IidAdversary {
    fn next(&mut self, _t: usize, set: &AdversarySet, rng: &mut AmfRng) -> Result<Vec<f64>> {
        self.draw(set, rng)
    }
}

impl ObliviousSource for TraceAdversary {
    fn next(&mut self, t: usize, set: &AdversarySet, _rng: &mut AmfRng) -> Result<Vec<f64>> {
        let y = self.row(t)?.to_vec();
        if !set.contains(&y) {
            return Err(AmfError::AdversaryOutOfSet(format!("trace row {t}: {y:?}")));
        }
        Ok(y)
    }
}

/// Configured adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    BestResponse {},
    Greedy {},
    Iid {
        distribution: Distribution,
        #[serde(default)]
        p: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Trace { path: PathBuf },
}

impl AdversarySpec {
    /// `base` resolves relative trace paths.
    fn trace(path: &Path, base: &Path, horizon: usize) -> Result<TraceAdversary> {
        let full = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
        let tr = TraceAdversary::from_path(&full)?;
        if tr.len() < horizon {
            return config_err(format!("trace {} has {} rows, horizon is {horizon}", full.display(), tr.len()));
        }
        Ok(tr)
    }

    pub fn build(&self, base: &Path, horizon: usize) -> Result<Box<dyn Adversary>> {
        Ok(match self {
            AdversarySpec::BestResponse {} => Box::new(SurrogateBestResponse),
            AdversarySpec::Greedy {} => Box::new(GreedyRegret),
            AdversarySpec::Iid { distribution, p, seed } => Box::new(IidAdversary::new(*distribution, *p, *seed)?),
            AdversarySpec::Trace { path } => Box::new(Self::trace(path, base, horizon)?),
        })
    }

    pub fn build_label(&self, base: &Path, horizon: usize) -> Result<Box<dyn LabelAdversary>> {
        Ok(match self {
            AdversarySpec::BestResponse {} => Box::new(LabelBestResponse),
            AdversarySpec::Greedy {} => return config_err("greedy adversary is not defined for calibration labels"),
            AdversarySpec::Iid { distribution, p, seed } => Box::new(IidAdversary::new(*distribution, *p, *seed)?),
            AdversarySpec::Trace { path } => Box::new(Self::trace(path, base, horizon)?),
        })
    }

    pub fn build_oblivious(&self, base: &Path, horizon: usize) -> Result<Box<dyn ObliviousSource>> {
        Ok(match self {
            AdversarySpec::Iid { distribution, p, seed } => Box::new(IidAdversary::new(*distribution, *p, *seed)?),
            AdversarySpec::Trace { path } => Box::new(Self::trace(path, base, horizon)?),
            other => return config_err(format!("{other:?} adapts to the learner; this experiment needs an oblivious adversary")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amf_core::{LossFn, SurrogateState};
    use crate::subsequence::{build_external, SubsequenceRound};

    fn view_env<'a>(env: &'a RoundEnvironment<'a>, chi: &'a [f64], x: &'a [f64], state: &'a SurrogateState) -> AdversaryView<'a, 'a> {
        AdversaryView { env, chi, mixture: x, state, t: 1 }
    }

    #[test]
    fn zero_losses_pick_first_vertex() {
        let loss: LossFn = Box::new(|_, _, _| {});
        let env = RoundEnvironment::new(vec![0, 1], AdversarySet::Vertices(vec![vec![2.0], vec![3.0]]), 2, 1.0, loss).unwrap();
        let state = SurrogateState::new(2, 10, 1.0).unwrap();
        let mut rng = AmfRng::seed_from_u64(0);
        let y = SurrogateBestResponse.respond(&view_env(&env, &[0.5, 0.5], &[0.5, 0.5], &state), &mut rng).unwrap();
        assert_eq!(y, vec![2.0]);
    }

    #[test]
    fn external_regret_uniform_play_is_indifferent() {
        let inst = build_external(2).unwrap();
        let round = SubsequenceRound::full(1, 2);
        let env = inst.environment(&round).unwrap();
        let state = SurrogateState::new(2, 10, 1.0).unwrap();
        let mut rng = AmfRng::seed_from_u64(0);
        let y = SurrogateBestResponse
            .respond(&view_env(&env, &[0.5, 0.5], &[0.5, 0.5], &state), &mut rng)
            .unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn bernoulli_one_always_hits() {
        let mut adv = IidAdversary::new(Distribution::Bernoulli, Some(1.0), None).unwrap();
        let mut rng = AmfRng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(adv.draw(&AdversarySet::Cube { dim: 3 }, &mut rng).unwrap(), vec![1.0; 3]);
        }
        assert!(IidAdversary::new(Distribution::Bernoulli, None, None).is_err());
        assert!(IidAdversary::new(Distribution::Uniform, Some(0.2), None).is_err());
    }

    // Recorded once from ChaCha8 seeded with 42.
    #[test]
    fn bernoulli_half_golden_sequence() {
        let mut adv = IidAdversary::new(Distribution::Bernoulli, Some(0.5), Some(42)).unwrap();
        let mut unused = AmfRng::seed_from_u64(0);
        let seq: Vec<f64> = (0..16)
            .map(|_| adv.draw(&AdversarySet::Interval { lo: 0.0, hi: 1.0 }, &mut unused).unwrap()[0])
            .collect();
        let golden = [
            0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ];
        assert_eq!(seq, golden);
    }

    #[test]
    fn trace_replays_rows_verbatim() {
        let csv = "r0,r1\n0.25,1\n0.5,0\n";
        let tr = TraceAdversary::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(tr.row(2).unwrap(), &[0.5, 0.0]);
        assert_eq!(tr.row(2).unwrap(), &[0.5, 0.0]);
        assert!(matches!(tr.row(3), Err(AmfError::TraceExhausted { round: 3, len: 2 })));
        assert!(TraceAdversary::from_csv("a\nx\n".as_bytes()).is_err());
    }

    #[test]
    fn spec_parses() {
        let s: AdversarySpec = serde_json::from_str(r#"{"kind":"iid","distribution":"bernoulli","p":0.3,"seed":5}"#).unwrap();
        assert_eq!(s, AdversarySpec::Iid { distribution: Distribution::Bernoulli, p: Some(0.3), seed: Some(5) });
        assert!(serde_json::from_str::<AdversarySpec>(r#"{"kind":"best_response","p":1}"#).is_err());
        assert_eq!(serde_json::from_str::<AdversarySpec>(r#"{"kind":"greedy"}"#).unwrap(), AdversarySpec::Greedy {});
    }
}
