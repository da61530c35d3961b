//! Forecast scoring for calibeating: Brier, calibration and refinement
//! scores, bucketed and joint variants, augmented group collections, and
//! per-(forecaster, group) reports.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{config_err, Result};
use crate::groups::{Group, LEVEL_TOL};
use crate::multical::{bucket_index, measure_alpha, CalibrationRound};

/// A forecaster given as a per-round trace over a declared finite level set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Forecaster {
    pub name: String,
    pub levels: Vec<f64>,
    pub forecasts: Vec<f64>,
}

impl Forecaster {
    pub fn new(name: impl Into<String>, levels: Vec<f64>, forecasts: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if levels.is_empty() {
            return config_err(format!("forecaster {name}: empty level set"));
        }
        if levels.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return config_err(format!("forecaster {name}: levels must lie in [0, 1]"));
        }
        if let Some(f) = forecasts.iter().find(|f| level_of(&levels, **f).is_none()) {
            return config_err(format!("forecaster {name}: forecast {f} is not a declared level"));
        }
        Ok(Self {
            name,
            levels,
            forecasts,
        })
    }

    /// Index of the declared level matching `value`.
    pub fn level_index(&self, value: f64) -> Option<usize> {
        level_of(&self.levels, value)
    }
}

fn level_of(levels: &[f64], value: f64) -> Option<usize> {
    levels.iter().position(|d| (d - value).abs() <= LEVEL_TOL)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return config_err("scores need at least one round");
    }
    if a != b {
        return config_err(format!("length mismatch: {a} predictions, {b} labels"));
    }
    Ok(())
}

/// Mean squared error `(1/T) Σ (f^t − b^t)²`.
pub fn brier(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    let total: f64 = predictions.iter().zip(labels).map(|(f, b)| (f - b) * (f - b)).sum();
    Ok(total / labels.len() as f64)
}

/// Calibration and refinement of a partition of the rounds, where each
/// cell's prediction is `cell_prediction(key)`:
/// `K = (1/T) Σ |S|(p(S) − b̄(S))²`, `R = (1/T) Σ_S Σ_{t∈S} (b^t − b̄(S))²`.
fn partition_scores<K: Ord + Copy>(keys: &[K], labels: &[f64], cell_prediction: impl Fn(K, &[usize]) -> f64) -> (f64, f64) {
    let mut cells: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (t, k) in keys.iter().enumerate() {
        cells.entry(*k).or_default().push(t);
    }
    let total = labels.len() as f64;
    let (mut cal, mut refine) = (0.0, 0.0);
    for (key, members) in &cells {
        let size = members.len() as f64;
        let mean = members.iter().map(|&t| labels[t]).sum::<f64>() / size;
        let p = cell_prediction(*key, members);
        cal += size * (p - mean) * (p - mean);
        refine += members.iter().map(|&t| (labels[t] - mean).powi(2)).sum::<f64>();
    }
    (cal / total, refine / total)
}

/// `(K, R)` for a forecaster, partitioning rounds by forecast value.
pub fn calibration_refinement(forecasts: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    check_lengths(forecasts.len(), labels.len())?;
    let keys: Vec<u64> = forecasts.iter().map(|f| (f + 0.0).to_bits()).collect();
    Ok(partition_scores(&keys, labels, |k, _| f64::from_bits(k)))
}

/// Bucketed `(B_n, K_n, R_n)`: cells are prediction buckets and each cell
/// predicts the mean prediction inside it.
pub fn bucketed_scores(predictions: &[f64], labels: &[f64], n: usize) -> Result<(f64, f64, f64)> {
    check_lengths(predictions.len(), labels.len())?;
    let keys = predictions.iter().map(|a| bucket_index(*a, n)).collect::<Result<Vec<_>>>()?;
    let (k, r) = partition_scores(&keys, labels, |_, members| {
        members.iter().map(|&t| predictions[t]).sum::<f64>() / members.len() as f64
    });
    Ok((k + r, k, r))
}

/// Joint refinement over the cells `{t : f^t = d, a^t ∈ B_i}`.
pub fn joint_refinement(predictions: &[f64], forecasts: &[f64], labels: &[f64], n: usize) -> Result<f64> {
    check_lengths(predictions.len(), labels.len())?;
    check_lengths(forecasts.len(), labels.len())?;
    let keys = predictions
        .iter()
        .zip(forecasts)
        .map(|(a, f)| Ok(((f + 0.0).to_bits(), bucket_index(*a, n)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(partition_scores(&keys, labels, |_, _| 0.0).1)
}

/// `(∪_f {g ∩ S : g ∈ G, S level set of f}) ∪ G`, size `|G|(1 + Σ|D_f|)`.
pub fn build_multicalibeating_groups(groups: &[Group], forecasters: &[Forecaster]) -> Vec<Group> {
    let mut out = Vec::with_capacity(groups.len() * (1 + forecasters.iter().map(|f| f.levels.len()).sum::<usize>()));
    for (fi, f) in forecasters.iter().enumerate() {
        for g in groups {
            for &d in &f.levels {
                out.push(g.intersect(&Group::LevelSet { forecaster: fi, value: d }));
            }
        }
    }
    out.extend(groups.iter().cloned());
    out
}

/// `(∪_f level sets of f) ∪ {Θ}`.
pub fn build_ensemble_groups(forecasters: &[Forecaster]) -> Vec<Group> {
    let mut out: Vec<Group> = forecasters
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| f.levels.iter().map(move |&d| Group::LevelSet { forecaster: fi, value: d }))
        .collect();
    out.push(Group::All);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerScores {
    pub brier: f64,
    pub calibration: f64,
    pub refinement: f64,
    pub bucketed_brier: f64,
    pub bucketed_calibration: f64,
    pub bucketed_refinement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecasterScores {
    pub name: String,
    pub brier: f64,
    pub calibration: f64,
    pub refinement: f64,
    pub joint_refinement: f64,
    /// `Brier(learner) − refinement(f)` over all rounds.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellReport {
    /// The group never occurred.
    NotApplicable { forecaster: usize, group: usize },
    Scored(CellScores),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScores {
    pub forecaster: usize,
    pub group: usize,
    pub rounds: usize,
    pub learner_brier: f64,
    pub forecaster_refinement: f64,
    /// `Brier(learner)|g − refinement(f)|g`.
    pub beta: f64,
    /// Multicalibration constant of the rounds in `g`, measured on the
    /// level sets of `f` plus the whole subsequence.
    pub alpha: f64,
    /// `alpha·n(|D_f|+2) + 2/n`; always at least `beta`.
    pub certified_bound: f64,
    pub beta_bound_expectation: f64,
    pub beta_bound_high_probability: f64,
    /// The theoretical bounds exceed 1, the largest possible `beta`.
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub learner: LearnerScores,
    pub forecasters: Vec<ForecasterScores>,
    pub cells: Vec<CellReport>,
}

/// Parameters of the theoretical β bound.
#[derive(Debug, Clone, Copy)]
pub struct BetaBoundParams {
    pub n: usize,
    pub r: usize,
    pub horizon: usize,
    pub num_groups: usize,
    pub total_levels: usize,
    pub delta: f64,
}

/// `2/n + (|D_f|+2)/(r|S(g)|/T) + c·n(|D_f|+2)·sqrt(L/(|S(g)|²/T))` with
/// `c = 4, L = ln(2n|G|(1+Σ|D_f|))`, or `c = 8` and `L` divided by δ inside
/// the log for the high-probability form.
pub fn beta_bounds(p: &BetaBoundParams, levels: usize, group_rounds: usize) -> (f64, f64) {
    let n = p.n as f64;
    let t = p.horizon as f64;
    let s = group_rounds as f64;
    let dp2 = levels as f64 + 2.0;
    let count = 2.0 * n * p.num_groups as f64 * (1.0 + p.total_levels as f64);
    let base = 2.0 / n + dp2 / (p.r as f64 * s / t);
    let scale = 1.0 / (s * s / t);
    (
        base + 4.0 * n * dp2 * (scale * count.ln()).sqrt(),
        base + 8.0 * n * dp2 * (scale * (count / p.delta).ln()).sqrt(),
    )
}

/// Score a finished run against forecasters on every group in `groups`.
/// Forecaster traces must align with `rounds`.
pub fn evaluate_calibeating(
    rounds: &[CalibrationRound],
    forecasters: &[Forecaster],
    groups: &[Group],
    n: usize,
    r: usize,
    delta: f64,
) -> Result<ScoreReport> {
    let t_total = rounds.len();
    if let Some(f) = forecasters.iter().find(|f| f.forecasts.len() != t_total) {
        return config_err(format!("forecaster {} has {} forecasts for {t_total} rounds", f.name, f.forecasts.len()));
    }
    let preds: Vec<f64> = rounds.iter().map(|r| r.prediction).collect();
    let labels: Vec<f64> = rounds.iter().map(|r| r.label).collect();

    let (cal, refine) = calibration_refinement(&preds, &labels)?;
    let (bb, bk, br) = bucketed_scores(&preds, &labels, n)?;
    let learner = LearnerScores {
        brier: brier(&preds, &labels)?,
        calibration: cal,
        refinement: refine,
        bucketed_brier: bb,
        bucketed_calibration: bk,
        bucketed_refinement: br,
    };

    let mut fscores = Vec::new();
    for f in forecasters {
        let (k, rf) = calibration_refinement(&f.forecasts, &labels)?;
        fscores.push(ForecasterScores {
            name: f.name.clone(),
            brier: brier(&f.forecasts, &labels)?,
            calibration: k,
            refinement: rf,
            joint_refinement: joint_refinement(&preds, &f.forecasts, &labels, n)?,
            tau: learner.brier - rf,
        });
    }

    let params = BetaBoundParams {
        n,
        r,
        horizon: t_total,
        num_groups: groups.len(),
        total_levels: forecasters.iter().map(|f| f.levels.len()).sum(),
        delta,
    };
    let mut cells = Vec::new();
    for (fi, f) in forecasters.iter().enumerate() {
        // Level sets of f plus the whole (sub)sequence.
        let mut level_groups: Vec<Group> = f
            .levels
            .iter()
            .map(|&d| Group::LevelSet { forecaster: fi, value: d })
            .collect();
        level_groups.push(Group::All);
        for (gi, g) in groups.iter().enumerate() {
            let idx: Vec<usize> = (0..t_total).filter(|&t| g.contains(&rounds[t].context)).collect();
            if idx.is_empty() {
                cells.push(CellReport::NotApplicable { forecaster: fi, group: gi });
                continue;
            }
            let sub: Vec<CalibrationRound> = idx.iter().map(|&t| rounds[t].clone()).collect();
            let sp: Vec<f64> = idx.iter().map(|&t| preds[t]).collect();
            let sl: Vec<f64> = idx.iter().map(|&t| labels[t]).collect();
            let sf: Vec<f64> = idx.iter().map(|&t| f.forecasts[t]).collect();
            let learner_brier = brier(&sp, &sl)?;
            let forecaster_refinement = calibration_refinement(&sf, &sl)?.1;
            let alpha = measure_alpha(&sub, &level_groups, n)?;
            let certified_bound = alpha * n as f64 * (f.levels.len() as f64 + 2.0) + 2.0 / n as f64;
            let (be, bh) = beta_bounds(&params, f.levels.len(), idx.len());
            cells.push(CellReport::Scored(CellScores {
                forecaster: fi,
                group: gi,
                rounds: idx.len(),
                learner_brier,
                forecaster_refinement,
                beta: learner_brier - forecaster_refinement,
                alpha,
                certified_bound,
                beta_bound_expectation: be,
                beta_bound_high_probability: bh,
                vacuous: be > 1.0,
            }));
        }
    }
    Ok(ScoreReport {
        learner,
        forecasters: fscores,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::RoundContext;

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(brier(&[1.0; 3], &[0.0; 3]).unwrap(), 1.0);
        assert!(brier(&[], &[]).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let (k, r) = calibration_refinement(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert_eq!((k, r), (0.0, 0.25));
        // Labels constant on each level set → zero refinement.
        let (_, r) = calibration_refinement(&[0.1, 0.9, 0.1], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn bucketed_single_cell() {
        let (b, k, r) = bucketed_scores(&[0.31, 0.33, 0.35], &[1.0, 1.0, 1.0], 2).unwrap();
        assert!((k - (1.0 - 0.33f64).powi(2)).abs() < 1e-12);
        assert_eq!(r, 0.0);
        assert!((b - k).abs() < 1e-15);
    }

    #[test]
    fn bucketed_surrogate_on_exact_grid_predictions() {
        let a = [0.0, 0.25, 0.5, 0.75];
        let (bn, kn, _) = bucketed_scores(&a, &a, 4).unwrap();
        assert_eq!(kn, 0.0);
        assert!(brier(&a, &a).unwrap() <= bn + 0.25);
    }

    #[test]
    fn joint_refinement_degenerate_partitions() {
        let a = [0.1, 0.6, 0.65, 0.9, 0.2];
        let f = [0.3, 0.3, 0.7, 0.7, 0.3];
        let b = [0.0, 1.0, 1.0, 0.0, 1.0];
        let (_, _, rn) = bucketed_scores(&a, &b, 3).unwrap();
        let constant = [0.5; 5];
        assert!((joint_refinement(&a, &constant, &b, 3).unwrap() - rn).abs() < 1e-15);
        let rf = calibration_refinement(&f, &b).unwrap().1;
        assert!((joint_refinement(&constant, &f, &b, 3).unwrap() - rf).abs() < 1e-15);
    }

    #[test]
    fn augmented_group_counts() {
        let f3 = Forecaster::new("f", vec![0.1, 0.5, 0.9], vec![]).unwrap();
        assert_eq!(build_multicalibeating_groups(&[Group::All], &[f3]).len(), 4);
        assert_eq!(build_multicalibeating_groups(&[Group::All], &[]), vec![Group::All]);
        let f2 = Forecaster::new("g", vec![0.0, 1.0], vec![]).unwrap();
        let two = [Group::All, Group::Members { values: vec![1] }];
        assert_eq!(build_multicalibeating_groups(&two, &[f2.clone(), f2]).len(), 10);
    }

    #[test]
    fn augmented_membership_is_a_conjunction() {
        let f = Forecaster::new("f", vec![0.2, 0.8], vec![]).unwrap();
        let g = build_multicalibeating_groups(&[Group::Members { values: vec![3] }], &[f]);
        let ctx = RoundContext {
            features: vec![3.0],
            forecasts: vec![0.8],
        };
        let hits: Vec<bool> = g.iter().map(|g| g.contains(&ctx)).collect();
        assert_eq!(hits, vec![false, true, true]);
    }

    #[test]
    fn report_marks_empty_groups_and_bounds_beta() {
        let rounds: Vec<CalibrationRound> = [(0.5, 0.0), (0.5, 1.0)]
            .iter()
            .map(|&(a, b)| CalibrationRound {
                context: RoundContext::new(vec![0.0]),
                prediction: a,
                label: b,
            })
            .collect();
        let f = Forecaster::new("half", vec![0.5], vec![0.5, 0.5]).unwrap();
        let groups = [Group::All, Group::Members { values: vec![5] }];
        let rep = evaluate_calibeating(&rounds, &[f], &groups, 2, 1, 0.05).unwrap();
        match &rep.cells[0] {
            CellReport::Scored(c) => {
                assert!((c.beta - (0.25 - 0.25)).abs() < 1e-15);
                assert!(c.beta <= c.certified_bound);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(rep.cells[1], CellReport::NotApplicable { .. }));
    }

    #[test]
    fn exact_predictions_never_lose() {
        let labels = [0.0, 1.0, 1.0, 0.0];
        let rounds: Vec<CalibrationRound> = labels
            .iter()
            .map(|&b| CalibrationRound {
                context: RoundContext::default(),
                prediction: b,
                label: b,
            })
            .collect();
        let f = Forecaster::new("coin", vec![0.3, 0.6], vec![0.3, 0.6, 0.3, 0.6]).unwrap();
        let rep = evaluate_calibeating(&rounds, &[f], &[Group::All], 4, 1, 0.05).unwrap();
        assert_eq!(rep.learner.brier, 0.0);
        let CellReport::Scored(c) = &rep.cells[0] else { panic!() };
        assert!(c.beta <= 0.0);
    }
}
