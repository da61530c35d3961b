//! Context groups: predicates over a round's features and forecasts.

use serde::{Deserialize, Serialize};

/// What a group predicate can look at in one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    pub features: Vec<f64>,
    /// Current forecasts of any external forecasters, by index.
    #[serde(default)]
    pub forecasts: Vec<f64>,
}

impl RoundContext {
    pub fn new(features: Vec<f64>) -> Self {
        Self {
            features,
            forecasts: Vec::new(),
        }
    }
}

/// Forecast values closer than this are the same level.
pub const LEVEL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Group {
    /// Every context.
    All,
    /// Axis-aligned box, closed on both sides: `lo[k] ≤ x[k] ≤ hi[k]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Integer contexts listed explicitly; compares the rounded first feature.
    Members { values: Vec<i64> },
    /// Rounds where forecaster `forecaster` predicts `value`.
    LevelSet { forecaster: usize, value: f64 },
    /// Conjunction.
    Intersection { groups: Vec<Group> },
}

impl Group {
    pub fn contains(&self, ctx: &RoundContext) -> bool {
        match self {
            Group::All => true,
            Group::Box { lo, hi } => lo.iter().zip(hi).enumerate().all(|(k, (l, h))| {
                ctx.features.get(k).is_some_and(|x| *x >= *l && *x <= *h)
            }),
            Group::Members { values } => ctx
                .features
                .first()
                .is_some_and(|x| values.contains(&(x.round() as i64))),
            Group::LevelSet { forecaster, value } => ctx
                .forecasts
                .get(*forecaster)
                .is_some_and(|f| (f - value).abs() <= LEVEL_TOL),
            Group::Intersection { groups } => groups.iter().all(|g| g.contains(ctx)),
        }
    }

    pub fn intersect(&self, other: &Group) -> Group {
        Group::Intersection {
            groups: vec![self.clone(), other.clone()],
        }
    }
}

/// Indices of the groups containing `ctx`.
pub fn memberships(groups: &[Group], ctx: &RoundContext) -> Vec<usize> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.contains(ctx))
        .map(|(i, _)| i)
        .collect()
}
