//! Run configuration: one JSON document for every experiment, with
//! experiment-specific `params` checked against that experiment's schema.

use std::path::{Path, PathBuf};

use amf::adversaries::AdversarySpec;
use amf::groups::Group;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    External,
    Internal,
    Swap,
    Adaptive,
    Sleeping,
    Multigroup,
    Multicalibration,
    Multicalibeating,
    Blackwell,
}

/// Config file as written; `params` is checked once the experiment is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: ExperimentKind,
    horizon: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    adversary: AdversarySpec,
    #[serde(default = "empty_object")]
    params: serde_json::Value,
    #[serde(default = "default_out")]
    out_dir: PathBuf,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Which per-round learner a regret experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Minimax,
    Feasibility,
    ClosedForm,
}

/// Where round contexts come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSource {
    /// No features.
    #[default]
    None,
    /// One integer feature, uniform on `0..max`.
    UniformInt { max: i64 },
    /// `dim` features, each uniform on `[0, 1]`.
    Uniform { dim: usize },
    /// Numeric CSV with a header; row `t` holds round `t`'s features.
    Trace { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretParams {
    pub actions: usize,
    #[serde(default)]
    pub method: Option<Method>,
    /// Sleeping experts: chance each action is awake in a round.
    #[serde(default)]
    pub awake_probability: Option<f64>,
    /// Multigroup regret.
    #[serde(default)]
    pub groups: Option<Vec<Group>>,
    #[serde(default)]
    pub contexts: ContextSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    pub n: usize,
    pub r: usize,
    pub groups: Vec<Group>,
    #[serde(default)]
    pub contexts: ContextSource,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Multicalibeating only.
    #[serde(default)]
    pub forecasters: Vec<ForecasterParams>,
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterParams {
    pub name: String,
    pub levels: Vec<f64>,
    pub source: ForecastSource,
}

/// How a forecaster's per-round forecast is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForecastSource {
    /// The declared level nearest the first feature; ties go to the lower level.
    NearestFeature {},
    /// A uniformly random declared level each round.
    Random {},
    /// Column `column` of a CSV with a header.
    Trace { path: PathBuf, column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackwellParams {
    pub game: GameSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSource {
    /// A polytope game JSON document.
    File { path: PathBuf },
    /// Sign-vector game with slab targets of half-width `width`.
    Sign { lambda: usize, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    Regret(RegretParams),
    Calibration(CalibrationParams),
    Blackwell(BlackwellParams),
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub experiment: ExperimentKind,
    pub horizon: usize,
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
    pub adversary: AdversarySpec,
    pub params: Params,
    pub out_dir: PathBuf,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).with_context(|| format!("in config {}", path.display()))
    }

    /// Parse and validate. Errors name the line they come from.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| anyhow!("line {}, column {}: {e}", e.line(), e.column()))?;
        let params = match raw.experiment {
            ExperimentKind::Multicalibration | ExperimentKind::Multicalibeating => {
                serde_json::from_value(raw.params.clone()).map(Params::Calibration)
            }
            ExperimentKind::Blackwell => serde_json::from_value(raw.params.clone()).map(Params::Blackwell),
            _ => serde_json::from_value(raw.params.clone()).map(Params::Regret),
        }
        .map_err(|e| match line_of_key(text, "params") {
            Some(l) => anyhow!("line {l} (params for {:?}): {e}", raw.experiment),
            None => anyhow!("params for {:?}: {e}", raw.experiment),
        })?;
        let cfg = Config {
            experiment: raw.experiment,
            horizon: raw.horizon,
            seed: raw.seed,
            seeds: raw.seeds,
            adversary: raw.adversary,
            params,
            out_dir: raw.out_dir,
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate().map_err(|e| {
            let at = e
                .key
                .and_then(|k| line_of_key(text, k))
                .map(|l| format!("line {l}: "))
                .unwrap_or_default();
            anyhow!("{at}{}", e.message)
        })?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
            self.seeds = None;
        }
        if let Some(h) = o.horizon {
            self.horizon = h;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        self.validate().map_err(|e| anyhow!("{}", e.message))
    }

    pub fn regret(&self) -> Result<&RegretParams> {
        match &self.params {
            Params::Regret(p) => Ok(p),
            _ => bail!("{:?} does not take regret parameters", self.experiment),
        }
    }

    pub fn calibration(&self) -> Result<&CalibrationParams> {
        match &self.params {
            Params::Calibration(p) => Ok(p),
            _ => bail!("{:?} does not take calibration parameters", self.experiment),
        }
    }

    pub fn blackwell(&self) -> Result<&BlackwellParams> {
        match &self.params {
            Params::Blackwell(p) => Ok(p),
            _ => bail!("{:?} does not take approachability parameters", self.experiment),
        }
    }

    /// Seeds to run: the explicit list, or the single seed.
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    /// Resolve a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> std::result::Result<(), Invalid> {
        use ExperimentKind::*;
        if self.horizon == 0 {
            return invalid("horizon", "horizon must be at least 1");
        }
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                return invalid("seeds", "seed list is empty");
            }
        }
        match (&self.experiment, &self.params) {
            (External | Internal | Swap | Adaptive | Sleeping | Multigroup, Params::Regret(p)) => {
                if p.actions < 2 {
                    return invalid("actions", "need at least 2 actions");
                }
                if self.experiment == Multigroup && p.groups.as_ref().is_none_or(Vec::is_empty) {
                    return invalid("groups", "multigroup regret needs a nonempty group list");
                }
                if self.experiment != Multigroup && p.groups.is_some() {
                    return invalid("groups", "groups are only used by multigroup regret");
                }
                match (self.experiment, p.awake_probability) {
                    (Sleeping, Some(q)) if !(q > 0.0 && q <= 1.0) => return invalid("awake_probability", "awake probability must be in (0, 1]"),
                    (Sleeping, _) => {}
                    (_, Some(_)) => return invalid("awake_probability", "awake_probability is only used by sleeping experts"),
                    _ => {}
                }
                if self.experiment == Adaptive && p.method.is_some_and(|m| m != Method::ClosedForm) {
                    return invalid("method", "adaptive regret runs the closed-form learner only");
                }
            }
            (Multicalibration | Multicalibeating, Params::Calibration(p)) => {
                if p.n == 0 || p.r == 0 {
                    return invalid("n", "n and r must be positive");
                }
                if p.groups.is_empty() {
                    return invalid("groups", "group list is empty");
                }
                if !(p.delta > 0.0 && p.delta < 1.0) {
                    return invalid("delta", "delta must be in (0, 1)");
                }
                if self.experiment == Multicalibration && !p.forecasters.is_empty() {
                    return invalid("forecasters", "forecasters are only used by multicalibeating");
                }
                if self.experiment == Multicalibeating && p.forecasters.is_empty() {
                    return invalid("forecasters", "multicalibeating needs at least one forecaster");
                }
            }
            (Blackwell, Params::Blackwell(_)) => {}
            (e, _) => return invalid("params", &format!("params do not match experiment {e:?}")),
        }
        Ok(())
    }
}

struct Invalid {
    key: Option<&'static str>,
    message: String,
}

fn invalid(key: &'static str, message: &str) -> std::result::Result<(), Invalid> {
    Err(Invalid {
        key: Some(key),
        message: message.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXTERNAL: &str = r#"{
  "experiment": "external",
  "horizon": 100,
  "seed": 7,
  "adversary": {"kind": "best_response"},
  "params": {"actions": 3}
}"#;

    #[test]
    fn parses_and_overrides() {
        let mut c = Config::parse(EXTERNAL, Path::new(".")).unwrap();
        assert_eq!(c.regret().unwrap().actions, 3);
        let h = c.hash();
        c.apply(&Overrides { seed: Some(9), horizon: Some(20), out: None }).unwrap();
        assert_eq!((c.seed, c.horizon), (9, 20));
        assert_ne!(c.hash(), h);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = EXTERNAL.replace("\"actions\": 3", "\"actions\": 3, \"n\": 4");
        let e = Config::parse(&bad, Path::new(".")).unwrap_err().to_string();
        assert!(e.contains("line 6") && e.contains("unknown field"), "{e}");
        let bad = EXTERNAL.replace("\"horizon\": 100", "\"horizon\": 0");
        let e = Config::parse(&bad, Path::new(".")).unwrap_err().to_string();
        assert!(e.starts_with("line 3"), "{e}");
        let bad = EXTERNAL.replace("\"seed\": 7", "\"seed\": 7,\n  \"extra\": 1");
        let e = Config::parse(&bad, Path::new(".")).unwrap_err().to_string();
        assert!(e.starts_with("line 5"), "{e}");
    }
}
