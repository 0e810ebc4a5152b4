//! Scenario configuration and the built-in presets.
//!
//! Scenario files are JSON. Agent ids inside them (the adversary set) are
//! 1-based; in memory they are 0-based.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSchedule, ScheduleFile};
use crate::protocol::ProtocolParams;
use crate::rng::initial_value_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Conventional,
    Confidential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// Messages, realized weights and states for every round.
    Full,
    /// States only.
    StatesOnly,
}

impl RecordMode {
    /// Full logs for up to 50 agents, states only above.
    pub fn default_for(n: usize) -> Self {
        if n <= 50 {
            RecordMode::Full
        } else {
            RecordMode::StatesOnly
        }
    }
}

impl std::str::FromStr for RecordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RecordMode::Full),
            "states-only" => Ok(RecordMode::StatesOnly),
            other => Err(Error::Config(format!("unknown record mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    Builtin(String),
    File(PathBuf),
    Inline(ScheduleFile),
}

impl ScheduleSource {
    pub fn resolve(&self) -> Result<GraphSchedule> {
        match self {
            ScheduleSource::Builtin(name) => GraphSchedule::builtin(name),
            ScheduleSource::File(path) => GraphSchedule::from_file(path),
            ScheduleSource::Inline(file) => file.clone().into_schedule(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialValues {
    Explicit(Vec<f64>),
    /// Uniform on the open interval `(low + d, high - d)`, `d = 1e-9 (b - a)`.
    UniformRandom {
        low: f64,
        high: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub params: ProtocolParams,
    pub schedule: ScheduleSource,
    pub horizon: usize,
    pub seed: u64,
    pub initial_values: InitialValues,
    pub algorithm: Algorithm,
    #[serde(default, with = "one_based")]
    pub adversaries: Vec<usize>,
    /// Stop once `e(k)` drops below this; zero disables.
    #[serde(default)]
    pub stop_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RecordMode>,
    #[serde(default)]
    pub override_assumptions: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a scenario file. Relative schedule paths are taken relative to
    /// the scenario file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let ScheduleSource::File(sched) = &mut config.schedule {
            if sched.is_relative() {
                if let Some(dir) = path.parent() {
                    *sched = dir.join(&*sched);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn record_mode(&self) -> RecordMode {
        self.record
            .unwrap_or_else(|| RecordMode::default_for(self.params.n))
    }

    /// The concrete initial vector; random draws come from a stream of the
    /// root seed reserved for that purpose.
    pub fn resolve_initial_values(&self) -> Result<Vec<f64>> {
        let p = &self.params;
        let values = match &self.initial_values {
            InitialValues::Explicit(v) => {
                if v.len() != p.n {
                    return Err(Error::Config(format!(
                        "{} initial values for {} agents",
                        v.len(),
                        p.n
                    )));
                }
                v.clone()
            }
            InitialValues::UniformRandom { low, high } => {
                let delta = 1e-9 * (p.b - p.a);
                let (lo, hi) = (low + delta, high - delta);
                if !(lo < hi) {
                    return Err(Error::Config(format!(
                        "empty initial range ({low}, {high})"
                    )));
                }
                let mut rng = initial_value_rng(self.seed);
                (0..p.n).map(|_| rng.random_range(lo..hi)).collect()
            }
        };
        if let Some(&bad) = values.iter().find(|&&x| !(x >= p.a && x <= p.b)) {
            return Err(Error::OutOfRange {
                value: bad,
                a: p.a,
                b: p.b,
            });
        }
        Ok(values)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioConfig {
            seed,
            ..self.clone()
        }
    }

    /// Built-in presets: `fig2_k10`, `fig2_k20`, `fig2_k30`, `fig3_sweep`,
    /// `fig7_scale`.
    pub fn preset(name: &str) -> Result<Self> {
        let five = |big_k: usize| ScenarioConfig {
            params: ProtocolParams::new(5, -50.0, 50.0, 0.05, big_k).expect("preset params"),
            schedule: ScheduleSource::Builtin("alternating5".into()),
            horizon: 200,
            seed: 1,
            initial_values: InitialValues::UniformRandom {
                low: -50.0,
                high: 50.0,
            },
            algorithm: Algorithm::Confidential,
            adversaries: Vec::new(),
            stop_tolerance: 0.0,
            record: None,
            override_assumptions: false,
        };
        match name {
            "fig2_k10" => Ok(five(10)),
            "fig2_k20" => Ok(five(20)),
            "fig2_k30" => Ok(five(30)),
            "fig3_sweep" => Ok(five(10)),
            "fig7_scale" => Ok(ScenarioConfig {
                params: ProtocolParams::new(1000, -50.0, 50.0, 0.05, 10).expect("preset params"),
                schedule: ScheduleSource::Builtin("ring1000".into()),
                horizon: 3000,
                record: Some(RecordMode::StatesOnly),
                ..five(10)
            }),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub const PRESETS: [&'static str; 5] = [
        "fig2_k10",
        "fig2_k20",
        "fig2_k30",
        "fig3_sweep",
        "fig7_scale",
    ];
}

mod one_based {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ids: &[usize], ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_seq(ids.iter().map(|i| i + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<usize>, D::Error> {
        let ids = Vec::<usize>::deserialize(de)?;
        ids.into_iter()
            .map(|i| {
                i.checked_sub(1)
                    .ok_or_else(|| D::Error::custom("agent ids are 1-based"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_uses_one_based_ids() {
        let mut cfg = ScenarioConfig::preset("fig2_k10").unwrap();
        cfg.adversaries = vec![1, 2];
        let text = cfg.to_json();
        assert!(text.contains("\"adversaries\": [\n    2,\n    3\n  ]"));
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_handwritten_file() {
        let text = r#"{
            "n": 3, "a": 0, "b": 10, "epsilon": 0.05, "big_k": 4,
            "schedule": {"inline": {"n": 3, "period": 1, "rounds": [[[2,1],[3,2],[1,3]]]}},
            "horizon": 50, "seed": 9,
            "initial_values": {"explicit": [1, 2, 3]},
            "algorithm": "confidential",
            "adversaries": [2]
        }"#;
        let cfg = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(cfg.adversaries, vec![1]);
        assert_eq!(cfg.record_mode(), RecordMode::Full);
        assert_eq!(cfg.resolve_initial_values().unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(ScenarioConfig::from_json(&text.replace("[2]", "[0]")).is_err());
    }

    #[test]
    fn random_initial_values_stay_inside_open_range() {
        let cfg = ScenarioConfig::preset("fig2_k10").unwrap();
        let x = cfg.resolve_initial_values().unwrap();
        assert_eq!(x, cfg.resolve_initial_values().unwrap());
        assert!(x.iter().all(|&v| v > -50.0 && v < 50.0));
        assert_ne!(x, cfg.with_seed(2).resolve_initial_values().unwrap());
    }

    #[test]
    fn explicit_values_are_range_checked() {
        let mut cfg = ScenarioConfig::preset("fig2_k10").unwrap();
        cfg.initial_values = InitialValues::Explicit(vec![0.0, 0.0, 0.0, 0.0, 60.0]);
        assert!(matches!(
            cfg.resolve_initial_values(),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn presets_resolve() {
        for name in ScenarioConfig::PRESETS {
            let cfg = ScenarioConfig::preset(name).unwrap();
            assert_eq!(cfg.schedule.resolve().unwrap().n_agents(), cfg.params.n);
        }
        assert_eq!(
            ScenarioConfig::preset("fig7_scale").unwrap().record_mode(),
            RecordMode::StatesOnly
        );
    }
}
