//! Experiment configuration: built-in presets per experiment and scale,
//! overlaid by an optional TOML file. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Interval, SamplerMode, SamplerSpec, Side, TestIcSpec};
use crate::error::{Error, Result};
use crate::greedy::GreedyConfig;
use crate::integrators::step_count;
use crate::kernels::KernelFamily;
use crate::predictor::SolverSettings;
use crate::systems::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pendulum,
    Chain,
    Wave,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Pendulum => "pendulum",
            ExperimentKind::Chain => "chain",
            ExperimentKind::Wave => "wave",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(ExperimentKind::Pendulum),
            "chain" => Ok(ExperimentKind::Chain),
            "wave" => Ok(ExperimentKind::Wave),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Pendulum { mass: f64, length: f64, gravity: f64 },
    Chain { n: usize, alpha: f64, beta: f64 },
    Wave { nodes: usize, speed: f64, length: f64 },
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec> {
        match *self {
            SystemConfig::Pendulum { mass, length, gravity } => {
                if !(mass > 0.0 && length > 0.0 && gravity > 0.0) {
                    return Err(Error::Config("pendulum parameters must be positive".into()));
                }
                Ok(SystemSpec::Pendulum { mass, length, gravity })
            }
            SystemConfig::Chain { n, alpha, beta } => SystemSpec::chain(n, alpha, beta),
            SystemConfig::Wave { nodes, speed, length } => SystemSpec::wave(nodes, speed, length),
        }
    }
}

/// Symplectic reduction of the wave system from `B²` sine-mode snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    pub snapshot_modes: usize,
    /// Half the reduced dimension `2n`.
    pub reduced_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub families: Vec<KernelFamily>,
    pub epsilons: Vec<f64>,
    /// Center count at which candidates are compared; the greedy budget when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_star: Option<usize>,
    pub validation_fraction: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            families: KernelFamily::ALL.to_vec(),
            epsilons: vec![0.015625, 0.03125, 0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            m_star: Some(50),
            validation_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub initial_conditions: TestIcSpec,
    pub horizon: f64,
}

/// Everything needed to rerun an experiment. The sampler, split and test
/// seeds all derive from `seed`; seeds written inside `sampler` or `test`
/// are replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub scenario: String,
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<ReductionConfig>,
    pub sampler: SamplerSpec,
    pub delta_ts: Vec<f64>,
    pub micro_dt: f64,
    pub greedy: GreedyConfig,
    pub selection: SelectionConfig,
    pub test: TestConfig,
    #[serde(default)]
    pub predictor: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

const DEFAULT_SEED: u64 = 20240601;

impl ExperimentConfig {
    pub fn preset(kind: ExperimentKind, scale: Scale) -> Self {
        let paper = scale == Scale::Paper;
        let delta_ts = vec![0.1, 0.05, 0.025];
        match kind {
            ExperimentKind::Pendulum => {
                let g: f64 = 9.81;
                let counts = if paper { 200 } else { 50 };
                Self {
                    experiment: kind,
                    scenario: "A".into(),
                    seed: DEFAULT_SEED,
                    system: SystemConfig::Pendulum { mass: 1.0, length: 1.0, gravity: g },
                    reduction: None,
                    sampler: SamplerSpec::new(SamplerMode::Grid {
                        counts: vec![counts, counts],
                        bounds: vec![
                            Interval { lower: -std::f64::consts::PI, upper: std::f64::consts::PI },
                            Interval { lower: -2.0 * g.sqrt(), upper: 2.0 * g.sqrt() },
                        ],
                    })
                    .with_energy_cap(2.0 * g, true),
                    delta_ts,
                    micro_dt: 1e-3,
                    greedy: greedy(if paper { 500 } else { 300 }),
                    selection: SelectionConfig::default(),
                    test: TestConfig {
                        initial_conditions: TestIcSpec::RestPositions {
                            bounds: vec![Interval { lower: 0.0, upper: std::f64::consts::PI }],
                            count: 10,
                            seed: 0,
                        },
                        horizon: 6.0,
                    },
                    predictor: SolverSettings::default(),
                    output: None,
                }
            }
            ExperimentKind::Chain => Self {
                experiment: kind,
                scenario: "A".into(),
                seed: DEFAULT_SEED,
                system: SystemConfig::Chain { n: 3, alpha: 1.0, beta: 0.25 },
                reduction: None,
                sampler: SamplerSpec::new(SamplerMode::UniformBox {
                    bounds: vec![Interval { lower: -0.5, upper: 0.5 }; 6],
                    target_count: if paper { 10_000 } else { 2000 },
                    seed: 0,
                })
                .with_energy_cap(0.5, false),
                delta_ts,
                micro_dt: 1e-3,
                greedy: greedy(if paper { 800 } else { 400 }),
                // 50 centers cannot separate candidates in the 6-D phase space
                // of the chain; compare at the budget instead
                selection: SelectionConfig { m_star: None, ..SelectionConfig::default() },
                test: TestConfig {
                    initial_conditions: TestIcSpec::RestPositions {
                        bounds: vec![Interval { lower: 0.0, upper: 0.5 }; 3],
                        count: 10,
                        seed: 0,
                    },
                    horizon: 10.0,
                },
                predictor: SolverSettings::default(),
                output: None,
            },
            ExperimentKind::Wave => Self {
                experiment: kind,
                scenario: "A".into(),
                seed: DEFAULT_SEED,
                system: SystemConfig::Wave { nodes: if paper { 1000 } else { 200 }, speed: 0.3, length: 1.0 },
                reduction: Some(ReductionConfig { snapshot_modes: 2, reduced_n: 2 }),
                sampler: SamplerSpec::new(SamplerMode::ReducedBox { z_max: 3.5, target_count: if paper { 20_000 } else { 2000 }, seed: 0 })
                    .with_energy_cap(5.0, false),
                delta_ts,
                micro_dt: 1e-3,
                greedy: greedy(if paper { 400 } else { 300 }),
                selection: SelectionConfig::default(),
                test: TestConfig {
                    initial_conditions: TestIcSpec::SineModes { b: 2, amplitude: 1.5, h_max: 5.0, count: 10, seed: 0 },
                    horizon: 6.0,
                },
                predictor: SolverSettings::default(),
                output: None,
            },
        }
    }

    /// Scenario B of the paper-style experiments: initial states restricted
    /// to `p ≤ 0` (pendulum) or `p₂ ≤ 0` (chain), center budget halved.
    pub fn scenario_b(mut self) -> Self {
        let coord = match self.experiment {
            ExperimentKind::Pendulum => 1,
            ExperimentKind::Chain => 4,
            ExperimentKind::Wave => return self,
        };
        self.scenario = "B".into();
        self.sampler.halfspace = Some(crate::dataset::HalfSpace { coord, side: Side::NonPositive });
        self.greedy.max_centers = (self.greedy.max_centers / 2).max(1);
        self
    }

    /// Center count used for model selection.
    pub fn m_star(&self) -> usize {
        self.selection.m_star.unwrap_or(self.greedy.max_centers)
    }

    /// Sampler, test and split seeds.
    pub fn seeds(&self) -> (u64, u64, u64) {
        (self.seed, self.seed.wrapping_add(1), self.seed.wrapping_add(2))
    }

    /// Pushes the derived seeds into the sampler and test specs.
    pub fn apply_seed(&mut self) {
        let (s, t, _) = self.seeds();
        self.sampler.set_seed(s);
        self.test.initial_conditions.set_seed(t);
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        let sys = self.system.build().map_err(cfg_err)?;
        let expected = match self.experiment {
            ExperimentKind::Pendulum => matches!(self.system, SystemConfig::Pendulum { .. }),
            ExperimentKind::Chain => matches!(self.system, SystemConfig::Chain { .. }),
            ExperimentKind::Wave => matches!(self.system, SystemConfig::Wave { .. }),
        };
        if !expected {
            return Err(Error::Config(format!("system does not match experiment '{}'", self.experiment.name())));
        }
        match (&self.reduction, self.experiment) {
            (Some(r), ExperimentKind::Wave) => {
                if r.snapshot_modes == 0 || r.reduced_n == 0 || r.reduced_n > r.snapshot_modes * r.snapshot_modes {
                    return Err(Error::Config("reduction needs 1 ≤ reduced_n ≤ snapshot_modes²".into()));
                }
                let reduced = SystemSpec::harmonic(r.reduced_n);
                self.sampler.validate(&reduced).map_err(cfg_err)?;
            }
            (None, ExperimentKind::Wave) => return Err(Error::Config("wave experiment needs a [reduction] table".into())),
            (Some(_), _) => return Err(Error::Config("[reduction] is only valid for the wave experiment".into())),
            (None, _) => self.sampler.validate(&sys).map_err(cfg_err)?,
        }
        if self.delta_ts.is_empty() {
            return Err(Error::Config("delta_ts is empty".into()));
        }
        if !(self.micro_dt > 0.0) {
            return Err(Error::Config("micro_dt must be positive".into()));
        }
        if !(self.test.horizon > 0.0) {
            return Err(Error::Config("test horizon must be positive".into()));
        }
        for &dt in &self.delta_ts {
            step_count(dt, self.micro_dt)
                .map_err(|_| Error::Config(format!("ΔT = {dt} is not a multiple of micro_dt = {}", self.micro_dt)))?;
            step_count(self.test.horizon, dt)
                .map_err(|_| Error::Config(format!("horizon {} is not a multiple of ΔT = {dt}", self.test.horizon)))?;
        }
        self.greedy.validate().map_err(cfg_err)?;
        let sel = &self.selection;
        if sel.families.is_empty() || sel.epsilons.is_empty() {
            return Err(Error::Config("kernel families and ε grid must be nonempty".into()));
        }
        if let Some(e) = sel.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("ε grid entries must be positive, got {e}")));
        }
        if sel.m_star == Some(0) {
            return Err(Error::Config("m_star must be at least 1".into()));
        }
        if !(sel.validation_fraction > 0.0 && sel.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.test.initial_conditions.count() == 0 {
            return Err(Error::Config("at least one test initial condition is needed".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn greedy(max_centers: usize) -> GreedyConfig {
    GreedyConfig { max_centers, residual_tolerance: 1e-10, record_power_values: true }
}

/// Builds the effective configuration: preset for `(kind, scale)`, overlaid
/// by the TOML text. The text may name the experiment (`experiment = ...`)
/// and scale (`scale = ...`); either must agree with the explicit arguments.
pub fn parse_config(text: Option<&str>, kind: Option<ExperimentKind>, scale: Option<Scale>) -> Result<ExperimentConfig> {
    let mut user: toml::Table = match text {
        Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    let file_kind = match user.get("experiment") {
        Some(v) => Some(v.as_str().ok_or_else(|| Error::Config("'experiment' must be a string".into()))?.parse::<ExperimentKind>()?),
        None => None,
    };
    let file_scale = match user.remove("scale") {
        Some(v) => Some(v.as_str().ok_or_else(|| Error::Config("'scale' must be a string".into()))?.parse::<Scale>()?),
        None => None,
    };
    let kind = match (kind, file_kind) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!("config is for '{}', not '{}'", b.name(), a.name())));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(Error::Config("experiment kind not given".into())),
    };
    let scale = match (scale, file_scale) {
        (Some(a), Some(b)) if a != b => return Err(Error::Config("--scale disagrees with the config file".into())),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => Scale::Desk,
    };
    let mut preset = ExperimentConfig::preset(kind, scale);
    if user.get("scenario").and_then(|v| v.as_str()) == Some("B") {
        preset = preset.scenario_b();
    }
    let mut base = toml::Value::try_from(&preset).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut base, toml::Value::Table(user));
    let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, kind: Option<ExperimentKind>, scale: Option<Scale>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    parse_config(text.as_deref(), kind, scale)
}

/// Tables merge key by key, except that a table whose `kind` tag changes
/// replaces the preset table wholesale.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
