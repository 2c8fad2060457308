//! Scenario configuration: TOML serialization, validation, builtin
//! scenarios, and the config hash used by run manifests.

use crate::error::{Error, Result};
use crate::sim::Behavior;
use crate::training::ModelKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How servers choose their six strategy values each interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyMode {
    /// All-ones strategy every round (the plain-averaging baseline).
    Fixed,
    /// Uniform within bounds each round after the first.
    Random,
    /// One DDPG agent per server over the shared replay buffer.
    Learned,
}

impl std::fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StrategyMode::Fixed => write!(f, "fixed"),
            StrategyMode::Random => write!(f, "random"),
            StrategyMode::Learned => write!(f, "learned"),
        }
    }
}

impl std::str::FromStr for StrategyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(StrategyMode::Fixed),
            "random" => Ok(StrategyMode::Random),
            "learned" => Ok(StrategyMode::Learned),
            other => Err(Error::Config(format!("unknown strategy mode: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: ModelKind,
    pub classes: usize,
    pub dim: usize,
    pub train: usize,
    pub test: usize,
    pub separation: f64,
    pub noise: f64,
    /// Dirichlet concentration of the Non-IID partition (small = skewed).
    pub partition_alpha: f64,
    pub lr: f64,
    /// Hidden width when `kind = "mlp"`.
    #[serde(default)]
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Block interval F: simulated time between global aggregations.
    pub block_interval: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Per-phase timeout as a fraction of the block interval.
    pub phase_timeout_frac: f64,
    /// Largest tolerated absolute model coordinate during validation.
    pub anomaly_norm_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// Signed offload penalty coefficient. Negative makes uploads costly
    /// (the default, -4); +4 reproduces the literal additive form.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrlConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub capacity: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub hidden: usize,
    pub noise_scale: f64,
}

impl Default for DrlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.01,
            batch: 32,
            capacity: 10_000,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            hidden: 32,
            noise_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Default link latency in simulated time units.
    pub latency: f64,
    /// Message loss probability (applies to honest links too).
    pub loss_prob: f64,
}

/// One edge server: its trainers' CPU speeds and its fault behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub cpu_speeds: Vec<f64>,
    #[serde(default)]
    pub fault: Behavior,
}

/// Early-stop demonstration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Number of aggregation rounds in both runs.
    pub aggregations: u32,
    /// Epoch cap of the capped run.
    pub cap_epochs: f64,
    /// Till-converge stop: epoch-over-epoch loss improvement below this.
    pub converge_tol: f64,
    pub converge_max_epochs: u32,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            aggregations: 20,
            cap_epochs: 2.0,
            converge_tol: 1e-4,
            converge_max_epochs: 200,
        }
    }
}

/// A full scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: u64,
    pub strategy: StrategyMode,
    pub task: TaskConfig,
    pub consensus: ConsensusConfig,
    pub aggregation: AggregationConfig,
    pub reward: RewardConfig,
    pub drl: DrlConfig,
    pub network: NetworkConfig,
    #[serde(rename = "server")]
    pub servers: Vec<ServerConfig>,
    #[serde(default)]
    pub earlystop: EarlyStopConfig,
}

impl ScenarioConfig {
    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn total_trainers(&self) -> usize {
        self.servers.iter().map(|s| s.cpu_speeds.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers.is_empty() {
            return Err(Error::Config("need at least one server".into()));
        }
        for (i, s) in self.servers.iter().enumerate() {
            if s.cpu_speeds.is_empty() {
                return Err(Error::Config(format!("server {i} has no trainers")));
            }
            if s.cpu_speeds.iter().any(|c| *c <= 0.0) {
                return Err(Error::Config(format!(
                    "server {i} has a nonpositive cpu speed"
                )));
            }
        }
        if self.consensus.block_interval <= 0.0 {
            return Err(Error::Config("block interval must be > 0".into()));
        }
        if !(self.consensus.delta1 > self.consensus.delta2 && self.consensus.delta2 > 0.0) {
            return Err(Error::Config("need delta1 > delta2 > 0".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("need at least one round".into()));
        }
        if self.task.classes < 2 || self.task.dim == 0 {
            return Err(Error::Config("degenerate task".into()));
        }
        if self.task.kind == ModelKind::Mlp && self.task.hidden == 0 {
            return Err(Error::Config("mlp task needs hidden > 0".into()));
        }
        if !(self.task.partition_alpha > 0.0) {
            return Err(Error::Config("partition_alpha must be > 0".into()));
        }
        let faulty = self
            .servers
            .iter()
            .filter(|s| s.fault != Behavior::Honest)
            .count();
        let n = self.servers.len();
        if n > 1 && faulty > (n - 1) / 3 {
            log::warn!(
                "{faulty} non-honest servers exceeds the safety bound floor((N-1)/3) = {}",
                (n - 1) / 3
            );
        }
        Ok(())
    }

    /// Canonical TOML form; parsing it back yields an identical config.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the canonical serialization; any config edit changes it.
    pub fn config_hash(&self) -> Result<String> {
        let canon = self.to_canonical_toml()?;
        let digest = Sha256::digest(canon.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn default_task() -> TaskConfig {
    TaskConfig {
        kind: ModelKind::Linear,
        classes: 3,
        dim: 4,
        train: 600,
        test: 300,
        separation: 3.0,
        noise: 1.0,
        partition_alpha: 0.5,
        lr: 0.05,
        hidden: 0,
    }
}

fn default_consensus() -> ConsensusConfig {
    ConsensusConfig {
        block_interval: 2.0,
        delta1: 2.0,
        delta2: 1.0,
        phase_timeout_frac: 0.25,
        anomaly_norm_bound: 1e3,
    }
}

/// The five-server topology: 2, 4, 6, 8 and 10 trainers with fixed
/// heterogeneous CPU speeds.
fn paper5_servers() -> Vec<ServerConfig> {
    let speeds: [&[f64]; 5] = [
        &[1.0, 0.5],
        &[2.5, 2.0, 3.0, 2.0],
        &[2.5, 3.0, 0.5, 0.5, 3.0, 3.0],
        &[3.0, 2.5, 2.0, 2.5, 3.5, 3.5, 3.0, 3.5],
        &[2.0, 3.5, 2.0, 1.0, 0.5, 2.0, 3.5, 1.0, 3.5, 3.5],
    ];
    speeds
        .iter()
        .map(|cpu| ServerConfig {
            cpu_speeds: cpu.to_vec(),
            fault: Behavior::Honest,
        })
        .collect()
}

/// Named builtin scenarios.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![builtin("paper5"), builtin("byzantine5"), builtin("tiny")]
}

/// Look up one builtin by name.
pub fn builtin(name: &str) -> ScenarioConfig {
    match name {
        "paper5" => ScenarioConfig {
            name: "paper5".into(),
            seed: 1,
            rounds: 40,
            strategy: StrategyMode::Learned,
            task: default_task(),
            consensus: default_consensus(),
            aggregation: AggregationConfig { sigma: -4.0 },
            reward: RewardConfig { p: 1.0, q: 1.0 },
            drl: DrlConfig::default(),
            network: NetworkConfig {
                latency: 0.0,
                loss_prob: 0.0,
            },
            servers: paper5_servers(),
            earlystop: EarlyStopConfig::default(),
        },
        "byzantine5" => {
            let mut cfg = builtin("paper5");
            cfg.name = "byzantine5".into();
            // First server (2 trainers) is the malicious node: it neither
            // trains nor answers consensus traffic.
            cfg.servers[0].fault = Behavior::Silent;
            cfg
        }
        "tiny" => {
            let mut cfg = builtin("paper5");
            cfg.name = "tiny".into();
            cfg.rounds = 5;
            cfg.strategy = StrategyMode::Fixed;
            cfg.task.train = 120;
            cfg.task.test = 60;
            cfg.servers = vec![
                ServerConfig {
                    cpu_speeds: vec![1.0, 2.0],
                    fault: Behavior::Honest,
                },
                ServerConfig {
                    cpu_speeds: vec![0.5, 3.0],
                    fault: Behavior::Honest,
                },
            ];
            cfg
        }
        other => panic!("unknown builtin scenario: {other}"),
    }
}

/// Builtin lookup that reports unknown names as errors.
pub fn builtin_checked(name: &str) -> Result<ScenarioConfig> {
    match name {
        "paper5" | "byzantine5" | "tiny" => Ok(builtin(name)),
        other => Err(Error::Config(format!(
            "unknown builtin scenario '{other}' (have: paper5, byzantine5, tiny)"
        ))),
    }
}
