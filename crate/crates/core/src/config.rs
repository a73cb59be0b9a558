//! Run configuration shared by every pipeline stage.

use serde::{Deserialize, Serialize};

use crate::ablate::SweepConfig;
use crate::agent::{ExplorerConfig, TaskMode, TaskSampler, TrainConfig, WorldConfig};
use crate::error::{Error, Result};
use crate::gbt::GbtParams;
use crate::gridworld::GenParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub count: usize,
    #[serde(flatten)]
    pub gen: GenParams,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection { count: 6, gen: GenParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub mode: TaskMode,
    pub hidden_dim: usize,
    pub goal_dim: usize,
    /// One trained model (and one random-init baseline) per seed.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub tasks: TaskSampler,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            mode: TaskMode::ObjectNav,
            hidden_dim: 64,
            goal_dim: 8,
            seeds: vec![0],
            train: TrainConfig::default(),
            tasks: TaskSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub train_episodes: usize,
    pub val_episodes: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub explorer: ExplorerConfig,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection { train_episodes: 20, val_episodes: 14, seed: 0, explorer: ExplorerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// Concept names; `["all"]` selects every logged concept.
    pub concepts: Vec<String>,
    /// Also probe sin/cos encodings of the angle concepts.
    pub circular: bool,
    /// Concepts tracked across training checkpoints.
    pub sweep_concepts: Vec<String>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            concepts: vec!["all".into()],
            circular: false,
            sweep_concepts: ["visible_t", "visited_l", "reach_2_000"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub concepts: Vec<String>,
    /// Validation rows explained per concept, evenly strided.
    pub max_examples: usize,
    /// Units exported to the beeswarm table.
    pub top_k: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection { concepts: vec!["visible_t".into(), "reach_2_000".into()], max_examples: 500, top_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub eval_episodes: usize,
    pub eval_seed: u64,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection { eval_episodes: 50, eval_seed: 1, sweep: SweepConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; required.
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub gbt: GbtParams,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            scene: SceneSection::default(),
            world: WorldConfig::default(),
            agent: AgentSection::default(),
            trajectory: TrajectorySection::default(),
            gbt: GbtParams::default(),
            probe: ProbeSection::default(),
            explain: ExplainSection::default(),
            ablation: AblationSection::default(),
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scene.count == 0 {
            return bad("scene.count must be positive");
        }
        if self.world.patch % 2 == 0 || self.world.patch == 0 {
            return bad("world.patch must be odd");
        }
        if self.agent.hidden_dim == 0 {
            return bad("agent.hidden_dim must be positive");
        }
        if self.agent.seeds.is_empty() {
            return bad("agent.seeds must list at least one seed");
        }
        if self.agent.tasks.mode != self.agent.mode {
            return bad("agent.tasks.mode must match agent.mode");
        }
        if self.trajectory.train_episodes == 0 || self.trajectory.val_episodes == 0 {
            return bad("trajectory needs training and validation episodes");
        }
        if self.agent.tasks.max_steps < self.trajectory.explorer.len_cap {
            return bad("trajectory.len_cap exceeds agent.tasks.max_steps");
        }
        self.trajectory.explorer.validate()?;
        self.gbt.validate()?;
        if self.explain.max_examples == 0 {
            return bad("explain.max_examples must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::from_toml("[scene]\ncount = 2\n", "t").is_err());
        let cfg = RunConfig::from_toml("seed = 4\n", "t").unwrap();
        assert_eq!(cfg, RunConfig::with_seed(4));
    }

    #[test]
    fn round_trip_and_unknown_keys() {
        let mut cfg = RunConfig::with_seed(1);
        cfg.agent.seeds = vec![1, 2, 3];
        cfg.gbt.rounds = 7;
        let back = RunConfig::from_toml(&cfg.to_toml(), "t").unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::from_toml("seed = 1\n[gbt]\ndepth = 3\n", "t").is_err());
        assert!(RunConfig::from_toml("seed = 1\n[world]\npatch = 8\n", "t").is_err());
    }
}
