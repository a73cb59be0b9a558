//! End-to-end experiment steps on in-memory data, plus the artifact-writing
//! stages built on them.

mod stages;

use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{
    bc_train, explorer_actions, model_shape, rollout_forced, sample_tasks, GruParams, GruShape, Intervention, RecordLine,
    TaskSpec, TrainConfig, TrainOutput,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gridworld::{gen_scene, Action, Scene};
use crate::probe::{all_concepts, ProbeDataset, SplitManifest};
use crate::rng;
use crate::shap::{aggregate_and_rank, beeswarm_export, explain_rows, BeeswarmRow, ShapExplanation, UnitRanking};
use crate::gbt::TreeEnsemble;

pub use stages::{ModelEntry, Workspace};

fn draw_seed(seed: u64, label: &str, index: u64) -> u64 {
    rng::derived(seed, label, index).random()
}

pub fn make_scenes(cfg: &RunConfig) -> Result<Vec<Scene>> {
    (0..cfg.scene.count)
        .map(|i| gen_scene(format!("scene{i:02}"), draw_seed(cfg.seed, "scene", i as u64), &cfg.scene.gen))
        .collect()
}

pub fn agent_shape(cfg: &RunConfig) -> GruShape {
    model_shape(&cfg.agent.tasks, &cfg.world, cfg.agent.hidden_dim, cfg.scene.gen.vocab, cfg.agent.goal_dim)
}

pub fn train_config(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed: draw_seed(cfg.seed, "train", seed), ..cfg.agent.train.clone() }
}

/// Behavior-cloned agent for one model seed.
pub fn train_agent(cfg: &RunConfig, scenes: &[Scene], seed: u64) -> Result<TrainOutput> {
    bc_train(scenes, &cfg.agent.tasks, &train_config(cfg, seed), &cfg.world, agent_shape(cfg))
}

/// Untrained baseline: the initialization the trained agent of `seed` starts from.
pub fn random_agent(cfg: &RunConfig, seed: u64) -> GruParams {
    GruParams::init(agent_shape(cfg), train_config(cfg, seed).seed)
}

pub fn model_tag(cfg: &RunConfig, trained: bool, seed: u64) -> String {
    format!("{}-{}-s{seed}", cfg.agent.mode.name(), if trained { "trained" } else { "random" })
}

/// One explorer trajectory with the task whose concepts it is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreEpisode {
    pub id: String,
    pub task: TaskSpec,
    pub actions: Vec<Action>,
}

/// Shared explorer trajectories and their episode-level split. The first
/// `train_episodes` are training episodes.
pub fn explore(cfg: &RunConfig, scenes: &[Scene]) -> Result<(Vec<ExploreEpisode>, SplitManifest)> {
    let t = &cfg.trajectory;
    let n = t.train_episodes + t.val_episodes;
    let tasks = sample_tasks(scenes, &cfg.agent.tasks, n, t.seed, "explore-tasks")?;
    let mut episodes = Vec::with_capacity(n);
    for (i, task) in tasks.into_iter().enumerate() {
        let scene = find_scene(scenes, &task.scene_id)?;
        let actions =
            explorer_actions(scene, &task.spawn, draw_seed(t.seed, "explore", i as u64), &t.explorer, &cfg.world.motion)?;
        episodes.push(ExploreEpisode { id: format!("ep{i:03}"), task, actions });
    }
    let ids: Vec<String> = episodes.iter().map(|e| e.id.clone()).collect();
    let manifest = SplitManifest { train: ids[..t.train_episodes].to_vec(), val: ids[t.train_episodes..].to_vec() };
    Ok((episodes, manifest))
}

pub fn find_scene<'a>(scenes: &'a [Scene], id: &str) -> Result<&'a Scene> {
    scenes
        .iter()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::validation("task.scene", format!("unknown scene {id}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sensor {
    Full,
    GpsNoise,
    ImageZero,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Full, Sensor::GpsNoise, Sensor::ImageZero];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Full => "full",
            Sensor::GpsNoise => "gps-noise",
            Sensor::ImageZero => "image-zero",
        }
    }

    pub fn intervention(self, noise_seed: u64) -> Intervention {
        Intervention {
            gps_noise: self == Sensor::GpsNoise,
            image_zero: self == Sensor::ImageZero,
            noise_seed,
            ..Intervention::default()
        }
    }
}

impl FromStr for Sensor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Sensor::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sensor {s:?} (full|gps-noise|image-zero)")))
    }
}

/// Forced rollouts of `p` over every episode, in episode order.
pub fn collect(
    scenes: &[Scene],
    episodes: &[ExploreEpisode],
    p: &GruParams,
    interv: &Intervention,
    world: &crate::agent::WorldConfig,
) -> Result<Vec<RecordLine>> {
    use rayon::prelude::*;
    let per_episode: Vec<Vec<RecordLine>> = episodes
        .par_iter()
        .map(|ep| {
            let scene = find_scene(scenes, &ep.task.scene_id)?;
            let recs = rollout_forced(scene, &ep.task, p, &ep.actions, interv, world, &ep.id)?;
            Ok(recs.iter().map(RecordLine::from).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

/// Concepts selected by the probe section, expanded and in report order.
pub fn probe_concepts(cfg: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    for c in &cfg.probe.concepts {
        if c == "all" {
            out.extend(all_concepts(&cfg.world.metadata.reach));
        } else if !out.contains(c) {
            out.push(c.clone());
        }
    }
    if cfg.probe.circular {
        for base in ["theta_t", "theta_a"] {
            out.extend([format!("{base}.sin"), format!("{base}.cos")]);
        }
    }
    out
}

/// Records of the manifest's training episodes.
pub fn training_records(records: &[RecordLine], manifest: &SplitManifest) -> Vec<RecordLine> {
    let train: std::collections::BTreeSet<&str> = manifest.train.iter().map(String::as_str).collect();
    records.iter().filter(|r| train.contains(r.episode.as_str())).cloned().collect()
}

pub struct Explained {
    pub explanations: Vec<ShapExplanation>,
    /// Hidden vectors of the explained rows.
    pub activations: Vec<Vec<f64>>,
    pub ranking: UnitRanking,
    pub beeswarm: Vec<BeeswarmRow>,
}

/// Explains up to `max_examples` evenly strided validation rows.
pub fn explain_probe(e: &TreeEnsemble, ds: &ProbeDataset, max_examples: usize, top_k: usize) -> Result<Explained> {
    let n = ds.x_val.len();
    if n == 0 {
        return Err(Error::validation("explain.rows", format!("no validation rows for {}", ds.concept)));
    }
    let take = max_examples.min(n);
    let picks: Vec<usize> = (0..take).map(|i| i * n / take).collect();
    let rows: Vec<Vec<f64>> = picks.iter().map(|&i| ds.x_val[i].clone()).collect();
    let ids: Vec<String> = picks.iter().map(|&i| ds.val_ids[i].clone()).collect();
    let explanations = explain_rows(e, &rows, &ids)?;
    let ranking = aggregate_and_rank(&explanations, &ds.concept)?;
    let beeswarm = beeswarm_export(&explanations, &rows, &ranking, top_k.min(e.n_features))?;
    Ok(Explained { explanations, activations: rows, ranking, beeswarm })
}

/// Evaluation episodes for ablation runs.
pub fn eval_tasks(cfg: &RunConfig, scenes: &[Scene]) -> Result<Vec<TaskSpec>> {
    sample_tasks(scenes, &cfg.agent.tasks, cfg.ablation.eval_episodes, cfg.ablation.eval_seed, "eval-tasks")
}
