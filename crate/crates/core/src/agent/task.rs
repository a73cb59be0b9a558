use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gru::GruParams;
use crate::error::{Error, Result};
use crate::gridworld::{
    target_metadata, Action, AgentPose, Cell, ConceptRecord, DistanceField, MetadataConfig, MotionConfig, Scene,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    ObjectNav,
    PointNav,
}

impl TaskMode {
    pub fn name(self) -> &'static str {
        match self {
            TaskMode::ObjectNav => "objectnav",
            TaskMode::PointNav => "pointnav",
        }
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objectnav" => Ok(TaskMode::ObjectNav),
            "pointnav" => Ok(TaskMode::PointNav),
            other => Err(Error::Config(format!("unknown mode {other:?} (objectnav|pointnav)"))),
        }
    }
}

/// Environment settings shared by every rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub motion: MotionConfig,
    pub metadata: MetadataConfig,
    /// Side of the egocentric observation patch (odd).
    pub patch: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { motion: MotionConfig::default(), metadata: MetadataConfig::default(), patch: 7 }
    }
}

impl WorldConfig {
    pub fn obs_dim(&self) -> usize {
        2 * self.patch * self.patch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub mode: TaskMode,
    pub scene_id: String,
    pub spawn: AgentPose,
    /// Goal class for object-goal episodes.
    pub target_class: Option<usize>,
    /// Object cell (object goal) or goal cell (point goal).
    pub target_cell: Cell,
    pub success_distance: f64,
    pub max_steps: usize,
}

impl TaskSpec {
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::validation("task.max_steps", "max_steps must be positive"));
        }
        match self.mode {
            TaskMode::ObjectNav => {
                let class = self
                    .target_class
                    .ok_or_else(|| Error::validation("task.target", "object-goal task without a class"))?;
                if !scene.objects().iter().any(|o| o.class_id == class && o.cell == self.target_cell) {
                    return Err(Error::validation("task.target", format!("no object of class {class} at {:?}", self.target_cell)));
                }
            }
            TaskMode::PointNav => {
                if !scene.is_reachable(self.target_cell) {
                    return Err(Error::validation("task.target", format!("goal cell {:?} is not reachable", self.target_cell)));
                }
            }
        }
        Ok(())
    }

    /// Observation target channel class; point-goal agents see no target mask.
    pub fn observed_class(&self) -> Option<usize> {
        match self.mode {
            TaskMode::ObjectNav => self.target_class,
            TaskMode::PointNav => None,
        }
    }

    pub fn suffix_dim(&self, p: &GruParams) -> usize {
        match self.mode {
            TaskMode::ObjectNav => p.goal_table.cols,
            TaskMode::PointNav => 3,
        }
    }
}

/// Inference-time manipulation of a rollout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    /// Hidden units overwritten after every recurrent update.
    pub clamp_units: BTreeMap<usize, f64>,
    /// Replace the distance/bearing sensor with standard-normal draws.
    pub gps_noise: bool,
    /// Replace the observation patches with zeros.
    pub image_zero: bool,
    pub noise_seed: u64,
}

impl Intervention {
    pub fn validate(&self, hidden_dim: usize) -> Result<()> {
        if let Some((&u, _)) = self.clamp_units.iter().find(|(&u, _)| u >= hidden_dim) {
            return Err(Error::validation("intervention.units", format!("unit {u} >= hidden size {hidden_dim}")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.clamp_units.is_empty() && !self.gps_noise && !self.image_zero
    }
}

/// Point-goal sensor triple `[R_t, sin θ_t, cos θ_t]`.
pub fn gps_triple(concepts: &ConceptRecord) -> [f64; 3] {
    let th = concepts.theta_t.to_radians();
    [concepts.r_t, th.sin(), th.cos()]
}

/// Network input for one step: observation followed by the goal embedding
/// (object goal) or the distance/bearing sensor (point goal).
pub fn encode_input(
    obs: &[f64],
    task: &TaskSpec,
    concepts: &ConceptRecord,
    interv: &Intervention,
    p: &GruParams,
    noise: &mut Rng,
) -> Result<Vec<f64>> {
    let expected = p.input_dim();
    if obs.len() + task.suffix_dim(p) != expected {
        return Err(Error::Dimension { context: "encode_input", expected, got: obs.len() + task.suffix_dim(p) });
    }
    let mut x = Vec::with_capacity(expected);
    if interv.image_zero {
        x.resize(obs.len(), 0.0);
    } else {
        x.extend_from_slice(obs);
    }
    match task.mode {
        TaskMode::ObjectNav => {
            let class = task.target_class.unwrap_or(usize::MAX);
            if class >= p.goal_table.rows {
                return Err(Error::validation("task.class", format!("unknown class id {class}")));
            }
            x.extend_from_slice(p.goal_table.row(class));
        }
        TaskMode::PointNav => {
            if interv.gps_noise {
                for _ in 0..3 {
                    x.push(StandardNormal.sample(noise));
                }
            } else {
                x.extend_from_slice(&gps_triple(concepts));
            }
        }
    }
    Ok(x)
}

/// Success test applied when the agent issues `End` at `pose`.
pub fn is_success(scene: &Scene, task: &TaskSpec, pose: &AgentPose, world: &WorldConfig) -> bool {
    let t = target_metadata(scene, pose, task.target_cell, &world.metadata.visibility);
    match task.mode {
        TaskMode::ObjectNav => t.visible_t && t.r_t <= task.success_distance + 1e-9,
        TaskMode::PointNav => t.r_t <= task.success_distance + 1e-9,
    }
}

/// Shortest-path expert: walks the BFS geodesic to the nearest cell from
/// which the episode can succeed, turning before moving, and ends as soon
/// as the success test holds.
#[derive(Debug, Clone)]
pub struct Expert<'a> {
    scene: &'a Scene,
    task: &'a TaskSpec,
    world: &'a WorldConfig,
    field: DistanceField,
}

impl<'a> Expert<'a> {
    pub fn new(scene: &'a Scene, task: &'a TaskSpec, world: &'a WorldConfig) -> Self {
        let step = world.motion.rotation_step;
        let goals: Vec<Cell> = scene
            .reachable()
            .iter()
            .copied()
            .filter(|&c| {
                (0..360).step_by(step as usize).any(|rot| is_success(scene, task, &AgentPose::at_cell(scene, c, rot), world))
            })
            .collect();
        Expert { scene, task, world, field: DistanceField::from_sources(scene, goals) }
    }

    /// Remaining geodesic distance in cells to the success region.
    pub fn distance(&self, cell: Cell) -> Option<u32> {
        self.field.get(cell)
    }

    pub fn action(&self, pose: &AgentPose) -> Action {
        if is_success(self.scene, self.task, pose, self.world) {
            return Action::End;
        }
        let cell = pose.cell(self.scene);
        match self.field.get(cell) {
            Some(0) => {
                // inside the success region but facing away from the target
                let t = target_metadata(self.scene, pose, self.task.target_cell, &self.world.metadata.visibility);
                if t.theta_t <= 180.0 {
                    Action::RotateRight
                } else {
                    Action::RotateLeft
                }
            }
            Some(d) => head_towards(self.scene, pose, |c| self.field.get(c) == Some(d - 1)),
            None => Action::End,
        }
    }
}

/// Picks the move toward a neighbouring cell accepted by `accept`,
/// preferring straight ahead, then right, then left, then behind.
pub(crate) fn head_towards(scene: &Scene, pose: &AgentPose, accept: impl Fn(Cell) -> bool) -> Action {
    let cell = pose.cell(scene);
    let mut best: Option<((i32, bool), i32)> = None;
    for heading in [0, 90, 180, 270] {
        let rad = (heading as f64).to_radians();
        let n = (cell.0 + rad.sin().round() as i32, cell.1 + rad.cos().round() as i32);
        if !scene.is_reachable(n) || !accept(n) {
            continue;
        }
        let delta = (heading - pose.rotation).rem_euclid(360);
        let key = (delta.min(360 - delta), delta > 180);
        if best.is_none_or(|(k, _)| key < k) {
            best = Some((key, delta));
        }
    }
    match best {
        Some((_, 0)) => Action::MoveAhead,
        Some((_, d)) if d <= 180 => Action::RotateRight,
        Some(_) => Action::RotateLeft,
        None => Action::RotateRight,
    }
}

/// Expert action sequence from the spawn, ending with `End` (or truncated
/// at `max_steps`).
pub fn expert_actions(scene: &Scene, task: &TaskSpec, world: &WorldConfig) -> Result<Vec<Action>> {
    let expert = Expert::new(scene, task, world);
    if expert.distance(task.spawn.cell(scene)).is_none() {
        return Err(Error::validation("task.solvable", format!("no path to the goal in scene {}", scene.id())));
    }
    let mut pose = task.spawn;
    let mut actions = Vec::new();
    while actions.len() < task.max_steps {
        let a = expert.action(&pose);
        actions.push(a);
        if a == Action::End {
            break;
        }
        pose = crate::gridworld::step(scene, &pose, a, &world.motion)?.pose;
    }
    Ok(actions)
}
