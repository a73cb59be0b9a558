use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gru::{argmax, gru_step, policy_logits, GruParams};
use super::task::{encode_input, is_success, Expert, Intervention, TaskSpec, WorldConfig};
use crate::error::{Error, Result};
use crate::gridworld::{render_observation, step, Action, AgentPose, ConceptRecord, ConceptTracker, ConceptValue, Scene};
use crate::rng;

/// One logged step: the pose the agent acted from, its hidden state after
/// consuming that step's observation, the action taken, and the concepts
/// at that pose.
///
/// `collision` reports whether *this* record's action was blocked, while
/// `concepts.collision` reports whether the action that led to this pose
/// was blocked (the event the hidden state can have observed).
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    pub episode_id: String,
    pub step: usize,
    pub action: Action,
    pub hidden: Vec<f64>,
    pub concepts: ConceptRecord,
    pub pose: AgentPose,
    pub collision: bool,
}

/// JSONL wire form of a [`TimestepRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub episode: String,
    pub step: usize,
    pub action: Action,
    pub collision: bool,
    pub pose: AgentPose,
    pub hidden: Vec<f64>,
    pub concepts: BTreeMap<String, ConceptValue>,
}

impl From<&TimestepRecord> for RecordLine {
    fn from(r: &TimestepRecord) -> Self {
        RecordLine {
            episode: r.episode_id.clone(),
            step: r.step,
            action: r.action,
            collision: r.collision,
            pose: r.pose,
            hidden: r.hidden.clone(),
            concepts: r.concepts.to_map(),
        }
    }
}

impl RecordLine {
    pub fn concept(&self, name: &str) -> Result<f64> {
        self.concepts.get(name).map(|v| v.as_f64()).ok_or_else(|| {
            Error::validation(
                "dataset.concept",
                format!("concept {name:?} missing in episode {} step {}", self.episode, self.step),
            )
        })
    }
}

pub fn write_jsonl(records: &[RecordLine]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str, origin: &str) -> Result<Vec<RecordLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                origin: format!("{origin}:{}", i + 1),
                detail: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    /// Meters traveled.
    pub path_length: f64,
    /// Geodesic meters from the spawn to the success region.
    pub shortest_length: f64,
    pub steps: usize,
}

enum Driver<'a> {
    Policy,
    Forced(&'a [Action]),
}

struct Episode {
    records: Vec<TimestepRecord>,
    outcome: EpisodeOutcome,
}

fn run(
    scene: &Scene,
    task: &TaskSpec,
    p: &GruParams,
    interv: &Intervention,
    world: &WorldConfig,
    episode_id: &str,
    driver: Driver<'_>,
) -> Result<Episode> {
    task.validate(scene)?;
    interv.validate(p.hidden_dim())?;
    let limit = match driver {
        Driver::Policy => task.max_steps,
        Driver::Forced(a) => a.len(),
    };
    let mut noise = rng::derived(interv.noise_seed, episode_id, 0);
    let mut tracker = ConceptTracker::new(scene, &world.metadata, task.target_cell, task.spawn);
    let mut pose = task.spawn;
    let mut h = vec![0.0; p.hidden_dim()];
    let mut prev_collision = false;
    let mut records = Vec::with_capacity(limit);
    let mut path = 0.0;
    let mut success = false;
    for t in 0..limit {
        let concepts = tracker.observe(&pose, prev_collision);
        let obs = render_observation(scene, &pose, task.observed_class(), world.patch, &world.metadata.visibility);
        let x = encode_input(&obs, task, &concepts, interv, p, &mut noise)?;
        h = gru_step(p, &x, &h).h;
        for (&u, &v) in &interv.clamp_units {
            h[u] = v;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite hidden state in episode {episode_id} step {t}")));
        }
        let action = match driver {
            Driver::Policy => Action::from_index(argmax(&policy_logits(p, &h))).expect("six logits"),
            Driver::Forced(actions) => actions[t],
        };
        let res = step(scene, &pose, action, &world.motion)?;
        records.push(TimestepRecord {
            episode_id: episode_id.to_string(),
            step: t,
            action,
            hidden: h.clone(),
            concepts,
            pose,
            collision: res.collision,
        });
        if res.done {
            success = is_success(scene, task, &pose, world);
            break;
        }
        if res.pose.cell(scene) != pose.cell(scene) {
            path += scene.grid_size();
        }
        pose = res.pose;
        prev_collision = res.collision;
    }
    let shortest = Expert::new(scene, task, world)
        .distance(task.spawn.cell(scene))
        .map(|d| d as f64 * scene.grid_size())
        .unwrap_or(f64::INFINITY);
    let outcome = EpisodeOutcome { success, path_length: path, shortest_length: shortest, steps: records.len() };
    Ok(Episode { records, outcome })
}

/// Runs the greedy policy until it issues `End` or `max_steps` elapse.
pub fn rollout_policy(
    scene: &Scene,
    task: &TaskSpec,
    p: &GruParams,
    interv: &Intervention,
    world: &WorldConfig,
    episode_id: &str,
) -> Result<(EpisodeOutcome, Vec<TimestepRecord>)> {
    let ep = run(scene, task, p, interv, world, episode_id, Driver::Policy)?;
    Ok((ep.outcome, ep.records))
}

/// Feeds a fixed action sequence through the agent, logging its hidden
/// state and the concepts at every step.
pub fn rollout_forced(
    scene: &Scene,
    task: &TaskSpec,
    p: &GruParams,
    actions: &[Action],
    interv: &Intervention,
    world: &WorldConfig,
    episode_id: &str,
) -> Result<Vec<TimestepRecord>> {
    if actions.len() > task.max_steps {
        return Err(Error::validation(
            "rollout.length",
            format!("{} actions exceed max_steps {}", actions.len(), task.max_steps),
        ));
    }
    Ok(run(scene, task, p, interv, world, episode_id, Driver::Forced(actions))?.records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::gru::GruShape;
    use crate::agent::task::{expert_actions, TaskMode};
    use crate::gridworld::{Cell, ObjectInstance};

    fn scene() -> Scene {
        let cells: Vec<Cell> = (1..9).flat_map(|z| (1..9).map(move |x| (x, z))).collect();
        Scene::new("r", 0.25, 10, 10, cells, vec![ObjectInstance { class_id: 0, cell: (6, 6) }], vec![]).unwrap()
    }

    fn task(s: &Scene) -> TaskSpec {
        TaskSpec {
            mode: TaskMode::ObjectNav,
            scene_id: "r".into(),
            spawn: AgentPose::at_cell(s, (1, 1), 0),
            target_class: Some(0),
            target_cell: (6, 6),
            success_distance: 1.0,
            max_steps: 500,
        }
    }

    fn params(w: &WorldConfig, seed: u64) -> GruParams {
        GruParams::init(GruShape { input_dim: w.obs_dim() + 8, hidden_dim: 16, n_classes: 1, goal_dim: 8 }, seed)
    }

    #[test]
    fn forced_expert_replay_succeeds() {
        let s = scene();
        let w = WorldConfig::default();
        let t = task(&s);
        let actions = expert_actions(&s, &t, &w).unwrap();
        let recs = rollout_forced(&s, &t, &params(&w, 1), &actions, &Intervention::default(), &w, "e").unwrap();
        assert_eq!(recs.len(), actions.len());
        let last = recs.last().unwrap();
        assert_eq!(last.action, Action::End);
        assert!(last.concepts.visible_t && last.concepts.r_t <= 1.0);
    }

    #[test]
    fn empty_action_list_gives_no_records() {
        let s = scene();
        let w = WorldConfig::default();
        let recs = rollout_forced(&s, &task(&s), &params(&w, 1), &[], &Intervention::default(), &w, "e").unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn concept_streams_do_not_depend_on_params() {
        let s = scene();
        let w = WorldConfig::default();
        let actions = [Action::MoveAhead, Action::RotateRight, Action::MoveAhead, Action::MoveAhead, Action::LookUp];
        let a = rollout_forced(&s, &task(&s), &params(&w, 1), &actions, &Intervention::default(), &w, "e").unwrap();
        let b = rollout_forced(&s, &task(&s), &params(&w, 2), &actions, &Intervention::default(), &w, "e").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.concepts, y.concepts);
            assert_eq!(x.pose, y.pose);
            assert_ne!(x.hidden, y.hidden);
        }
    }

    #[test]
    fn wall_hit_is_flagged() {
        let s = scene();
        let w = WorldConfig::default();
        let t = TaskSpec { spawn: AgentPose::at_cell(&s, (1, 1), 180), ..task(&s) };
        let recs = rollout_forced(&s, &t, &params(&w, 1), &[Action::MoveAhead, Action::RotateLeft], &Intervention::default(), &w, "e").unwrap();
        assert!(recs[0].collision);
        assert!(!recs[0].concepts.collision);
        assert!(recs[1].concepts.collision);
        assert_eq!(recs[0].pose, recs[1].pose);
    }

    #[test]
    fn clamping_everything_freezes_the_policy() {
        let s = scene();
        let w = WorldConfig::default();
        let p = params(&w, 3);
        let interv = Intervention { clamp_units: (0..16).map(|u| (u, 0.0)).collect(), ..Default::default() };
        let (_, recs) = rollout_policy(&s, &task(&s), &p, &interv, &w, "e").unwrap();
        let first = recs[0].action;
        assert!(recs.iter().all(|r| r.action == first && r.hidden.iter().all(|&v| v == 0.0)));
        assert_eq!(first, Action::from_index(argmax(&p.policy_b.data)).unwrap());
    }

    #[test]
    fn exhausted_episodes_fail() {
        let s = scene();
        let w = WorldConfig::default();
        let mut p = params(&w, 4);
        // always rotate
        p.policy_w.scale(0.0);
        p.policy_b.data = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (out, recs) = rollout_policy(&s, &task(&s), &p, &Intervention::default(), &w, "e").unwrap();
        assert!(!out.success);
        assert_eq!(out.steps, 500);
        assert_eq!(recs.len(), 500);
        assert_eq!(out.path_length, 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = scene();
        let w = WorldConfig::default();
        let recs = rollout_forced(&s, &task(&s), &params(&w, 1), &[Action::MoveAhead; 3], &Intervention::default(), &w, "e").unwrap();
        let lines: Vec<RecordLine> = recs.iter().map(RecordLine::from).collect();
        let text = write_jsonl(&lines);
        assert_eq!(read_jsonl(&text, "mem").unwrap(), lines);
        assert_eq!(text.lines().count(), 3);
    }
}
