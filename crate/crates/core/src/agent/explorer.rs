use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::task::head_towards;
use crate::error::{Error, Result};
use crate::gridworld::{step, Action, AgentPose, Cell, DistanceField, MotionConfig, Scene};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorerConfig {
    pub len_cap: usize,
    /// Chance of picking an already visited cell as the next waypoint.
    pub revisit_bias: f64,
    /// Chance per decision of turning to an adjacent wall and walking into it.
    pub collision_rate: f64,
    /// Chance per decision of tilting the camera.
    pub look_rate: f64,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig { len_cap: 500, revisit_bias: 0.15, collision_rate: 0.05, look_rate: 0.05 }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        let p = [self.revisit_bias, self.collision_rate, self.look_rate];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || self.collision_rate + self.look_rate > 1.0 {
            return Err(Error::Config("explorer probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Seeded coverage walk from `start`.
///
/// The walker heads for the nearest unvisited cell, occasionally retargets
/// a visited one, tilts the camera, or bumps into an adjacent wall on
/// purpose. It never issues `End`, so the list always has `len_cap` actions.
pub fn explorer_actions(
    scene: &Scene,
    start: &AgentPose,
    seed: u64,
    cfg: &ExplorerConfig,
    motion: &MotionConfig,
) -> Result<Vec<Action>> {
    cfg.validate()?;
    let mut rng = rng::derived(seed, "explorer", 0);
    let mut pose = *start;
    let mut visited: BTreeSet<Cell> = BTreeSet::from([pose.cell(scene)]);
    let mut waypoint: Option<(Cell, DistanceField)> = None;
    let mut queued: Vec<Action> = Vec::new();
    let mut actions = Vec::with_capacity(cfg.len_cap);
    while actions.len() < cfg.len_cap {
        let here = pose.cell(scene);
        let action = if let Some(a) = queued.pop() {
            a
        } else {
            let u: f64 = rng.random();
            if u < cfg.collision_rate && wall_adjacent(scene, here) {
                let mut plan = vec![Action::MoveAhead];
                let turn = head_towards_wall(scene, &pose);
                plan.extend(std::iter::repeat_n(turn.0, turn.1));
                queued = plan;
                queued.pop().expect("plan is nonempty")
            } else if u < cfg.collision_rate + cfg.look_rate {
                if rng.random_bool(0.5) {
                    Action::LookUp
                } else {
                    Action::LookDown
                }
            } else {
                if waypoint.as_ref().is_none_or(|(w, _)| *w == here) {
                    let w = pick_waypoint(scene, here, &visited, cfg.revisit_bias, &mut rng);
                    waypoint = Some((w, DistanceField::from_sources(scene, [w])));
                }
                let (_, field) = waypoint.as_ref().expect("waypoint set");
                let d = field.get(here).expect("scene is connected");
                head_towards(scene, &pose, |c| field.get(c) == Some(d.saturating_sub(1)))
            }
        };
        pose = step(scene, &pose, action, motion)?.pose;
        visited.insert(pose.cell(scene));
        actions.push(action);
    }
    Ok(actions)
}

fn wall_adjacent(scene: &Scene, (x, z): Cell) -> bool {
    [(0, 1), (1, 0), (0, -1), (-1, 0)].iter().any(|(dx, dz)| !scene.is_reachable((x + dx, z + dz)))
}

/// Shortest turn (action, repetitions) that faces an adjacent blocked cell.
fn head_towards_wall(scene: &Scene, pose: &AgentPose) -> (Action, usize) {
    let cell = pose.cell(scene);
    let mut best: Option<(i32, Action, usize)> = None;
    for heading in [0, 90, 180, 270] {
        let rad = (heading as f64).to_radians();
        let n = (cell.0 + rad.sin().round() as i32, cell.1 + rad.cos().round() as i32);
        if scene.is_reachable(n) {
            continue;
        }
        let delta = (heading - pose.rotation).rem_euclid(360);
        let (cost, turn, reps) = if delta <= 180 {
            (delta, Action::RotateRight, (delta / 90) as usize)
        } else {
            (360 - delta, Action::RotateLeft, ((360 - delta) / 90) as usize)
        };
        if best.is_none_or(|(c, _, _)| cost < c) {
            best = Some((cost, turn, reps));
        }
    }
    best.map(|(_, a, n)| (a, n)).unwrap_or((Action::RotateRight, 0))
}

fn pick_waypoint(scene: &Scene, here: Cell, visited: &BTreeSet<Cell>, revisit_bias: f64, rng: &mut rng::Rng) -> Cell {
    let others: Vec<Cell> = visited.iter().copied().filter(|&c| c != here).collect();
    if !others.is_empty() && rng.random_bool(revisit_bias) {
        return others[rng.random_range(0..others.len())];
    }
    let field = DistanceField::from_sources(scene, [here]);
    let mut best: Vec<Cell> = Vec::new();
    let mut best_d = u32::MAX;
    for &c in scene.reachable() {
        if visited.contains(&c) {
            continue;
        }
        let d = field.get(c).expect("scene is connected");
        if d < best_d {
            best_d = d;
            best.clear();
        }
        if d == best_d {
            best.push(c);
        }
    }
    if best.is_empty() {
        // everything seen: wander to a random cell
        let cells = scene.reachable();
        return cells[rng.random_range(0..cells.len())];
    }
    best[rng.random_range(0..best.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(n: i32) -> Scene {
        let cells: Vec<Cell> = (1..=n).flat_map(|z| (1..=n).map(move |x| (x, z))).collect();
        Scene::new("room", 0.25, n + 2, n + 2, cells, vec![], vec![]).unwrap()
    }

    fn replay(scene: &Scene, start: &AgentPose, actions: &[Action]) -> (usize, BTreeSet<Cell>) {
        let motion = MotionConfig::default();
        let mut pose = *start;
        let mut hits = 0;
        let mut seen = BTreeSet::from([pose.cell(scene)]);
        for &a in actions {
            let r = step(scene, &pose, a, &motion).unwrap();
            hits += r.collision as usize;
            pose = r.pose;
            seen.insert(pose.cell(scene));
        }
        (hits, seen)
    }

    #[test]
    fn deterministic_per_seed() {
        let s = room(10);
        let start = AgentPose::at_cell(&s, (3, 3), 0);
        let cfg = ExplorerConfig::default();
        let a = explorer_actions(&s, &start, 7, &cfg, &MotionConfig::default()).unwrap();
        let b = explorer_actions(&s, &start, 7, &cfg, &MotionConfig::default()).unwrap();
        let c = explorer_actions(&s, &start, 8, &cfg, &MotionConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 500);
        assert!(!a.contains(&Action::End));
    }

    #[test]
    fn no_collisions_without_collision_rate() {
        let s = room(10);
        let start = AgentPose::at_cell(&s, (1, 1), 180);
        let cfg = ExplorerConfig { collision_rate: 0.0, ..Default::default() };
        for seed in 0..5 {
            let a = explorer_actions(&s, &start, seed, &cfg, &MotionConfig::default()).unwrap();
            assert_eq!(replay(&s, &start, &a).0, 0);
        }
    }

    #[test]
    fn default_walk_collides_and_covers_the_room() {
        let s = room(10);
        let start = AgentPose::at_cell(&s, (5, 5), 90);
        for seed in 0..10 {
            let a = explorer_actions(&s, &start, seed, &ExplorerConfig::default(), &MotionConfig::default()).unwrap();
            let (hits, seen) = replay(&s, &start, &a);
            assert!(hits > 0, "seed {seed}");
            assert!(seen.len() as f64 >= 0.6 * s.reachable().len() as f64, "seed {seed}: {}", seen.len());
        }
    }

    #[test]
    fn rejects_bad_probabilities() {
        let s = room(4);
        let start = AgentPose::at_cell(&s, (1, 1), 0);
        let cfg = ExplorerConfig { collision_rate: 1.5, ..Default::default() };
        assert!(explorer_actions(&s, &start, 0, &cfg, &MotionConfig::default()).is_err());
    }
}
