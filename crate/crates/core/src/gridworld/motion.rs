use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scene::{Cell, Scene};
use crate::error::{Error, Result};

pub const HORIZONS: [i32; 4] = [-30, 0, 30, 60];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookUp,
    LookDown,
    End,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
        Action::End,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveAhead => "MoveAhead",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::End => "End",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse {
                origin: "action".into(),
                detail: format!("unknown action {s:?}"),
            })
    }
}

/// Agent position in meters (always a cell center), heading in degrees
/// clockwise from +z, and camera horizon in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub z: f64,
    #[serde(rename = "rot")]
    pub rotation: i32,
    #[serde(rename = "hor")]
    pub horizon: i32,
}

impl AgentPose {
    pub fn at_cell(scene: &Scene, cell: Cell, rotation: i32) -> Self {
        let (x, z) = scene.center(cell);
        AgentPose { x, z, rotation, horizon: 0 }
    }

    pub fn cell(&self, scene: &Scene) -> Cell {
        scene.cell_of(self.x, self.z)
    }

    /// Same cell, rotation and horizon.
    pub fn same_state(&self, other: &AgentPose, scene: &Scene) -> bool {
        self.cell(scene) == other.cell(scene)
            && self.rotation == other.rotation
            && self.horizon == other.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub rotation_step: i32,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { rotation_step: 90 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub pose: AgentPose,
    pub collision: bool,
    pub done: bool,
}

pub fn validate_pose(scene: &Scene, pose: &AgentPose, motion: &MotionConfig) -> Result<()> {
    let cell = pose.cell(scene);
    let (cx, cz) = scene.center(cell);
    if (cx - pose.x).abs() > 1e-9 || (cz - pose.z).abs() > 1e-9 {
        return Err(Error::validation("pose.cell_center", format!("({}, {}) is not a cell center", pose.x, pose.z)));
    }
    if !scene.is_reachable(cell) {
        return Err(Error::validation("pose.reachable", format!("cell {cell:?} is not reachable")));
    }
    if pose.rotation.rem_euclid(360) != pose.rotation || pose.rotation % motion.rotation_step != 0 {
        return Err(Error::validation("pose.rotation", format!("rotation {} is not a multiple of {} in [0,360)", pose.rotation, motion.rotation_step)));
    }
    if !HORIZONS.contains(&pose.horizon) {
        return Err(Error::validation("pose.horizon", format!("horizon {} not in {HORIZONS:?}", pose.horizon)));
    }
    Ok(())
}

/// Executes one action. Blocked forward moves leave the pose unchanged and
/// report a collision; rotations and look actions never collide.
pub fn step(scene: &Scene, pose: &AgentPose, action: Action, motion: &MotionConfig) -> Result<StepResult> {
    validate_pose(scene, pose, motion)?;
    let mut next = *pose;
    let mut collision = false;
    let mut done = false;
    match action {
        Action::MoveAhead => {
            let rad = (pose.rotation as f64).to_radians();
            let g = scene.grid_size();
            let target = scene.cell_of(pose.x + g * rad.sin(), pose.z + g * rad.cos());
            if scene.is_reachable(target) {
                let (x, z) = scene.center(target);
                next.x = x;
                next.z = z;
            } else {
                collision = true;
            }
        }
        Action::RotateLeft => next.rotation = (pose.rotation - motion.rotation_step).rem_euclid(360),
        Action::RotateRight => next.rotation = (pose.rotation + motion.rotation_step).rem_euclid(360),
        Action::LookUp => next.horizon = shift_horizon(pose.horizon, -1),
        Action::LookDown => next.horizon = shift_horizon(pose.horizon, 1),
        Action::End => done = true,
    }
    Ok(StepResult { pose: next, collision, done })
}

fn shift_horizon(h: i32, dir: isize) -> i32 {
    let i = HORIZONS.iter().position(|&x| x == h).unwrap_or(1) as isize;
    HORIZONS[(i + dir).clamp(0, HORIZONS.len() as isize - 1) as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_room() -> Scene {
        let cells: Vec<Cell> = (1..4).flat_map(|z| (1..4).map(move |x| (x, z))).collect();
        Scene::new("room", 0.25, 5, 5, cells, vec![], vec![]).unwrap()
    }

    fn pose(x: f64, z: f64, rotation: i32) -> AgentPose {
        AgentPose { x, z, rotation, horizon: 0 }
    }

    #[test]
    fn move_ahead_into_open_cell() {
        let s = empty_room();
        let r = step(&s, &pose(0.5, 0.5, 0), Action::MoveAhead, &MotionConfig::default()).unwrap();
        assert_eq!(r.pose, pose(0.5, 0.75, 0));
        assert!(!r.collision && !r.done);
    }

    #[test]
    fn move_into_wall_collides_without_moving() {
        let s = empty_room();
        let start = pose(0.5, 0.75, 0);
        let r = step(&s, &start, Action::MoveAhead, &MotionConfig::default()).unwrap();
        assert!(r.collision);
        assert_eq!(r.pose, start);
    }

    #[test]
    fn rotation_wraps() {
        let s = empty_room();
        let r = step(&s, &pose(0.5, 0.5, 270), Action::RotateRight, &MotionConfig::default()).unwrap();
        assert_eq!(r.pose.rotation, 0);
        let r = step(&s, &pose(0.5, 0.5, 0), Action::RotateLeft, &MotionConfig::default()).unwrap();
        assert_eq!(r.pose.rotation, 270);
    }

    #[test]
    fn look_actions_clamp_horizon() {
        let s = empty_room();
        let m = MotionConfig::default();
        let mut p = pose(0.5, 0.5, 0);
        for _ in 0..5 {
            p = step(&s, &p, Action::LookDown, &m).unwrap().pose;
        }
        assert_eq!(p.horizon, 60);
        for _ in 0..5 {
            let r = step(&s, &p, Action::LookUp, &m).unwrap();
            assert!(!r.collision);
            p = r.pose;
        }
        assert_eq!(p.horizon, -30);
    }

    #[test]
    fn end_sets_done() {
        let s = empty_room();
        assert!(step(&s, &pose(0.5, 0.5, 0), Action::End, &MotionConfig::default()).unwrap().done);
    }

    #[test]
    fn invalid_pose_is_rejected() {
        let s = empty_room();
        let m = MotionConfig::default();
        assert!(step(&s, &pose(0.0, 0.0, 0), Action::MoveAhead, &m).is_err());
        assert!(step(&s, &pose(0.5, 0.5, 45), Action::MoveAhead, &m).is_err());
        assert!(step(&s, &pose(0.6, 0.5, 0), Action::MoveAhead, &m).is_err());
    }

    #[test]
    fn action_names_parse() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert!("Jump".parse::<Action>().is_err());
    }
}
