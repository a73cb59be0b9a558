//! Simulator-side concepts extracted at every step: target geometry, agent
//! displacement from spawn, reachability around the agent, visit history
//! and collision events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::motion::AgentPose;
use super::scene::{Cell, Scene};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityConfig {
    /// Maximum distance in meters at which a target counts as visible.
    pub distance: f64,
    /// Full horizontal field of view in degrees.
    pub fov: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        VisibilityConfig { distance: 1.5, fov: 90.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachConfig {
    /// Probe circle radii as multiples of the grid size.
    pub radii: Vec<u32>,
    pub angle_step: u32,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig { radii: vec![2, 4, 6], angle_step: 30 }
    }
}

impl ReachConfig {
    pub fn angles(&self) -> impl Iterator<Item = u32> + '_ {
        (0..360).step_by(self.angle_step.max(1) as usize)
    }

    pub fn n_angles(&self) -> usize {
        (360 / self.angle_step.max(1)) as usize
    }

    pub fn names(&self) -> Vec<String> {
        self.radii
            .iter()
            .flat_map(|&r| self.angles().map(move |a| reach_name(r, a)))
            .collect()
    }
}

pub fn reach_name(radius: u32, angle: u32) -> String {
    format!("reach_{radius}_{angle:03}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetadataConfig {
    pub visibility: VisibilityConfig,
    pub reach: ReachConfig,
}

/// All concepts at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRecord {
    pub r_t: f64,
    pub theta_t: f64,
    pub visible_t: bool,
    pub area_t: f64,
    pub r_a: f64,
    pub theta_a: f64,
    /// Radius-major: `reach[ri * n_angles + ai]`.
    pub reach: Vec<bool>,
    pub reach_names: Vec<String>,
    pub visited_l: bool,
    pub visited_lr: bool,
    pub visited_lrh: bool,
    pub collision: bool,
}

/// A concept value as stored in rollout logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConceptValue {
    Flag(bool),
    Scalar(f64),
}

impl ConceptValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ConceptValue::Flag(b) => b as u8 as f64,
            ConceptValue::Scalar(v) => v,
        }
    }
}

pub const CONTINUOUS_CONCEPTS: [&str; 5] = ["R_t", "theta_t", "Area_t", "R_a", "theta_a"];

impl ConceptRecord {
    pub fn to_map(&self) -> BTreeMap<String, ConceptValue> {
        use ConceptValue::*;
        let mut m = BTreeMap::new();
        m.insert("R_t".into(), Scalar(self.r_t));
        m.insert("theta_t".into(), Scalar(self.theta_t));
        m.insert("visible_t".into(), Flag(self.visible_t));
        m.insert("Area_t".into(), Scalar(self.area_t));
        m.insert("R_a".into(), Scalar(self.r_a));
        m.insert("theta_a".into(), Scalar(self.theta_a));
        for (name, &bit) in self.reach_names.iter().zip(&self.reach) {
            m.insert(name.clone(), Flag(bit));
        }
        m.insert("visited_l".into(), Flag(self.visited_l));
        m.insert("visited_lr".into(), Flag(self.visited_lr));
        m.insert("visited_lrh".into(), Flag(self.visited_lrh));
        m.insert("collision".into(), Flag(self.collision));
        m
    }

    /// Checks the record-level invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.area_t > 0.0 && !self.visible_t {
            return Err("Area_t > 0 without visible_t".into());
        }
        if self.r_t < 0.0 || self.r_a < 0.0 {
            return Err("negative distance".into());
        }
        if !(0.0..=1.0).contains(&self.area_t) {
            return Err("Area_t outside [0,1]".into());
        }
        if (self.visited_lrh && !self.visited_lr) || (self.visited_lr && !self.visited_l) {
            return Err("visited chain broken".into());
        }
        for t in [self.theta_t, self.theta_a] {
            if !(0.0..360.0).contains(&t) {
                return Err(format!("angle {t} outside [0,360)"));
            }
        }
        Ok(())
    }
}

/// Normalizes degrees into `[0, 360)`.
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Clockwise bearing of `to` seen from `from` with the given heading.
pub fn bearing(from: (f64, f64), heading: f64, to: (f64, f64)) -> f64 {
    let (dx, dz) = (to.0 - from.0, to.1 - from.1);
    normalize_deg(dx.atan2(dz).to_degrees() - heading)
}

fn signed(b: f64) -> f64 {
    if b > 180.0 {
        b - 360.0
    } else {
        b
    }
}

/// True when no unreachable cell lies on the segment between the two cell
/// centers (sampled at 1/16 of the grid size).
pub fn line_of_sight(scene: &Scene, from: Cell, to: Cell) -> bool {
    let (ax, az) = scene.center(from);
    let (bx, bz) = scene.center(to);
    let len = ((bx - ax).powi(2) + (bz - az).powi(2)).sqrt();
    let n = (len / (scene.grid_size() / 16.0)).ceil() as usize;
    (0..=n).all(|k| {
        let t = if n == 0 { 0.0 } else { k as f64 / n as f64 };
        scene.is_reachable(scene.cell_of(ax + t * (bx - ax), az + t * (bz - az)))
    })
}

/// Whether a target cell passes the distance, field-of-view and
/// line-of-sight tests from `pose`.
pub fn cell_visible(scene: &Scene, pose: &AgentPose, cell: Cell, cfg: &VisibilityConfig) -> bool {
    let target = scene.center(cell);
    let r = ((target.0 - pose.x).powi(2) + (target.1 - pose.z).powi(2)).sqrt();
    if r <= EPS {
        return true;
    }
    let b = bearing((pose.x, pose.z), pose.rotation as f64, target);
    r <= cfg.distance + EPS
        && signed(b).abs() <= cfg.fov / 2.0 + EPS
        && line_of_sight(scene, pose.cell(scene), cell)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetInfo {
    pub r_t: f64,
    pub theta_t: f64,
    pub visible_t: bool,
    pub area_t: f64,
}

pub fn target_metadata(scene: &Scene, pose: &AgentPose, target: Cell, cfg: &VisibilityConfig) -> TargetInfo {
    let t = scene.center(target);
    let r_t = ((t.0 - pose.x).powi(2) + (t.1 - pose.z).powi(2)).sqrt();
    let theta_t = if r_t <= EPS { 0.0 } else { bearing((pose.x, pose.z), pose.rotation as f64, t) };
    let visible_t = cell_visible(scene, pose, target, cfg);
    let g = scene.grid_size();
    let area_t = if visible_t { (g * g / r_t.max(g).powi(2)).clamp(0.0, 1.0) } else { 0.0 };
    TargetInfo { r_t, theta_t, visible_t, area_t }
}

/// Distance and clockwise bearing of the current position from the spawn,
/// measured against the spawn heading.
pub fn agent_metadata(pose: &AgentPose, spawn: &AgentPose) -> (f64, f64) {
    let r = ((pose.x - spawn.x).powi(2) + (pose.z - spawn.z).powi(2)).sqrt();
    if r <= EPS {
        return (0.0, 0.0);
    }
    (r, bearing((spawn.x, spawn.z), spawn.rotation as f64, (pose.x, pose.z)))
}

/// Radius-major reachability bits: a probe point counts as reachable when
/// the nearest reachable cell center lies within `grid_size / sqrt(2)`.
pub fn reachability_metadata(scene: &Scene, pose: &AgentPose, cfg: &ReachConfig) -> Vec<bool> {
    let g = scene.grid_size();
    let mut bits = Vec::with_capacity(cfg.radii.len() * cfg.n_angles());
    for &r in &cfg.radii {
        for k in cfg.angles() {
            let angle = ((pose.rotation + k as i32).rem_euclid(360) as f64).to_radians();
            let p = (pose.x + r as f64 * g * angle.sin(), pose.z + r as f64 * g * angle.cos());
            bits.push(near_reachable(scene, p));
        }
    }
    bits
}

/// Squared-distance test against the cells around `p`; exact at the
/// `grid_size / sqrt(2)` boundary.
pub fn near_reachable(scene: &Scene, p: (f64, f64)) -> bool {
    let g = scene.grid_size();
    let limit = g * g / 2.0;
    let (cx, cz) = scene.cell_of(p.0, p.1);
    for dz in -1..=1 {
        for dx in -1..=1 {
            let c = (cx + dx, cz + dz);
            if scene.is_reachable(c) {
                let (x, z) = scene.center(c);
                let d2 = (x - p.0).powi(2) + (z - p.1).powi(2);
                if d2 <= limit {
                    return true;
                }
            }
        }
    }
    false
}

/// `(visited_l, visited_lr, visited_lrh)` against the poses strictly before
/// the current step.
pub fn visited_metadata(scene: &Scene, history: &[AgentPose], pose: &AgentPose) -> (bool, bool, bool) {
    let cell = pose.cell(scene);
    let mut out = (false, false, false);
    for h in history {
        if h.cell(scene) != cell {
            continue;
        }
        out.0 = true;
        if h.rotation == pose.rotation {
            out.1 = true;
            if h.horizon == pose.horizon {
                out.2 = true;
                break;
            }
        }
    }
    out
}

/// Incremental concept extractor for one episode.
#[derive(Debug, Clone)]
pub struct ConceptTracker<'a> {
    scene: &'a Scene,
    cfg: &'a MetadataConfig,
    target: Cell,
    spawn: AgentPose,
    history: Vec<AgentPose>,
    reach_names: Vec<String>,
}

impl<'a> ConceptTracker<'a> {
    pub fn new(scene: &'a Scene, cfg: &'a MetadataConfig, target: Cell, spawn: AgentPose) -> Self {
        ConceptTracker {
            scene,
            cfg,
            target,
            spawn,
            history: Vec::new(),
            reach_names: cfg.reach.names(),
        }
    }

    /// Concepts at `pose`; `collided` reports whether the action that led
    /// here was blocked. The pose is appended to the history afterwards.
    pub fn observe(&mut self, pose: &AgentPose, collided: bool) -> ConceptRecord {
        let t = target_metadata(self.scene, pose, self.target, &self.cfg.visibility);
        let (r_a, theta_a) = agent_metadata(pose, &self.spawn);
        let (visited_l, visited_lr, visited_lrh) = visited_metadata(self.scene, &self.history, pose);
        self.history.push(*pose);
        ConceptRecord {
            r_t: t.r_t,
            theta_t: t.theta_t,
            visible_t: t.visible_t,
            area_t: t.area_t,
            r_a,
            theta_a,
            reach: reachability_metadata(self.scene, pose, &self.cfg.reach),
            reach_names: self.reach_names.clone(),
            visited_l,
            visited_lr,
            visited_lrh,
            collision: collided,
        }
    }
}
