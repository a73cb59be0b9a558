//! Deterministic grid navigation world and its metadata extractors.

mod metadata;
mod motion;
mod nav;
mod observe;
mod scene;

pub use metadata::{
    agent_metadata, bearing, cell_visible, line_of_sight, near_reachable, normalize_deg, reach_name,
    reachability_metadata, target_metadata, visited_metadata, ConceptRecord, ConceptTracker, ConceptValue,
    MetadataConfig, ReachConfig, TargetInfo, VisibilityConfig, CONTINUOUS_CONCEPTS,
};
pub use motion::{step, validate_pose, Action, AgentPose, MotionConfig, StepResult, HORIZONS};
pub use nav::{shortest_path, DistanceField};
pub use observe::render_observation;
pub use scene::{gen_scene, Cell, GenParams, ObjectEntry, ObjectInstance, Scene, SceneFile, Spawn};
