//! Probing toolkit for recurrent navigation agents.
//!
//! The pipeline runs agents through a grid navigation world, logs their
//! recurrent hidden state next to simulator-derived concepts, fits one
//! gradient-boosted tree probe per concept, attributes every probe
//! prediction to individual hidden units with exact Shapley values, and
//! tests unit importance causally by clamping units during evaluation.

pub mod ablate;
pub mod agent;
pub mod config;
pub mod error;
pub mod gbt;
pub mod gridworld;
pub mod io;
pub mod pipeline;
pub mod probe;
pub mod rng;
pub mod shap;
pub mod svg;
pub mod verify;

pub use error::{Error, Result};

pub use ablate::{AblationSpec, AblationStrategy, EpisodeOutcome};
pub use agent::{GruParams, Intervention, TaskMode, TaskSpec, TimestepRecord};
pub use gbt::{GbtParams, Objective, TreeEnsemble, TreeNode};
pub use gridworld::{Action, AgentPose, ConceptRecord, ObjectInstance, Scene};
pub use probe::{ProbeDataset, ProbeReport};
pub use shap::{ShapExplanation, UnitRanking};
