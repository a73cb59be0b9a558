//! Gradient-boosted regression trees with second-order split gain.

mod fit;
mod model;

pub use fit::{fit, objective_loss, Fit, GbtParams};
pub use model::{tree_margin, EnsembleFile, NodeEntry, NodeKind, Objective, Tree, TreeEnsemble, TreeNode};
