use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SquaredError,
    Logistic,
}

impl Objective {
    /// Maps a raw margin to the model output.
    pub fn transform(self, margin: f64) -> f64 {
        match self {
            Objective::SquaredError => margin,
            Objective::Logistic => crate::agent::sigmoid(margin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    pub kind: NodeKind,
    /// Training rows that reached this node.
    pub cover: u64,
}

impl TreeNode {
    pub fn leaf(value: f64, cover: u64) -> Self {
        TreeNode { kind: NodeKind::Leaf { value }, cover }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: u64) -> Self {
        TreeNode { kind: NodeKind::Split { feature, threshold, left, right }, cover }
    }
}

/// Nodes of one tree; index 0 is the root.
pub type Tree = Vec<TreeNode>;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    /// Raw margin added to every prediction.
    pub base_score: f64,
    pub objective: Objective,
    pub learning_rate: f64,
    pub n_features: usize,
}

pub fn tree_margin(tree: &[TreeNode], x: &[f64]) -> f64 {
    let mut i = 0;
    loop {
        match tree[i].kind {
            NodeKind::Leaf { value } => return value,
            NodeKind::Split { feature, threshold, left, right } => {
                i = if x[feature] < threshold { left } else { right };
            }
        }
    }
}

impl TreeEnsemble {
    pub fn base_only(objective: Objective, base_score: f64, learning_rate: f64, n_features: usize) -> Self {
        TreeEnsemble { trees: Vec::new(), base_score, objective, learning_rate, n_features }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension { context: "ensemble input", expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Raw margin: base score plus the leaf value of every tree.
    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.margin_unchecked(x))
    }

    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(self.base_score, |acc, t| acc + tree_margin(t, x))
    }

    /// Margin mapped through the objective's link (probability for logistic).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.objective.transform(self.predict_margin(x)?))
    }

    pub fn predict_margin_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.predict_margin(x)).collect()
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.predict(x)).collect()
    }

    /// Checks node structure, cover conservation, feature bounds and finiteness.
    pub fn validate(&self) -> Result<()> {
        let fail = |t: usize, n: usize, detail: String| Error::Parse {
            origin: "ensemble".into(),
            detail: format!("tree {t} node {n}: {detail}"),
        };
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(Error::Parse { origin: "ensemble".into(), detail: "non-finite base_score or learning_rate".into() });
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.is_empty() {
                return Err(fail(t, 0, "empty tree".into()));
            }
            let mut parents = vec![0usize; tree.len()];
            for (n, node) in tree.iter().enumerate() {
                if node.cover == 0 {
                    return Err(fail(t, n, "cover must be positive".into()));
                }
                match node.kind {
                    NodeKind::Leaf { value } if !value.is_finite() => {
                        return Err(fail(t, n, "non-finite leaf value".into()));
                    }
                    NodeKind::Leaf { .. } => {}
                    NodeKind::Split { feature, threshold, left, right } => {
                        if feature >= self.n_features {
                            return Err(fail(t, n, format!("feature {feature} >= n_features {}", self.n_features)));
                        }
                        if threshold.is_nan() {
                            return Err(fail(t, n, "threshold is NaN".into()));
                        }
                        for c in [left, right] {
                            if c <= n || c >= tree.len() {
                                return Err(fail(t, n, format!("child index {c} out of order or range")));
                            }
                            parents[c] += 1;
                        }
                        if left == right {
                            return Err(fail(t, n, "left and right child coincide".into()));
                        }
                        let sum = tree[left].cover + tree[right].cover;
                        if sum != node.cover {
                            return Err(fail(t, n, format!("cover {} != children {} + {}", node.cover, tree[left].cover, tree[right].cover)));
                        }
                    }
                }
            }
            if let Some(n) = (1..tree.len()).find(|&n| parents[n] != 1) {
                return Err(fail(t, n, format!("node has {} parents", parents[n])));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> EnsembleFile {
        EnsembleFile {
            objective: self.objective,
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            n_features: self.n_features,
            trees: self
                .trees
                .iter()
                .map(|t| t.iter().map(NodeEntry::from).collect())
                .collect(),
        }
    }

    pub fn from_file(file: EnsembleFile, origin: &str) -> Result<Self> {
        let mut trees = Vec::with_capacity(file.trees.len());
        for (t, entries) in file.trees.into_iter().enumerate() {
            let tree = entries
                .into_iter()
                .enumerate()
                .map(|(n, e)| {
                    e.into_node().map_err(|detail| Error::Parse {
                        origin: origin.into(),
                        detail: format!("tree {t} node {n}: {detail}"),
                    })
                })
                .collect::<Result<Tree>>()?;
            trees.push(tree);
        }
        let e = TreeEnsemble {
            trees,
            base_score: file.base_score,
            objective: file.objective,
            learning_rate: file.learning_rate,
            n_features: file.n_features,
        };
        e.validate().map_err(|err| match err {
            Error::Parse { detail, .. } => Error::Parse { origin: origin.into(), detail },
            other => other,
        })?;
        Ok(e)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("ensemble serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: EnsembleFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            origin: origin.into(),
            detail: e.to_string(),
        })?;
        TreeEnsemble::from_file(file, origin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub objective: Objective,
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<Vec<NodeEntry>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_value: Option<f64>,
    pub cover: u64,
}

impl From<&TreeNode> for NodeEntry {
    fn from(n: &TreeNode) -> Self {
        match n.kind {
            NodeKind::Leaf { value } => NodeEntry { leaf_value: Some(value), cover: n.cover, ..Default::default() },
            NodeKind::Split { feature, threshold, left, right } => NodeEntry {
                feature: Some(feature),
                threshold: Some(threshold),
                left: Some(left),
                right: Some(right),
                leaf_value: None,
                cover: n.cover,
            },
        }
    }
}

impl NodeEntry {
    fn into_node(self) -> std::result::Result<TreeNode, String> {
        match (self.feature, self.threshold, self.left, self.right, self.leaf_value) {
            (None, None, None, None, Some(value)) => Ok(TreeNode::leaf(value, self.cover)),
            (Some(f), Some(t), Some(l), Some(r), None) => Ok(TreeNode::split(f, t, l, r, self.cover)),
            _ => Err("a node needs either leaf_value or all of feature/threshold/left/right".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> TreeEnsemble {
        TreeEnsemble {
            trees: vec![vec![TreeNode::split(0, 0.5, 1, 2, 4), TreeNode::leaf(-1.0, 2), TreeNode::leaf(1.0, 2)]],
            base_score: 0.0,
            objective: Objective::SquaredError,
            learning_rate: 1.0,
            n_features: 2,
        }
    }

    #[test]
    fn stump_predictions() {
        let e = stump();
        assert_eq!(e.predict_margin(&[0.7, 0.0]).unwrap(), 1.0);
        assert_eq!(e.predict_margin(&[0.2, 9.0]).unwrap(), -1.0);
        // boundary goes right
        assert_eq!(e.predict_margin(&[0.5, 0.0]).unwrap(), 1.0);
        assert!(matches!(e.predict_margin(&[0.5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn empty_ensemble_returns_base() {
        let e = TreeEnsemble::base_only(Objective::Logistic, 0.0, 0.3, 3);
        assert_eq!(e.predict_margin(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(e.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn hand_written_json() {
        let text = r#"{"objective":"squared_error","base_score":0.5,"learning_rate":0.3,"n_features":2,
            "trees":[[{"feature":1,"threshold":2.0,"left":1,"right":2,"cover":3},
                      {"leaf_value":-0.25,"cover":1},
                      {"feature":0,"threshold":0.0,"left":3,"right":4,"cover":2},
                      {"leaf_value":0.125,"cover":1},
                      {"leaf_value":2.0,"cover":1}]]}"#;
        let e = TreeEnsemble::from_json(text, "inline").unwrap();
        assert_eq!(e.predict_margin(&[5.0, 1.0]).unwrap(), 0.25);
        assert_eq!(e.predict_margin(&[-1.0, 2.0]).unwrap(), 0.625);
        assert_eq!(e.predict_margin(&[0.0, 3.0]).unwrap(), 2.5);
        let back = TreeEnsemble::from_json(&e.to_json(), "again").unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn broken_cover_is_rejected_with_location() {
        let text = r#"{"objective":"logistic","base_score":0.0,"learning_rate":0.3,"n_features":1,
            "trees":[[{"leaf_value":1.0,"cover":2}],
                     [{"feature":0,"threshold":1.0,"left":1,"right":2,"cover":5},
                      {"leaf_value":1.0,"cover":2},{"leaf_value":1.0,"cover":2}]]}"#;
        let err = TreeEnsemble::from_json(text, "bad.json").unwrap_err().to_string();
        assert!(err.contains("tree 1 node 0"), "{err}");
        assert!(err.contains("bad.json"), "{err}");
    }

    #[test]
    fn malformed_nodes_are_rejected() {
        let mixed = r#"{"objective":"logistic","base_score":0.0,"learning_rate":0.3,"n_features":1,
            "trees":[[{"leaf_value":1.0,"feature":0,"cover":2}]]}"#;
        assert!(TreeEnsemble::from_json(mixed, "m").unwrap_err().to_string().contains("tree 0 node 0"));
        let cyclic = r#"{"objective":"logistic","base_score":0.0,"learning_rate":0.3,"n_features":1,
            "trees":[[{"feature":0,"threshold":1.0,"left":0,"right":1,"cover":2},{"leaf_value":1.0,"cover":1}]]}"#;
        assert!(TreeEnsemble::from_json(cyclic, "c").is_err());
        let wide = r#"{"objective":"logistic","base_score":0.0,"learning_rate":0.3,"n_features":1,
            "trees":[[{"feature":3,"threshold":1.0,"left":1,"right":2,"cover":2},{"leaf_value":1.0,"cover":1},{"leaf_value":1.0,"cover":1}]]}"#;
        assert!(TreeEnsemble::from_json(wide, "w").is_err());
    }
}
