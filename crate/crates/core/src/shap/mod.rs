//! Exact Shapley attributions for tree ensembles, their brute-force oracle,
//! and mean-|SHAP| unit rankings.

mod treeshap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{NodeKind, TreeEnsemble, TreeNode};

pub use treeshap::tree_shap;

/// Largest feature count the subset-enumeration oracle accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub example_id: String,
    pub phi: Vec<f64>,
    /// Expected margin with no feature known.
    pub base_value: f64,
    /// Model margin at the explained input.
    pub fx: f64,
}

impl ShapExplanation {
    /// `|base + Σφ − f(x)|`.
    pub fn local_accuracy_error(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.fx).abs()
    }
}

/// Path-dependent estimate of `E[tree(x) | x_S]`: follows `x` at splits on
/// features in `known`, otherwise averages both children by cover.
pub fn cond_expectation(tree: &[TreeNode], x: &[f64], known: &[bool]) -> f64 {
    fn go(tree: &[TreeNode], i: usize, x: &[f64], known: &[bool]) -> f64 {
        match tree[i].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { feature, threshold, left, right } => {
                if known[feature] {
                    go(tree, if x[feature] < threshold { left } else { right }, x, known)
                } else {
                    let (cl, cr) = (tree[left].cover as f64, tree[right].cover as f64);
                    (cl * go(tree, left, x, known) + cr * go(tree, right, x, known)) / tree[i].cover as f64
                }
            }
        }
    }
    go(tree, 0, x, known)
}

/// Expected ensemble margin given the features in `known`.
pub fn ensemble_cond_expectation(e: &TreeEnsemble, x: &[f64], known: &[bool]) -> f64 {
    e.trees.iter().fold(e.base_score, |acc, t| acc + cond_expectation(t, x, known))
}

/// Shapley values by enumerating every feature subset.
pub fn brute_force_shapley(e: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>> {
    let m = e.n_features;
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Config(format!(
            "subset enumeration over {m} features is too large (limit {BRUTE_FORCE_MAX_FEATURES}); use tree_shap"
        )));
    }
    if x.len() != m {
        return Err(Error::Dimension { context: "shapley input", expected: m, got: x.len() });
    }
    let n_sub = 1usize << m;
    let mut known = vec![false; m];
    let values: Vec<f64> = (0..n_sub)
        .map(|mask| {
            for (f, k) in known.iter_mut().enumerate() {
                *k = mask >> f & 1 == 1;
            }
            ensemble_cond_expectation(e, x, &known)
        })
        .collect();
    // weight of a subset of size s: s! (m - s - 1)! / m!
    let weight: Vec<f64> = (0..m)
        .map(|s| {
            let mut w = 1.0 / m as f64;
            for j in 1..=s {
                w *= j as f64 / (m - j) as f64;
            }
            w
        })
        .collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..n_sub).filter(|mask| mask & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

/// Explains every row, in parallel, keeping row order.
pub fn explain_rows(e: &TreeEnsemble, rows: &[Vec<f64>], ids: &[String]) -> Result<Vec<ShapExplanation>> {
    if rows.len() != ids.len() {
        return Err(Error::Dimension { context: "explanation ids", expected: rows.len(), got: ids.len() });
    }
    rows.par_iter()
        .zip(ids.par_iter())
        .map(|(x, id)| {
            let mut ex = tree_shap(e, x)?;
            ex.example_id = id.clone();
            Ok(ex)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRanking {
    pub concept: String,
    pub mean_abs_shap: Vec<f64>,
    /// Units by descending mean |SHAP|, ties to the lower index.
    pub order: Vec<usize>,
}

impl UnitRanking {
    /// Mean |SHAP| values in rank order.
    pub fn sorted_distribution(&self) -> Vec<f64> {
        self.order.iter().map(|&u| self.mean_abs_shap[u]).collect()
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let r: UnitRanking =
            serde_json::from_str(text).map_err(|e| Error::Parse { origin: origin.into(), detail: e.to_string() })?;
        let mut seen = vec![false; r.mean_abs_shap.len()];
        let is_perm = r.order.len() == seen.len() && r.order.iter().all(|&u| u < seen.len() && !std::mem::replace(&mut seen[u], true));
        if !is_perm {
            return Err(Error::Parse { origin: origin.into(), detail: "order is not a permutation of the units".into() });
        }
        Ok(r)
    }
}

pub fn aggregate_and_rank(explanations: &[ShapExplanation], concept: &str) -> Result<UnitRanking> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::validation("shap.explanations", "nothing to aggregate"))?;
    let m = first.phi.len();
    let mut sum = vec![0.0; m];
    for ex in explanations {
        if ex.phi.len() != m {
            return Err(Error::Dimension { context: "explanation width", expected: m, got: ex.phi.len() });
        }
        for (s, p) in sum.iter_mut().zip(&ex.phi) {
            *s += p.abs();
        }
    }
    let n = explanations.len() as f64;
    let mean_abs_shap: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mean_abs_shap[b].total_cmp(&mean_abs_shap[a]).then(a.cmp(&b)));
    Ok(UnitRanking { concept: concept.to_string(), mean_abs_shap, order })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRow {
    pub concept: String,
    pub unit: usize,
    pub example: String,
    pub shap: f64,
    pub activation: f64,
}

/// Per-example SHAP and raw activation of the top `k` units, ordered by
/// rank then example.
pub fn beeswarm_export(
    explanations: &[ShapExplanation],
    activations: &[Vec<f64>],
    ranking: &UnitRanking,
    k: usize,
) -> Result<Vec<BeeswarmRow>> {
    if k > ranking.order.len() {
        return Err(Error::validation("beeswarm.k", format!("k = {k} exceeds {} units", ranking.order.len())));
    }
    if activations.len() != explanations.len() {
        return Err(Error::Dimension { context: "beeswarm activations", expected: explanations.len(), got: activations.len() });
    }
    let mut rows = Vec::with_capacity(k * explanations.len());
    for &unit in ranking.top(k) {
        for (ex, act) in explanations.iter().zip(activations) {
            rows.push(BeeswarmRow {
                concept: ranking.concept.clone(),
                unit,
                example: ex.example_id.clone(),
                shap: ex.phi[unit],
                activation: act[unit],
            });
        }
    }
    Ok(rows)
}

pub fn beeswarm_csv(rows: &[BeeswarmRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["concept", "unit", "example", "shap", "activation"]).expect("in-memory write");
    for r in rows {
        w.serialize((&r.concept, r.unit, &r.example, r.shap, r.activation)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{Objective, TreeNode};

    fn stump(feature: usize, m: usize) -> TreeEnsemble {
        TreeEnsemble {
            trees: vec![vec![TreeNode::split(feature, 0.5, 1, 2, 10), TreeNode::leaf(-1.0, 5), TreeNode::leaf(1.0, 5)]],
            base_score: 0.0,
            objective: Objective::SquaredError,
            learning_rate: 1.0,
            n_features: m,
        }
    }

    fn depth2() -> Vec<TreeNode> {
        vec![
            TreeNode::split(0, 0.0, 1, 2, 10),
            TreeNode::split(1, 0.0, 3, 4, 4),
            TreeNode::leaf(5.0, 6),
            TreeNode::leaf(1.0, 1),
            TreeNode::leaf(2.0, 3),
        ]
    }

    #[test]
    fn conditional_expectation_by_hand() {
        let t = depth2();
        let x = [-1.0, 1.0];
        assert_eq!(cond_expectation(&t, &x, &[true, true]), 2.0);
        // (4 * (1*1 + 3*2)/4 + 6*5) / 10
        assert!((cond_expectation(&t, &x, &[false, false]) - 3.7).abs() < 1e-15);
        // feature 0 known: left branch, average over feature 1
        assert!((cond_expectation(&t, &x, &[true, false]) - 7.0 / 4.0).abs() < 1e-15);
        // feature 1 known: (4 * 2 + 6 * 5) / 10
        assert!((cond_expectation(&t, &x, &[false, true]) - 3.8).abs() < 1e-15);
    }

    #[test]
    fn stump_attribution_by_hand() {
        let e = stump(0, 3);
        let phi = brute_force_shapley(&e, &[0.9, 0.0, 0.0]).unwrap();
        assert_eq!(phi, vec![1.0, 0.0, 0.0]);
        let ex = tree_shap(&e, &[0.9, 0.0, 0.0]).unwrap();
        assert_eq!(ex.base_value, 0.0);
        assert_eq!(ex.phi, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn brute_force_refuses_wide_inputs() {
        let e = TreeEnsemble::base_only(Objective::SquaredError, 0.0, 0.3, 16);
        assert!(matches!(brute_force_shapley(&e, &[0.0; 16]), Err(Error::Config(_))));
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let e = TreeEnsemble::base_only(Objective::Logistic, 0.7, 0.3, 4);
        assert_eq!(brute_force_shapley(&e, &[1.0; 4]).unwrap(), vec![0.0; 4]);
        let ex = tree_shap(&e, &[1.0; 4]).unwrap();
        assert_eq!(ex.phi, vec![0.0; 4]);
        assert_eq!(ex.base_value, 0.7);
    }

    #[test]
    fn ranking_rules() {
        let ex = |phi: Vec<f64>| ShapExplanation { example_id: "e".into(), phi, base_value: 0.0, fx: 0.0 };
        let r = aggregate_and_rank(&[ex(vec![1.0, 0.0]), ex(vec![-1.0, 0.0])], "c").unwrap();
        assert_eq!(r.mean_abs_shap, vec![1.0, 0.0]);
        assert_eq!(r.order, vec![0, 1]);
        let single = aggregate_and_rank(&[ex(vec![-0.5, 2.0, 0.0])], "c").unwrap();
        assert_eq!(single.mean_abs_shap, vec![0.5, 2.0, 0.0]);
        assert_eq!(single.order, vec![1, 0, 2]);
        let zeros = aggregate_and_rank(&[ex(vec![0.0; 4])], "c").unwrap();
        assert_eq!(zeros.order, vec![0, 1, 2, 3]);
        assert!(aggregate_and_rank(&[], "c").is_err());
        let back = UnitRanking::from_json(&single.to_json(), "mem").unwrap();
        assert_eq!(back, single);
    }

    #[test]
    fn beeswarm_rows() {
        let exs: Vec<ShapExplanation> = (0..3)
            .map(|i| ShapExplanation { example_id: format!("e{i}"), phi: vec![0.1 * i as f64, -1.0], base_value: 0.0, fx: 0.0 })
            .collect();
        let acts: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 10.0 + i as f64]).collect();
        let r = aggregate_and_rank(&exs, "visible_t").unwrap();
        let rows = beeswarm_export(&exs, &acts, &r, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|row| row.unit == 1 && row.shap == -1.0));
        assert_eq!(rows[2].activation, 12.0);
        assert_eq!(beeswarm_export(&exs, &acts, &r, 2).unwrap().len(), 6);
        assert!(beeswarm_export(&exs, &acts, &r, 3).is_err());
        let csv = beeswarm_csv(&rows);
        assert!(csv.starts_with("concept,unit,example,shap,activation\nvisible_t,1,e0,-1.0,10.0\n"), "{csv}");
    }
}
