//! Polynomial-time path-dependent TreeSHAP.
//!
//! Each root-to-leaf descent keeps the set of distinct features split on so
//! far, with the fraction of "feature unknown" paths (`zero`) and whether
//! `x` follows the branch (`one`). `weight[i]` holds the summed permutation
//! weight of subsets of size `i` drawn from the path.

use super::{cond_expectation, ShapExplanation};
use crate::error::{Error, Result};
use crate::gbt::{NodeKind, TreeEnsemble, TreeNode};

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
    path[depth] = PathElement { feature, zero, one, weight: if depth == 0 { 1.0 } else { 0.0 } };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut [PathElement], depth: usize, index: usize) {
    let PathElement { zero, one, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * d1 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
}

/// Total weight the path would have with element `index` removed.
fn unwound_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let PathElement { zero, one, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a [TreeNode],
    x: &'a [f64],
    phi: &'a mut [f64],
    buf: Vec<PathElement>,
}

impl Walker<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(&mut self, node: usize, mut depth: usize, parent_off: usize, zero: f64, one: f64, feature: Option<usize>) -> Result<()> {
        let off = parent_off + depth + 1;
        self.buf.copy_within(parent_off..parent_off + depth + 1, off);
        let path = &mut self.buf[off..];
        extend(path, depth, zero, one, feature);
        match self.tree[node].kind {
            NodeKind::Leaf { value } => {
                for i in 1..=depth {
                    let w = unwound_sum(path, depth, i);
                    let el = path[i];
                    let f = el.feature.expect("only the root element is featureless");
                    self.phi[f] += w * (el.one - el.zero) * value;
                }
            }
            NodeKind::Split { feature: split, threshold, left, right } => {
                let (hot, cold) = if self.x[split] < threshold { (left, right) } else { (right, left) };
                let cover = self.tree[node].cover;
                if self.tree[hot].cover + self.tree[cold].cover != cover {
                    return Err(Error::validation("ensemble.cover", format!("node {node}: children covers do not sum to {cover}")));
                }
                let w = cover as f64;
                let hot_zero = self.tree[hot].cover as f64 / w;
                let cold_zero = self.tree[cold].cover as f64 / w;
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                // a feature seen earlier on the path is merged, not repeated
                if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(split)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(path, depth, k);
                    depth -= 1;
                }
                self.recurse(hot, depth + 1, off, hot_zero * in_zero, in_one, Some(split))?;
                self.recurse(cold, depth + 1, off, cold_zero * in_zero, 0.0, Some(split))?;
            }
        }
        Ok(())
    }
}

fn tree_depth(tree: &[TreeNode]) -> usize {
    fn go(tree: &[TreeNode], i: usize) -> usize {
        match tree[i].kind {
            NodeKind::Leaf { .. } => 0,
            NodeKind::Split { left, right, .. } => 1 + go(tree, left).max(go(tree, right)),
        }
    }
    go(tree, 0)
}

/// Exact Shapley values of the ensemble margin at `x`.
pub fn tree_shap(e: &TreeEnsemble, x: &[f64]) -> Result<ShapExplanation> {
    if x.len() != e.n_features {
        return Err(Error::Dimension { context: "tree_shap input", expected: e.n_features, got: x.len() });
    }
    let mut phi = vec![0.0; e.n_features];
    let none = vec![false; e.n_features];
    let mut base_value = e.base_score;
    for tree in &e.trees {
        let d = tree_depth(tree) + 2;
        let mut w = Walker { tree, x, phi: &mut phi, buf: vec![PathElement::default(); d * (d + 1) / 2 + d] };
        w.recurse(0, 0, 0, 1.0, 1.0, None)?;
        base_value += cond_expectation(tree, x, &none);
    }
    Ok(ShapExplanation { example_id: String::new(), phi, base_value, fx: e.margin_unchecked(x) })
}
