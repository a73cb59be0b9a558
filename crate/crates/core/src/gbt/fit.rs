use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{NodeKind, Objective, Tree, TreeEnsemble, TreeNode};
use crate::agent::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Exact greedy fitting draws no random numbers; kept for provenance.
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { rounds: 100, max_depth: 10, learning_rate: 0.3, lambda: 1.0, gamma: 0.0, min_child_weight: 1.0, seed: 0 }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.min_child_weight >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid gbt parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub ensemble: TreeEnsemble,
    /// Set when the targets carry no signal to fit (single class).
    pub degenerate: bool,
    /// Mean training loss before the first round and after each round.
    pub train_loss: Vec<f64>,
}

pub fn objective_loss(objective: Objective, margins: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    match objective {
        Objective::SquaredError => margins.iter().zip(y).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / n,
        Objective::Logistic => {
            // log(1 + e^m) - y m, computed stably
            margins
                .iter()
                .zip(y)
                .map(|(&m, &t)| m.max(0.0) + (-m.abs()).exp().ln_1p() - t * m)
                .sum::<f64>()
                / n
        }
    }
}

fn grad_hess(objective: Objective, margin: f64, y: f64) -> (f64, f64) {
    match objective {
        Objective::SquaredError => (margin - y, 1.0),
        Objective::Logistic => {
            let p = sigmoid(margin);
            (p - y, p * (1.0 - p))
        }
    }
}

/// Gradient boosting with exact greedy, level-wise tree growth.
pub fn fit(x: &[Vec<f64>], y: &[f64], objective: Objective, params: &GbtParams) -> Result<Fit> {
    params.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(Error::validation("gbt.rows", format!("need at least 2 rows, got {n}")));
    }
    if y.len() != n {
        return Err(Error::Dimension { context: "gbt targets", expected: n, got: y.len() });
    }
    let m = x[0].len();
    if let Some(r) = x.iter().position(|r| r.len() != m) {
        return Err(Error::Dimension { context: "gbt feature row", expected: m, got: x[r].len() });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in gbt training data".into()));
    }
    let base = TreeEnsemble::base_only(objective, 0.0, params.learning_rate, m);
    if objective == Objective::Logistic {
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation("gbt.binary_target", format!("logistic target {bad} not in {{0, 1}}")));
        }
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == n {
            log::warn!("single-class target: returning a base-only ensemble");
            let loss = objective_loss(objective, &vec![0.0; n], y);
            return Ok(Fit { ensemble: base, degenerate: true, train_loss: vec![loss] });
        }
    }

    let columns: Vec<Vec<f64>> = (0..m).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    let sorted: Vec<Vec<u32>> = columns
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut ensemble = base;
    let mut margins = vec![ensemble.base_score; n];
    let mut train_loss = vec![objective_loss(objective, &margins, y)];
    let mut grads = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.rounds {
        for i in 0..n {
            (grads[i], hess[i]) = grad_hess(objective, margins[i], y[i]);
        }
        let (tree, leaf_of) = grow_tree(&columns, &sorted, &grads, &hess, params);
        for i in 0..n {
            if let NodeKind::Leaf { value } = tree[leaf_of[i] as usize].kind {
                margins[i] += value;
            }
        }
        ensemble.trees.push(tree);
        train_loss.push(objective_loss(objective, &margins, y));
    }
    Ok(Fit { ensemble, degenerate: false, train_loss })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const NONE: u32 = u32::MAX;

/// Grows one tree; returns it with the leaf index of every row.
fn grow_tree(columns: &[Vec<f64>], sorted: &[Vec<u32>], g: &[f64], h: &[f64], params: &GbtParams) -> (Tree, Vec<u32>) {
    let n = g.len();
    let lambda = params.lambda;
    let leaf = |gs: f64, hs: f64| -gs / (hs + lambda) * params.learning_rate;

    let mut tree: Tree = vec![TreeNode::leaf(0.0, n as u64)];
    // node index of each row, and the slot of that node in the current level
    let mut node_of = vec![0u32; n];
    let mut slot_of = vec![0u32; n];
    let mut level: Vec<usize> = vec![0];
    let (g0, h0) = (g.iter().sum::<f64>(), h.iter().sum::<f64>());
    let mut stats: Vec<(f64, f64)> = vec![(g0, h0)];

    for depth in 0..=params.max_depth {
        if level.is_empty() {
            break;
        }
        let best: Vec<Option<Candidate>> = if depth == params.max_depth {
            vec![None; level.len()]
        } else {
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..columns.len())
                .into_par_iter()
                .map(|f| scan_feature(f, &columns[f], &sorted[f], &slot_of, &stats, g, h, params))
                .collect();
            // fixed feature order keeps the choice independent of worker count
            (0..level.len())
                .map(|s| {
                    let mut b: Option<Candidate> = None;
                    for cands in &per_feature {
                        if let Some(c) = cands[s] {
                            if b.is_none_or(|bb| c.gain > bb.gain) {
                                b = Some(c);
                            }
                        }
                    }
                    b
                })
                .collect()
        };

        let mut next_level = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32)>> = vec![None; level.len()];
        for (s, &node) in level.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let (l, r) = (tree.len(), tree.len() + 1);
                    tree.push(TreeNode::leaf(0.0, 0));
                    tree.push(TreeNode::leaf(0.0, 0));
                    tree[node].kind = NodeKind::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
                    child_slots[s] = Some((next_level.len() as u32, next_level.len() as u32 + 1));
                    next_level.push(l);
                    next_level.push(r);
                }
                None => {
                    let (gs, hs) = stats[s];
                    tree[node].kind = NodeKind::Leaf { value: leaf(gs, hs) };
                }
            }
        }
        let mut next_stats = vec![(0.0, 0.0); next_level.len()];
        let mut counts = vec![0u64; next_level.len()];
        for i in 0..n {
            let s = slot_of[i];
            if s == NONE {
                continue;
            }
            match child_slots[s as usize] {
                Some((ls, rs)) => {
                    let NodeKind::Split { feature, threshold, left, right } = tree[node_of[i] as usize].kind else {
                        unreachable!("slot was split")
                    };
                    let (cs, cn) = if columns[feature][i] < threshold { (ls, left) } else { (rs, right) };
                    slot_of[i] = cs;
                    node_of[i] = cn as u32;
                    next_stats[cs as usize].0 += g[i];
                    next_stats[cs as usize].1 += h[i];
                    counts[cs as usize] += 1;
                }
                None => slot_of[i] = NONE,
            }
        }
        for (s, &node) in next_level.iter().enumerate() {
            tree[node].cover = counts[s];
        }
        level = next_level;
        stats = next_stats;
    }
    (tree, node_of)
}

/// Best split per level slot along one feature.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    feature: usize,
    col: &[f64],
    order: &[u32],
    slot_of: &[u32],
    stats: &[(f64, f64)],
    g: &[f64],
    h: &[f64],
    params: &GbtParams,
) -> Vec<Option<Candidate>> {
    let k = stats.len();
    let mut gl = vec![0.0; k];
    let mut hl = vec![0.0; k];
    let mut seen = vec![false; k];
    let mut last = vec![0.0; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let lambda = params.lambda;
    for &row in order {
        let i = row as usize;
        let s = slot_of[i];
        if s == NONE {
            continue;
        }
        let s = s as usize;
        let v = col[i];
        if seen[s] && v > last[s] {
            let (gt, ht) = stats[s];
            let (gls, hls) = (gl[s], hl[s]);
            let (grs, hrs) = (gt - gls, ht - hls);
            if hls >= params.min_child_weight && hrs >= params.min_child_weight {
                let gain = 0.5 * (gls * gls / (hls + lambda) + grs * grs / (hrs + lambda) - gt * gt / (ht + lambda))
                    - params.gamma;
                if gain > best[s].map_or(0.0, |b| b.gain) {
                    let mid = last[s] + (v - last[s]) / 2.0;
                    let threshold = if mid > last[s] { mid } else { v };
                    best[s] = Some(Candidate { gain, feature, threshold });
                }
            }
        }
        gl[s] += g[i];
        hl[s] += h[i];
        seen[s] = true;
        last[s] = v;
    }
    best
}
