//! Unit-removal experiments: clamp hidden units to their training means and
//! measure navigation performance.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{rollout_policy, GruParams, Intervention, RecordLine, TaskSpec, WorldConfig};
use crate::error::{Error, Result};
use crate::gridworld::Scene;
use crate::rng;
use crate::shap::UnitRanking;

pub use crate::agent::EpisodeOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    pub mean: Vec<f64>,
    /// Population variance per unit.
    pub variance: Vec<f64>,
}

pub fn unit_means(records: &[RecordLine]) -> Result<UnitStats> {
    let first = records.first().ok_or_else(|| Error::validation("ablation.records", "no training records"))?;
    let h = first.hidden.len();
    let n = records.len() as f64;
    let mut mean = vec![0.0; h];
    for r in records {
        if r.hidden.len() != h {
            return Err(Error::Dimension { context: "record hidden width", expected: h, got: r.hidden.len() });
        }
        mean.iter_mut().zip(&r.hidden).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![0.0; h];
    for r in records {
        for ((s, v), m) in variance.iter_mut().zip(&r.hidden).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= n);
    Ok(UnitStats { mean, variance })
}

/// Success weighted by path length.
pub fn spl(outcomes: &[EpisodeOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let total: f64 = outcomes
        .iter()
        .map(|o| {
            if !o.success {
                0.0
            } else if o.shortest_length <= 0.0 {
                1.0
            } else {
                o.shortest_length / o.path_length.max(o.shortest_length)
            }
        })
        .sum();
    total / outcomes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AblationStrategy {
    /// First `k` units of one concept's ranking.
    ConceptTopk { concept: String, k: usize },
    /// `k` units drawn uniformly without replacement.
    Random { k: usize, seed: u64 },
    /// Units outside every concept's top-`q` set.
    Irrelevant { fraction: f64 },
}

impl AblationStrategy {
    pub fn name(&self) -> String {
        match self {
            AblationStrategy::ConceptTopk { concept, .. } => format!("topk:{concept}"),
            AblationStrategy::Random { .. } => "random".into(),
            AblationStrategy::Irrelevant { .. } => "irrelevant".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub strategy: AblationStrategy,
    pub means: Vec<f64>,
}

/// Settings for the irrelevant-unit pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrrelevantConfig {
    /// Share of units per concept counted as relevant.
    pub top_fraction: f64,
}

impl Default for IrrelevantConfig {
    fn default() -> Self {
        IrrelevantConfig { top_fraction: 0.1 }
    }
}

pub fn select_units(spec: &AblationSpec, rankings: &[UnitRanking], irrelevant: &IrrelevantConfig) -> Result<Vec<usize>> {
    let h = spec.means.len();
    let too_many = |k: usize, pool: usize| Error::validation("ablation.size", format!("{k} units requested from a pool of {pool}"));
    match &spec.strategy {
        AblationStrategy::ConceptTopk { concept, k } => {
            let r = rankings
                .iter()
                .find(|r| &r.concept == concept)
                .ok_or_else(|| Error::validation("ablation.ranking", format!("no ranking for concept {concept:?}")))?;
            if *k > r.order.len() || r.order.len() != h {
                return Err(too_many(*k, r.order.len()));
            }
            Ok(r.order[..*k].to_vec())
        }
        AblationStrategy::Random { k, seed } => {
            if *k > h {
                return Err(too_many(*k, h));
            }
            let mut rng = rng::derived(*seed, "ablation-random", 0);
            let mut units = sample(&mut rng, h, *k).into_vec();
            units.sort_unstable();
            Ok(units)
        }
        AblationStrategy::Irrelevant { fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::Config(format!("irrelevant fraction {fraction} outside [0, 1]")));
            }
            let k = (fraction * h as f64).round() as usize;
            let q = ((irrelevant.top_fraction * h as f64).round() as usize).max(1);
            // best (lowest) rank position of each unit over all concepts
            let mut best_rank = vec![usize::MAX; h];
            let mut relevant = BTreeSet::new();
            for r in rankings {
                if r.order.len() != h {
                    return Err(Error::Dimension { context: "ranking width", expected: h, got: r.order.len() });
                }
                for (pos, &u) in r.order.iter().enumerate() {
                    best_rank[u] = best_rank[u].min(pos);
                    if pos < q {
                        relevant.insert(u);
                    }
                }
            }
            let mut pool: Vec<usize> = (0..h).filter(|u| !relevant.contains(u)).collect();
            // least relevant first; fall back to relevant units only when the
            // complement is too small
            pool.sort_by(|&a, &b| best_rank[b].cmp(&best_rank[a]).then(a.cmp(&b)));
            let mut rest: Vec<usize> = relevant.into_iter().collect();
            rest.sort_by(|&a, &b| best_rank[b].cmp(&best_rank[a]).then(a.cmp(&b)));
            pool.extend(rest);
            if k > pool.len() {
                return Err(too_many(k, pool.len()));
            }
            let mut units = pool[..k].to_vec();
            units.sort_unstable();
            Ok(units)
        }
    }
}

pub fn clamp_intervention(units: &[usize], means: &[f64]) -> Intervention {
    Intervention { clamp_units: units.iter().map(|&u| (u, means[u])).collect::<BTreeMap<_, _>>(), ..Default::default() }
}

/// Runs every episode under one intervention, in parallel, in episode order.
pub fn evaluate(
    scenes: &[Scene],
    tasks: &[TaskSpec],
    p: &GruParams,
    interv: &Intervention,
    world: &WorldConfig,
) -> Result<Vec<EpisodeOutcome>> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let scene = scenes
                .iter()
                .find(|s| s.id() == t.scene_id)
                .ok_or_else(|| Error::validation("task.scene", format!("unknown scene {}", t.scene_id)))?;
            Ok(rollout_policy(scene, t, p, interv, world, &format!("eval{i:04}"))?.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub size: usize,
    pub seed: u64,
    pub spl: f64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
}

pub fn summarize(strategy: &str, size: usize, seed: u64, outcomes: &[EpisodeOutcome]) -> CurveRow {
    let n = outcomes.len().max(1) as f64;
    CurveRow {
        strategy: strategy.to_string(),
        size,
        seed,
        spl: spl(outcomes),
        success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
        mean_episode_length: outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n,
    }
}

/// Which strategies to sweep; sizes come from `fractions` of the hidden size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub topk_concepts: Vec<String>,
    pub random: bool,
    pub irrelevant: Vec<f64>,
    pub irrelevant_pool: IrrelevantConfig,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10],
            topk_concepts: vec!["visible_t".into()],
            random: true,
            irrelevant: vec![0.25, 0.5],
            irrelevant_pool: IrrelevantConfig::default(),
            seeds: vec![0],
        }
    }
}

pub fn removal_sizes(fractions: &[f64], hidden: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * hidden as f64).round() as usize).collect();
    sizes.dedup();
    sizes
}

/// Full ablation curve table. Every strategy emits one row per size and
/// seed; deterministic strategies repeat their metrics across seeds.
#[allow(clippy::too_many_arguments)]
pub fn ablate_eval(
    scenes: &[Scene],
    tasks: &[TaskSpec],
    p: &GruParams,
    stats: &UnitStats,
    rankings: &[UnitRanking],
    cfg: &SweepConfig,
    world: &WorldConfig,
) -> Result<Vec<CurveRow>> {
    let h = p.hidden_dim();
    if stats.mean.len() != h {
        return Err(Error::Dimension { context: "unit means", expected: h, got: stats.mean.len() });
    }
    let sizes = removal_sizes(&cfg.fractions, h);
    let mut strategies: Vec<(String, Box<dyn Fn(usize, u64) -> AblationStrategy>)> = Vec::new();
    for c in &cfg.topk_concepts {
        let c = c.clone();
        strategies.push((format!("topk:{c}"), Box::new(move |k, _| AblationStrategy::ConceptTopk { concept: c.clone(), k })));
    }
    if cfg.random {
        strategies.push(("random".into(), Box::new(|k, seed| AblationStrategy::Random { k, seed })));
    }
    let mut cache: BTreeMap<Vec<usize>, Vec<EpisodeOutcome>> = BTreeMap::new();
    let mut run = |units: Vec<usize>| -> Result<Vec<EpisodeOutcome>> {
        if let Some(o) = cache.get(&units) {
            return Ok(o.clone());
        }
        let o = evaluate(scenes, tasks, p, &clamp_intervention(&units, &stats.mean), world)?;
        cache.insert(units, o.clone());
        Ok(o)
    };
    let mut rows = Vec::new();
    for (name, make) in &strategies {
        for &size in &sizes {
            for &seed in &cfg.seeds {
                let spec = AblationSpec { strategy: make(size, seed), means: stats.mean.clone() };
                let units = select_units(&spec, rankings, &cfg.irrelevant_pool)?;
                rows.push(summarize(name, size, seed, &run(units)?));
            }
        }
    }
    for &fraction in &cfg.irrelevant {
        let spec = AblationSpec { strategy: AblationStrategy::Irrelevant { fraction }, means: stats.mean.clone() };
        let units = select_units(&spec, rankings, &cfg.irrelevant_pool)?;
        let size = units.len();
        let outcomes = run(units)?;
        for &seed in &cfg.seeds {
            rows.push(summarize(&format!("irrelevant:{fraction}"), size, seed, &outcomes));
        }
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "size", "seed", "spl", "success_rate", "mean_episode_length"]).expect("in-memory write");
    for r in rows {
        w.serialize((&r.strategy, r.size, r.seed, r.spl, r.success_rate, r.mean_episode_length)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
