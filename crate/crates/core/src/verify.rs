//! Self-contained property suites behind the `verify` command, plus the
//! seeded fixtures they share with the test suites.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::ablate::spl;
use crate::agent::{explorer_actions, grad_check, grad_check_with, ExplorerConfig, GoalInput, GruParams, GruShape, RecordLine, Sequence};
use crate::error::Result;
use crate::gbt::{fit, GbtParams, Objective, TreeEnsemble, TreeNode};
use crate::gridworld::{
    gen_scene, near_reachable, normalize_deg, reachability_metadata, step, target_metadata, Action, AgentPose,
    ConceptValue, GenParams, MetadataConfig, MotionConfig, Scene, ConceptTracker,
};
use crate::probe::{pearson, roc_auc};
use crate::rng;
use crate::shap::{brute_force_shapley, tree_shap};
use crate::EpisodeOutcome;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// First few failing cases.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport { name, passed: 0, total: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.failures.len() < 5 {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

/// Random tree with consistent integer covers and thresholds in [0, 1).
pub fn random_tree(r: &mut rng::Rng, n_features: usize, max_depth: usize) -> Vec<TreeNode> {
    fn build(r: &mut rng::Rng, m: usize, depth: usize, cover: u64, out: &mut Vec<TreeNode>) -> usize {
        let me = out.len();
        out.push(TreeNode::leaf(0.0, cover));
        if depth == 0 || cover < 2 || r.random_bool(0.2) {
            out[me] = TreeNode::leaf(r.random_range(-2.0..2.0), cover);
            return me;
        }
        let left_cover = r.random_range(1..cover);
        let feature = r.random_range(0..m);
        let threshold = r.random_range(0.0..1.0);
        let l = build(r, m, depth - 1, left_cover, out);
        let rr = build(r, m, depth - 1, cover - left_cover, out);
        out[me] = TreeNode::split(feature, threshold, l, rr, cover);
        me
    }
    let mut out = Vec::new();
    let cover = r.random_range(2..500);
    build(r, n_features, max_depth, cover, &mut out);
    out
}

/// Seeded ensemble with 1..=`max_trees` trees of depth at most `max_depth`
/// over 1..=`max_features` features.
pub fn random_ensemble(seed: u64, max_trees: usize, max_depth: usize, max_features: usize) -> TreeEnsemble {
    let mut r = rng::derived(seed, "random-ensemble", 0);
    let m = r.random_range(1..=max_features);
    let n_trees = r.random_range(1..=max_trees);
    TreeEnsemble {
        trees: (0..n_trees).map(|_| random_tree(&mut r, m, max_depth)).collect(),
        base_score: r.random_range(-1.0..1.0),
        objective: Objective::Logistic,
        learning_rate: 0.3,
        n_features: m,
    }
}

/// TreeSHAP against subset enumeration on `ensembles` random ensembles.
pub fn shap_oracle_suite(ensembles: u64, inputs: usize) -> Result<(SuiteReport, f64)> {
    let mut rep = SuiteReport::new("shap-oracle");
    let mut worst = 0.0f64;
    for seed in 0..ensembles {
        let e = random_ensemble(seed, 20, 4, 12);
        let mut r = rng::derived(seed, "oracle-inputs", 0);
        for i in 0..inputs {
            let x: Vec<f64> = (0..e.n_features).map(|_| r.random_range(0.0..1.0)).collect();
            let fast = tree_shap(&e, &x)?;
            let slow = brute_force_shapley(&e, &x)?;
            let err = fast.phi.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            rep.check(err <= 1e-9, || format!("ensemble {seed} input {i}: error {err:e}"));
        }
    }
    Ok((rep, worst))
}

/// Local accuracy, dummy features and additivity on random ensembles.
pub fn local_accuracy_suite(ensembles: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("local-accuracy");
    for seed in 0..ensembles {
        let a = random_ensemble(seed, 10, 4, 10);
        let mut b = random_ensemble(seed + 10_000, 10, 4, 10);
        b.n_features = a.n_features;
        for t in b.trees.iter_mut() {
            for node in t.iter_mut() {
                if let crate::gbt::NodeKind::Split { feature, .. } = &mut node.kind {
                    *feature %= a.n_features;
                }
            }
        }
        let mut r = rng::derived(seed, "accuracy-inputs", 0);
        let x: Vec<f64> = (0..a.n_features).map(|_| r.random_range(0.0..1.0)).collect();
        let ea = tree_shap(&a, &x)?;
        let err = ea.local_accuracy_error();
        rep.check(err <= 1e-8, || format!("ensemble {seed}: local accuracy error {err:e}"));
        let used = used_features(&a);
        for f in 0..a.n_features {
            if !used[f] {
                rep.check(ea.phi[f] == 0.0, || format!("ensemble {seed}: unused feature {f} has phi {}", ea.phi[f]));
            }
        }
        let eb = tree_shap(&b, &x)?;
        let both = TreeEnsemble { trees: a.trees.iter().chain(&b.trees).cloned().collect(), ..a.clone() };
        let eab = tree_shap(&both, &x)?;
        let gap = eab.phi.iter().zip(ea.phi.iter().zip(&eb.phi)).map(|(s, (p, q))| (s - (p + q)).abs()).fold(0.0, f64::max);
        rep.check(gap <= 1e-12, || format!("ensemble {seed}: additivity gap {gap:e}"));
    }
    Ok(rep)
}

fn used_features(e: &TreeEnsemble) -> Vec<bool> {
    let mut used = vec![false; e.n_features];
    for node in e.trees.iter().flatten() {
        if let crate::gbt::NodeKind::Split { feature, .. } = node.kind {
            used[feature] = true;
        }
    }
    used
}

/// Constant fit, separable step, monotone training loss and lossless persistence.
pub fn gbt_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("gbt");
    let mut r = rng::derived(0, "gbt-suite", 0);
    let x: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();

    let params = GbtParams { rounds: 60, ..GbtParams::default() };
    let constant = fit(&x, &vec![2.5; x.len()], Objective::SquaredError, &params)?;
    let worst = constant.ensemble.predict_rows(&x)?.iter().map(|p| (p - 2.5).abs()).fold(0.0, f64::max);
    rep.check(worst <= 1e-3, || format!("constant target: max deviation {worst:e}"));

    let step_y: Vec<f64> = x.iter().map(|row| (row[1] > 0.2) as u8 as f64).collect();
    let step_fit = fit(&x, &step_y, Objective::Logistic, &GbtParams { rounds: 20, ..GbtParams::default() })?;
    let margins = step_fit.ensemble.predict_margin_rows(&x)?;
    let auc = roc_auc(&margins, &step_y.iter().map(|&v| v == 1.0).collect::<Vec<_>>());
    rep.check(auc == Some(1.0), || format!("step function: training AUC {auc:?}"));

    for (objective, y) in [
        (Objective::SquaredError, x.iter().map(|row| row[0] * row[2] + row[3].sin()).collect::<Vec<_>>()),
        (Objective::Logistic, x.iter().map(|row| (row[0] + 0.3 * row[3] > 0.0) as u8 as f64).collect()),
    ] {
        let f = fit(&x, &y, objective, &GbtParams { rounds: 30, max_depth: 4, gamma: 0.0, ..GbtParams::default() })?;
        let rises = f.train_loss.windows(2).filter(|w| w[1] > w[0]).count();
        rep.check(rises == 0, || format!("{objective:?}: training loss rose in {rises} rounds"));
        let back = TreeEnsemble::from_json(&f.ensemble.to_json(), "round trip")?;
        let drift = f.ensemble.predict_margin_rows(&x)?.iter().zip(back.predict_margin_rows(&x)?).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.check(drift == 0.0, || format!("{objective:?}: serialization drift {drift:e}"));
    }
    Ok(rep)
}

fn random_sequences(shape: GruShape, lens: &[usize], seed: u64) -> Vec<Sequence> {
    let mut r = rng::derived(seed, "grad-seqs", 0);
    let sensor = shape.n_classes == 0;
    let obs_len = shape.input_dim - if sensor { 3 } else { shape.goal_dim };
    lens.iter()
        .enumerate()
        .map(|(i, &n)| Sequence {
            obs: (0..n).map(|_| (0..obs_len).map(|_| StandardNormal.sample(&mut r)).collect()).collect(),
            goal: if sensor {
                GoalInput::Sensor((0..n).map(|_| [r.random(), r.random(), r.random()]).collect())
            } else {
                GoalInput::Class(i % shape.n_classes)
            },
            targets: (0..n).map(|_| Action::ALL[r.random_range(0..Action::COUNT)]).collect(),
        })
        .collect()
}

/// Central-difference gradient checks on small seeded models.
pub fn grad_suite(models: u64) -> (SuiteReport, f64) {
    let mut rep = SuiteReport::new("grad-check");
    let mut worst = 0.0f64;
    for seed in 0..models {
        let mut r = rng::derived(seed, "grad-shape", 0);
        let hidden = r.random_range(2..=8);
        let shape = if seed % 3 == 2 {
            GruShape { input_dim: r.random_range(4..=8), hidden_dim: hidden, n_classes: 0, goal_dim: 0 }
        } else {
            let goal_dim = r.random_range(1..=3);
            GruShape { input_dim: goal_dim + r.random_range(1..=5), hidden_dim: hidden, n_classes: 2, goal_dim }
        };
        let p = GruParams::init(shape, seed);
        let lens: Vec<usize> = (0..2).map(|_| r.random_range(1..=5)).collect();
        let seqs = random_sequences(shape, &lens, seed);
        let err = grad_check(&p, &seqs);
        worst = worst.max(err);
        rep.check(err <= 1e-4, || format!("model {seed}: relative error {err:e}"));
        let caught = grad_check_with(&p, &seqs, |g| g.u_h.data[0] += 0.05);
        rep.check(caught > 1e-2, || format!("model {seed}: corrupted gradient passed ({caught:e})"));
    }
    (rep, worst)
}

/// Geometry and bookkeeping invariants of the concept extractor.
pub fn metadata_suite(scenes: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("metadata");
    let cfg = MetadataConfig::default();
    let motion = MotionConfig::default();
    let shift = (motion.rotation_step as u32 / cfg.reach.angle_step) as usize;
    let n_angles = cfg.reach.n_angles();
    for seed in 0..scenes {
        let scene = gen_scene(format!("m{seed}"), seed, &GenParams::default())?;
        let cells = scene.reachable();
        let target = scene.objects()[0].cell;
        for (i, &cell) in cells.iter().enumerate().step_by(3) {
            for rot in (0..360).step_by(motion.rotation_step as usize) {
                let a = AgentPose::at_cell(&scene, cell, rot);
                let b = AgentPose::at_cell(&scene, cell, rot + motion.rotation_step);
                let (ta, tb) = (
                    target_metadata(&scene, &a, target, &cfg.visibility),
                    target_metadata(&scene, &b, target, &cfg.visibility),
                );
                let expect = normalize_deg(ta.theta_t - motion.rotation_step as f64);
                let gap = angular_gap(tb.theta_t, expect);
                rep.check(ta.r_t == 0.0 || gap <= 1e-9, || format!("scene {seed} cell {i} rot {rot}: theta_t {} vs {expect}", tb.theta_t));
                let (ra, rb) = (reachability_metadata(&scene, &a, &cfg.reach), reachability_metadata(&scene, &b, &cfg.reach));
                let rotated = (0..ra.len()).all(|j| {
                    let (radius, k) = (j / n_angles, j % n_angles);
                    rb[j] == ra[radius * n_angles + (k + shift) % n_angles]
                });
                rep.check(rotated, || format!("scene {seed} cell {i} rot {rot}: reach bits do not rotate"));
            }
        }
        explorer_invariants(&scene, seed, &cfg, &motion, &mut rep)?;
    }
    threshold_cases(&mut rep)?;
    Ok(rep)
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn explorer_invariants(scene: &Scene, seed: u64, cfg: &MetadataConfig, motion: &MotionConfig, rep: &mut SuiteReport) -> Result<()> {
    let start = AgentPose::at_cell(scene, scene.reachable()[0], 0);
    let explorer = ExplorerConfig { len_cap: 500, ..ExplorerConfig::default() };
    let actions = explorer_actions(scene, &start, seed, &explorer, motion)?;
    let mut tracker = ConceptTracker::new(scene, cfg, scene.objects()[0].cell, start);
    let mut pose = start;
    let mut collided = false;
    for (t, &a) in actions.iter().enumerate() {
        let c = tracker.observe(&pose, collided);
        let chain = (!c.visited_lrh || c.visited_lr) && (!c.visited_lr || c.visited_l);
        rep.check(chain, || format!("scene {seed} step {t}: visited flags {:?}", (c.visited_l, c.visited_lr, c.visited_lrh)));
        let next = step(scene, &pose, a, motion)?;
        if a == Action::MoveAhead {
            let unchanged = next.pose == pose;
            rep.check(next.collision == unchanged, || format!("scene {seed} step {t}: collision {} but pose unchanged {unchanged}", next.collision));
        } else {
            rep.check(!next.collision, || format!("scene {seed} step {t}: {a} reported a collision"));
        }
        pose = next.pose;
        collided = next.collision;
    }
    Ok(())
}

/// Probe points exactly at and just beyond `grid_size / sqrt(2)`.
fn threshold_cases(rep: &mut SuiteReport) -> Result<()> {
    // lone reachable cell (2, 2); its corner is at exactly the threshold
    let scene = Scene::new("edge", 0.25, 5, 5, vec![(2, 2)], vec![], vec![])?;
    let (cx, cz) = scene.center((2, 2));
    let g = scene.grid_size();
    for (dx, dz) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
        let at = (cx + dx * g / 2.0, cz + dz * g / 2.0);
        rep.check(near_reachable(&scene, at), || format!("corner {at:?} at the threshold is not reachable"));
        let beyond = (at.0 + dx * 1e-9, at.1 + dz * 1e-9);
        rep.check(!near_reachable(&scene, beyond), || format!("point {beyond:?} beyond the threshold is reachable"));
    }
    let on_center = near_reachable(&scene, (cx, cz));
    rep.check(on_center, || "cell center is not reachable".into());
    Ok(())
}

/// Hand-checked metric values.
pub fn metrics_suite() -> SuiteReport {
    let mut rep = SuiteReport::new("metrics");
    let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).value;
    rep.check((r - 0.9820).abs() <= 1e-4, || format!("pearson hand case {r}"));
    let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
    rep.check(auc == Some(0.75), || format!("roc_auc hand case {auc:?}"));
    let o = |success, shortest_length, path_length| EpisodeOutcome { success, path_length, shortest_length, steps: 1 };
    for (outcomes, want) in [
        (vec![o(true, 4.0, 4.0)], 1.0),
        (vec![o(false, 4.0, 4.0)], 0.0),
        (vec![o(true, 4.0, 8.0), o(false, 4.0, 4.0)], 0.25),
    ] {
        let got = spl(&outcomes);
        rep.check(got == want, || format!("spl {got} expected {want}"));
    }
    rep
}

/// Synthetic rollout log in which one hidden unit carries a concept.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFixture {
    pub episodes: usize,
    pub steps: usize,
    pub hidden: usize,
    pub unit: usize,
    pub concept: String,
    pub noise_sd: f64,
}

impl Default for PlantedFixture {
    fn default() -> Self {
        PlantedFixture { episodes: 10, steps: 100, hidden: 64, unit: 17, concept: "R_t".into(), noise_sd: 0.01 }
    }
}

impl PlantedFixture {
    /// Records for `seed`. Episode `e` gets the same concept stream for
    /// every call; `clamp` replaces the planted unit with a constant.
    pub fn records(&self, seed: u64, clamp: Option<f64>) -> Vec<RecordLine> {
        let noise = Normal::new(0.0, self.noise_sd).expect("valid sd");
        let mut out = Vec::with_capacity(self.episodes * self.steps);
        for e in 0..self.episodes {
            let mut concept_rng = rng::derived(seed, "planted-concept", e as u64);
            let mut hidden_rng = rng::derived(seed, "planted-hidden", e as u64);
            for s in 0..self.steps {
                let value: f64 = concept_rng.random_range(0.0..3.0);
                let mut hidden: Vec<f64> = (0..self.hidden).map(|_| hidden_rng.random_range(-1.0..1.0)).collect();
                hidden[self.unit] = match clamp {
                    Some(c) => c,
                    None => value + noise.sample(&mut hidden_rng),
                };
                out.push(RecordLine {
                    episode: format!("p{e:03}"),
                    step: s,
                    action: Action::MoveAhead,
                    collision: false,
                    pose: AgentPose { x: 0.0, z: 0.0, rotation: 0, horizon: 0 },
                    hidden,
                    concepts: BTreeMap::from([(self.concept.clone(), ConceptValue::Scalar(value))]),
                });
            }
        }
        out
    }

    /// First 60% of the episodes train, the rest validate.
    pub fn manifest(&self) -> crate::probe::SplitManifest {
        let ids: Vec<String> = (0..self.episodes).map(|e| format!("p{e:03}")).collect();
        let cut = self.episodes * 3 / 5;
        crate::probe::SplitManifest { train: ids[..cut].to_vec(), val: ids[cut..].to_vec() }
    }
}

/// Probe + explain on planted logs recovers the planted unit.
pub fn planted_suite(seeds: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("planted-concept");
    let fx = PlantedFixture::default();
    let params = GbtParams { rounds: 30, max_depth: 4, ..GbtParams::default() };
    for seed in 0..seeds {
        let recs = fx.records(seed, None);
        let ds = crate::probe::build_dataset(&recs, &fx.concept, &fx.manifest())?;
        let (e, m) = crate::probe::train_probe(&ds, &params)?;
        let ex = crate::pipeline::explain_probe(&e, &ds, 200, 1)?;
        rep.check(ex.ranking.order[0] == fx.unit, || format!("seed {seed}: top unit {}", ex.ranking.order[0]));
        rep.check(m.pearson >= 0.9, || format!("seed {seed}: pearson {}", m.pearson));
    }
    Ok(rep)
}

/// Every suite at its default size, in a fixed order.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        shap_oracle_suite(200, 10)?.0,
        local_accuracy_suite(100)?,
        gbt_suite()?,
        grad_suite(12).0,
        metadata_suite(3)?,
        metrics_suite(),
        planted_suite(5)?,
    ])
}
