use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gru::{gru_step, gru_step_backward, policy_logits, GruParams, GruShape, StepCache};
use super::matrix::Matrix;
use super::task::{expert_actions, gps_triple, Expert, TaskMode, TaskSpec, WorldConfig};
use crate::error::{Error, Result};
use crate::gridworld::{render_observation, step, Action, AgentPose, Cell, ConceptTracker, DistanceField, Scene};
use crate::rng;

/// Goal part of the network input for one training sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum GoalInput {
    /// Row of the trainable goal table.
    Class(usize),
    /// Per-step distance/bearing sensor triple.
    Sensor(Vec<[f64; 3]>),
}

/// One supervised episode: observations, goal input and expert labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub obs: Vec<Vec<f64>>,
    pub goal: GoalInput,
    pub targets: Vec<Action>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn input(&self, p: &GruParams, t: usize) -> Vec<f64> {
        let mut x = self.obs[t].clone();
        match &self.goal {
            GoalInput::Class(c) => x.extend_from_slice(p.goal_table.row(*c)),
            GoalInput::Sensor(s) => x.extend_from_slice(&s[t]),
        }
        x
    }

    /// Records the expert demonstration for `task`.
    pub fn from_expert(scene: &Scene, task: &TaskSpec, world: &WorldConfig) -> Result<Sequence> {
        task.validate(scene)?;
        let actions = expert_actions(scene, task, world)?;
        let mut tracker = ConceptTracker::new(scene, &world.metadata, task.target_cell, task.spawn);
        let mut pose = task.spawn;
        let mut collided = false;
        let mut obs = Vec::with_capacity(actions.len());
        let mut sensor = Vec::with_capacity(actions.len());
        for &a in &actions {
            let c = tracker.observe(&pose, collided);
            obs.push(render_observation(scene, &pose, task.observed_class(), world.patch, &world.metadata.visibility));
            sensor.push(gps_triple(&c));
            let r = step(scene, &pose, a, &world.motion)?;
            pose = r.pose;
            collided = r.collision;
        }
        let goal = match task.mode {
            TaskMode::ObjectNav => GoalInput::Class(task.target_class.expect("validated")),
            TaskMode::PointNav => GoalInput::Sensor(sensor),
        };
        Ok(Sequence { obs, goal, targets: actions })
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy over every step of `seqs` and its gradient.
///
/// Gradients are truncated every `bptt_len` steps: the hidden state still
/// flows across chunk boundaries, but no gradient does.
pub fn loss_and_grad(p: &GruParams, seqs: &[Sequence], bptt_len: usize) -> (f64, GruParams) {
    let mut g = p.zeros_like();
    let total: usize = seqs.iter().map(Sequence::len).sum();
    if total == 0 {
        return (0.0, g);
    }
    let norm = 1.0 / total as f64;
    let hd = p.hidden_dim();
    let obs_len = p.input_dim() - match seqs[0].goal {
        GoalInput::Class(_) => p.goal_table.cols,
        GoalInput::Sensor(_) => 3,
    };
    let mut loss = 0.0;
    for seq in seqs {
        let mut caches: Vec<StepCache> = Vec::with_capacity(seq.len());
        let mut dlogits: Vec<[f64; Action::COUNT]> = Vec::with_capacity(seq.len());
        let mut h = vec![0.0; hd];
        for t in 0..seq.len() {
            let c = gru_step(p, &seq.input(p, t), &h);
            let logits = policy_logits(p, &c.h);
            let lp = log_softmax(&logits);
            let y = seq.targets[t].index();
            loss -= lp[y] * norm;
            let mut d = [0.0; Action::COUNT];
            for k in 0..Action::COUNT {
                d[k] = (lp[k].exp() - if k == y { 1.0 } else { 0.0 }) * norm;
            }
            h = c.h.clone();
            caches.push(c);
            dlogits.push(d);
        }
        let mut dx = vec![0.0; p.input_dim()];
        let mut dh_prev = vec![0.0; hd];
        let mut end = seq.len();
        while end > 0 {
            let start = end.saturating_sub(bptt_len.max(1));
            let mut carry = vec![0.0; hd];
            for t in (start..end).rev() {
                let c = &caches[t];
                g.policy_w.add_outer(&dlogits[t], &c.h);
                g.policy_b.data.iter_mut().zip(&dlogits[t]).for_each(|(b, d)| *b += d);
                let mut dh = carry;
                p.policy_w.mul_t_vec_acc(&dlogits[t], &mut dh);
                gru_step_backward(p, c, &dh, &mut g, &mut dh_prev, &mut dx);
                if let GoalInput::Class(cls) = seq.goal {
                    let row = &mut g.goal_table.data[cls * p.goal_table.cols..(cls + 1) * p.goal_table.cols];
                    row.iter_mut().zip(&dx[obs_len..]).for_each(|(a, b)| *a += b);
                }
                carry = dh_prev.clone();
            }
            end = start;
        }
    }
    (loss, g)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: GruParams,
    v: GruParams,
}

impl Adam {
    pub fn new(p: &GruParams, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: p.zeros_like(), v: p.zeros_like() }
    }

    pub fn update(&mut self, p: &mut GruParams, g: &GruParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = p.tensors_mut();
        let grads = g.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((_, w), (_, gt)), (_, m)), (_, v)) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..w.data.len() {
                let gi = gt.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                w.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// How training and evaluation episodes are drawn from scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSampler {
    pub mode: TaskMode,
    /// Geodesic spawn-to-target distance bounds, in cells.
    pub min_distance: u32,
    pub max_distance: u32,
    pub success_distance: f64,
    pub max_steps: usize,
}

impl Default for TaskSampler {
    fn default() -> Self {
        TaskSampler { mode: TaskMode::ObjectNav, min_distance: 2, max_distance: 12, success_distance: 1.0, max_steps: 500 }
    }
}

impl TaskSampler {
    pub fn sample(&self, scene: &Scene, rng: &mut rng::Rng) -> Result<TaskSpec> {
        let targets: Vec<(Option<usize>, Cell)> = match self.mode {
            TaskMode::ObjectNav => scene.objects().iter().map(|o| (Some(o.class_id), o.cell)).collect(),
            TaskMode::PointNav => scene.reachable().iter().map(|&c| (None, c)).collect(),
        };
        if targets.is_empty() {
            return Err(Error::validation("task.target", format!("scene {} has no targets", scene.id())));
        }
        let (target_class, target_cell) = targets[rng.random_range(0..targets.len())];
        let field = DistanceField::from_sources(scene, [target_cell]);
        let spawns: Vec<Cell> = scene
            .reachable()
            .iter()
            .copied()
            .filter(|&c| field.get(c).is_some_and(|d| (self.min_distance..=self.max_distance).contains(&d)))
            .collect();
        if spawns.is_empty() {
            return Err(Error::validation(
                "task.spawn",
                format!("no spawn cell within {}..={} cells of {target_cell:?} in {}", self.min_distance, self.max_distance, scene.id()),
            ));
        }
        let cell = spawns[rng.random_range(0..spawns.len())];
        let rotation = 90 * rng.random_range(0..4);
        Ok(TaskSpec {
            mode: self.mode,
            scene_id: scene.id().to_string(),
            spawn: AgentPose::at_cell(scene, cell, rotation),
            target_class,
            target_cell,
            success_distance: self.success_distance,
            max_steps: self.max_steps,
        })
    }
}

/// Draws `n` tasks round-robin over `scenes`.
pub fn sample_tasks(scenes: &[Scene], sampler: &TaskSampler, n: usize, seed: u64, label: &str) -> Result<Vec<TaskSpec>> {
    if scenes.is_empty() {
        return Err(Error::Config("at least one scene is required".into()));
    }
    let mut rng = rng::derived(seed, label, 0);
    (0..n).map(|i| sampler.sample(&scenes[i % scenes.len()], &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub bptt_len: usize,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    pub episodes: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-3,
            bptt_len: 20,
            batch_size: 8,
            episodes: 200,
            clip_norm: 5.0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: GruParams,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// `(epoch, params)`; epoch 0 is the initialization.
    pub checkpoints: Vec<(usize, GruParams)>,
}

pub fn model_shape(sampler: &TaskSampler, world: &WorldConfig, hidden_dim: usize, n_classes: usize, goal_dim: usize) -> GruShape {
    match sampler.mode {
        TaskMode::ObjectNav => GruShape { input_dim: world.obs_dim() + goal_dim, hidden_dim, n_classes, goal_dim },
        TaskMode::PointNav => GruShape { input_dim: world.obs_dim() + 3, hidden_dim, n_classes: 0, goal_dim: 0 },
    }
}

/// Behavior cloning from shortest-path expert demonstrations.
pub fn bc_train(
    scenes: &[Scene],
    sampler: &TaskSampler,
    cfg: &TrainConfig,
    world: &WorldConfig,
    shape: GruShape,
) -> Result<TrainOutput> {
    let tasks = sample_tasks(scenes, sampler, cfg.episodes, cfg.seed, "bc-tasks")?;
    let seqs = tasks
        .iter()
        .map(|t| {
            let scene = scenes.iter().find(|s| s.id() == t.scene_id).expect("sampled from scenes");
            Sequence::from_expert(scene, t, world)
        })
        .collect::<Result<Vec<_>>>()?;
    train_on(&seqs, cfg, GruParams::init(shape, cfg.seed))
}

/// Optimizes `init` on fixed demonstrations.
pub fn train_on(seqs: &[Sequence], cfg: &TrainConfig, init: GruParams) -> Result<TrainOutput> {
    if seqs.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    if cfg.batch_size == 0 || cfg.bptt_len == 0 {
        return Err(Error::Config("batch_size and bptt_len must be positive".into()));
    }
    for s in seqs {
        let suffix = match &s.goal {
            GoalInput::Class(c) if *c >= init.goal_table.rows => {
                return Err(Error::validation("task.class", format!("unknown class id {c}")));
            }
            GoalInput::Class(_) => init.goal_table.cols,
            GoalInput::Sensor(_) => 3,
        };
        if let Some(o) = s.obs.first() {
            if o.len() + suffix != init.input_dim() {
                return Err(Error::Dimension { context: "training input", expected: init.input_dim(), got: o.len() + suffix });
            }
        }
    }
    let mut p = init;
    let mut opt = Adam::new(&p, cfg.lr);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut rng = rng::derived(cfg.seed, "bc-shuffle", 0);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    if cfg.checkpoint_every > 0 {
        checkpoints.push((0, p.clone()));
    }
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut weight = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let b: Vec<Sequence> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let (loss, mut g) = loss_and_grad(&p, &b, cfg.bptt_len);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            if cfg.clip_norm > 0.0 {
                let norm = g.tensors().iter().flat_map(|(_, m)| m.data.iter()).map(|v| v * v).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    for (_, m) in g.tensors_mut() {
                        m.scale(cfg.clip_norm / norm);
                    }
                }
            }
            opt.update(&mut p, &g);
            let n: usize = b.iter().map(Sequence::len).sum();
            epoch_loss += loss * n as f64;
            weight += n;
        }
        if !p.tensors().iter().all(|(_, m)| m.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }
        loss_curve.push(epoch_loss / weight.max(1) as f64);
        log::debug!("epoch {epoch}: loss {:.5}", loss_curve[epoch - 1]);
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoints.push((epoch, p.clone()));
        }
    }
    Ok(TrainOutput { params: p, loss_curve, checkpoints })
}

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter entry.
pub fn grad_check(p: &GruParams, seqs: &[Sequence]) -> f64 {
    grad_check_with(p, seqs, |_| {})
}

/// As [`grad_check`], with `corrupt` applied to the analytic gradient first.
pub fn grad_check_with(p: &GruParams, seqs: &[Sequence], corrupt: impl FnOnce(&mut GruParams)) -> f64 {
    const H: f64 = 1e-5;
    let bptt = seqs.iter().map(Sequence::len).max().unwrap_or(1).max(1);
    let (_, mut g) = loss_and_grad(p, seqs, bptt);
    corrupt(&mut g);
    let mut probe = p.clone();
    let mut worst = 0.0f64;
    for (ti, (_, ga)) in g.tensors().into_iter().enumerate() {
        for i in 0..ga.data.len() {
            let orig = tensor(&probe, ti).data[i];
            tensor_mut(&mut probe, ti).data[i] = orig + H;
            let up = loss_and_grad(&probe, seqs, bptt).0;
            tensor_mut(&mut probe, ti).data[i] = orig - H;
            let down = loss_and_grad(&probe, seqs, bptt).0;
            tensor_mut(&mut probe, ti).data[i] = orig;
            let num = (up - down) / (2.0 * H);
            let ana = ga.data[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

fn tensor(p: &GruParams, i: usize) -> &Matrix {
    p.tensors()[i].1
}

fn tensor_mut(p: &mut GruParams, i: usize) -> &mut Matrix {
    p.tensors_mut().into_iter().nth(i).expect("tensor index").1
}

/// Fraction of held-out expert labels the greedy policy reproduces under
/// teacher forcing.
pub fn action_accuracy(p: &GruParams, seqs: &[Sequence]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for seq in seqs {
        let mut h = vec![0.0; p.hidden_dim()];
        for t in 0..seq.len() {
            h = gru_step(p, &seq.input(p, t), &h).h;
            hit += (super::gru::argmax(&policy_logits(p, &h)) == seq.targets[t].index()) as usize;
            total += 1;
        }
    }
    hit as f64 / total.max(1) as f64
}

/// Remaining geodesic cells from the spawn to the success region.
pub fn expert_distance(scene: &Scene, task: &TaskSpec, world: &WorldConfig) -> Option<u32> {
    Expert::new(scene, task, world).distance(task.spawn.cell(scene))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_seqs(shape: GruShape, sensor: bool, lens: &[usize], seed: u64) -> Vec<Sequence> {
        let mut rng = rng::seeded(seed);
        let obs_len = shape.input_dim - if sensor { 3 } else { shape.goal_dim };
        lens.iter()
            .enumerate()
            .map(|(i, &n)| Sequence {
                obs: (0..n).map(|_| (0..obs_len).map(|_| StandardNormal.sample(&mut rng)).collect()).collect(),
                goal: if sensor {
                    GoalInput::Sensor((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
                } else {
                    GoalInput::Class(i % shape.n_classes)
                },
                targets: (0..n).map(|_| Action::from_index(rng.random_range(0..Action::COUNT)).unwrap()).collect(),
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let shape = GruShape { input_dim: 8, hidden_dim: 6, n_classes: 2, goal_dim: 3 };
            let p = GruParams::init(shape, seed);
            let seqs = random_seqs(shape, false, &[5, 3], seed);
            let err = grad_check(&p, &seqs);
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
        let shape = GruShape { input_dim: 7, hidden_dim: 5, n_classes: 0, goal_dim: 0 };
        let seqs = random_seqs(shape, true, &[4], 9);
        assert!(grad_check(&GruParams::init(shape, 9), &seqs) <= 1e-4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let shape = GruShape { input_dim: 6, hidden_dim: 4, n_classes: 1, goal_dim: 2 };
        let p = GruParams::init(shape, 3);
        let seqs = random_seqs(shape, false, &[5], 3);
        let err = grad_check_with(&p, &seqs, |g| g.u_h.data[1] *= 1.5);
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn dead_parameter_has_zero_gradient() {
        let shape = GruShape { input_dim: 4, hidden_dim: 3, n_classes: 2, goal_dim: 2 };
        let p = GruParams::zeros(shape);
        // class 1 never appears, so its embedding row cannot move the loss
        let seqs = random_seqs(shape, false, &[3], 1);
        let (_, g) = loss_and_grad(&p, &seqs, 20);
        assert!(g.goal_table.row(1).iter().all(|&v| v == 0.0));
        assert!(grad_check(&p, &seqs) <= 1e-4);
    }

    #[test]
    fn truncation_only_drops_cross_chunk_terms() {
        let shape = GruShape { input_dim: 5, hidden_dim: 4, n_classes: 1, goal_dim: 1 };
        let p = GruParams::init(shape, 5);
        let seqs = random_seqs(shape, false, &[6], 5);
        let (l1, g1) = loss_and_grad(&p, &seqs, 6);
        let (l2, g2) = loss_and_grad(&p, &seqs, 2);
        assert_eq!(l1, l2);
        // the head sees every step either way
        assert!(g1.policy_b.data.iter().zip(&g2.policy_b.data).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_ne!(g1.u_h, g2.u_h);
    }

    #[test]
    fn memorizes_a_single_step() {
        let shape = GruShape { input_dim: 6, hidden_dim: 8, n_classes: 1, goal_dim: 2 };
        let seq = Sequence { obs: vec![vec![1.0, 0.0, -1.0, 0.5]], goal: GoalInput::Class(0), targets: vec![Action::LookDown] };
        let cfg = TrainConfig { epochs: 400, lr: 1e-2, batch_size: 1, ..Default::default() };
        let out = train_on(&[seq], &cfg, GruParams::init(shape, 0)).unwrap();
        assert!(*out.loss_curve.last().unwrap() < 0.01);
    }

    #[test]
    fn training_is_deterministic() {
        let shape = GruShape { input_dim: 6, hidden_dim: 5, n_classes: 2, goal_dim: 2 };
        let seqs = random_seqs(shape, false, &[4, 7, 3], 2);
        let cfg = TrainConfig { epochs: 5, batch_size: 2, checkpoint_every: 2, ..Default::default() };
        let a = train_on(&seqs, &cfg, GruParams::init(shape, 1)).unwrap();
        let b = train_on(&seqs, &cfg, GruParams::init(shape, 1)).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.params, b.params);
        assert_eq!(a.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 2, 4]);
    }

    #[test]
    fn exploding_inputs_abort() {
        let shape = GruShape { input_dim: 3, hidden_dim: 2, n_classes: 1, goal_dim: 1 };
        let mut seqs = random_seqs(shape, false, &[2], 0);
        seqs[0].obs[0][0] = f64::NAN;
        let err = train_on(&seqs, &TrainConfig { epochs: 1, ..Default::default() }, GruParams::init(shape, 0));
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
