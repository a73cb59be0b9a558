//! Benchmark fixtures shared by the criterion benches.

use navprobe::agent::{explorer_actions, sample_tasks, ExplorerConfig};
use navprobe::config::RunConfig;
use navprobe::gbt::{fit, GbtParams, Objective};
use navprobe::pipeline::{agent_shape, make_scenes, ExploreEpisode};
use navprobe::{rng, Action, GruParams, Scene, TreeEnsemble};
use rand::Rng as _;

/// Probe-shaped rows: `hidden` uniform units, target a noisy function of two.
pub fn probe_rows(rows: usize, hidden: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng::derived(seed, "bench-rows", 0);
    let x: Vec<Vec<f64>> = (0..rows).map(|_| (0..hidden).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let y = x.iter().map(|row| row[3] * 2.0 - row[1].abs() + r.random_range(-0.05..0.05)).collect();
    (x, y)
}

/// A regression probe fitted on [`probe_rows`].
pub fn fitted_probe(rows: usize, hidden: usize, params: &GbtParams) -> (TreeEnsemble, Vec<Vec<f64>>) {
    let (x, y) = probe_rows(rows, hidden, 0);
    let e = fit(&x, &y, Objective::SquaredError, params).expect("fixture fits").ensemble;
    (e, x)
}

/// Default-sized scenes, an untrained agent and one explorer episode.
pub struct AgentFixture {
    pub cfg: RunConfig,
    pub scenes: Vec<Scene>,
    pub params: GruParams,
    pub episode: ExploreEpisode,
}

pub fn agent_fixture() -> AgentFixture {
    let mut cfg = RunConfig::with_seed(11);
    cfg.scene.count = 1;
    let scenes = make_scenes(&cfg).expect("scenes");
    let task = sample_tasks(&scenes, &cfg.agent.tasks, 1, 0, "bench").expect("task").remove(0);
    let actions: Vec<Action> =
        explorer_actions(&scenes[0], &task.spawn, 0, &ExplorerConfig::default(), &cfg.world.motion).expect("explorer");
    let params = GruParams::init(agent_shape(&cfg), 0);
    AgentFixture { episode: ExploreEpisode { id: "bench".into(), task, actions }, cfg, scenes, params }
}
