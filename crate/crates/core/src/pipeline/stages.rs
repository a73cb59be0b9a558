//! Artifact-writing stages. Each stage reads what earlier stages wrote under
//! the output directory, computes everything in memory, and only then writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    collect, eval_tasks, explain_probe, explore, make_scenes, model_tag, probe_concepts, random_agent, train_agent,
    training_records, ExploreEpisode, Sensor,
};
use crate::ablate::{ablate_eval, curve_csv, unit_means, CurveRow};
use crate::agent::{read_jsonl, write_jsonl, GruParams, RecordLine, TaskSpec};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gbt::TreeEnsemble;
use crate::gridworld::{Action, Scene};
use crate::io::{read_json, read_text, require, write_json, write_text};
use crate::probe::{build_dataset, checkpoint_sweep, group_csv, probe_report, report_csv, sweep_csv, SplitManifest, GROUPS};
use crate::shap::{beeswarm_csv, UnitRanking};
use crate::svg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub tag: String,
    pub seed: u64,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeTask {
    id: String,
    task: TaskSpec,
}

/// A run's configuration bound to its output directory.
pub struct Workspace {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Workspace { cfg, out: out.into() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn scene_path(&self, i: usize) -> PathBuf {
        self.path(&format!("scenes/scene{i:02}.json"))
    }

    fn params_path(&self, tag: &str) -> PathBuf {
        self.path(&format!("models/{tag}/params.json"))
    }

    fn rollout_path(&self, tag: &str, sensor: Sensor) -> PathBuf {
        self.path(&format!("rollouts/{tag}/{}.jsonl", sensor.name()))
    }

    pub fn scene_gen(&self) -> Result<()> {
        let scenes = make_scenes(&self.cfg)?;
        for (i, s) in scenes.iter().enumerate() {
            write_text(&self.scene_path(i), &(s.to_json() + "\n"))?;
        }
        log::info!("wrote {} scenes", scenes.len());
        Ok(())
    }

    pub fn load_scenes(&self) -> Result<Vec<Scene>> {
        (0..self.cfg.scene.count)
            .map(|i| {
                let p = self.scene_path(i);
                require(&p, "scene file (run scene-gen first)")?;
                Scene::from_json(&read_text(&p)?, &p.display().to_string())
            })
            .collect()
    }

    /// Trains one agent per configured seed and stores its random-init twin.
    pub fn train(&self) -> Result<Vec<ModelEntry>> {
        let scenes = self.load_scenes()?;
        let mut files: Vec<(PathBuf, String)> = Vec::new();
        let mut entries = Vec::new();
        for &seed in &self.cfg.agent.seeds {
            let out = train_agent(&self.cfg, &scenes, seed)?;
            let tag = model_tag(&self.cfg, true, seed);
            log::info!("{tag}: final loss {:.4}", out.loss_curve.last().copied().unwrap_or(f64::NAN));
            files.push((self.params_path(&tag), out.params.to_json()));
            let mut loss = String::from("epoch,loss\n");
            for (e, l) in out.loss_curve.iter().enumerate() {
                let _ = writeln!(loss, "{},{l}", e + 1);
            }
            files.push((self.path(&format!("models/{tag}/loss.csv")), loss));
            for (epoch, p) in &out.checkpoints {
                files.push((self.path(&format!("models/{tag}/checkpoints/epoch{epoch:04}.json")), p.to_json()));
            }
            entries.push(ModelEntry { tag, seed, trained: true });
            let tag = model_tag(&self.cfg, false, seed);
            files.push((self.params_path(&tag), random_agent(&self.cfg, seed).to_json()));
            entries.push(ModelEntry { tag, seed, trained: false });
        }
        for (p, text) in &files {
            write_text(p, text)?;
        }
        write_json(&self.path("models/index.json"), &entries)?;
        Ok(entries)
    }

    pub fn models(&self) -> Result<Vec<ModelEntry>> {
        let p = self.path("models/index.json");
        require(&p, "model index (run train first)")?;
        read_json(&p)
    }

    fn load_params(&self, path: &Path) -> Result<GruParams> {
        require(path, "parameter file")?;
        GruParams::from_json(&read_text(path)?, &path.display().to_string())
    }

    pub fn explore(&self) -> Result<()> {
        let scenes = self.load_scenes()?;
        let (episodes, manifest) = explore(&self.cfg, &scenes)?;
        for ep in &episodes {
            write_json(&self.path(&format!("episodes/actions/{}.json", ep.id)), &ep.actions)?;
        }
        let tasks: Vec<EpisodeTask> = episodes.iter().map(|e| EpisodeTask { id: e.id.clone(), task: e.task.clone() }).collect();
        write_json(&self.path("episodes/tasks.json"), &tasks)?;
        write_text(&self.path("episodes/split.json"), &(manifest.to_json() + "\n"))?;
        log::info!("wrote {} explorer episodes", episodes.len());
        Ok(())
    }

    pub fn load_episodes(&self) -> Result<(Vec<ExploreEpisode>, SplitManifest)> {
        let tasks_path = self.path("episodes/tasks.json");
        require(&tasks_path, "episode tasks (run explore first)")?;
        let tasks: Vec<EpisodeTask> = read_json(&tasks_path)?;
        let episodes = tasks
            .into_iter()
            .map(|t| {
                let p = self.path(&format!("episodes/actions/{}.json", t.id));
                require(&p, "action file")?;
                let actions: Vec<Action> = read_json(&p)?;
                Ok(ExploreEpisode { id: t.id, task: t.task, actions })
            })
            .collect::<Result<Vec<_>>>()?;
        let split = self.path("episodes/split.json");
        require(&split, "split manifest")?;
        Ok((episodes, SplitManifest::from_json(&read_text(&split)?, &split.display().to_string())?))
    }

    /// Forced rollouts of one parameter file, or of every indexed model.
    pub fn collect(&self, sensor: Sensor, params: Option<(&Path, &str)>) -> Result<Vec<PathBuf>> {
        let scenes = self.load_scenes()?;
        let (episodes, _) = self.load_episodes()?;
        let targets: Vec<(String, PathBuf)> = match params {
            Some((p, tag)) => vec![(tag.to_string(), p.to_path_buf())],
            None => self.models()?.into_iter().map(|m| (m.tag.clone(), self.params_path(&m.tag))).collect(),
        };
        let loaded = targets
            .into_iter()
            .map(|(tag, p)| Ok((tag, self.load_params(&p)?)))
            .collect::<Result<Vec<_>>>()?;
        let noise_seed = self.cfg.seed;
        let mut outputs = Vec::new();
        for (tag, p) in &loaded {
            let recs = collect(&scenes, &episodes, p, &sensor.intervention(noise_seed), &self.cfg.world)?;
            outputs.push((self.rollout_path(tag, sensor), write_jsonl(&recs)));
        }
        for (p, text) in &outputs {
            write_text(p, text)?;
        }
        Ok(outputs.into_iter().map(|(p, _)| p).collect())
    }

    fn load_rollout(&self, tag: &str, sensor: Sensor) -> Result<Vec<RecordLine>> {
        let p = self.rollout_path(tag, sensor);
        require(&p, "rollout log (run collect first)")?;
        read_jsonl(&read_text(&p)?, &p.display().to_string())
    }

    /// Model tags with a rollout log for `sensor`, in name order.
    fn rollout_tags(&self, sensor: Sensor) -> Result<Vec<String>> {
        let dir = self.path("rollouts");
        require(&dir, "rollouts directory")?;
        let mut tags = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().join(format!("{}.jsonl", sensor.name())).exists() {
                tags.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        tags.sort();
        Ok(tags)
    }

    /// Probes every collected model under each sensor condition present.
    pub fn probe(&self, sensors: &[Sensor]) -> Result<()> {
        let (_, manifest) = self.load_episodes()?;
        let concepts = probe_concepts(&self.cfg);
        let mut files: Vec<(PathBuf, String)> = Vec::new();
        for &sensor in sensors {
            let tags = self.rollout_tags(sensor)?;
            if tags.is_empty() {
                continue;
            }
            let models = tags
                .iter()
                .map(|t| Ok((t.clone(), self.load_rollout(t, sensor)?)))
                .collect::<Result<Vec<_>>>()?;
            let probes = probe_report(&models, &concepts, &manifest, &self.cfg.gbt)?;
            let dir = format!("probe/{}", sensor.name());
            for mp in &probes {
                files.push((self.path(&format!("{dir}/{}.json", mp.report.model)), mp.report.to_json() + "\n"));
                for (concept, e) in &mp.ensembles {
                    files.push((self.path(&format!("{dir}/ensembles/{}/{concept}.json", mp.report.model)), e.to_json() + "\n"));
                }
            }
            let reports: Vec<_> = probes.into_iter().map(|p| p.report).collect();
            files.push((self.path(&format!("{dir}/report.csv")), report_csv(&reports)));
            for g in GROUPS {
                files.push((self.path(&format!("{dir}/groups/{g}.csv")), group_csv(&reports, g)));
            }
        }
        if files.is_empty() {
            return Err(Error::Config("no rollout logs to probe (run collect first)".into()));
        }
        for (p, text) in &files {
            write_text(p, text)?;
        }
        Ok(())
    }

    fn default_model(&self, model: Option<&str>) -> Result<String> {
        match model {
            Some(m) => Ok(m.to_string()),
            None => self
                .models()?
                .into_iter()
                .find(|m| m.trained)
                .map(|m| m.tag)
                .ok_or_else(|| Error::Config("no trained model in the index".into())),
        }
    }

    /// SHAP rankings, beeswarm data and trajectory tables for one model.
    pub fn explain(&self, model: Option<&str>) -> Result<()> {
        let tag = self.default_model(model)?;
        let (_, manifest) = self.load_episodes()?;
        let records = self.load_rollout(&tag, Sensor::Full)?;
        let by_key: BTreeMap<String, &RecordLine> = records.iter().map(|r| (format!("{}:{}", r.episode, r.step), r)).collect();
        let ex_cfg = &self.cfg.explain;
        let mut files: Vec<(PathBuf, String)> = Vec::new();
        let mut distribution = String::from("concept,rank,unit,mean_abs_shap\n");
        for concept in &ex_cfg.concepts {
            let ep = self.path(&format!("probe/full/ensembles/{tag}/{concept}.json"));
            require(&ep, "probe ensemble (run probe first)")?;
            let e = TreeEnsemble::from_json(&read_text(&ep)?, &ep.display().to_string())?;
            let ds = build_dataset(&records, concept, &manifest)?;
            let ex = explain_probe(&e, &ds, ex_cfg.max_examples, ex_cfg.top_k)?;
            if let Some(bad) = ex.explanations.iter().find(|x| x.local_accuracy_error() > 1e-8) {
                return Err(Error::Numeric(format!("local accuracy violated for {} ({:e})", bad.example_id, bad.local_accuracy_error())));
            }
            let dir = format!("explain/{tag}/{concept}");
            files.push((self.path(&format!("{dir}/ranking.json")), ex.ranking.to_json() + "\n"));
            files.push((self.path(&format!("{dir}/beeswarm.csv")), beeswarm_csv(&ex.beeswarm)));
            files.push((self.path(&format!("{dir}/beeswarm.svg")), svg::beeswarm(&ex.beeswarm, concept, self.cfg.seed)));
            for (rank, &u) in ex.ranking.order.iter().enumerate() {
                let _ = writeln!(distribution, "{concept},{rank},{u},{}", ex.ranking.mean_abs_shap[u]);
            }
            let mut polar = String::from("episode,step,r_agent,theta_agent,unit,activation\n");
            let top = ex.ranking.top(3.min(ex_cfg.top_k.max(1)));
            for x in &ex.explanations {
                let r = by_key[&x.example_id];
                for &u in top {
                    let _ = writeln!(polar, "{},{},{},{},{u},{}", r.episode, r.step, r.concept("R_a")?, r.concept("theta_a")?, r.hidden[u]);
                }
            }
            files.push((self.path(&format!("{dir}/polar.csv")), polar));
        }
        files.push((self.path(&format!("explain/{tag}/distribution.csv")), distribution));
        for (p, text) in &files {
            write_text(p, text)?;
        }
        Ok(())
    }

    fn rankings(&self, tag: &str) -> Result<Vec<UnitRanking>> {
        let dir = self.path(&format!("explain/{tag}"));
        require(&dir, "explanations (run explain first)")?;
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path().join("ranking.json")))
            .filter(|p| p.exists())
            .collect();
        names.sort();
        names.iter().map(|p| UnitRanking::from_json(&read_text(p)?, &p.display().to_string())).collect()
    }

    /// Unit-removal curves for one model.
    pub fn ablate(&self, model: Option<&str>) -> Result<Vec<CurveRow>> {
        let tag = self.default_model(model)?;
        let scenes = self.load_scenes()?;
        let (_, manifest) = self.load_episodes()?;
        let p = self.load_params(&self.params_path(&tag))?;
        let stats = unit_means(&training_records(&self.load_rollout(&tag, Sensor::Full)?, &manifest))?;
        let rankings = self.rankings(&tag)?;
        let tasks = eval_tasks(&self.cfg, &scenes)?;
        let rows = ablate_eval(&scenes, &tasks, &p, &stats, &rankings, &self.cfg.ablation.sweep, &self.cfg.world)?;
        let dir = format!("ablate/{tag}");
        write_json(&self.path(&format!("{dir}/unit_stats.json")), &stats)?;
        write_text(&self.path(&format!("{dir}/curve.csv")), &curve_csv(&rows))?;
        write_text(&self.path(&format!("{dir}/spl.svg")), &curve_svg(&rows, &tag))?;
        Ok(rows)
    }

    /// Concept predictability across a model's training checkpoints.
    pub fn sweep(&self, model: Option<&str>) -> Result<()> {
        let tag = self.default_model(model)?;
        let dir = self.path(&format!("models/{tag}/checkpoints"));
        require(&dir, "checkpoints (train with checkpoint_every > 0)")?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let scenes = self.load_scenes()?;
        let (episodes, manifest) = self.load_episodes()?;
        let logs = files
            .iter()
            .map(|f| {
                let name = f.file_stem().expect("json file").to_string_lossy().into_owned();
                let p = self.load_params(f)?;
                Ok((name, collect(&scenes, &episodes, &p, &Sensor::Full.intervention(self.cfg.seed), &self.cfg.world)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = checkpoint_sweep(&logs, &self.cfg.probe.sweep_concepts, &manifest, &self.cfg.gbt)?;
        let series: Vec<(String, Vec<(f64, f64)>)> = self
            .cfg
            .probe
            .sweep_concepts
            .iter()
            .map(|c| {
                let pts = rows
                    .iter()
                    .filter(|r| &r.concept == c)
                    .map(|r| (epoch_of(&r.checkpoint), r.roc_auc.unwrap_or(r.pearson)))
                    .collect();
                (c.clone(), pts)
            })
            .collect();
        let out = format!("sweep/{tag}");
        write_text(&self.path(&format!("{out}/sweep.csv")), &sweep_csv(&rows))?;
        write_text(&self.path(&format!("{out}/sweep.svg")), &svg::lines(&series, &tag, "epoch", "AUC (binary) / pearson"))?;
        Ok(())
    }

    /// Every stage in order, as configured.
    pub fn run_all(&self) -> Result<()> {
        self.scene_gen()?;
        self.train()?;
        self.explore()?;
        for s in Sensor::ALL {
            self.collect(s, None)?;
        }
        self.probe(&Sensor::ALL)?;
        for m in self.models()?.into_iter().filter(|m| m.trained) {
            self.explain(Some(&m.tag))?;
            self.ablate(Some(&m.tag))?;
            if self.cfg.agent.train.checkpoint_every > 0 {
                self.sweep(Some(&m.tag))?;
            }
        }
        Ok(())
    }
}

fn epoch_of(checkpoint: &str) -> f64 {
    checkpoint.trim_start_matches("epoch").parse().unwrap_or(0.0)
}

/// SPL against removal size, one line per strategy, averaged over seeds.
fn curve_svg(rows: &[CurveRow], tag: &str) -> String {
    let mut by: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.strategy).or_default().entry(r.size).or_default().push(r.spl);
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = by
        .into_iter()
        .map(|(s, sizes)| {
            let pts = sizes.into_iter().map(|(k, v)| (k as f64, v.iter().sum::<f64>() / v.len() as f64)).collect();
            (s.to_string(), pts)
        })
        .collect();
    svg::lines(&series, tag, "units removed", "SPL")
}

impl RunConfig {
    /// Small pinned configuration for the end-to-end demo.
    pub fn demo() -> Self {
        let mut cfg = RunConfig::with_seed(2024);
        cfg.scene.count = 2;
        cfg.scene.gen.width = 9;
        cfg.scene.gen.depth = 9;
        cfg.agent.hidden_dim = 12;
        cfg.agent.goal_dim = 4;
        cfg.agent.train.epochs = 4;
        cfg.agent.train.episodes = 12;
        cfg.agent.train.checkpoint_every = 2;
        cfg.agent.tasks.max_distance = 8;
        cfg.agent.tasks.max_steps = 60;
        cfg.trajectory.train_episodes = 3;
        cfg.trajectory.val_episodes = 2;
        cfg.trajectory.explorer.len_cap = 60;
        cfg.gbt.rounds = 8;
        cfg.gbt.max_depth = 3;
        cfg.probe.concepts = ["R_t", "visible_t", "reach_2_000", "reach_2_180", "visited_l", "collision"].map(String::from).to_vec();
        cfg.probe.sweep_concepts = vec!["visible_t".into(), "reach_2_000".into()];
        cfg.explain.concepts = vec!["visible_t".into(), "reach_2_000".into()];
        cfg.explain.max_examples = 40;
        cfg.explain.top_k = 4;
        cfg.ablation.eval_episodes = 6;
        cfg.ablation.sweep.fractions = vec![0.0, 0.25];
        cfg.ablation.sweep.irrelevant = vec![0.25];
        cfg.ablation.sweep.seeds = vec![0, 1];
        cfg
    }
}
