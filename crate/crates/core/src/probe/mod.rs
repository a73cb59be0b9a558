//! Probing datasets, per-concept GBT probes and their reports.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::RecordLine;
use crate::error::{Error, Result};
use crate::gbt::{fit, GbtParams, Objective, TreeEnsemble};
use crate::gridworld::{ConceptValue, ReachConfig, CONTINUOUS_CONCEPTS};

pub use metrics::{pearson, roc_auc, Correlation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Continuous,
    Binary,
}

/// Episode ids per split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        if let Some(both) = self.val.iter().find(|e| train.contains(e)) {
            return Err(Error::validation("split.disjoint", format!("episode {both} is in both splits")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let m: SplitManifest =
            serde_json::from_str(text).map_err(|e| Error::Parse { origin: origin.into(), detail: e.to_string() })?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub concept: String,
    pub kind: ConceptKind,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub x_val: Vec<Vec<f64>>,
    pub y_val: Vec<f64>,
    /// `episode:step` of each validation row.
    pub val_ids: Vec<String>,
    pub manifest: SplitManifest,
}

/// Value of `concept` in a record. `<angle>.sin` / `<angle>.cos` read a
/// degree-valued concept through the circular encoding.
pub fn concept_value(r: &RecordLine, concept: &str) -> Result<(f64, ConceptKind)> {
    if let Some((base, f)) = concept.rsplit_once('.') {
        let deg = r.concept(base)?.to_radians();
        return match f {
            "sin" => Ok((deg.sin(), ConceptKind::Continuous)),
            "cos" => Ok((deg.cos(), ConceptKind::Continuous)),
            _ => Err(Error::Config(format!("unknown concept transform in {concept:?}"))),
        };
    }
    match r.concepts.get(concept) {
        Some(ConceptValue::Flag(b)) => Ok((*b as u8 as f64, ConceptKind::Binary)),
        Some(ConceptValue::Scalar(v)) => Ok((*v, ConceptKind::Continuous)),
        None => r.concept(concept).map(|v| (v, ConceptKind::Continuous)),
    }
}

/// Every concept a record carries, in report order.
pub fn all_concepts(reach: &ReachConfig) -> Vec<String> {
    let mut out: Vec<String> = ["R_t", "theta_t", "visible_t", "Area_t", "R_a", "theta_a"].map(String::from).to_vec();
    out.extend(reach.names());
    out.extend(["visited_l", "visited_lr", "visited_lrh", "collision"].map(String::from));
    out
}

pub fn sort_records(records: &mut [RecordLine]) {
    records.sort_by(|a, b| a.episode.cmp(&b.episode).then(a.step.cmp(&b.step)));
}

/// Splits records into train/validation rows for one concept, ordered by
/// (episode id, step). Records of episodes outside the manifest are skipped.
pub fn build_dataset(records: &[RecordLine], concept: &str, manifest: &SplitManifest) -> Result<ProbeDataset> {
    manifest.validate()?;
    let train: BTreeSet<&str> = manifest.train.iter().map(String::as_str).collect();
    let val: BTreeSet<&str> = manifest.val.iter().map(String::as_str).collect();
    let mut order: Vec<&RecordLine> = records.iter().collect();
    order.sort_by(|a, b| a.episode.cmp(&b.episode).then(a.step.cmp(&b.step)));
    let mut ds = ProbeDataset {
        concept: concept.to_string(),
        kind: ConceptKind::Continuous,
        x_train: Vec::new(),
        y_train: Vec::new(),
        x_val: Vec::new(),
        y_val: Vec::new(),
        val_ids: Vec::new(),
        manifest: manifest.clone(),
    };
    let mut kind = None;
    let mut width = None;
    for r in order {
        let in_train = train.contains(r.episode.as_str());
        if !in_train && !val.contains(r.episode.as_str()) {
            continue;
        }
        let (v, k) = concept_value(r, concept)?;
        if *kind.get_or_insert(k) != k {
            return Err(Error::validation(
                "dataset.kind",
                format!("concept {concept:?} changes type in episode {} step {}", r.episode, r.step),
            ));
        }
        if *width.get_or_insert(r.hidden.len()) != r.hidden.len() {
            return Err(Error::Dimension { context: "record hidden width", expected: width.unwrap_or(0), got: r.hidden.len() });
        }
        if in_train {
            ds.x_train.push(r.hidden.clone());
            ds.y_train.push(v);
        } else {
            ds.x_val.push(r.hidden.clone());
            ds.y_val.push(v);
            ds.val_ids.push(format!("{}:{}", r.episode, r.step));
        }
    }
    ds.kind = kind.unwrap_or(ConceptKind::Continuous);
    if ds.x_train.len() < 2 || ds.x_val.is_empty() {
        return Err(Error::validation(
            "dataset.size",
            format!("{concept}: {} train / {} validation rows", ds.x_train.len(), ds.x_val.len()),
        ));
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub concept: String,
    pub kind: ConceptKind,
    pub pearson: f64,
    /// Predictions or targets were constant on the validation rows.
    pub pearson_degenerate: bool,
    /// Rank AUC of validation margins; absent for continuous or single-class concepts.
    pub roc_auc: Option<f64>,
    pub n_val: usize,
    /// Training targets carried a single class.
    pub degenerate_model: bool,
}

pub fn objective_for(kind: ConceptKind) -> Objective {
    match kind {
        ConceptKind::Continuous => Objective::SquaredError,
        ConceptKind::Binary => Objective::Logistic,
    }
}

/// Fits the probe on training rows and scores validation margins.
pub fn train_probe(ds: &ProbeDataset, params: &GbtParams) -> Result<(TreeEnsemble, ProbeMetrics)> {
    let f = fit(&ds.x_train, &ds.y_train, objective_for(ds.kind), params)?;
    let margins = f.ensemble.predict_margin_rows(&ds.x_val)?;
    let corr = pearson(&margins, &ds.y_val);
    let roc = match ds.kind {
        ConceptKind::Binary => roc_auc(&margins, &ds.y_val.iter().map(|&v| v == 1.0).collect::<Vec<_>>()),
        ConceptKind::Continuous => None,
    };
    let metrics = ProbeMetrics {
        concept: ds.concept.clone(),
        kind: ds.kind,
        pearson: corr.value,
        pearson_degenerate: corr.degenerate,
        roc_auc: roc,
        n_val: ds.y_val.len(),
        degenerate_model: f.degenerate,
    };
    Ok((f.ensemble, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model: String,
    pub metrics: Vec<ProbeMetrics>,
}

impl ProbeReport {
    pub fn get(&self, concept: &str) -> Option<&ProbeMetrics> {
        self.metrics.iter().find(|m| m.concept == concept)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Long-format table `model,concept,metric,value,n_val`.
pub fn report_csv(reports: &[ProbeReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "concept", "metric", "value", "n_val"]).expect("in-memory write");
    for r in reports {
        for m in &r.metrics {
            w.serialize((&r.model, &m.concept, "pearson", m.pearson, m.n_val)).expect("in-memory write");
            if let Some(auc) = m.roc_auc {
                w.serialize((&r.model, &m.concept, "roc_auc", auc, m.n_val)).expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Result of probing one model: report plus the fitted ensembles by concept.
pub struct ModelProbe {
    pub report: ProbeReport,
    pub ensembles: BTreeMap<String, TreeEnsemble>,
}

/// Trains one probe per concept for one model's records.
pub fn probe_model(
    model: &str,
    records: &[RecordLine],
    concepts: &[String],
    manifest: &SplitManifest,
    params: &GbtParams,
) -> Result<ModelProbe> {
    let results: Vec<(TreeEnsemble, ProbeMetrics)> = concepts
        .par_iter()
        .map(|c| train_probe(&build_dataset(records, c, manifest)?, params))
        .collect::<Result<_>>()?;
    let mut ensembles = BTreeMap::new();
    let mut metrics = Vec::with_capacity(results.len());
    for (e, m) in results {
        ensembles.insert(m.concept.clone(), e);
        metrics.push(m);
    }
    Ok(ModelProbe { report: ProbeReport { model: model.to_string(), metrics }, ensembles })
}

/// Rejects model logs that are not step-aligned with each other.
pub fn check_alignment(models: &[(String, Vec<RecordLine>)]) -> Result<()> {
    let key = |rs: &[RecordLine]| -> Vec<(String, usize)> {
        let mut k: Vec<(String, usize)> = rs.iter().map(|r| (r.episode.clone(), r.step)).collect();
        k.sort();
        k
    };
    if let Some((first, rest)) = models.split_first() {
        let base = key(&first.1);
        for (tag, rs) in rest {
            if key(rs) != base {
                return Err(Error::validation(
                    "report.alignment",
                    format!("records of {tag} ({}) are not aligned with {} ({})", rs.len(), first.0, first.1.len()),
                ));
            }
        }
    }
    Ok(())
}

/// One report per model over step-aligned logs.
pub fn probe_report(
    models: &[(String, Vec<RecordLine>)],
    concepts: &[String],
    manifest: &SplitManifest,
    params: &GbtParams,
) -> Result<Vec<ModelProbe>> {
    check_alignment(models)?;
    models.iter().map(|(tag, rs)| probe_model(tag, rs, concepts, manifest, params)).collect()
}

/// Concept groups used for the grouped comparison tables.
pub const GROUPS: [&str; 5] = ["reachability", "target", "visited", "agent", "collision"];

pub fn concept_group(concept: &str) -> Option<&'static str> {
    let base = concept.split('.').next().unwrap_or(concept);
    match base {
        "R_t" | "theta_t" | "visible_t" | "Area_t" => Some("target"),
        "R_a" | "theta_a" => Some("agent"),
        "visited_l" | "visited_lr" | "visited_lrh" => Some("visited"),
        "collision" => Some("collision"),
        b if b.starts_with("reach_") => Some("reachability"),
        _ => None,
    }
}

fn reach_parts(concept: &str) -> Option<(u32, u32)> {
    let mut it = concept.strip_prefix("reach_")?.split('_');
    Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
}

/// Grouped-bar table for one concept group: `model,concept,radius,angle,pearson,roc_auc,n_val`.
/// Reachability rows are ordered by radius, then angle.
pub fn group_csv(reports: &[ProbeReport], group: &str) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "concept", "radius", "angle", "pearson", "roc_auc", "n_val"]).expect("in-memory write");
    for r in reports {
        let mut rows: Vec<&ProbeMetrics> = r.metrics.iter().filter(|m| concept_group(&m.concept) == Some(group)).collect();
        rows.sort_by_key(|m| reach_parts(&m.concept).unwrap_or((0, 0)));
        for m in rows {
            let (radius, angle) = match reach_parts(&m.concept) {
                Some((rr, a)) => (rr.to_string(), a.to_string()),
                None => (String::new(), String::new()),
            };
            let auc = m.roc_auc.map(|v| v.to_string()).unwrap_or_default();
            w.serialize((&r.model, &m.concept, radius, angle, m.pearson, auc, m.n_val)).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub checkpoint: String,
    pub concept: String,
    pub pearson: f64,
    pub roc_auc: Option<f64>,
    pub n_val: usize,
}

/// Concept-vs-checkpoint curves from per-checkpoint record logs.
pub fn checkpoint_sweep(
    checkpoints: &[(String, Vec<RecordLine>)],
    concepts: &[String],
    manifest: &SplitManifest,
    params: &GbtParams,
) -> Result<Vec<SweepRow>> {
    if checkpoints.len() < 2 {
        return Err(Error::validation("sweep.checkpoints", "a sweep needs at least two checkpoints"));
    }
    let probes = probe_report(checkpoints, concepts, manifest, params)?;
    Ok(probes
        .into_iter()
        .flat_map(|p| {
            let tag = p.report.model.clone();
            p.report.metrics.into_iter().map(move |m| SweepRow {
                checkpoint: tag.clone(),
                concept: m.concept,
                pearson: m.pearson,
                roc_auc: m.roc_auc,
                n_val: m.n_val,
            })
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["checkpoint", "concept", "pearson", "roc_auc", "n_val"]).expect("in-memory write");
    for r in rows {
        let auc = r.roc_auc.map(|v| v.to_string()).unwrap_or_default();
        w.serialize((&r.checkpoint, &r.concept, r.pearson, auc, r.n_val)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn is_continuous(concept: &str) -> bool {
    CONTINUOUS_CONCEPTS.contains(&concept) || concept.contains('.')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::AgentPose;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn record(ep: &str, step: usize, hidden: Vec<f64>, concepts: &[(&str, ConceptValue)]) -> RecordLine {
        RecordLine {
            episode: ep.into(),
            step,
            action: crate::gridworld::Action::MoveAhead,
            collision: false,
            pose: AgentPose { x: 0.0, z: 0.0, rotation: 0, horizon: 0 },
            hidden,
            concepts: concepts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn manifest(train: &[&str], val: &[&str]) -> SplitManifest {
        SplitManifest { train: train.iter().map(|s| s.to_string()).collect(), val: val.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn dataset_shapes_and_order() {
        let mut recs = Vec::new();
        for ep in ["b", "a"] {
            for step in (0..5).rev() {
                let v = step as f64 + if ep == "a" { 0.0 } else { 10.0 };
                recs.push(record(ep, step, vec![v, 0.0, 1.0], &[("R_t", ConceptValue::Scalar(v)), ("reach_2_000", ConceptValue::Flag(step % 2 == 0))]));
            }
        }
        let ds = build_dataset(&recs, "R_t", &manifest(&["a"], &["b"])).unwrap();
        assert_eq!((ds.x_train.len(), ds.x_val.len()), (5, 5));
        assert_eq!(ds.y_train, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.val_ids[0], "b:0");
        let reach = build_dataset(&recs, "reach_2_000", &manifest(&["a"], &["b"])).unwrap();
        assert_eq!(reach.kind, ConceptKind::Binary);
        assert_eq!(reach.y_train, vec![1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn overlapping_splits_and_missing_keys_fail() {
        let recs = vec![
            record("a", 0, vec![0.0], &[("R_t", ConceptValue::Scalar(1.0))]),
            record("a", 1, vec![0.0], &[("R_t", ConceptValue::Scalar(1.0))]),
            record("b", 0, vec![0.0], &[]),
        ];
        assert!(matches!(
            build_dataset(&recs, "R_t", &manifest(&["a", "b"], &["b"])),
            Err(Error::Validation { invariant: "split.disjoint", .. })
        ));
        let err = build_dataset(&recs, "R_t", &manifest(&["a"], &["b"])).unwrap_err().to_string();
        assert!(err.contains("episode b step 0"), "{err}");
    }

    #[test]
    fn circular_encoding() {
        let r = record("a", 0, vec![], &[("theta_t", ConceptValue::Scalar(90.0))]);
        let (s, k) = concept_value(&r, "theta_t.sin").unwrap();
        assert!((s - 1.0).abs() < 1e-12 && k == ConceptKind::Continuous);
        assert!(concept_value(&r, "theta_t.tan").is_err());
    }

    fn synthetic(n_ep: usize, steps: usize, seed: u64, leak: bool) -> Vec<RecordLine> {
        let mut r = rng::seeded(seed);
        let mut out = Vec::new();
        for e in 0..n_ep {
            for s in 0..steps {
                let y: f64 = if leak { r.random_range(0.0..3.0) } else if r.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut h: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut r)).collect();
                if leak {
                    h[4] = y;
                }
                out.push(record(&format!("ep{e:02}"), s, h, &[("R_t", ConceptValue::Scalar(y))]));
            }
        }
        out
    }

    #[test]
    fn leaked_target_is_recovered() {
        let recs = synthetic(4, 100, 1, true);
        let ds = build_dataset(&recs, "R_t", &manifest(&["ep00", "ep01"], &["ep02", "ep03"])).unwrap();
        let (_, m) = train_probe(&ds, &GbtParams { rounds: 30, max_depth: 4, ..Default::default() }).unwrap();
        assert!(m.pearson >= 0.99, "{}", m.pearson);
        assert_eq!(m.roc_auc, None);
    }

    #[test]
    fn independent_target_is_not_predicted() {
        let recs = synthetic(4, 1000, 2, false);
        let ds = build_dataset(&recs, "R_t", &manifest(&["ep00", "ep01"], &["ep02", "ep03"])).unwrap();
        let (_, m) = train_probe(&ds, &GbtParams { rounds: 20, max_depth: 3, ..Default::default() }).unwrap();
        assert_eq!(m.n_val, 2000);
        assert!(m.pearson.abs() < 0.1, "{}", m.pearson);
    }

    #[test]
    fn binary_reports_both_metrics_and_groups_are_ordered() {
        let mut r = rng::seeded(3);
        let mut recs = Vec::new();
        for e in 0..4 {
            for s in 0..50 {
                let h: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
                let mut cs = vec![("visible_t", ConceptValue::Flag(h[0] > 0.5))];
                let names: Vec<String> = ReachConfig::default().names();
                let flags: Vec<(String, ConceptValue)> = names.iter().map(|n| (n.clone(), ConceptValue::Flag(h[1] > 0.3))).collect();
                let mut rec = record(&format!("e{e}"), s, h, &[]);
                cs.drain(..).for_each(|(k, v)| {
                    rec.concepts.insert(k.into(), v);
                });
                rec.concepts.extend(flags);
                recs.push(rec);
            }
        }
        let m = manifest(&["e0", "e1"], &["e2", "e3"]);
        let mut concepts = vec!["visible_t".to_string()];
        concepts.extend(ReachConfig::default().names());
        let params = GbtParams { rounds: 5, max_depth: 3, ..Default::default() };
        let models = vec![("trained".to_string(), recs.clone()), ("random".to_string(), recs.clone())];
        let reports: Vec<ProbeReport> = probe_report(&models, &concepts, &m, &params).unwrap().into_iter().map(|p| p.report).collect();
        assert_eq!(reports.len(), 2);
        let vis = reports[0].get("visible_t").unwrap();
        assert!(vis.roc_auc.is_some());
        assert_eq!(vis.n_val, reports[1].get("visible_t").unwrap().n_val);
        let csv = group_csv(&reports, "reachability");
        let lines: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(lines.len(), 2 * 36);
        let angles: Vec<&str> = lines[..12].iter().map(|l| l.split(',').nth(3).unwrap()).collect();
        assert_eq!(angles, (0..12).map(|k| (k * 30).to_string()).collect::<Vec<_>>());
        assert!(lines[12].contains("reach_4_000"));
        let long = report_csv(&reports);
        assert!(long.starts_with("model,concept,metric,value,n_val\n"));

        let mut short = recs.clone();
        short.pop();
        let bad = vec![("trained".to_string(), recs), ("random".to_string(), short)];
        assert!(matches!(probe_report(&bad, &concepts, &m, &params), Err(Error::Validation { invariant: "report.alignment", .. })));
    }

    #[test]
    fn sweep_rows_per_checkpoint_and_concept() {
        let recs = synthetic(4, 30, 5, true);
        let m = manifest(&["ep00", "ep01"], &["ep02", "ep03"]);
        let params = GbtParams { rounds: 3, max_depth: 2, ..Default::default() };
        let concepts = vec!["R_t".to_string()];
        let cps = vec![("a".to_string(), recs.clone()), ("b".to_string(), recs.clone())];
        let rows = checkpoint_sweep(&cps, &concepts, &m, &params).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].pearson, rows[1].pearson);
        assert!(checkpoint_sweep(&cps[..1], &concepts, &m, &params).is_err());
    }
}
