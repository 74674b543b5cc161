//! Run orchestration: config loading with environment interpolation,
//! sequential execution of the pipeline phases with a hash-verified
//! manifest, annotation export, and cross-run comparison tables.
//!
//! Every inter-phase exchange goes through versioned files so each phase is
//! independently resumable and testable. Artifacts never embed absolute
//! paths or timestamps, which keeps offline runs byte-reproducible; the
//! manifest (which does carry timestamps) records a sha256 per emitted file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::{
    pseudo_caption_all, read_pseudo_jsonl, write_pseudo_jsonl, ConsensusConfig,
    PseudoCaption,
};
use crate::embedding::{Embedder, HashedEmbedder};
use crate::error::{Error, Result};
use crate::explore::{rebuild_map, run_episode, EpisodeConfig, PolicyKind};
use crate::llm::{HttpLlmClient, LlmClient};
use crate::metrics::{evaluate_run, MetricsReport, RunLabels};
use crate::num::Quartiles;
use crate::rng::stream;
use crate::scene::{generate_scene, Scene, SceneSpec};
use crate::trainer::{
    consistency_scores, consistency_summary, dataset_from_pseudo, finetune, vocab_from_pseudo, LossConfig, ToyCaptioner, TrainExample,
};
use crate::voxmap::cluster_objects;
use crate::Scalar;

pub const CONFIG_VERSION: &str = "config/1";
pub const MANIFEST_VERSION: &str = "manifest/1";

/// Deviation notes stamped into every manifest.
pub fn manifest_deviations() -> Vec<String> {
    vec![
        "METEOR is a reduced variant (exact + suffix-stem matching only)".into(),
        "disagreement-seeking policy is a greedy surrogate, not a learned policy".into(),
        "SPICE is not computed".into(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    /// Inline scene generation parameters; ignored when `scene_path` is set.
    pub scene_spec: SceneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_path: Option<String>,
    pub policy: String,
    pub steps: usize,
    pub episode: EpisodeConfig,
    pub consensus: ConsensusConfig,
    pub loss: LossConfig,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Trainer dimensions.
    pub feature_dim: usize,
    pub attr_dim: usize,
    pub max_caption_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION.into(),
            scene_spec: SceneSpec::default(),
            scene_path: None,
            policy: "frontier".into(),
            steps: 300,
            episode: EpisodeConfig::default(),
            consensus: ConsensusConfig::default(),
            loss: LossConfig::default(),
            seeds: vec![0],
            out_dir: "runs/default".into(),
            feature_dim: 16,
            attr_dim: 16,
            max_caption_len: 12,
        }
    }
}

/// Substitute `${VAR}` in every string value from the process environment.
fn interpolate_env(value: &mut serde_json::Value) -> Result<()> {
    match value {
        serde_json::Value::String(s) => {
            while let Some(start) = s.find("${") {
                let end = s[start..]
                    .find('}')
                    .map(|e| start + e)
                    .ok_or_else(|| Error::Config(format!("unterminated ${{...}} in `{s}`")))?;
                let var = &s[start + 2..end];
                let substitution = std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable `{var}` not set")))?;
                s.replace_range(start..=end, &substitution);
            }
            Ok(())
        }
        serde_json::Value::Array(items) => items.iter_mut().try_for_each(interpolate_env),
        serde_json::Value::Object(map) => map.values_mut().try_for_each(interpolate_env),
        _ => Ok(()),
    }
}

/// Load and validate a run config; string values may reference environment
/// variables as `${VAR}` (used for endpoints and keys, which never land in
/// manifests).
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config JSON: {e}")))?;
    interpolate_env(&mut value)?;
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("bad config: {e}")))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    if cfg.version != CONFIG_VERSION {
        return Err(Error::Version { expected: CONFIG_VERSION.into(), found: cfg.version.clone() });
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seed list must be non-empty".into()));
    }
    PolicyKind::parse(&cfg.policy)?;
    if let Some(p) = &cfg.scene_path {
        if !Path::new(p).exists() {
            return Err(Error::Config(format!("scene_path `{p}` does not exist")));
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Hash of the canonical (sorted-key) config JSON.
pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializable").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Path relative to the run's output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub name: String,
    /// `ok`, `skipped`, or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub outputs: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub policy: String,
    pub artifact_versions: BTreeMap<String, String>,
    pub deviations: Vec<String>,
    pub phases: Vec<PhaseEntry>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn failed_phase(&self) -> Option<&PhaseEntry> {
        self.phases.iter().find(|p| p.status == "failed")
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseEntry> {
        self.phases.iter().find(|p| p.name == name)
    }

    /// Recompute every artifact hash under `out_dir` and compare.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for phase in &self.phases {
            for artifact in &phase.outputs {
                let bytes = fs::read(out_dir.join(&artifact.path))?;
                let actual = sha256_hex(&bytes);
                if actual != artifact.sha256 {
                    return Err(Error::Contract(format!(
                        "artifact {} hash mismatch: manifest {}, file {actual}",
                        artifact.path, artifact.sha256
                    )));
                }
            }
        }
        Ok(())
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

struct PhaseSink<'a> {
    out_dir: &'a Path,
    entries: Vec<PhaseEntry>,
}

impl<'a> PhaseSink<'a> {
    fn write(&self, rel: &str, bytes: &[u8]) -> Result<ArtifactRef> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        Ok(ArtifactRef { path: rel.to_string(), sha256: sha256_hex(bytes) })
    }

    fn ok(&mut self, name: &str, outputs: Vec<ArtifactRef>) {
        self.entries.push(PhaseEntry { name: name.into(), status: "ok".into(), reason: None, outputs });
    }

    fn skipped(&mut self, name: &str, reason: String) {
        self.entries.push(PhaseEntry {
            name: name.into(),
            status: "skipped".into(),
            reason: Some(reason),
            outputs: vec![],
        });
    }

    fn failed(&mut self, name: &str, err: &Error) {
        self.entries.push(PhaseEntry {
            name: name.into(),
            status: "failed".into(),
            reason: Some(err.to_string()),
            outputs: vec![],
        });
    }
}

/// One line per ground-truth object: id, annotation caption, category.
pub fn export_annotations(scene: &Scene) -> String {
    let mut out = String::new();
    for obj in &scene.objects {
        let line = serde_json::json!({
            "id": obj.id,
            "gt_caption": obj.gt_caption,
            "category": obj.category.name(),
        });
        out.push_str(&serde_json::to_string(&line).expect("line serializable"));
        out.push('\n');
    }
    out
}

pub fn read_annotations(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line)?;
        let id = value["id"]
            .as_u64()
            .ok_or_else(|| Error::Contract("annotation line without id".into()))? as u32;
        let caption = value["gt_caption"]
            .as_str()
            .ok_or_else(|| Error::Contract("annotation line without gt_caption".into()))?;
        out.insert(id, caption.to_string());
    }
    Ok(out)
}

/// Key predictions by ground-truth object id for evaluation. When several
/// instances map to the same object (over-segmentation) the one with more
/// views wins; unlinked instances are dropped with a warning entry.
pub fn predictions_by_gt(
    pseudo: &BTreeMap<u32, PseudoCaption>,
) -> (BTreeMap<u32, String>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut best: BTreeMap<u32, (&PseudoCaption, usize)> = BTreeMap::new();
    for p in pseudo.values() {
        match p.gt_object_id {
            Some(gt) => {
                let views = p.views.len();
                match best.get(&gt) {
                    Some((_, n)) if *n >= views => {
                        warnings.push(format!(
                            "instance {} dropped: object {gt} already has a larger instance",
                            p.instance_id
                        ));
                    }
                    Some((prev, _)) => {
                        warnings.push(format!(
                            "instance {} dropped: object {gt} already has a larger instance",
                            prev.instance_id
                        ));
                        best.insert(gt, (p, views));
                    }
                    None => {
                        best.insert(gt, (p, views));
                    }
                }
            }
            None => warnings.push(format!("instance {} has no ground-truth link", p.instance_id)),
        }
    }
    (best.into_iter().map(|(gt, (p, _))| (gt, p.text.clone())).collect(), warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pre: Option<Quartiles>,
    pub post: Option<Quartiles>,
    pub per_instance: Vec<(u32, f64, f64)>,
}

impl ConsistencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,pre,post\n");
        for (id, pre, post) in &self.per_instance {
            out.push_str(&format!("{id},{pre},{post}\n"));
        }
        out
    }
}

/// Pre- vs post-training intra-instance consistency.
pub fn consistency_report(
    pre_model: &ToyCaptioner<Scalar>,
    post_model: &ToyCaptioner<Scalar>,
    dataset: &[TrainExample<Scalar>],
    embedder: &dyn Embedder,
) -> ConsistencyReport {
    let pre = consistency_scores(pre_model, dataset, embedder);
    let post = consistency_scores(post_model, dataset, embedder);
    let post_map: BTreeMap<u32, f64> = post.iter().copied().collect();
    let per_instance = pre
        .iter()
        .map(|(id, p)| (*id, *p, post_map.get(id).copied().unwrap_or(f64::NAN)))
        .collect();
    ConsistencyReport {
        pre: consistency_summary(&pre),
        post: consistency_summary(&post),
        per_instance,
    }
}

/// Execute the full offline pipeline for every configured seed. Each phase
/// reads only its predecessor's files. A phase failure halts the run; the
/// manifest records the failure and everything already produced.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    validate_config(cfg)?;
    let started = now_ms();
    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)?;
    let mut sink = PhaseSink { out_dir: &out_dir, entries: Vec::new() };
    let multi = cfg.seeds.len() > 1;

    for &seed in &cfg.seeds {
        let prefix = if multi { format!("seed-{seed}/") } else { String::new() };
        let tag = |name: &str| if multi { format!("{name}:seed{seed}") } else { name.to_string() };
        if let Err(e) = run_seed(cfg, seed, &prefix, &tag, &mut sink) {
            let name = tag("pipeline");
            sink.failed(&name, &e);
            break;
        }
    }

    let manifest = RunManifest {
        version: MANIFEST_VERSION.into(),
        config_hash: config_hash(cfg),
        policy: cfg.policy.clone(),
        artifact_versions: artifact_versions(),
        deviations: manifest_deviations(),
        phases: sink.entries,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), manifest_bytes)?;
    Ok(manifest)
}

fn artifact_versions() -> BTreeMap<String, String> {
    [
        ("scene", crate::scene::SCENE_VERSION),
        ("episode", crate::explore::EPISODE_VERSION),
        ("map", crate::voxmap::MAP_VERSION),
        ("pseudo", crate::consensus::PSEUDO_VERSION),
        ("model", crate::trainer::MODEL_VERSION),
        ("report", crate::metrics::REPORT_VERSION),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn run_seed(
    cfg: &RunConfig,
    seed: u64,
    prefix: &str,
    tag: &dyn Fn(&str) -> String,
    sink: &mut PhaseSink,
) -> Result<()> {
    let embedder = HashedEmbedder::default();
    let policy = PolicyKind::parse(&cfg.policy)?;
    let phase = |name: &str, e: Error| Error::Phase { phase: name.into(), source: Box::new(e) };

    // explore: scene + annotations + episode
    let scene = match &cfg.scene_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| phase("explore", e.into()))?;
            Scene::from_json(serde_json::from_str(&text).map_err(|e| phase("explore", e.into()))?)
                .map_err(|e| phase("explore", e))?
        }
        None => generate_scene(seed, &cfg.scene_spec).map_err(|e| phase("explore", e))?,
    };
    let episode_cfg = EpisodeConfig { n_steps: cfg.steps, ..cfg.episode.clone() };
    let (log, _online_map) =
        run_episode(&scene, policy, seed, &episode_cfg).map_err(|e| phase("explore", e))?;
    let scene_ref = sink
        .write(&format!("{prefix}scene.json"), serde_json::to_vec_pretty(&scene.to_json())?.as_slice())?;
    let ann_ref = sink.write(&format!("{prefix}annotations.jsonl"), export_annotations(&scene).as_bytes())?;
    let episode_ref = sink.write(&format!("{prefix}episode.jsonl"), log.to_jsonl().as_bytes())?;
    sink.ok(&tag("explore"), vec![scene_ref, ann_ref, episode_ref]);

    // build-map: replay the log
    let map = rebuild_map(&log).map_err(|e| phase("build-map", e))?;
    let map_ref =
        sink.write(&format!("{prefix}map.json"), serde_json::to_vec_pretty(&map.to_json())?.as_slice())?;
    sink.ok(&tag("build-map"), vec![map_ref]);

    if map.is_empty() {
        sink.skipped(&tag("consensus"), "map is empty: no observations to cluster".into());
        sink.skipped(&tag("finetune"), "no pseudo-captions".into());
        sink.skipped(&tag("evaluate"), "no predictions".into());
        sink.skipped(&tag("consistency"), "no trained model".into());
        return Ok(());
    }

    // consensus
    let instances = cluster_objects(&map);
    let llm_client = HttpLlmClient::from_env(&cfg.consensus.llm);
    let llm_dyn: Option<&dyn LlmClient> = llm_client.as_ref().map(|c| c as &dyn LlmClient);
    let outcome = pseudo_caption_all(&instances, Some(&scene), llm_dyn, &embedder, &cfg.consensus);
    let pseudo_text = write_pseudo_jsonl(&outcome, cfg.consensus.method);
    let pseudo_ref = sink.write(&format!("{prefix}pseudo.jsonl"), pseudo_text.as_bytes())?;
    sink.ok(&tag("consensus"), vec![pseudo_ref]);

    if outcome.pseudo.is_empty() {
        sink.skipped(&tag("finetune"), "consensus produced no pseudo-captions".into());
        sink.skipped(&tag("evaluate"), "no predictions".into());
        sink.skipped(&tag("consistency"), "no trained model".into());
        return Ok(());
    }

    // finetune
    let vocab = vocab_from_pseudo(&outcome.pseudo);
    let dataset = dataset_from_pseudo(&outcome.pseudo, &vocab, cfg.attr_dim, cfg.max_caption_len);
    let input_dim = crate::scene::NUM_CLASSES + cfg.attr_dim + 1;
    let mut model_rng = stream(seed, "model-init");
    let pre_model = ToyCaptioner::<Scalar>::init(
        vocab,
        input_dim,
        cfg.feature_dim,
        cfg.max_caption_len,
        &mut model_rng,
    );
    let loss_cfg = LossConfig { seed, ..cfg.loss.clone() };
    let (post_model, history) =
        finetune(pre_model.clone(), &dataset, &loss_cfg).map_err(|e| phase("finetune", e))?;
    let model_ref = sink.write(
        &format!("{prefix}model.json"),
        serde_json::to_vec_pretty(&post_model.to_json())?.as_slice(),
    )?;
    let history_ref = sink
        .write(&format!("{prefix}history.json"), serde_json::to_vec_pretty(&history)?.as_slice())?;
    sink.ok(&tag("finetune"), vec![model_ref, history_ref]);

    // evaluate
    let annotations = read_annotations(&export_annotations(&scene))?;
    let (preds, _warnings) = predictions_by_gt(&outcome.pseudo);
    if preds.is_empty() {
        sink.skipped(&tag("evaluate"), "no prediction links to a ground-truth object".into());
    } else {
        let labels = RunLabels {
            policy: cfg.policy.clone(),
            method: cfg.consensus.method.name().into(),
            captioner: "mock".into(),
        };
        let report = evaluate_run(&preds, &annotations, &embedder, labels)
            .map_err(|e| phase("evaluate", e))?;
        let report_ref = sink
            .write(&format!("{prefix}report.json"), serde_json::to_vec_pretty(&report)?.as_slice())?;
        sink.ok(&tag("evaluate"), vec![report_ref]);
    }

    // consistency (pre vs post fine-tuning)
    let consistency = consistency_report(&pre_model, &post_model, &dataset, &embedder);
    let cons_json = sink.write(
        &format!("{prefix}consistency.json"),
        serde_json::to_vec_pretty(&consistency)?.as_slice(),
    )?;
    let cons_csv =
        sink.write(&format!("{prefix}consistency.csv"), consistency.to_csv().as_bytes())?;
    sink.ok(&tag("consistency"), vec![cons_json, cons_csv]);

    Ok(())
}

/// Load a pseudo-caption file and an annotation file and score them.
pub fn evaluate_files(
    pseudo_path: &Path,
    annotations_path: &Path,
    labels: RunLabels,
) -> Result<MetricsReport> {
    let pseudo = read_pseudo_jsonl(&fs::read_to_string(pseudo_path)?)?;
    let annotations = read_annotations(&fs::read_to_string(annotations_path)?)?;
    let (preds, warnings) = predictions_by_gt(&pseudo.pseudo);
    let mut report = evaluate_run(&preds, &annotations, &HashedEmbedder::default(), labels)?;
    report.warnings.extend(warnings);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub method: String,
    pub captioner: String,
    pub b4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: Option<f64>,
    pub cs: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTables {
    pub rows: Vec<ReportRow>,
}

impl ComparisonTables {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,method,captioner,b4,meteor,rouge_l,cider,cs,evaluated\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.policy,
                r.method,
                r.captioner,
                r.b4,
                r.meteor,
                r.rouge_l,
                r.cider.map(|c| c.to_string()).unwrap_or_default(),
                r.cs,
                r.evaluated
            ));
        }
        out
    }

    /// Markdown table; the best value per policy group is bolded per metric.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| policy | method | B4 | M | R_L | CI | CS |\n|---|---|---|---|---|---|---|\n",
        );
        let mut groups: BTreeMap<&str, Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(r.policy.as_str()).or_default().push(r);
        }
        for rows in groups.values() {
            let best = |f: &dyn Fn(&ReportRow) -> f64| {
                rows.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max)
            };
            let b_b4 = best(&|r| r.b4);
            let b_m = best(&|r| r.meteor);
            let b_rl = best(&|r| r.rouge_l);
            let b_ci = best(&|r| r.cider.unwrap_or(f64::NEG_INFINITY));
            let b_cs = best(&|r| r.cs);
            for r in rows {
                let fmt = |v: f64, best: f64| {
                    if (v - best).abs() < 1e-12 {
                        format!("**{v:.2}**")
                    } else {
                        format!("{v:.2}")
                    }
                };
                let ci = match r.cider {
                    Some(c) => fmt(c, b_ci),
                    None => "-".to_string(),
                };
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} |\n",
                    r.policy,
                    r.method,
                    fmt(r.b4, b_b4),
                    fmt(r.meteor, b_m),
                    fmt(r.rouge_l, b_rl),
                    ci,
                    fmt(r.cs, b_cs),
                ));
            }
        }
        out
    }
}

/// Collect evaluation rows from run manifests without recomputing anything.
pub fn report_from_manifests(manifest_paths: &[PathBuf]) -> Result<ComparisonTables> {
    if manifest_paths.is_empty() {
        return Err(Error::Contract("need at least one manifest".into()));
    }
    let mut rows = Vec::new();
    for path in manifest_paths {
        let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Version {
                expected: MANIFEST_VERSION.into(),
                found: manifest.version,
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for phase in &manifest.phases {
            if !(phase.name == "evaluate" || phase.name.starts_with("evaluate:")) {
                continue;
            }
            for artifact in &phase.outputs {
                let report: MetricsReport =
                    serde_json::from_str(&fs::read_to_string(base.join(&artifact.path))?)?;
                if report.version != crate::metrics::REPORT_VERSION {
                    return Err(Error::Version {
                        expected: crate::metrics::REPORT_VERSION.into(),
                        found: report.version,
                    });
                }
                rows.push(ReportRow {
                    policy: report.labels.policy.clone(),
                    method: report.labels.method.clone(),
                    captioner: report.labels.captioner.clone(),
                    b4: report.mean_b4,
                    meteor: report.mean_meteor,
                    rouge_l: report.mean_rouge_l,
                    cider: report.mean_cider,
                    cs: report.mean_cs,
                    evaluated: report.evaluated,
                });
            }
        }
    }
    Ok(ComparisonTables { rows })
}
