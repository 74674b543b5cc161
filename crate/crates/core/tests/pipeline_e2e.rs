//! End-to-end pipeline behavior: phase sequencing, manifest bookkeeping,
//! skip semantics, and report generation without value drift.

use std::collections::BTreeSet;
use std::fs;

use caplab_core::explore::EpisodeConfig;
use caplab_core::metrics::MetricsReport;
use caplab_core::pipeline::{report_from_manifests, run_pipeline, RunConfig, RunManifest};
use caplab_core::scene::{CameraConfig, SceneSpec};

fn small_cfg(out_dir: &std::path::Path, policy: &str, method: &str) -> RunConfig {
    let consensus = caplab_core::consensus::ConsensusConfig {
        method: caplab_core::consensus::ConsensusMethod::parse(method).unwrap(),
        ..Default::default()
    };
    RunConfig {
        scene_spec: SceneSpec { bounds: [20, 20, 8], n_objects: 5, ..SceneSpec::default() },
        policy: policy.into(),
        steps: 50,
        episode: EpisodeConfig {
            camera: CameraConfig { width: 32, height: 32, ..CameraConfig::default() },
            ..EpisodeConfig::default()
        },
        consensus,
        seeds: vec![5],
        out_dir: out_dir.to_string_lossy().into_owned(),
        ..RunConfig::default()
    }
}

#[test]
fn full_run_produces_six_verified_phases() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run_pipeline(&small_cfg(dir.path(), "frontier", "ldcps-offline")).unwrap();

    let names: Vec<&str> = manifest.phases.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        ["explore", "build-map", "consensus", "finetune", "evaluate", "consistency"]
    );
    for phase in &manifest.phases {
        assert_eq!(phase.status, "ok", "{}: {:?}", phase.name, phase.reason);
    }
    manifest.verify(dir.path()).unwrap();

    // every output file is referenced by exactly one manifest entry
    let mut seen = BTreeSet::new();
    for phase in &manifest.phases {
        for artifact in &phase.outputs {
            assert!(seen.insert(artifact.path.clone()), "{} referenced twice", artifact.path);
        }
    }
    // and the manifest file itself exists on disk
    let on_disk: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(on_disk.config_hash, manifest.config_hash);
}

#[test]
fn zero_step_run_skips_downstream_phases_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cfg(dir.path(), "random", "ldcps-offline");
    cfg.steps = 0;
    let manifest = run_pipeline(&cfg).unwrap();

    assert_eq!(manifest.phase("explore").unwrap().status, "ok");
    assert_eq!(manifest.phase("build-map").unwrap().status, "ok");
    for name in ["consensus", "finetune", "evaluate", "consistency"] {
        let phase = manifest.phase(name).unwrap();
        assert_eq!(phase.status, "skipped", "{name}");
        assert!(phase.reason.is_some(), "{name} lacks a skip reason");
    }
    manifest.verify(dir.path()).unwrap();
}

#[test]
fn report_covers_the_policy_method_matrix() {
    let root = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for policy in ["random", "frontier", "cla"] {
        for method in ["ldcps-offline", "eco"] {
            let out = root.path().join(format!("{policy}-{method}"));
            let manifest = run_pipeline(&small_cfg(&out, policy, method)).unwrap();
            assert!(manifest.failed_phase().is_none());
            manifests.push(out.join("manifest.json"));
        }
    }
    let tables = report_from_manifests(&manifests).unwrap();
    assert_eq!(tables.rows.len(), 6, "3 policies x 2 methods");
    assert_eq!(tables.to_csv().lines().count(), 7);
    let md = tables.to_markdown();
    for policy in ["random", "frontier", "cla"] {
        assert_eq!(md.matches(&format!("| {policy} |")).count(), 2);
    }
}

#[test]
fn report_rows_equal_source_reports_without_recomputation() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let manifest_a = run_pipeline(&small_cfg(dir_a.path(), "frontier", "ldcps-offline")).unwrap();
    let manifest_b = run_pipeline(&small_cfg(dir_b.path(), "random", "eco")).unwrap();
    assert!(manifest_a.failed_phase().is_none());
    assert!(manifest_b.failed_phase().is_none());

    let tables = report_from_manifests(&[
        dir_a.path().join("manifest.json"),
        dir_b.path().join("manifest.json"),
    ])
    .unwrap();
    assert_eq!(tables.rows.len(), 2);

    // cross-file equality: table values must match report.json exactly
    for (dir, row) in [(dir_a.path(), &tables.rows[0]), (dir_b.path(), &tables.rows[1])] {
        let report: MetricsReport =
            serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        assert_eq!(row.b4, report.mean_b4);
        assert_eq!(row.meteor, report.mean_meteor);
        assert_eq!(row.rouge_l, report.mean_rouge_l);
        assert_eq!(row.cider, report.mean_cider);
        assert_eq!(row.cs, report.mean_cs);
        assert_eq!(row.policy, report.labels.policy);
    }

    let md = tables.to_markdown();
    assert!(md.contains("frontier"));
    assert!(md.contains("random"));
    assert_eq!(tables.to_csv().lines().count(), 3);
}
