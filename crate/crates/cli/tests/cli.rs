//! End-to-end CLI checks against the compiled binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn caplab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caplab"))
}

fn write_scene_spec(path: &Path) {
    let spec = serde_json::json!({
        "version": "scene-spec/1",
        "bounds": [20, 20, 8],
        "n_objects": 4,
        "cell_size": 0.25,
        "rooms": [1, 1],
        "max_place_attempts": 200,
    });
    fs::write(path, serde_json::to_vec_pretty(&spec).unwrap()).unwrap();
}

#[test]
fn help_lists_every_subcommand() {
    let out = caplab().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in
        ["explore", "build-map", "consensus", "finetune", "evaluate", "consistency", "report", "run"]
    {
        assert!(text.contains(sub), "--help does not mention `{sub}`");
    }
}

#[test]
fn stepwise_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    write_scene_spec(&spec_path);
    let scene = dir.path().join("scene.json");
    let episode = dir.path().join("episode.jsonl");
    let map = dir.path().join("map.json");
    let pseudo = dir.path().join("pseudo.jsonl");
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.json");
    let consistency = dir.path().join("consistency.json");

    let ok = |out: std::process::Output, what: &str| {
        assert!(
            out.status.success(),
            "{what} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    ok(
        caplab()
            .args(["explore", "--scene"])
            .arg(&spec_path)
            .args(["--policy", "frontier", "--steps", "60", "--seed", "9", "--out"])
            .arg(&episode)
            .arg("--emit-scene")
            .arg(&scene)
            .output()
            .unwrap(),
        "explore",
    );
    assert!(episode.exists() && scene.exists());

    ok(
        caplab().args(["build-map", "--episode"]).arg(&episode).arg("--out").arg(&map).output().unwrap(),
        "build-map",
    );
    let map_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&map).unwrap()).unwrap();
    assert_eq!(map_json["version"], "map/1");

    ok(
        caplab()
            .args(["consensus", "--episode"])
            .arg(&episode)
            .args(["--method", "ldcps-offline", "--out"])
            .arg(&pseudo)
            .arg("--scene")
            .arg(&scene)
            .output()
            .unwrap(),
        "consensus",
    );
    let pseudo_text = fs::read_to_string(&pseudo).unwrap();
    assert!(pseudo_text.lines().next().unwrap().contains("pseudo/1"));

    ok(
        caplab()
            .args(["finetune", "--data"])
            .arg(&pseudo)
            .args(["--lambda", "0.1", "--epochs", "4", "--patience", "3", "--seed", "1", "--out"])
            .arg(&model)
            .args(["--ablate", "1,0.5,0.1"])
            .output()
            .unwrap(),
        "finetune",
    );
    assert!(model.exists());
    assert!(dir.path().join("model.ablation.csv").exists());
    assert!(dir.path().join("model.history.json").exists());

    // annotations derived from the emitted scene, per the documented line format
    let scene_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scene).unwrap()).unwrap();
    let mut ann_lines = String::new();
    for obj in scene_json["objects"].as_array().unwrap() {
        let line = serde_json::json!({
            "id": obj["id"],
            "gt_caption": obj["gt_caption"],
            "category": obj["category"],
        });
        ann_lines.push_str(&serde_json::to_string(&line).unwrap());
        ann_lines.push('\n');
    }
    let ann = dir.path().join("annotations.jsonl");
    fs::write(&ann, ann_lines).unwrap();

    ok(
        caplab()
            .args(["evaluate", "--pred"])
            .arg(&pseudo)
            .arg("--ann")
            .arg(&ann)
            .arg("--out")
            .arg(&report)
            .args(["--policy", "frontier", "--method", "ldcps-offline"])
            .output()
            .unwrap(),
        "evaluate",
    );
    let report_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_json["version"], "report/1");

    ok(
        caplab()
            .args(["consistency", "--model"])
            .arg(&model)
            .arg("--episode")
            .arg(&episode)
            .arg("--scene")
            .arg(&scene)
            .arg("--out")
            .arg(&consistency)
            .output()
            .unwrap(),
        "consistency",
    );
    assert!(consistency.exists());
    assert!(dir.path().join("consistency.csv").exists());
}

#[test]
fn run_and_report_work_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    // unspecified fields take their documented defaults
    let config = serde_json::json!({
        "version": "config/1",
        "scene_spec": {"bounds": [20, 20, 8], "n_objects": 4, "rooms": [1, 1]},
        "policy": "random",
        "steps": 40,
        "episode": {"camera": {"width": 32, "height": 32}},
        "consensus": {"method": "ldcps-offline"},
        "loss": {"epochs": 4},
        "seeds": [2],
        "out_dir": out_dir.to_string_lossy(),
    });
    let config_path = dir.path().join("run.json");
    fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();

    let out = caplab().args(["run", "--config"]).arg(&config_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("manifest.json").exists());

    let reports_dir = dir.path().join("tables");
    let out = caplab()
        .args(["report", "--manifest"])
        .arg(out_dir.join("manifest.json"))
        .arg("--out-dir")
        .arg(&reports_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(reports_dir.join("tables.csv").exists());
    assert!(reports_dir.join("tables.md").exists());
}

#[test]
fn consensus_uses_a_remote_llm_from_the_environment() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    // canned completion server: answers every request with a tagged caption
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() {
                    return;
                }
                let line = line.trim_end();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_len = v.trim().parse().unwrap_or(0);
                }
                if line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0u8; content_len];
            let _ = reader.read_exact(&mut body);
            // the prompt must carry the serialized frequency list
            let sent: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let prompt = sent["prompt"].as_str().unwrap();
            assert!(prompt.contains("[["), "prompt lacks the frequency list:\n{prompt}");
            let payload = r#"{"text":"<Caption>A distilled caption from the service</Caption>"}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });

    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    write_scene_spec(&spec_path);
    let episode = dir.path().join("episode.jsonl");
    let scene = dir.path().join("scene.json");
    let out = caplab()
        .args(["explore", "--scene"])
        .arg(&spec_path)
        .args(["--policy", "random", "--steps", "50", "--seed", "2", "--out"])
        .arg(&episode)
        .arg("--emit-scene")
        .arg(&scene)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let pseudo = dir.path().join("pseudo.jsonl");
    let out = caplab()
        .env("CAPLAB_LLM_ENDPOINT", &endpoint)
        .args(["consensus", "--episode"])
        .arg(&episode)
        .arg("--scene")
        .arg(&scene)
        .args(["--method", "ldcps", "--model", "canned", "--out"])
        .arg(&pseudo)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&pseudo).unwrap();
    assert!(text.contains("A distilled caption from the service"), "{text}");
    assert!(text.contains(r#""method":"ldcps-llm""#), "{text}");
    assert!(text.contains(r#""source_model":"canned""#), "{text}");
}

#[test]
fn config_errors_exit_with_code_two() {
    let out = caplab().args(["run", "--config", "/definitely/missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // bad flag value: clap also reports usage errors as exit code 2
    let out = caplab()
        .args(["explore", "--scene", "x.json", "--policy", "zigzag", "--seed", "1", "--out", "y"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_failures_exit_with_code_three() {
    // corrupt episode file -> build-map fails as a phase error
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let header = serde_json::json!({
        "version": "episode/9",
        "policy": "random",
        "seed": 0,
        "n_steps": 0,
        "scene_sha256": "x",
        "camera": {"width": 8, "height": 8, "fov": 1.5, "max_range": 10.0},
        "map_resolution": 0.25,
        "grid_k": 128,
        "world_cells": [8, 8],
        "cell_size": 0.25
    });
    fs::write(&bad, format!("{header}\n")).unwrap();
    let out = caplab()
        .args(["build-map", "--episode"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("map.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "version mismatch is a config-class error");

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = caplab()
        .args(["build-map", "--episode"])
        .arg(&empty)
        .args(["--out"])
        .arg(dir.path().join("map2.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "contract violations are phase failures");
}
