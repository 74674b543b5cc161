//! Command-line front end for the captioning pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 phase failure,
//! 4 remote-service failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caplab_core::consensus::{
    pseudo_caption_all, read_pseudo_jsonl, write_pseudo_jsonl, ConsensusConfig, ConsensusMethod,
};
use caplab_core::embedding::HashedEmbedder;
use caplab_core::error::Error;
use caplab_core::explore::{rebuild_map, run_episode, EpisodeConfig, EpisodeLog, PolicyKind};
use caplab_core::llm::{HttpLlmClient, LlmClient, LlmSettings};
use caplab_core::metrics::RunLabels;
use caplab_core::perceive::NoiseConfig;
use caplab_core::pipeline::{
    consistency_report, evaluate_files, load_config, report_from_manifests, run_pipeline,
    RunConfig,
};
use caplab_core::scene::{generate_scene, Scene, SceneSpec};
use caplab_core::trainer::{
    ablation_table_csv, ablation_table_markdown, dataset_from_pseudo, finetune, lambda_ablation,
    vocab_from_pseudo, LossConfig, ToyCaptioner,
};
use caplab_core::voxmap::cluster_objects;
use caplab_core::{Result, Scalar};

#[derive(Parser)]
#[command(
    name = "caplab",
    version,
    about = "Explore synthetic scenes, distill consensus object captions, fine-tune a toy captioner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one exploration episode and write the step log.
    Explore(ExploreArgs),
    /// Rebuild the semantic voxel map from an episode log.
    BuildMap(BuildMapArgs),
    /// Distill one pseudo-caption per clustered object instance.
    Consensus(ConsensusArgs),
    /// Fine-tune the toy captioner on distilled captions.
    Finetune(FinetuneArgs),
    /// Score predictions against annotations.
    Evaluate(EvaluateArgs),
    /// Intra-instance caption consistency of a trained model.
    Consistency(ConsistencyArgs),
    /// Comparison tables across run manifests.
    Report(ReportArgs),
    /// Full pipeline: explore, build-map, consensus, finetune, evaluate, consistency.
    Run(RunArgs),
}

#[derive(Args)]
struct ExploreArgs {
    /// Scene file ("scene/1") or scene spec ("scene-spec/1"); specs are
    /// generated with --seed.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_parser = ["random", "frontier", "cla"])]
    policy: String,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write the (possibly generated) scene here for later stages.
    #[arg(long)]
    emit_scene: Option<PathBuf>,
    /// Disable caption noise (debugging aid).
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct BuildMapArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConsensusArgs {
    #[arg(long)]
    episode: PathBuf,
    #[arg(long, value_parser = ["ldcps", "ldcps-offline", "eco", "ic3"])]
    method: String,
    #[arg(long)]
    out: PathBuf,
    /// Scene file; enables ground-truth linkage, attribute proxies, and
    /// trainer view descriptors.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Alignment weight for the eco method.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Model name requested from the remote LLM endpoint.
    #[arg(long, default_value = "default")]
    model: String,
    /// Add the object-class line to the frequency prompt.
    #[arg(long)]
    include_class: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pseudo-caption file ("pseudo/1") with view descriptors.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5e-4)]
    learning_rate: f64,
    /// Also run the triplet-weight ablation over these comma-separated
    /// weights and write `<out>.ablation.{csv,md}`.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "")]
    policy: String,
    #[arg(long, default_value = "")]
    method: String,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Episode log; instances are re-clustered from it.
    #[arg(long)]
    episode: PathBuf,
    /// Scene file for attribute-complete view descriptors.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run manifest paths (repeatable).
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Output directory for tables.csv and tables.md.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Run config file ("config/1", JSON with ${ENV} interpolation).
    #[arg(long)]
    config: PathBuf,
}

fn load_scene_or_spec(path: &PathBuf, seed: u64) -> Result<Scene> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad scene JSON: {e}")))?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(caplab_core::scene::SCENE_VERSION) => Scene::from_json(value),
        Some(caplab_core::scene::SCENE_SPEC_VERSION) => {
            let mut spec_value = value;
            spec_value.as_object_mut().unwrap().remove("version");
            let spec: SceneSpec = serde_json::from_value(spec_value)
                .map_err(|e| Error::Config(format!("bad scene spec: {e}")))?;
            generate_scene(seed, &spec)
        }
        other => Err(Error::Config(format!(
            "expected a scene/1 or scene-spec/1 file, found version {other:?}"
        ))),
    }
}

fn load_scene_file(path: &PathBuf) -> Result<Scene> {
    Scene::from_json(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_out(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explore(args) => {
            let scene = load_scene_or_spec(&args.scene, args.seed)?;
            let policy = PolicyKind::parse(&args.policy)?;
            let mut cfg = EpisodeConfig { n_steps: args.steps, ..EpisodeConfig::default() };
            if args.no_noise {
                cfg.noise = NoiseConfig::zero();
            }
            let (log, map) = run_episode(&scene, policy, args.seed, &cfg)?;
            write_out(&args.out, log.to_jsonl().as_bytes())?;
            if let Some(scene_out) = &args.emit_scene {
                write_out(scene_out, serde_json::to_vec_pretty(&scene.to_json())?.as_slice())?;
            }
            eprintln!(
                "episode: {} steps, {} voxels mapped -> {}",
                log.records.len(),
                map.voxel_count(),
                args.out.display()
            );
            Ok(())
        }
        Command::BuildMap(args) => {
            let log = EpisodeLog::from_jsonl(&fs::read_to_string(&args.episode)?)?;
            let map = rebuild_map(&log)?;
            write_out(&args.out, serde_json::to_vec_pretty(&map.to_json())?.as_slice())?;
            eprintln!("map: {} voxels -> {}", map.voxel_count(), args.out.display());
            Ok(())
        }
        Command::Consensus(args) => {
            let log = EpisodeLog::from_jsonl(&fs::read_to_string(&args.episode)?)?;
            let map = rebuild_map(&log)?;
            let instances = cluster_objects(&map);
            let scene = args.scene.as_ref().map(load_scene_file).transpose()?;
            let method = ConsensusMethod::parse(&args.method)?;
            let cfg = ConsensusConfig {
                method,
                alpha: args.alpha,
                include_class: args.include_class,
                llm: LlmSettings { model: args.model, ..LlmSettings::default() },
            };
            let client = HttpLlmClient::from_env(&cfg.llm);
            let client_dyn: Option<&dyn LlmClient> = client.as_ref().map(|c| c as &dyn LlmClient);
            let outcome = pseudo_caption_all(
                &instances,
                scene.as_ref(),
                client_dyn,
                &HashedEmbedder::default(),
                &cfg,
            );
            write_out(&args.out, write_pseudo_jsonl(&outcome, method).as_bytes())?;
            eprintln!(
                "consensus: {} pseudo-captions, {} skipped, {} fallbacks -> {}",
                outcome.pseudo.len(),
                outcome.skipped.len(),
                outcome.fallbacks,
                args.out.display()
            );
            Ok(())
        }
        Command::Finetune(args) => {
            let outcome = read_pseudo_jsonl(&fs::read_to_string(&args.data)?)?;
            if outcome.pseudo.is_empty() {
                return Err(Error::Contract("pseudo-caption file holds no instances".into()));
            }
            let vocab = vocab_from_pseudo(&outcome.pseudo);
            let attr_dim = 16;
            let max_len = 12;
            let dataset = dataset_from_pseudo(&outcome.pseudo, &vocab, attr_dim, max_len);
            let input_dim = caplab_core::scene::NUM_CLASSES + attr_dim + 1;
            let mut rng = caplab_core::rng::stream(args.seed, "model-init");
            let model = ToyCaptioner::<Scalar>::init(vocab, input_dim, 16, max_len, &mut rng);
            let cfg = LossConfig {
                lambda_tr: args.lambda,
                epochs: args.epochs,
                patience: args.patience,
                learning_rate: args.learning_rate,
                seed: args.seed,
                ..LossConfig::default()
            };
            if let Some(spec) = &args.ablate {
                let lambdas: Vec<f64> = spec
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Config(format!("bad lambda `{s}`: {e}")))
                    })
                    .collect::<Result<_>>()?;
                let rows =
                    lambda_ablation(&model, &dataset, &cfg, &lambdas, &HashedEmbedder::default())?;
                let csv_path = args.out.with_extension("ablation.csv");
                let md_path = args.out.with_extension("ablation.md");
                write_out(&csv_path, ablation_table_csv(&rows).as_bytes())?;
                write_out(&md_path, ablation_table_markdown(&rows).as_bytes())?;
                eprintln!("ablation tables -> {}, {}", csv_path.display(), md_path.display());
            }
            let (trained, history) = finetune(model, &dataset, &cfg)?;
            write_out(&args.out, serde_json::to_vec_pretty(&trained.to_json())?.as_slice())?;
            write_out(
                &args.out.with_extension("history.json"),
                serde_json::to_vec_pretty(&history)?.as_slice(),
            )?;
            eprintln!(
                "finetune: {} epochs, train {:.4} -> {:.4} ({})",
                history.epochs.len(),
                history.initial_train().unwrap_or(f64::NAN),
                history.final_train().unwrap_or(f64::NAN),
                args.out.display()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let labels =
                RunLabels { policy: args.policy, method: args.method, captioner: "mock".into() };
            let report = evaluate_files(&args.pred, &args.ann, labels)?;
            write_out(&args.out, serde_json::to_vec_pretty(&report)?.as_slice())?;
            eprintln!(
                "evaluate: {} instances, B4 {:.2}, R_L {:.2}, CS {:.2} -> {}",
                report.evaluated,
                report.mean_b4,
                report.mean_rouge_l,
                report.mean_cs,
                args.out.display()
            );
            Ok(())
        }
        Command::Consistency(args) => {
            let model = ToyCaptioner::<Scalar>::from_json(serde_json::from_str(
                &fs::read_to_string(&args.model)?,
            )?)?;
            let log = EpisodeLog::from_jsonl(&fs::read_to_string(&args.episode)?)?;
            let map = rebuild_map(&log)?;
            let instances = cluster_objects(&map);
            let scene = args.scene.as_ref().map(load_scene_file).transpose()?;
            // rebuild view descriptors the same way the consensus stage does,
            // so they match what the model was trained on
            let outcome = pseudo_caption_all(
                &instances,
                scene.as_ref(),
                None,
                &HashedEmbedder::default(),
                &ConsensusConfig::default(),
            );
            let attr_dim = 16;
            let dataset =
                dataset_from_pseudo(&outcome.pseudo, &model.vocab, attr_dim, model.max_len);
            let report = consistency_report(&model, &model, &dataset, &HashedEmbedder::default());
            write_out(&args.out, serde_json::to_vec_pretty(&report)?.as_slice())?;
            write_out(&args.out.with_extension("csv"), report.to_csv().as_bytes())?;
            eprintln!(
                "consistency: {} instances -> {}",
                report.per_instance.len(),
                args.out.display()
            );
            Ok(())
        }
        Command::Report(args) => {
            let tables = report_from_manifests(&args.manifests)?;
            fs::create_dir_all(&args.out_dir)?;
            fs::write(args.out_dir.join("tables.csv"), tables.to_csv())?;
            fs::write(args.out_dir.join("tables.md"), tables.to_markdown())?;
            eprintln!("report: {} rows -> {}", tables.rows.len(), args.out_dir.display());
            Ok(())
        }
        Command::Run(args) => {
            let cfg: RunConfig = load_config(&args.config)?;
            let manifest = run_pipeline(&cfg)?;
            for phase in &manifest.phases {
                let reason = phase.reason.as_deref().unwrap_or("");
                eprintln!("{:<24} {:<8} {reason}", phase.name, phase.status);
            }
            if let Some(failed) = manifest.failed_phase() {
                let code =
                    if failed.reason.as_deref().unwrap_or("").contains("transport") { 4 } else { 3 };
                std::process::exit(code);
            }
            eprintln!("manifest -> {}/manifest.json", cfg.out_dir);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
