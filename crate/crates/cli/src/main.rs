//! `sg4d`: build, query and evaluate 4D scene graphs from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sg4d::config::{ConfigError, PipelineConfig, VlmClientKind};
use sg4d::graph4d::{from_json, Graph4dError};
use sg4d::lidarseg::{miou, project_labels, LidarsegError, PointLabeling};
use sg4d::pipeline::{build_sequence, make_backend, read_graph, write_outputs, PipelineError};
use sg4d::refinement::RefineError;
use sg4d::scene_io::{validate_sequence, SceneIoError, SequenceManifest, MANIFEST_FILE};
use sg4d::seg::SegError;
use sg4d::step::PatchStore;
use sg4d::synth::{generate, write_scene, ScenarioSpec, SynthError, EXAMPLE_SCENARIO};
use sg4d::vlm::{query, render_prompt, InferenceClient, RemoteHttpClient, VlmError};

#[derive(Parser)]
#[command(
    name = "sg4d",
    version,
    about = "Build and query 4D scene graphs from point clouds and camera images"
)]
struct Cli {
    /// Most verbose log level written to stderr as JSON lines.
    #[arg(long, global = true, default_value = "info")]
    log_level: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config (TOML, or JSON by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set clustering.min_cluster_size=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        match &self.config {
            Some(p) if !p.is_file() => Err(CliError::input(
                "config_not_found",
                format!("config not found: {}", p.display()),
            )),
            Some(p) => PipelineConfig::load(p, &self.overrides).map_err(CliError::from),
            None => PipelineConfig::from_overrides(&self.overrides).map_err(CliError::from),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a sequence and write 4dsg.json plus per-frame reports.
    Build {
        /// manifest.json or the directory containing it.
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ask a question about a scene graph.
    Query {
        graph: PathBuf,
        question: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the rendered prompt here instead of calling the client.
        #[arg(long)]
        dump_prompt: Option<PathBuf>,
        /// Print the answer with its provenance as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic sequence with ground truth.
    Synth {
        /// Scenario spec (JSON); the bundled four-box scenario when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score point labels against ground truth with mIoU.
    EvalLidarseg {
        /// Ground-truth labels (u16 per point).
        #[arg(long)]
        gt: PathBuf,
        /// Ground-truth label map; defaults to the labels path with a .json extension.
        #[arg(long)]
        gt_map: Option<PathBuf>,
        /// Predicted labels (u16 per point).
        #[arg(long, conflicts_with = "graph", required_unless_present = "graph")]
        pred: Option<PathBuf>,
        #[arg(long)]
        pred_map: Option<PathBuf>,
        /// Predict from a scene graph instead; needs --classes and --timestamp.
        #[arg(long, requires_all = ["classes", "timestamp"])]
        graph: Option<PathBuf>,
        /// JSON object mapping object ids to class ids.
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Frame of the graph to project.
        #[arg(long)]
        timestamp: Option<f64>,
        /// Score ground-truth-unlabeled points too.
        #[arg(long)]
        keep_unlabeled: bool,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a sequence, a scene graph and/or a config without running anything.
    Validate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Debug)]
struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn input(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind,
            message: message.into(),
        }
    }

    fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: 1,
            kind,
            message: message.into(),
        }
    }

    fn unavailable(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            kind: "client_unavailable",
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::input("config_invalid", e.to_string())
    }
}

impl From<SceneIoError> for CliError {
    fn from(e: SceneIoError) -> Self {
        Self::input("input_invalid", e.to_string())
    }
}

impl From<Graph4dError> for CliError {
    fn from(e: Graph4dError) -> Self {
        Self::input("graph_invalid", e.to_string())
    }
}

impl From<LidarsegError> for CliError {
    fn from(e: LidarsegError) -> Self {
        Self::input("labels_invalid", e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::SpecInvalid(_) => Self::input("spec_invalid", e.to_string()),
            SynthError::Io(_) => Self::runtime("io", e.to_string()),
        }
    }
}

impl From<VlmError> for CliError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::ClientUnavailable(_) | VlmError::ClientTimeout { .. } => {
                Self::unavailable(e.to_string())
            }
            VlmError::MissingPatch(_) => Self::input("graph_invalid", e.to_string()),
            VlmError::MalformedResponse(_) => Self::runtime("malformed_response", e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Scene(e) => e.into(),
            PipelineError::Graph(e) => e.into(),
            PipelineError::Input(m) => Self::input("input_invalid", m),
            PipelineError::Refine(RefineError::Segmentation(SegError::BackendUnavailable(m))) => {
                Self::unavailable(m)
            }
            PipelineError::Refine(e) => Self::runtime("pipeline_failed", e.to_string()),
            PipelineError::Io(m) => Self::runtime("io", m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .json()
        .with_max_level(cli.log_level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind, "message": e.message}));
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Build {
            manifest,
            config,
            out,
        } => cmd_build(&manifest, &config, out),
        Command::Query {
            graph,
            question,
            config,
            dump_prompt,
            json,
        } => cmd_query(&graph, &question, &config, dump_prompt.as_deref(), json),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out),
        Command::EvalLidarseg {
            gt,
            gt_map,
            pred,
            pred_map,
            graph,
            classes,
            timestamp,
            keep_unlabeled,
            out,
        } => {
            let gt = read_labels(&gt, gt_map.as_deref())?;
            let pred = match (pred, graph) {
                (Some(p), _) => read_labels(&p, pred_map.as_deref())?,
                (None, Some(g)) => predict_from_graph(&g, classes.as_deref(), timestamp, &gt)?,
                (None, None) => unreachable!("clap requires --pred or --graph"),
            };
            let report = miou(&pred, &gt, !keep_unlabeled)?;
            let text = serde_json::to_string_pretty(&report).expect("reports serialize");
            if let Some(p) = out {
                std::fs::write(&p, &text)
                    .map_err(|e| CliError::runtime("io", format!("{}: {e}", p.display())))?;
            }
            println!("{text}");
            Ok(())
        }
        Command::Validate {
            manifest,
            graph,
            config,
        } => cmd_validate(manifest.as_deref(), graph.as_deref(), &config),
    }
}

fn load_manifest(path: &Path) -> Result<SequenceManifest, CliError> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(CliError::input(
            "manifest_not_found",
            format!("manifest not found: {}", file.display()),
        ));
    }
    Ok(SequenceManifest::load(&file)?)
}

fn cmd_build(manifest: &Path, args: &ConfigArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let manifest = load_manifest(manifest)?;
    let config = args.load()?;
    let out_dir = out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| manifest.base_dir.join("output"));
    let backend = make_backend(&config, &manifest)?;
    let result = build_sequence(&manifest, &config, backend)?;
    let path = write_outputs(&result, &out_dir, config.step.patch_mode)?;
    let total_ms: f64 = result.reports.iter().map(|r| r.timings.total_ms).sum();
    tracing::info!(
        frames = result.reports.len(),
        tracks = result.graph.tracks.len(),
        total_ms,
        output = %path.display(),
        "build finished"
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_query(
    graph_path: &Path,
    question: &str,
    args: &ConfigArgs,
    dump_prompt: Option<&Path>,
    as_json: bool,
) -> Result<(), CliError> {
    let config = args.load()?;
    if !graph_path.is_file() {
        return Err(CliError::input(
            "graph_not_found",
            format!("graph not found: {}", graph_path.display()),
        ));
    }
    let (graph, store) = read_graph(graph_path)?;
    if let Some(p) = dump_prompt {
        let context = render_prompt(&graph, question, &config.vlm.prompt);
        std::fs::write(p, context.text())
            .map_err(|e| CliError::runtime("io", format!("{}: {e}", p.display())))?;
        return Ok(());
    }
    let client: Box<dyn InferenceClient> = match config.vlm.client {
        VlmClientKind::Mock => Box::new(config.vlm.mock.clone()),
        VlmClientKind::Remote => {
            let url = config
                .vlm_endpoint()
                .ok_or_else(|| CliError::input("config_invalid", "vlm.endpoint is not set"))?;
            Box::new(RemoteHttpClient::new(
                &url,
                Duration::from_secs_f64(config.vlm.timeout_s),
            ))
        }
    };
    let result = query(
        &graph,
        question,
        &config.vlm.prompt,
        &store,
        client.as_ref(),
    )?;
    tracing::info!(
        client = %result.provenance.client_id,
        latency_ms = result.provenance.latency_ms,
        prompt_hash = %result.provenance.prompt_hash,
        "query answered"
    );
    if as_json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("results serialize")
        );
    } else {
        println!("{}", result.answer);
    }
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let text = match spec {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::input("spec_not_found", format!("{}: {e}", p.display())))?,
        None => EXAMPLE_SCENARIO.to_string(),
    };
    let spec = ScenarioSpec::from_json(&text)?;
    let scene = generate(&spec)?;
    write_scene(&scene, out)?;
    tracing::info!(frames = scene.frames.len(), output = %out.display(), "scene written");
    println!("{}", out.join(MANIFEST_FILE).display());
    Ok(())
}

fn read_labels(bin: &Path, map: Option<&Path>) -> Result<PointLabeling, CliError> {
    let map = map
        .map(Path::to_path_buf)
        .unwrap_or_else(|| bin.with_extension("json"));
    Ok(PointLabeling::read(bin, &map)?)
}

fn predict_from_graph(
    graph_path: &Path,
    classes: Option<&Path>,
    timestamp: Option<f64>,
    gt: &PointLabeling,
) -> Result<PointLabeling, CliError> {
    let (classes, timestamp) = (
        classes.expect("clap requires --classes"),
        timestamp.expect("clap requires --timestamp"),
    );
    let text = std::fs::read_to_string(graph_path).map_err(|e| {
        CliError::input("graph_not_found", format!("{}: {e}", graph_path.display()))
    })?;
    let graph = from_json(&text, &mut PatchStore::new())?;
    let text = std::fs::read_to_string(classes)
        .map_err(|e| CliError::input("classes_not_found", format!("{}: {e}", classes.display())))?;
    let assignments: BTreeMap<u64, u16> = serde_json::from_str(&text)
        .map_err(|e| CliError::input("classes_invalid", format!("{}: {e}", classes.display())))?;
    Ok(project_labels(
        &graph,
        timestamp,
        gt.labels.len(),
        &assignments,
        &gt.label_map,
    )?)
}

fn cmd_validate(
    manifest: Option<&Path>,
    graph: Option<&Path>,
    args: &ConfigArgs,
) -> Result<(), CliError> {
    args.load()?;
    let mut problems = Vec::new();
    if let Some(m) = manifest {
        let m = load_manifest(m)?;
        problems.extend(
            validate_sequence(&m)
                .into_iter()
                .map(|w| format!("manifest: {w}")),
        );
    }
    if let Some(g) = graph {
        let text = std::fs::read_to_string(g)
            .map_err(|e| CliError::input("graph_not_found", format!("{}: {e}", g.display())))?;
        if let Err(e) = from_json(&text, &mut PatchStore::new()).and_then(|g| g.validate()) {
            problems.push(format!("graph: {e}"));
        }
    }
    println!(
        "{}",
        json!({"valid": problems.is_empty(), "problems": problems})
    );
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::input("validation_failed", problems.join("; ")))
    }
}
