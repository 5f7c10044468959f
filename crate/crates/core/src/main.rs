//! Command-line entry point. Exit codes: 0 success, 1 validation error,
//! 2 runtime error. Log level comes from the SEMSAM_LOG env var.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use semsam::eval::{aggregate, stub_respond, ResponseRecord, ScoringConfig};
use semsam::overlay::{render_frame, write_png, Background, RenderStyle};
use semsam::protocol::{handle_line, serve_stdio, serve_tcp};
use semsam::qa::{generate, parse_jsonl, serialize_jsonl, GenConfig, GenError, Templates};
use semsam::relations::conventions_json;
use semsam::volume::{
    extract_frames, load_label_map, parse_nifti, reorient_label_map_to_ras, reorient_to_ras,
    OrientationMode, SliceDirection, WindowSpec,
};
use semsam::{NeighborBuildConfig, TokenizerMeta, VocabPartition};

#[derive(Parser)]
#[command(name = "semsam", version, about = "Semantic-neighborhood decoding and spatial-grounding benchmark tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a cosine nearest-neighbor table from an embedding matrix.
    BuildNeighbors(BuildNeighborsArgs),
    /// Serve the decoding wire protocol over stdio or TCP.
    Serve(ServeArgs),
    /// Answer a single decode request from a JSON file.
    Step(StepArgs),
    /// Generate a question set from a volume and its label map.
    Gen(GenArgs),
    /// Render windowed frames of a volume to PNG.
    Render(RenderArgs),
    /// Score responses against a question set.
    Eval(EvalArgs),
    /// Produce stub responses with a configurable error rate.
    StubRespond(StubArgs),
}

#[derive(Args)]
struct BuildNeighborsArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Vocabulary partition JSON, or tokenizer metadata JSON (v_tok,
    /// special_ids, added_ids) from which the partition is built.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Serve on stdin/stdout (default when --listen is absent).
    #[arg(long, conflicts_with = "listen")]
    stdio: bool,
    /// Listen address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    listen: Option<String>,
    /// Embedding-matrix row count; needed when --vocab holds tokenizer
    /// metadata rather than a serialized partition.
    #[arg(long)]
    v_emb: Option<u32>,
}

#[derive(Args)]
struct StepArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// File holding one request JSON object.
    #[arg(long)]
    request: PathBuf,
    /// Embedding-matrix row count; needed when --vocab holds tokenizer
    /// metadata rather than a serialized partition.
    #[arg(long)]
    v_emb: Option<u32>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// JSON object mapping label id to structure name.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Generator config TOML; defaults cover the full parameter grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Question template TOML overriding the built-in wording.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Root seed; required so no entropy is implicit.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, value_parser = parse_direction)]
    direction: SliceDirection,
    #[arg(long, value_parser = parse_mode, default_value = "standard_view")]
    mode: OrientationMode,
    /// "percentile" (0.5/99.5) or "soft_tissue" (level 40, width 400 HU).
    #[arg(long, default_value = "percentile")]
    window: String,
    #[arg(long, default_value = "image", value_parser = parse_background)]
    background: Background,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    prior_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    prior_beta: f64,
    #[arg(long, default_value_t = 0.95)]
    mass: f64,
    /// Exact matching only; disable the synonym table.
    #[arg(long)]
    no_synonyms: bool,
}

#[derive(Args)]
struct StubArgs {
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    error_rate: f64,
    /// Required so no entropy is implicit.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_direction(s: &str) -> Result<SliceDirection, String> {
    match s {
        "axial" => Ok(SliceDirection::Axial),
        "coronal" => Ok(SliceDirection::Coronal),
        "sagittal" => Ok(SliceDirection::Sagittal),
        _ => Err(format!("unknown direction {s}, expected axial|coronal|sagittal")),
    }
}

fn parse_mode(s: &str) -> Result<OrientationMode, String> {
    match s {
        "ras_storage" => Ok(OrientationMode::RasStorage),
        "standard_view" => Ok(OrientationMode::StandardView),
        _ => Err(format!("unknown mode {s}, expected ras_storage|standard_view")),
    }
}

fn parse_background(s: &str) -> Result<Background, String> {
    match s {
        "image" => Ok(Background::Image),
        "white" => Ok(Background::White),
        _ => Err(format!("unknown background {s}, expected image|white")),
    }
}

/// Errors that should exit 1 (bad input) vs 2 (everything else).
enum AppError {
    Validation(String),
    Runtime(String),
}

impl AppError {
    fn validation(e: impl std::fmt::Display) -> AppError {
        AppError::Validation(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> AppError {
        AppError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<GenError> for AppError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::InvalidConfig(_) | GenError::MissingTemplate(_) => {
                AppError::Validation(e.to_string())
            }
            _ => AppError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEMSAM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::BuildNeighbors(a) => build_neighbors(a),
        Command::Serve(a) => serve(a),
        Command::Step(a) => step(a),
        Command::Gen(a) => gen(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::StubRespond(a) => stub(a),
    }
}

/// Accept either a serialized partition or tokenizer metadata; metadata is
/// expanded against the embedding row count.
fn load_partition(path: &Path, v_emb: Option<u32>) -> Result<VocabPartition, AppError> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(p) = VocabPartition::from_json(&text) {
        return Ok(p);
    }
    let meta: TokenizerMeta = serde_json::from_str(&text).map_err(AppError::validation)?;
    meta.validate().map_err(AppError::validation)?;
    let v_emb = v_emb.ok_or_else(|| {
        AppError::Validation("tokenizer metadata needs an embedding matrix for v_emb".into())
    })?;
    VocabPartition::build(&meta, v_emb).map_err(AppError::validation)
}

fn build_neighbors(a: BuildNeighborsArgs) -> Result<(), AppError> {
    let e = semsam::embedding::load_embeddings(&a.embeddings).map_err(AppError::validation)?;
    let p = load_partition(&a.vocab, Some(e.rows() as u32))?;
    let cfg = NeighborBuildConfig {
        k: a.k,
        epsilon: a.epsilon,
        ..Default::default()
    };
    let t = semsam::neighbors::build_neighbor_table(&e, &p, &cfg).map_err(AppError::validation)?;
    semsam::neighbors::save_table(&t, &a.out).map_err(AppError::runtime)?;
    log::info!("wrote {} rows x {} neighbors to {}", t.n(), t.k, a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), AppError> {
    let table = semsam::neighbors::load_table(&a.table).map_err(AppError::validation)?;
    let partition = load_partition(&a.vocab, a.v_emb)?;
    match a.listen {
        Some(addr) => serve_tcp(&addr, Arc::new(table), Arc::new(partition))?,
        None => serve_stdio(&table, &partition)?,
    }
    Ok(())
}

fn step(a: StepArgs) -> Result<(), AppError> {
    let table = semsam::neighbors::load_table(&a.table).map_err(AppError::validation)?;
    let partition = load_partition(&a.vocab, a.v_emb)?;
    let line = std::fs::read_to_string(&a.request)?;
    let resp = handle_line(line.trim(), &table, &partition);
    println!("{}", serde_json::to_string(&resp).map_err(AppError::runtime)?);
    Ok(())
}

fn load_names(path: Option<&Path>) -> Result<BTreeMap<u32, String>, AppError> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(path)?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text).map_err(AppError::validation)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|id| (id, v))
                .map_err(|_| AppError::Validation(format!("label id {k} is not an integer")))
        })
        .collect()
}

fn gen(a: GenArgs) -> Result<(), AppError> {
    let mut cfg = match &a.config {
        Some(p) => GenConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => GenConfig::default(),
    };
    cfg.seed = a.seed;
    let templates = match &a.templates {
        Some(p) => Templates::from_toml(&std::fs::read_to_string(p)?)?,
        None => Templates::builtin(),
    };
    let raw = parse_nifti(&a.volume).map_err(AppError::validation)?;
    let (volume, transform) = reorient_to_ras(&raw, false).map_err(AppError::validation)?;
    let names = load_names(a.names.as_deref())?;
    let raw_labels = load_label_map(&a.labels, names).map_err(AppError::validation)?;
    let labels = reorient_label_map_to_ras(&raw_labels, &transform);
    labels.check_geometry(&volume).map_err(AppError::validation)?;

    std::fs::create_dir_all(&a.out)?;
    let out = generate(&volume, &labels, &cfg, &templates, Some(&a.out))?;
    std::fs::write(a.out.join("questions.jsonl"), serialize_jsonl(&out.items))?;
    std::fs::write(
        a.out.join("coverage.json"),
        serde_json::to_string_pretty(&out.coverage).map_err(AppError::runtime)?,
    )?;
    std::fs::write(
        a.out.join("media_manifest.json"),
        serde_json::to_string_pretty(&out.media_manifest).map_err(AppError::runtime)?,
    )?;
    std::fs::write(
        a.out.join("conventions.json"),
        serde_json::to_string_pretty(&conventions_json()).map_err(AppError::runtime)?,
    )?;
    log::info!("generated {} items into {}", out.items.len(), a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), AppError> {
    let window = match a.window.as_str() {
        "percentile" => WindowSpec::default_percentile(),
        "soft_tissue" => WindowSpec::default_soft_tissue(),
        other => {
            return Err(AppError::Validation(format!(
                "unknown window {other}, expected percentile|soft_tissue"
            )))
        }
    };
    let raw = parse_nifti(&a.volume).map_err(AppError::validation)?;
    let (volume, _) = reorient_to_ras(&raw, false).map_err(AppError::validation)?;
    std::fs::create_dir_all(&a.out)?;
    let frames = extract_frames(&volume, a.mode, a.direction, &window);
    let mut manifest: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let media_ref = format!("{}_{}", a.direction.name(), a.mode.name());
    let mut files = Vec::with_capacity(frames.len());
    for frame in &frames {
        let img = render_frame(frame, &[], a.background, &RenderStyle::default());
        let rel = format!("frame_{:03}.png", frame.slice_index);
        write_png(&img, a.out.join(&rel)).map_err(AppError::runtime)?;
        files.push(rel);
    }
    manifest.insert(media_ref, files);
    std::fs::write(
        a.out.join("media_manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(AppError::runtime)?,
    )?;
    Ok(())
}

fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>, AppError> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(AppError::validation))
        .collect()
}

fn eval(a: EvalArgs) -> Result<(), AppError> {
    if !(a.mass > 0.0 && a.mass < 1.0) {
        return Err(AppError::Validation("mass must be in (0, 1)".into()));
    }
    let items = parse_jsonl(&std::fs::read_to_string(&a.questions)?).map_err(AppError::validation)?;
    let responses = read_responses(&a.responses)?;
    let cfg = ScoringConfig {
        use_synonyms: !a.no_synonyms,
        ..Default::default()
    };
    let report = aggregate(&items, &responses, &cfg, (a.prior_alpha, a.prior_beta), a.mass);
    std::fs::write(
        &a.out,
        serde_json::to_string_pretty(&report).map_err(AppError::runtime)?,
    )?;
    Ok(())
}

fn stub(a: StubArgs) -> Result<(), AppError> {
    if !(0.0..=1.0).contains(&a.error_rate) {
        return Err(AppError::Validation("error-rate must be in [0, 1]".into()));
    }
    let items = parse_jsonl(&std::fs::read_to_string(&a.questions)?).map_err(AppError::validation)?;
    let responses = stub_respond(&items, a.error_rate, a.seed);
    let mut out = String::new();
    for r in &responses {
        out.push_str(&serde_json::to_string(r).map_err(AppError::runtime)?);
        out.push('\n');
    }
    std::fs::write(&a.out, out)?;
    Ok(())
}
