//! Command-line entry point. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig, CONFIG_ENV};
use crate::dialoggen::{gen_boundary_dialogues, gen_instruction_dialogues, write_dialogues, Dialogue};
use crate::manifest::{dataset_stats, read_manifest_file, write_manifest_file, DatasetManifest, ManifestError, RunHeader, TimeInterval};
use crate::metrics::{
    eval_dvc, eval_qa_accuracy, eval_sc, eval_tvg, mrsd_report, parse_predictions, DvcEvent, EvalReport, QaItem,
    RawPrediction, ScItem, SodaScorer, Task, TimeFormat,
};
use crate::pipeline::{self, run_header, AssetEmbeddings, Stage};
use crate::reviewd::{AppState, ReviewStore};
use crate::synth::{fixture_corpus, write_corpus};

#[derive(Debug, Parser)]
#[command(name = "omnivale", version, about = "Omni-modal long-video annotation pipeline and evaluation toolkit")]
pub struct Cli {
    /// TOML config; falls back to $OMNIVALE_CONFIG, then built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides worker thread count; 0 uses every core.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct AssetsArg {
    /// Directory holding one sub-directory per video.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InOut {
    /// Input manifest (JSONL).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DialogueKindArg {
    Boundary,
    Instruction,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalTask {
    Tvg,
    Dvc,
    Sc,
    Qa,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimeFormatArg {
    Seconds,
    FrameIndex,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Meteor,
    Cider,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic asset corpus for testing.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        videos: usize,
    },
    /// Run the quality gates over an asset tree and write a manifest.
    Filter {
        #[command(flatten)]
        assets: AssetsArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-video gate measurements as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Detect visual event boundaries.
    SegmentVisual {
        #[command(flatten)]
        assets: AssetsArg,
        #[command(flatten)]
        io: InOut,
    },
    /// Detect audio event boundaries.
    SegmentAudio {
        #[command(flatten)]
        assets: AssetsArg,
        #[command(flatten)]
        io: InOut,
    },
    /// Fuse visual and audio events into omni-modal events.
    Fuse {
        #[command(flatten)]
        io: InOut,
    },
    /// Caption every event and tag audio-visual correlations.
    Caption {
        #[command(flatten)]
        assets: AssetsArg,
        #[command(flatten)]
        io: InOut,
    },
    /// Assign train/test splits.
    Split {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Filter, segment, fuse and caption in one go.
    Run {
        #[command(flatten)]
        assets: AssetsArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also assign splits.
        #[arg(long)]
        split: bool,
    },
    /// Generate training dialogues from a captioned manifest.
    GenDialogues {
        #[command(flatten)]
        io: InOut,
        #[arg(long, value_enum, default_value_t = DialogueKindArg::All)]
        kind: DialogueKindArg,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long, value_enum)]
        task: EvalTask,
        /// Predictions (JSONL).
        #[arg(long)]
        pred: PathBuf,
        /// References (JSONL); not used for qa.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, value_enum)]
        time_format: Option<TimeFormatArg>,
        #[arg(long, value_enum, default_value_t = ScorerArg::Meteor)]
        soda_scorer: ScorerArg,
        /// JSON report path; the summary always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics for a manifest.
    Stats {
        #[command(flatten)]
        io: InOut,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Boundary coherence per segmentation stage.
    Mrsd {
        #[command(flatten)]
        assets: AssetsArg,
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        json: bool,
    },
    /// Serve the review API over a manifest.
    Serve {
        #[command(flatten)]
        assets: AssetsArg,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        /// Audit log and snapshot directory; in-memory when absent.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "OMNIVALE_REVIEW_TOKEN")]
        token: Option<String>,
        #[arg(long)]
        allowed_origin: Option<String>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn manifest_err(path: &Path, e: ManifestError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    match e {
        ManifestError::Io(_) => CliError::Runtime(msg),
        _ => CliError::Usage(msg),
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn required(p: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str, key: &str) -> CliResult<PathBuf> {
    p.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or io.{key} in the config)")))
}

fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    read_manifest_file(path).map_err(|e| manifest_err(path, e))
}

fn save_manifest(m: &DatasetManifest, path: &Path) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    write_manifest_file(m, path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    log::info!("wrote {} ({} videos)", path.display(), m.records.len());
    Ok(())
}

#[derive(Serialize)]
struct WithHeader<'a, T: Serialize> {
    run: &'a RunHeader,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, header: &RunHeader, body: &T) -> CliResult {
    let f = File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &WithHeader { run: header, body }).map_err(runtime)?;
    writeln!(w).and_then(|_| w.flush()).map_err(runtime)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let f = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct TvgRef {
    key: String,
    interval: TimeInterval,
}

#[derive(Debug, Deserialize)]
struct DvcRef {
    video_id: String,
    events: Vec<DvcEvent>,
}

#[derive(Debug, Deserialize)]
struct ScRef {
    key: String,
    references: Vec<String>,
}

fn usage_on_metric(e: crate::metrics::MetricsError) -> CliError {
    CliError::Usage(e.to_string())
}

fn eval(
    cfg: &PipelineConfig,
    task: EvalTask,
    pred: &Path,
    refs: Option<&Path>,
    format: TimeFormat,
    scorer: SodaScorer,
) -> CliResult<EvalReport> {
    let mut report = EvalReport::default();
    if let EvalTask::Qa = task {
        let items: Vec<QaItem> = read_jsonl(pred)?;
        let clients = cfg.clients();
        let qa = eval_qa_accuracy(&items, clients.judge.as_ref(), &clients.retry).map_err(usage_on_metric)?;
        report.qa_accuracy = Some(qa.accuracy);
        report.excluded = qa.excluded;
        return Ok(report);
    }
    let refs = refs.ok_or_else(|| CliError::Usage("--refs is required for this task".into()))?;
    let raw: Vec<RawPrediction> = read_jsonl(pred)?;
    match task {
        EvalTask::Tvg => {
            let parsed = parse_predictions(&raw, Task::Tvg, format);
            let preds: Vec<(String, TimeInterval)> =
                parsed.items.iter().filter_map(|(k, s)| s.first().map(|s| (k.clone(), s.interval))).collect();
            let refs: Vec<(String, TimeInterval)> =
                read_jsonl::<TvgRef>(refs)?.into_iter().map(|r| (r.key, r.interval)).collect();
            report.tvg = Some(eval_tvg(&preds, &refs).map_err(usage_on_metric)?);
            report.excluded = parsed.excluded;
        }
        EvalTask::Dvc => {
            let parsed = parse_predictions(&raw, Task::Dvc, format);
            let refs: BTreeMap<String, Vec<DvcEvent>> =
                read_jsonl::<DvcRef>(refs)?.into_iter().map(|r| (r.video_id, r.events)).collect();
            let mut preds: BTreeMap<String, Vec<DvcEvent>> = refs.keys().map(|k| (k.clone(), Vec::new())).collect();
            for (key, spans) in &parsed.items {
                let vid = parsed.video_of.get(key).cloned().unwrap_or_else(|| key.clone());
                preds
                    .entry(vid)
                    .or_default()
                    .extend(spans.iter().map(|s| DvcEvent { interval: s.interval, caption: s.text.clone() }));
            }
            report.dvc = Some(eval_dvc(&preds, &refs, scorer).map_err(usage_on_metric)?);
            report.excluded = parsed.excluded;
        }
        EvalTask::Sc => {
            let parsed = parse_predictions(&raw, Task::Sc, format);
            let items: Vec<ScItem> = read_jsonl::<ScRef>(refs)?
                .into_iter()
                .map(|r| ScItem {
                    candidate: parsed.answers.get(&r.key).cloned().unwrap_or_default(),
                    key: r.key,
                    references: r.references,
                })
                .collect();
            report.sc = Some(eval_sc(&items).map_err(usage_on_metric)?);
            report.excluded = parsed.excluded;
        }
        EvalTask::Qa => unreachable!("handled above"),
    }
    Ok(report)
}

fn dialogues(cfg: &PipelineConfig, m: &DatasetManifest, kind: DialogueKindArg) -> CliResult<Vec<Dialogue>> {
    let mut out = Vec::new();
    if matches!(kind, DialogueKindArg::Boundary | DialogueKindArg::All) {
        out.extend(gen_boundary_dialogues(m, cfg.seed, &cfg.dialogue).map_err(runtime)?);
    }
    if matches!(kind, DialogueKindArg::Instruction | DialogueKindArg::All) {
        let clients = cfg.clients();
        let (d, report) = gen_instruction_dialogues(m, clients.integrator.as_ref(), &clients.retry);
        if !report.skipped.is_empty() {
            log::warn!("instruction dialogues skipped for {} videos", report.skipped.len());
        }
        out.extend(d);
    }
    Ok(out)
}

fn serve(cfg: &PipelineConfig, manifest_path: &Path, media_root: Option<PathBuf>) -> CliResult {
    let manifest = load_manifest(manifest_path)?;
    let store = match &cfg.review.data_dir {
        Some(dir) => ReviewStore::open(manifest, dir, cfg.review.snapshot_every),
        None => {
            log::warn!("no review data_dir: review actions will not be persisted");
            ReviewStore::in_memory(manifest)
        }
    }
    .map_err(runtime)?;
    let state = AppState {
        store: Arc::new(store),
        token: cfg.review.token.clone(),
        page_size: cfg.review.page_size,
        media_root,
        allowed_origin: cfg.review.allowed_origin.clone(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.review.bind)
            .await
            .map_err(|e| runtime(format!("bind {}: {e}", cfg.review.bind)))?;
        log::info!("review service listening on http://{}", listener.local_addr().map_err(runtime)?);
        crate::reviewd::serve(listener, state).await.map_err(runtime)
    })
}

fn execute(cli: Cli) -> CliResult {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    let io = cfg.io.clone();
    let assets_of = |a: AssetsArg| required(a.assets, &io.assets_root, "assets", "assets_root");
    let manifest_of = |p: Option<PathBuf>| required(p, &io.manifest, "manifest", "manifest");
    let out_of = |p: Option<PathBuf>| required(p, &io.output, "out", "output");

    match cli.command {
        Command::Synth { out, videos } => {
            let corpus = fixture_corpus(cfg.seed, videos);
            write_corpus(&out, &corpus).map_err(runtime)?;
            log::info!("wrote {} synthetic videos to {}", corpus.len(), out.display());
        }
        Command::Filter { assets, out, report } => {
            let (root, out) = (assets_of(assets)?, out_of(out)?);
            let (m, outcomes, summary) = pipeline::filter_stage(&root, &cfg, &cfg.clients()).map_err(runtime)?;
            eprint!("{summary}");
            save_manifest(&m, &out)?;
            if let Some(path) = report {
                let rows: Vec<_> = outcomes
                    .iter()
                    .map(|o| {
                        serde_json::json!({
                            "video_id": o.video_id,
                            "verdict": o.verdict.to_string(),
                            "measurements": o.measurements,
                            "error": o.error,
                        })
                    })
                    .collect();
                write_json(&path, m.run.as_ref().expect("stage header"), &serde_json::json!({"videos": rows}))?;
            }
        }
        Command::SegmentVisual { assets, io: p } => {
            let (root, input, out) = (assets_of(assets)?, manifest_of(p.manifest)?, out_of(p.out)?);
            let m = pipeline::segment_visual_stage(&load_manifest(&input)?, &root, &cfg, &cfg.clients()).map_err(runtime)?;
            save_manifest(&m, &out)?;
        }
        Command::SegmentAudio { assets, io: p } => {
            let (root, input, out) = (assets_of(assets)?, manifest_of(p.manifest)?, out_of(p.out)?);
            let m = pipeline::segment_audio_stage(&load_manifest(&input)?, &root, &cfg, &cfg.clients()).map_err(runtime)?;
            save_manifest(&m, &out)?;
        }
        Command::Fuse { io: p } => {
            let (input, out) = (manifest_of(p.manifest)?, out_of(p.out)?);
            let (m, s) = pipeline::fuse_stage(&load_manifest(&input)?, &cfg).map_err(runtime)?;
            log::info!("fused {} videos into {} omni events, mean coverage {:.4}", s.videos, s.omni_events, s.mean_coverage);
            save_manifest(&m, &out)?;
        }
        Command::Caption { assets, io: p } => {
            let (root, input, out) = (assets_of(assets)?, manifest_of(p.manifest)?, out_of(p.out)?);
            let (m, s) = pipeline::caption_stage(&load_manifest(&input)?, &root, &cfg, &cfg.clients()).map_err(runtime)?;
            log::info!(
                "captioned {} visual, {} audio, {} omni events ({} failures)",
                s.visual_captioned,
                s.audio_captioned,
                s.omni_captioned,
                s.failures
            );
            save_manifest(&m, &out)?;
        }
        Command::Split { io: p, test_fraction } => {
            if let Some(f) = test_fraction {
                cfg.split.test_fraction = f;
                cfg.validate()?;
            }
            let (input, out) = (manifest_of(p.manifest)?, out_of(p.out)?);
            let m = pipeline::split_stage(&load_manifest(&input)?, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            save_manifest(&m, &out)?;
        }
        Command::Run { assets, out, split } => {
            let (root, out) = (assets_of(assets)?, out_of(out)?);
            let (mut m, s) = pipeline::run_all(&root, &cfg, &cfg.clients()).map_err(runtime)?;
            eprint!("{}", s.filter);
            if split {
                m = pipeline::split_stage(&m, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            save_manifest(&m, &out)?;
        }
        Command::GenDialogues { io: p, kind } => {
            let (input, out) = (manifest_of(p.manifest)?, out_of(p.out)?);
            let d = dialogues(&cfg, &load_manifest(&input)?, kind)?;
            let f = File::create(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
            let mut w = BufWriter::new(f);
            write_dialogues(&mut w, &d).map_err(runtime)?;
            w.flush().map_err(runtime)?;
            let mut sidecar = out.clone().into_os_string();
            sidecar.push(".run.json");
            let single = d.iter().filter(|x| x.turns.len() == 2).count();
            write_json(
                Path::new(&sidecar),
                &header(&cfg, "gen-dialogues"),
                &serde_json::json!({"dialogues": d.len(), "single_turn": single}),
            )?;
            log::info!("wrote {} dialogues to {}", d.len(), out.display());
        }
        Command::Eval { task, pred, refs, time_format, soda_scorer, out } => {
            let format = match time_format {
                Some(TimeFormatArg::Seconds) => TimeFormat::Seconds,
                Some(TimeFormatArg::FrameIndex) => TimeFormat::FrameIndex,
                None => cfg.dialogue.time_format,
            };
            let scorer = match soda_scorer {
                ScorerArg::Meteor => SodaScorer::Meteor,
                ScorerArg::Cider => SodaScorer::Cider,
            };
            let report = eval(&cfg, task, &pred, refs.as_deref(), format, scorer)?;
            print!("{report}");
            if let Some(path) = out {
                write_json(&path, &header(&cfg, "eval"), &report)?;
            }
        }
        Command::Stats { io: p, json } => {
            let input = manifest_of(p.manifest)?;
            let stats = dataset_stats(&load_manifest(&input)?).map_err(|e| manifest_err(&input, e))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).map_err(runtime)?);
            } else {
                print!("{stats}");
            }
            if let Some(path) = p.out {
                write_json(&path, &header(&cfg, "stats"), &stats)?;
            }
        }
        Command::Mrsd { assets, io: p, json } => {
            let (root, input) = (assets_of(assets)?, manifest_of(p.manifest)?);
            let m = load_manifest(&input)?;
            let clients = cfg.clients();
            let source = AssetEmbeddings::new(&root, &cfg, clients.embedder.as_ref());
            let report = mrsd_report(&m, &source);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
            } else {
                print!("{report}");
            }
            if let Some(path) = p.out {
                write_json(&path, &header(&cfg, "mrsd"), &report)?;
            }
        }
        Command::Serve { assets, manifest, bind, data_dir, token, allowed_origin } => {
            let input = manifest_of(manifest)?;
            if let Some(b) = bind {
                cfg.review.bind = b;
            }
            if data_dir.is_some() {
                cfg.review.data_dir = data_dir;
            }
            if token.is_some() {
                cfg.review.token = token;
            }
            if allowed_origin.is_some() {
                cfg.review.allowed_origin = allowed_origin;
            }
            serve(&cfg, &input, assets.assets.or(io.assets_root.clone()))?;
        }
    }
    Ok(())
}

fn header(cfg: &PipelineConfig, stage: &str) -> RunHeader {
    RunHeader { stage: stage.into(), ..run_header(cfg, Stage::Filter) }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
