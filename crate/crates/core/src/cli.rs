//! The `glen` command line: graph building, training and sweeps, heatmaps
//! and synthetic fixture export.
//!
//! A `--config FILE` of `key = value` lines supplies any flag by its long
//! name (`sweep = true` for switches); flags given on the command line win.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_synthetic_pair, load_dataset, Document, Domain, LabelMap, PretrainedVectors, Record, Split,
    SyntheticPair, SyntheticSpec, Vocabulary, LIMITED_DATA_FRACTIONS,
};
use crate::error::{GlenError, Result};
use crate::global_graph::{build_scoped_graph, GraphScope};
use crate::heatmap::{build_heatmap, HeatmapSpec, Stage};
use crate::io::{file_digest, write_atomic};
use crate::model::{Ablation, GlenModel, LossMode, ModelConfig};
use crate::train::{report_jsonl, run_experiment, run_sweep, summary_table, ExperimentData, ExperimentReport, TrainConfig};

const D_IN: usize = 300;

#[derive(Parser, Debug)]
#[command(name = "glen", version, about = "Cross-domain short-text classification with token graphs")]
pub struct Cli {
    /// Key-value file mirroring the long flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the global token graph and write it in the text export format.
    #[command(args_override_self = true)]
    BuildGraph(BuildGraphArgs),
    /// Train with the lr grid and seeds, or sweep ablations x fractions.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Z-scored cosine similarity matrices before and after the GCN.
    #[command(args_override_self = true)]
    Heatmap(HeatmapArgs),
    /// Write a synthetic dataset pair and embedding file.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Labeled source records (train, val and optionally test splits).
    #[arg(long, value_name = "PATH")]
    pub source_train: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub source_unlabeled: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub target_unlabeled: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub target_test: Option<PathBuf>,
    /// Pretrained 300-d vectors; tokens without one are drawn at random.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// `src -> unified` lines plus `dropped = ...`; identity when absent.
    #[arg(long, value_name = "PATH")]
    pub label_map: Option<PathBuf>,
    /// Class count for the identity map; inferred from the labels when absent.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Co-occurrence radius of both graphs.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    #[arg(long)]
    pub source_name: Option<String>,
    #[arg(long)]
    pub target_name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "all", value_parser = ["S_only", "SL_plus_TU", "all"])]
    pub scope: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum LossChoice {
    /// Per-label BCE when any labeled record has other than one label.
    Auto,
    SoftmaxCe,
    PerLabelBce,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "glen")]
    pub ablation: String,
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5")]
    pub lr_grid: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "auto")]
    pub loss: LossChoice,
    /// Every ablation crossed with every limited-data fraction.
    #[arg(long)]
    pub sweep: bool,
    /// Write best-lr checkpoints; on by default except for sweeps.
    #[arg(long)]
    pub save_checkpoints: Option<bool>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Tokens to compare, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub heatmap_tokens: Vec<String>,
    /// One stage only; both when absent.
    #[arg(long, value_parser = ["before", "after"])]
    pub stage: Option<String>,
    /// Trained model for the after stage.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Also render SVG grids.
    #[arg(long)]
    pub svg: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Preset {
    Default,
    CrossDomain,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "cross-domain")]
    pub preset: Preset,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub unlabeled_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to audit or repeat a run. Timestamps live only here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, inputs: &[&Path], seeds: Vec<u64>) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: file_digest(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
        })
    }

    /// Warns about inputs whose digest differs from an earlier manifest in `out`.
    fn compare_with_previous(&self, out: &Path) {
        let Ok(text) = fs::read_to_string(out.join("manifest.json")) else { return };
        let Ok(prev) = serde_json::from_str::<RunManifest>(&text) else { return };
        for input in &self.inputs {
            if let Some(old) = prev.inputs.iter().find(|o| o.path == input.path) {
                if old.sha256 != input.sha256 {
                    log::warn!("{} changed since the previous run in {}", input.path, out.display());
                }
            }
        }
    }

    fn finish(mut self, out: &Path, started: Instant, outputs: Vec<PathBuf>) -> Result<()> {
        self.compare_with_previous(out);
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        self.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&self)?.as_bytes())
    }
}

/// Exit status for an error: 2 for bad input or usage, 1 otherwise.
pub fn exit_code(err: &GlenError) -> u8 {
    match err {
        GlenError::Io { .. }
        | GlenError::Parse { .. }
        | GlenError::EmbeddingDim { .. }
        | GlenError::UnmappedLabel(_)
        | GlenError::UnknownTokens(_)
        | GlenError::Config(_)
        | GlenError::Json(_) => 2,
        _ => 1,
    }
}

/// Splices config-file entries in front of the command-line flags.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| GlenError::io(&path, e))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| GlenError::Parse {
            path: path.clone(),
            line: n + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => extra.push(key),
            "false" => {}
            v => {
                extra.push(key);
                extra.push(v.to_string());
            }
        }
    }
    // Insert right after the subcommand so its flags parse in its scope.
    let sub = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| ["build-graph", "train", "heatmap", "synth"].contains(&a.as_str()))
        .map(|(i, _)| i + 1)
        .ok_or_else(|| GlenError::Config("--config needs a subcommand".into()))?;
    let mut out = args[..sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[sub..]);
    Ok(out)
}

pub fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Parses `args` (program name first) like the binary does and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args = expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = Cli::try_parse_from(args).map_err(|e| GlenError::Config(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph(a) => cmd_build_graph(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

/// Documents and settings shared by every data-reading command.
struct LoadedData {
    docs: Vec<Document>,
    label_map: LabelMap,
    inputs: Vec<PathBuf>,
    vectors: PretrainedVectors,
    source_name: String,
    target_name: String,
}

fn stem(p: &Option<PathBuf>, fallback: &str) -> String {
    p.as_ref()
        .and_then(|p| p.file_stem())
        .map_or_else(|| fallback.to_string(), |s| s.to_string_lossy().into_owned())
}

fn infer_classes(paths: &[&PathBuf]) -> Result<usize> {
    let mut max = None;
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| GlenError::io(path, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: Record = serde_json::from_str(line)?;
            for l in rec.labels.unwrap_or_default() {
                max = Some(max.map_or(l, |m: u32| m.max(l)));
            }
        }
    }
    Ok(max.map_or(2, |m| (m as usize + 1).max(2)))
}

fn load_data(args: &DataArgs, need_target: bool) -> Result<LoadedData> {
    let files: [(&Option<PathBuf>, Domain, &[Split]); 4] = [
        (&args.source_train, Domain::Source, &[Split::Train, Split::Val, Split::Test]),
        (&args.source_unlabeled, Domain::Source, &[Split::Unlabeled]),
        (&args.target_unlabeled, Domain::Target, &[Split::Unlabeled]),
        (&args.target_test, Domain::Target, &[Split::Test]),
    ];
    if args.source_train.is_none() {
        return Err(GlenError::Config("--source-train is required".into()));
    }
    if need_target && args.target_unlabeled.is_none() && args.target_test.is_none() {
        return Err(GlenError::Config("no target files given".into()));
    }
    let label_map = match (&args.label_map, args.classes) {
        (Some(p), _) => LabelMap::load(p)?,
        (None, Some(n)) => LabelMap::identity(n),
        (None, None) => {
            let labeled: Vec<&PathBuf> = [&args.source_train, &args.target_test].into_iter().flatten().collect();
            LabelMap::identity(infer_classes(&labeled)?)
        }
    };
    let mut docs = Vec::new();
    let mut inputs = Vec::new();
    for (path, domain, splits) in files {
        let Some(path) = path else { continue };
        let loaded = load_dataset(path, &label_map)?;
        if let Some(bad) = loaded.iter().find(|d| d.domain != domain || !splits.contains(&d.split)) {
            return Err(GlenError::Config(format!(
                "{}: record {} is {}/{}, expected {domain} with split {}",
                path.display(),
                bad.id,
                bad.domain,
                bad.split,
                splits.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" or ")
            )));
        }
        log::info!("{}: {} records", path.display(), loaded.len());
        docs.extend(loaded);
        inputs.push(path.clone());
    }
    let vectors = match &args.embeddings {
        Some(p) => {
            inputs.push(p.clone());
            PretrainedVectors::load(p, D_IN)?
        }
        None => {
            log::warn!("no --embeddings given; every token starts from a random vector");
            PretrainedVectors::new(D_IN)
        }
    };
    if let Some(p) = &args.label_map {
        inputs.push(p.clone());
    }
    Ok(LoadedData {
        docs,
        label_map,
        inputs,
        vectors,
        source_name: args.source_name.clone().unwrap_or_else(|| stem(&args.source_train, "source")),
        target_name: args.target_name.clone().unwrap_or_else(|| {
            stem(if args.target_test.is_some() { &args.target_test } else { &args.target_unlabeled }, "target")
        }),
    })
}

fn paths(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

fn print_graph_summary(graph: &crate::global_graph::TokenGraph) {
    let (lo, hi) = graph.weight_range().unwrap_or((0.0, 0.0));
    println!(
        "|V| = {}  |E| = {}  rho in [{lo:.6}, {hi:.6}]  scope {}  radius {}",
        graph.n_nodes(),
        graph.n_edges(),
        graph.scope(),
        graph.radius()
    );
}

pub fn cmd_build_graph(args: &BuildGraphArgs) -> Result<()> {
    let started = Instant::now();
    let scope: GraphScope = args.scope.parse()?;
    let mut data_args = args.data.clone();
    if scope == GraphScope::SourceOnly {
        data_args.target_unlabeled = None;
        data_args.target_test = None;
    }
    let data = load_data(&data_args, false)?;
    let mut manifest = RunManifest::new("build-graph", args, &paths(&data.inputs), vec![args.data.seed])?;
    let vocab = Vocabulary::build(data.docs.iter().filter(|d| d.split != Split::Test));
    let instances = vocab.encode_all(&data.docs);
    let graph = build_scoped_graph(&instances, vocab.len(), args.data.window, scope)?;
    let path = args.out.join("graph.txt");
    graph.save(&path)?;
    print_graph_summary(&graph);
    manifest.config["vocab_digest"] = serde_json::Value::String(vocab.digest());
    manifest.finish(&args.out, started, vec![path])
}

fn detect_loss(choice: LossChoice, docs: &[Document]) -> LossMode {
    match choice {
        LossChoice::SoftmaxCe => LossMode::SoftmaxCe,
        LossChoice::PerLabelBce => LossMode::PerLabelBce,
        LossChoice::Auto => {
            let multi = docs
                .iter()
                .filter_map(|d| d.labels.as_ref())
                .any(|l| l.iter().filter(|&&v| v == 1).count() != 1);
            if multi {
                LossMode::PerLabelBce
            } else {
                LossMode::SoftmaxCe
            }
        }
    }
}

fn checkpoint_name(r: &ExperimentReport, seed: u64) -> String {
    format!("{}-f{}-seed{seed}.ckpt", r.ablation.as_str().to_ascii_lowercase(), r.fraction)
}

/// One line per experiment with the seed means of every evaluated split.
#[derive(Serialize)]
struct ExperimentRow<'a> {
    experiment: &'a str,
    source: &'a str,
    target: &'a str,
    ablation: Ablation,
    fraction: f64,
    train_size: usize,
    lr: f64,
    seeds: Vec<u64>,
    means: Vec<(&'a str, crate::metrics::F1Scores)>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let ablation: Ablation = args.ablation.parse()?;
    if !args.sweep && !LIMITED_DATA_FRACTIONS.contains(&args.fraction) {
        return Err(GlenError::Config(format!(
            "--fraction must be one of {LIMITED_DATA_FRACTIONS:?}, got {}",
            args.fraction
        )));
    }
    let data = load_data(&args.data, true)?;
    let model = ModelConfig {
        classes: data.label_map.num_classes(),
        window: args.data.window,
        ablation,
        loss: detect_loss(args.loss, &data.docs),
        ..ModelConfig::default()
    };
    model.validate()?;
    let config = TrainConfig {
        lr_grid: args.lr_grid.clone(),
        patience: args.patience,
        max_epochs: args.max_epochs,
        batch_size: args.batch_size,
        seeds: args.seeds,
        base_seed: args.data.seed,
        fraction: args.fraction,
        parallel: true,
    };
    config.validate()?;
    let seeds: Vec<u64> = config.seed_values().collect();
    let mut manifest = RunManifest::new("train", args, &paths(&data.inputs), seeds.clone())?;
    let (exp, vocab) = ExperimentData::from_documents(
        &data.source_name,
        &data.target_name,
        &data.docs,
        &data.vectors,
        model,
        args.data.seed,
    )?;
    if exp.select(Domain::Source, Split::Val).is_empty() {
        return Err(GlenError::Config("the labeled source file has no val split".into()));
    }
    manifest.config["vocab_digest"] = serde_json::Value::String(vocab.digest());
    manifest.config["loss_mode"] = serde_json::Value::String(exp.model.loss.to_string());

    let reports = if args.sweep {
        run_sweep(&exp, &Ablation::ALL, &LIMITED_DATA_FRACTIONS, &config)?
    } else {
        vec![run_experiment(&exp, ablation, args.fraction, &config)?]
    };

    fs::create_dir_all(&args.out).map_err(|e| GlenError::io(&args.out, e))?;
    let mut outputs = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = args.out.join(name);
        write_atomic(&path, bytes)?;
        outputs.push(path);
        Ok(())
    };
    put("reports.jsonl", report_jsonl(&reports)?.as_bytes())?;
    let mut experiments = String::new();
    for r in &reports {
        let row = ExperimentRow {
            experiment: &r.experiment,
            source: &r.source,
            target: &r.target,
            ablation: r.ablation,
            fraction: r.fraction,
            train_size: r.train_size,
            lr: r.best_lr,
            seeds: seeds.clone(),
            means: r.means.iter().map(|(s, m)| (s.as_str(), *m)).collect(),
        };
        experiments.push_str(&serde_json::to_string(&row)?);
        experiments.push('\n');
    }
    put("experiments.jsonl", experiments.as_bytes())?;
    let summary = summary_table(&reports);
    put("summary.txt", summary.as_bytes())?;
    print!("{summary}");
    let mut graphs_written = BTreeSet::new();
    for r in &reports {
        if let Some(g) = &r.graph {
            let name = format!("graph-{}-f{}.txt", r.ablation.as_str().to_ascii_lowercase(), r.fraction);
            if graphs_written.insert(name.clone()) {
                put(&name, g.to_text().as_bytes())?;
            }
        }
    }
    if args.save_checkpoints.unwrap_or(!args.sweep) {
        for r in &reports {
            for (seed, m) in &r.models {
                put(&format!("checkpoints/{}", checkpoint_name(r, *seed)), m.to_checkpoint(&vocab.digest())?.as_bytes())?;
            }
        }
    }
    manifest.finish(&args.out, started, outputs)
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<()> {
    let started = Instant::now();
    let stages: Vec<Stage> = match &args.stage {
        Some(s) => vec![s.parse()?],
        None => vec![Stage::Before, Stage::After],
    };
    let data = load_data(&args.data, false)?;
    let mut inputs = data.inputs.clone();
    let model = match &args.checkpoint {
        Some(p) => {
            inputs.push(p.clone());
            Some(GlenModel::load(p)?)
        }
        None if stages.contains(&Stage::After) => {
            return Err(GlenError::Config("the after stage needs --checkpoint".into()));
        }
        None => None,
    };
    let manifest = RunManifest::new("heatmap", args, &paths(&inputs), vec![args.data.seed])?;
    let model_config = model.as_ref().map_or_else(
        || ModelConfig {
            classes: data.label_map.num_classes(),
            ablation: Ablation::Len,
            ..ModelConfig::default()
        },
        |(m, _)| m.config().clone(),
    );
    let (exp, vocab) = ExperimentData::from_documents(
        &data.source_name,
        &data.target_name,
        &data.docs,
        &data.vectors,
        model_config.clone(),
        args.data.seed,
    )?;
    if let Some((_, digest)) = &model {
        if *digest != vocab.digest() {
            return Err(GlenError::Config(
                "checkpoint was trained on a different vocabulary than these dataset files".into(),
            ));
        }
    }
    let graph = match model_config.ablation.scope() {
        Some(scope) if model.is_some() => Some(build_scoped_graph(&exp.instances, exp.n_tokens, model_config.window, scope)?),
        _ => None,
    };
    let model_inputs = exp.inputs(graph.as_ref());
    let mut outputs = Vec::new();
    for stage in stages {
        let spec = HeatmapSpec {
            tokens: args.heatmap_tokens.clone(),
            stage,
        };
        let h = build_heatmap(&spec, &vocab, &model_inputs, model.as_ref().map(|(m, _)| m))?;
        let path = args.out.join(format!("heatmap-{stage}.tsv"));
        write_atomic(&path, h.to_text().as_bytes())?;
        outputs.push(path);
        if args.svg {
            let path = args.out.join(format!("heatmap-{stage}.svg"));
            write_atomic(&path, h.to_svg().as_bytes())?;
            outputs.push(path);
        }
        println!("{stage}: wrote {}", args.out.join(format!("heatmap-{stage}.tsv")).display());
    }
    manifest.finish(&args.out, started, outputs)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match args.preset {
        Preset::Default => SyntheticSpec::default(),
        Preset::CrossDomain => SyntheticSpec::cross_domain(),
    };
    if let Some(n) = args.train_per_class {
        spec.train_per_class = n;
    }
    if let Some(n) = args.unlabeled_per_class {
        spec.unlabeled_per_class = n;
    }
    if let Some(n) = args.test_per_class {
        spec.test_per_class = n;
    }
    let pair = generate_synthetic_pair(&spec, args.seed);
    write_synthetic(&pair, &args.out)?;
    println!(
        "wrote {} source and {} target records to {}",
        pair.source.len(),
        pair.target.len(),
        args.out.display()
    );
    Ok(())
}

/// File names match the dataset flags: `source_train.jsonl`,
/// `source_unlabeled.jsonl`, `target_unlabeled.jsonl`, `target_test.jsonl`
/// and `embeddings.txt`.
pub fn write_synthetic(pair: &SyntheticPair, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| GlenError::io(out, e))?;
    let pick = |docs: &[Document], splits: &[Split]| -> Vec<Document> {
        docs.iter().filter(|d| splits.contains(&d.split)).cloned().collect()
    };
    let files = [
        ("source_train.jsonl", pick(&pair.source, &[Split::Train, Split::Val, Split::Test])),
        ("source_unlabeled.jsonl", pick(&pair.source, &[Split::Unlabeled])),
        ("target_unlabeled.jsonl", pick(&pair.target, &[Split::Unlabeled])),
        ("target_test.jsonl", pick(&pair.target, &[Split::Test])),
    ];
    for (name, docs) in files {
        crate::corpus::write_records(&out.join(name), &SyntheticPair::records(&docs))?;
    }
    pair.vectors.write(&out.join("embeddings.txt"))
}
