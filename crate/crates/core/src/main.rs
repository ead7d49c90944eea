use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use degmon::config::RunConfig;
use degmon::container::Container;
use degmon::dataset::image_id_for;
use degmon::degrade::{apply_operator_by_id, materialize_benchmark, SeverityBenchmark};
use degmon::eval::{
    export_embeddings, per_corruption_table, severity_sweep, write_report, BenchmarkReport, DegradedSource,
    EmbeddingRecord, FlowMonitor, ManifoldMonitor, Monitor, MIXED,
};
use degmon::flow::FlowBaseline;
use degmon::head::PoolMode;
use degmon::model::ManifoldModel;
use degmon::pipeline::{self, ArtifactStamp, Variant};
use degmon::prototype::{gate, suggest_threshold, MonitorScore};
use degmon::synth::{self, SceneStyle};
use degmon::train::EpochRecord;
use degmon::{Error, ImageBuffer, Result};

#[derive(Parser)]
#[command(name = "degmon", version, about = "Degradation-aware image monitor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `paths.output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `paths.data_root`.
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct AblationArgs {
    /// Read out only the deepest tap.
    #[arg(long)]
    last_layer_only: bool,
    #[arg(long, value_enum)]
    pool: Option<PoolArg>,
    #[arg(long)]
    no_hard_negatives: bool,
    #[arg(long)]
    freeze_backbone: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Attention,
    Gap,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Natural,
    Shapes,
    Texture,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural image collection for experiments.
    SynthDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = StyleArg::Natural)]
        style: StyleArg,
        #[arg(long, default_value = "img")]
        prefix: String,
    },
    /// Degrade one image, or materialize the severity benchmark of the
    /// validation split.
    Degrade {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Single input image; requires --op and --strength.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        op: Option<String>,
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long, default_value_t = 0)]
        op_seed: u64,
        /// Output file (single image) or benchmark directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the manifold model and its prototype.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Checkpoint path; defaults to `<output_dir>/manifold.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a flow baseline on pooled taps of a trained model.
    TrainFlow {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// One flow per tap instead of one over the concatenation.
        #[arg(long)]
        multi_scale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score images and apply the gate.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        image: Vec<PathBuf>,
        /// Gate threshold.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Evaluate trained monitors on a materialized benchmark.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Flow baseline checkpoints to evaluate alongside.
        #[arg(long)]
        flow: Vec<PathBuf>,
        /// Benchmark directory written by `degrade`; defaults to `<output_dir>/benchmark`.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Evaluate despite a config hash mismatch.
        #[arg(long)]
        force: bool,
    },
    /// Train, evaluate every configured monitor and write the report.
    Benchmark {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and sweep the ablation variants under identical seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', value_enum)]
        variants: Option<Vec<VariantArg>>,
    },
    /// Write embeddings of pristine and degraded validation images.
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold at a quantile of pristine validation scores.
    SuggestThreshold {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    LastLayerOnly,
    Gap,
    NoHardNegatives,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::LastLayerOnly => Variant::LastLayerOnly,
            VariantArg::Gap => Variant::Gap,
            VariantArg::NoHardNegatives => Variant::NoHardNegatives,
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.paths.output_dir = d.clone();
    } else if let Some(d) = std::env::var_os(degmon::config::OUTPUT_DIR_ENV) {
        cfg.paths.output_dir = d.into();
    }
    if let Some(d) = &args.data_root {
        cfg.paths.data_root = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_ablation(cfg: &mut RunConfig, a: &AblationArgs) -> Result<()> {
    if a.last_layer_only {
        cfg.model.head.last_layer_only = true;
    }
    if let Some(p) = a.pool {
        cfg.model.head.pool = match p {
            PoolArg::Attention => PoolMode::Attention,
            PoolArg::Gap => PoolMode::Gap,
        };
    }
    if a.no_hard_negatives {
        cfg.train.hard_negatives = false;
    }
    if a.freeze_backbone {
        cfg.train.freeze_backbone = true;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    println!("{line}");
    Ok(())
}

/// Appends per-epoch records to an NDJSON log.
struct EpochLog {
    file: std::fs::File,
    path: PathBuf,
}

impl EpochLog {
    fn create(path: &Path) -> Result<Self> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn record(&mut self, tag: &str, r: &EpochRecord) {
        log::info!("{tag} epoch {} loss {:.5} ({:.1}s)", r.epoch, r.loss, r.wall_time);
        let line = serde_json::json!({"run": tag, "epoch": r.epoch, "loss": r.loss, "wall_time": r.wall_time});
        if let Err(e) = writeln!(self.file, "{line}") {
            log::warn!("cannot append to {}: {e}", self.path.display());
        }
    }
}

fn summarize(report: &BenchmarkReport) {
    println!("{:<28} {:<16} {:>3} {:>7} {:>8} {:>8}", "monitor", "corruption", "sev", "auroc", "fpr95", "fnr95");
    for r in &report.rows {
        println!(
            "{:<28} {:<16} {:>3} {:>7.4} {:>8.4} {:>8.4}",
            r.monitor_id, r.corruption_id, r.severity, r.auroc, r.fpr_at_95tpr, r.fnr_at_95tnr
        );
    }
}

fn check_hash(what: &str, found: &str, expected: &str, force: bool) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    if force {
        log::warn!("{what} config hash {found} differs from {expected}; continuing because of --force");
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{what} config hash {found} does not match {expected} (use --force to override)"
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthDataset {
            out,
            count,
            size,
            seed,
            style,
            prefix,
        } => {
            let style = match style {
                StyleArg::Natural => SceneStyle::Natural,
                StyleArg::Shapes => SceneStyle::Shapes,
                StyleArg::Texture => SceneStyle::Texture,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let ids = synth::write_dataset(&out, &prefix, count, size, seed, style)?;
            println!("wrote {} images to {}", ids.len(), out.display());
        }
        Command::Degrade {
            cfg,
            image,
            op,
            strength,
            op_seed,
            out,
        } => {
            if let Some(image) = image {
                let (Some(op), Some(strength), Some(out)) = (op, strength, out) else {
                    return Err(Error::Config("--image needs --op, --strength and --out".into()));
                };
                let img = ImageBuffer::load(&image)?;
                apply_operator_by_id(&img, &op, strength, op_seed)?.save_png(&out)?;
                println!("wrote {}", out.display());
                return Ok(());
            }
            let cfg = load_config(&cfg)?;
            let data = pipeline::load_data(&cfg)?;
            let bench = pipeline::benchmark_for(&cfg, &data.val)?;
            let (_, ladders) = pipeline::eval_ladders(&cfg)?;
            let root = out.unwrap_or_else(|| cfg.output_path("benchmark"));
            let manifest = materialize_benchmark(&bench, &root, &ladders, |id| {
                data.val
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("unknown image id '{id}'")))
            })?;
            ArtifactStamp {
                kind: "benchmark".into(),
                config_hash: cfg.config_hash(),
            }
            .write(&root)?;
            println!(
                "wrote {} degraded images and {} (config {})",
                bench.entries.len(),
                manifest.display(),
                cfg.config_hash()
            );
        }
        Command::Train { cfg, ablation, out } => {
            let mut cfg = load_config(&cfg)?;
            apply_ablation(&mut cfg, &ablation)?;
            let data = pipeline::load_data(&cfg)?;
            let mut log = EpochLog::create(&cfg.output_path("train_log.ndjson"))?;
            let (model, records) = pipeline::train_model(&cfg, &data.train, |r| log.record("train", r))?;
            let out = out.unwrap_or_else(|| cfg.output_path("manifold.ckpt"));
            model.save(&out)?;
            let last = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} epochs on {} images, final loss {last:.5}; wrote {} (config {})",
                records.len(),
                data.train.len(),
                out.display(),
                model.config_hash
            );
        }
        Command::TrainFlow {
            cfg,
            checkpoint,
            multi_scale,
            out,
        } => {
            let cfg = load_config(&cfg)?;
            let model = ManifoldModel::load(&checkpoint)?;
            let data = pipeline::load_data(&cfg)?;
            let baseline = pipeline::train_flow_baseline(&cfg, &model, &data.train, multi_scale)?;
            let name = if multi_scale { "m-nf.ckpt" } else { "nf.ckpt" };
            let out = out.unwrap_or_else(|| cfg.output_path(name));
            baseline.to_container(cfg.flow.hidden, &model.config_hash)?.write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Score { checkpoint, image, tau } => {
            let model = ManifoldModel::load(&checkpoint)?;
            for path in image {
                let img = ImageBuffer::load(&path)?;
                let s = model.score(std::slice::from_ref(&img))?[0];
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                print_json(&serde_json::json!({
                    "image_id": image_id_for(&name),
                    "s_deg": s.0,
                    "accept": gate(s, tau),
                }))?;
            }
        }
        Command::Evaluate {
            cfg,
            checkpoint,
            flow,
            benchmark,
            force,
        } => {
            let cfg = load_config(&cfg)?;
            let root = benchmark.unwrap_or_else(|| cfg.output_path("benchmark"));
            let stamp = ArtifactStamp::read(&root)?;
            let model = ManifoldModel::load(&checkpoint)?;
            check_hash("checkpoint", &model.config_hash, &stamp.config_hash, force)?;
            let bench = SeverityBenchmark::read_manifest(&root.join("manifest.csv"))?;
            let data = pipeline::load_data(&cfg)?;
            let mut monitors: Vec<Box<dyn Monitor + '_>> = vec![Box::new(ManifoldMonitor {
                id: "manifold".into(),
                model: &model,
            })];
            for path in &flow {
                let (baseline, hash) = FlowBaseline::from_container(&Container::read(path)?)?;
                check_hash("flow checkpoint", &hash, &stamp.config_hash, force)?;
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                monitors.push(Box::new(FlowMonitor {
                    id,
                    model: &model,
                    baseline,
                }));
            }
            let source = DegradedSource::Disk { root: root.clone() };
            let (corruptions, _) = pipeline::eval_ladders(&cfg)?;
            let mut rows = Vec::new();
            for m in &monitors {
                rows.extend(severity_sweep(m.as_ref(), &bench, &data.val, &source, MIXED)?);
                if cfg.eval.per_corruption {
                    rows.extend(per_corruption_table(
                        m.as_ref(),
                        &corruptions,
                        &bench.levels,
                        &data.val,
                        pipeline::benchmark_seed(&cfg),
                    )?);
                }
            }
            let report = BenchmarkReport::new(stamp.config_hash, rows);
            let (json, csv) = write_report(&report, &cfg.paths.output_dir, "evaluation")?;
            summarize(&report);
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::Benchmark { cfg } => {
            let cfg = load_config(&cfg)?;
            let data = pipeline::load_data(&cfg)?;
            let mut log = EpochLog::create(&cfg.output_path("train_log.ndjson"))?;
            let (report, model) = pipeline::run_benchmark(&cfg, &data, |r| log.record("benchmark", r))?;
            model.save(&cfg.output_path("manifold.ckpt"))?;
            let (json, csv) = write_report(&report, &cfg.paths.output_dir, "benchmark")?;
            summarize(&report);
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::Ablate { cfg, variants } => {
            let cfg = load_config(&cfg)?;
            let variants: Vec<Variant> = match variants {
                Some(v) => v.into_iter().map(Variant::from).collect(),
                None => Variant::ALL.to_vec(),
            };
            let data = pipeline::load_data(&cfg)?;
            let mut log = EpochLog::create(&cfg.output_path("ablation_log.ndjson"))?;
            let report = pipeline::ablation_suite(&cfg, &data, &variants, |_, _, _| Ok(Vec::new()), |v, r| {
                log.record(v.id(), r)
            })?;
            let (json, csv) = write_report(&report, &cfg.paths.output_dir, "ablation")?;
            summarize(&report);
            println!("wrote {} and {}", json.display(), csv.display());
        }
        Command::ExportEmbeddings { cfg, checkpoint, out } => {
            let cfg = load_config(&cfg)?;
            let model = ManifoldModel::load(&checkpoint)?;
            let data = pipeline::load_data(&cfg)?;
            let bench = pipeline::benchmark_for(&cfg, &data.val)?;
            let (_, ladders) = pipeline::eval_ladders(&cfg)?;
            let source = DegradedSource::Render {
                pristine: &data.val,
                ladders: &ladders,
            };
            let mut images = data.val.images.clone();
            let mut records: Vec<EmbeddingRecord> =
                data.val.ids.iter().map(|id| EmbeddingRecord::pristine(id.clone(), "primary")).collect();
            if let Some(sec) = &data.secondary {
                images.extend(sec.images.iter().cloned());
                records.extend(sec.ids.iter().map(|id| EmbeddingRecord::pristine(id.clone(), "secondary")));
            }
            for e in &bench.entries {
                images.push(source.load(e)?);
                records.push(EmbeddingRecord {
                    image_id: e.image_id.clone(),
                    dataset: "primary".into(),
                    corruption: e.corruption_id.clone(),
                    severity: e.severity,
                });
            }
            let out = out.unwrap_or_else(|| cfg.output_path("embeddings.dmc"));
            let meta = export_embeddings(&model, &images, &records, &out)?;
            println!("wrote {} embeddings to {} and {}", images.len(), out.display(), meta.display());
        }
        Command::SuggestThreshold {
            cfg,
            checkpoint,
            quantile,
        } => {
            let cfg = load_config(&cfg)?;
            let model = ManifoldModel::load(&checkpoint)?;
            let data = pipeline::load_data(&cfg)?;
            let scores: Vec<f64> = model.score(&data.val.images)?.into_iter().map(|s: MonitorScore| s.0).collect();
            let tau = suggest_threshold(&scores, quantile)?;
            print_json(&serde_json::json!({"quantile": quantile, "tau": tau, "n": scores.len()}))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
