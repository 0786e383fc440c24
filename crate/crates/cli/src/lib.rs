//! Command-line front end: dataset generation, training, inference,
//! evaluation, ablation and rendering.

pub mod predfile;
pub mod render;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use annoconsist::condnet::sample_k;
use annoconsist::eval::{ablation_run, evaluate, predict_dataset, THRESHOLDS};
use annoconsist::rng::stream_seed;
use annoconsist::synthgen::{load_dataset, save_dataset};
use annoconsist::train::TrainScene;
use annoconsist::{load_model, save_model, Checkpoint, RunConfig, SceneRecord};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use predfile::{IterationEntry, SceneEntry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Stream tag for the conditional samples drawn by `infer`.
const TAG_INFER: u64 = 0x1F;

#[derive(Debug, Parser)]
#[command(name = "annoconsist", version, about = "Weakly supervised instance segmentation on synthetic scenes")]
struct Cli {
    /// Worker threads; 0 uses one per core. Results are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train both networks and write checkpoints and the training log.
    Train(TrainArgs),
    /// Predict with a trained model and record the conditional samples.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Train and score the term and pointwise ablation grid.
    Ablate(AblateArgs),
    /// Draw per-scene panels of samples and predictions.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    split: Split,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = THRESHOLDS)]
    thresholds: Vec<f64>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out scenes; generated from the config when omitted.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// CSV table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory, one PPM per scene.
    #[arg(long)]
    out: PathBuf,
    /// Render at most this many scenes.
    #[arg(long)]
    limit: Option<usize>,
}

/// Errors split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    let cfg = match &arg.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display())),
        None => Ok(RunConfig::default()),
    };
    cfg.and_then(|c| c.with_env_seed().map_err(Into::into)).map_err(usage)
}

fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| usage(anyhow!("missing --{name} (and no paths.{name} in the config)")))
}

fn read_data(path: &Path) -> Result<Vec<SceneRecord>> {
    let data = load_dataset(path).with_context(|| format!("dataset {}", path.display()))?;
    if data.is_empty() {
        return Err(Failure::Runtime(anyhow!("dataset {} is empty", path.display())));
    }
    Ok(data)
}

fn gen(a: &GenArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let out = pick(&a.out, &cfg.paths.data, "out")?;
    let data = match a.split {
        Split::Train => cfg.train_set()?,
        Split::Test => cfg.test_set()?,
    };
    save_dataset(&data, &out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} scenes to {}", data.len(), out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let data_path = pick(&a.data, &cfg.paths.data, "data")?;
    let out = pick(&a.out, &cfg.paths.model, "model")?;
    let data = read_data(&data_path)?;
    let fit_cfg = cfg.fit_config();
    let result = annoconsist::fit(&data, &fit_cfg)?;
    save_model(&out, &result, &fit_cfg, data[0].num_classes())?;
    if let Some(last) = result.log.last() {
        eprintln!("final epoch {}: disc {:.4} train mAP50 {:.4}", last.epoch, last.disc, last.map50);
    }
    eprintln!("wrote {} checkpoints to {}", result.snapshots.len(), out.display());
    Ok(())
}

fn infer_scene(scene: &SceneRecord, checkpoints: &[Checkpoint]) -> anyhow::Result<SceneEntry> {
    let mut iterations = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        let cfg = &ck.config;
        let ts = TrainScene::new(scene, cfg.train.regime, &cfg.inference)?;
        let seed = stream_seed(&[cfg.train.seed, TAG_INFER, scene.id, ck.outer as u64]);
        let samples = sample_k(&ck.theta_c, &ts.feats, &ts.ctx, &ts.ann, &cfg.sampler(), &cfg.inference, seed)?;
        let preds = predict_dataset(&ck.theta_p, std::slice::from_ref(scene), &cfg.decode)?.remove(0);
        iterations.push(IterationEntry {
            outer: ck.outer,
            samples: samples.into_iter().map(|s| s.labeling).collect(),
            predictions: preds.iter().map(|p| p.to_record()).collect(),
        });
    }
    let predictions = iterations.last().map(|it| it.predictions.clone()).unwrap_or_default();
    Ok(SceneEntry {
        scene: scene.id,
        width: scene.width(),
        height: scene.height(),
        predictions,
        iterations,
    })
}

fn infer(a: &InferArgs) -> Result<()> {
    let checkpoints = load_model(&a.model).with_context(|| format!("model {}", a.model.display()))?;
    let data = read_data(&a.data)?;
    let classes = checkpoints[0].num_classes;
    if let Some(s) = data.iter().find(|s| s.num_classes() != classes) {
        return Err(Failure::Runtime(anyhow!(
            "scene {} has {} classes, the model was trained on {classes}",
            s.id,
            s.num_classes()
        )));
    }
    let entries: Vec<SceneEntry> = data
        .par_iter()
        .map(|s| infer_scene(s, &checkpoints))
        .collect::<anyhow::Result<_>>()?;
    predfile::write(&entries, &a.out)?;
    eprintln!("wrote predictions for {} scenes to {}", entries.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage(anyhow!("thresholds must lie in [0, 1]")));
    }
    let entries = predfile::read(&a.pred)?;
    let data = read_data(&a.data)?;
    let preds = predfile::align(&entries, &data)?;
    let result = evaluate(&preds, &data, &a.thresholds)?;
    print!("{}", result.table());
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let data_path = pick(&a.data, &cfg.paths.data, "data")?;
    let out = pick(&a.out, &cfg.paths.output, "output")?;
    let train = read_data(&data_path)?;
    let test = match a.test_data.as_ref().or(cfg.paths.test_data.as_ref()) {
        Some(p) => read_data(p)?,
        None => cfg.test_set()?,
    };
    let table = ablation_run(&train, &test, &cfg.fit_config())?;
    let csv = table.to_csv();
    fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
    print!("{csv}");
    Ok(())
}

fn render_cmd(a: &RenderArgs) -> Result<()> {
    let entries = predfile::read(&a.pred)?;
    let data = read_data(&a.data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut written = 0;
    for e in entries.iter().take(limit) {
        let Some(scene) = data.iter().find(|s| s.id == e.scene) else {
            return Err(Failure::Runtime(anyhow!("scene {} is not in {}", e.scene, a.data.display())));
        };
        let mut rows = Vec::with_capacity(e.iterations.len());
        for it in &e.iterations {
            if let Some(y) = it.samples.iter().find(|y| y.len() != scene.pool.len()) {
                return Err(Failure::Runtime(anyhow!(
                    "scene {}: sample over {} proposals, pool has {}",
                    e.scene,
                    y.len(),
                    scene.pool.len()
                )));
            }
            rows.push((it.samples.clone(), predfile::decode_records(&it.predictions, e.width, e.height)?));
        }
        if rows.is_empty() {
            rows.push((Vec::new(), e.decoded()?));
        }
        let canvas = render::compose(scene, &rows);
        render::write_ppm(&canvas, &a.out.join(format!("scene_{:05}.ppm", e.scene)))?;
        written += 1;
    }
    eprintln!("wrote {written} panels to {}", a.out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Render(a) => render_cmd(a),
    }
}

/// Parse `argv` (program name first), run the subcommand and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
