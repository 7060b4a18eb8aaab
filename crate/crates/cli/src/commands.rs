use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vimagine::checkpoint;
use vimagine::data::{open_dataset, VideoClip};
use vimagine::nets::{Model, SampleConfig};
use vimagine::suites::{run_suite, Suite};
use vimagine::tensor::Tensor;
use vimagine::train::{self, TrainHook, TrainState, METRICS_HEADER};
use vimagine_quality::{evaluate, GrayImage, QualityError, RegressionModel};

use crate::config::{parse_dataset, parse_transform, RunConfig};
use crate::imageio;

/// Config file written next to every run's checkpoints.
pub const RUN_CONFIG: &str = "run.cfg";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
/// Clips shown in each training sample grid.
const GRID_CLIPS: usize = 4;

#[derive(Parser, Debug)]
#[command(name = "vimagine", version, about = "Video synthesis from a single image by learned transformations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes metrics, checkpoints and sample grids.
    Train(TrainArgs),
    /// Synthesize clips from one image with a trained checkpoint.
    Sample(SampleArgs),
    /// Blind quality of synthesized frames relative to their input image.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of the autodiff operations.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = ["mnist", "shapes"])]
    pub dataset: Option<String>,
    #[arg(long, value_parser = ["affine", "conv"])]
    pub transform: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// IDX image file with digit sprites; built-in glyphs otherwise.
    #[arg(long)]
    pub mnist_idx: Option<PathBuf>,
    /// Continue from a checkpoint of the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the run.cfg next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// PNG input; a frame from the training dataset otherwise.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub num: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory of `clip<i>_f<j>.png` frames as written by `sample`.
    #[arg(long)]
    pub clips: PathBuf,
    /// Regression scorer file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory for report.csv; the clips directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteArg {
    Ops,
    Pipeline,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adds a relative error to every analytic gradient (self-test of the checker).
    #[arg(long, default_value_t = 0.0, hide = true)]
    pub perturb: f64,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.dataset {
        cfg.dataset = parse_dataset(v)?;
    }
    if let Some(v) = &a.transform {
        cfg.transform = parse_transform(v)?;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = &a.mnist_idx {
        cfg.mnist_idx = Some(v.clone());
    }
    if cfg.checkpoint_every == 0 {
        bail!("checkpoint_every must be at least 1");
    }
    Ok(cfg)
}

pub fn checkpoint_name(iter: u64) -> String {
    format!("ckpt_{iter}.vimc")
}

fn sample_grid(model: &Model<f32>, image: &Tensor<f32>, seed: u64, path: &Path) -> Result<()> {
    let clips = model.clone().imagine(image, &SampleConfig { m: GRID_CLIPS, seed })?;
    imageio::save_png(&imageio::grid(&clips)?, path)
}

struct Recorder {
    out: PathBuf,
    metrics: csv::Writer<File>,
    every: u64,
    grid_input: Tensor<f32>,
    seed: u64,
}

impl Recorder {
    fn checkpoint(&self, state: &TrainState) -> vimagine::Result<()> {
        let it = state.iteration;
        checkpoint::save(state, &self.out.join(checkpoint_name(it)))?;
        sample_grid(&state.model, &self.grid_input, self.seed, &self.out.join(format!("sample_{it}.png")))
            .map_err(|e| vimagine::Error::config(format!("{e:#}")))
    }
}

impl TrainHook for Recorder {
    fn after_iteration(&mut self, state: &TrainState) -> vimagine::Result<()> {
        let r = state.metrics.last().expect("metrics pushed before the hook");
        let io = |e: csv::Error| vimagine::Error::config(format!("writing metrics: {e}"));
        self.metrics
            .write_record([
                r.iter.to_string(),
                format!("{:e}", r.loss_c),
                format!("{:e}", r.loss_g),
                format!("{:e}", r.em_estimate),
                format!("{:.3}", r.wall_s),
            ])
            .map_err(io)?;
        self.metrics.flush().map_err(|e| vimagine::Error::config(format!("writing metrics: {e}")))?;
        if r.iter % self.every == 0 {
            self.checkpoint(state)?;
        }
        Ok(())
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let run = resolve_train_config(&a)?;
    let cfg = run.train_config()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join(RUN_CONFIG), run.to_text()?)?;
    let source = open_dataset(cfg.dataset, cfg.model.resolution, cfg.seed, cfg.dataset_len, run.mnist_idx.as_deref())?;
    let mut state = match &a.resume {
        Some(p) => checkpoint::load_state(&cfg, p).with_context(|| format!("resuming from {}", p.display()))?,
        None => TrainState::new(&cfg)?,
    };
    let metrics_path = a.out.join(METRICS_FILE);
    let fresh = a.resume.is_none() || !metrics_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let mut metrics = csv::Writer::from_writer(file);
    if fresh {
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush()?;
    }
    let grid_input = source.clip(0)?.frame(0);
    let mut rec = Recorder {
        out: a.out.clone(),
        metrics,
        every: run.checkpoint_every,
        grid_input,
        seed: cfg.seed,
    };
    log::info!("training {} iterations from {}", cfg.total_iterations, state.iteration);
    train::run(&cfg, &mut state, source.as_ref(), &mut rec)?;
    if !a.out.join(checkpoint_name(state.iteration)).exists() {
        rec.checkpoint(&state)?;
    }
    println!("trained to iteration {}; outputs in {}", state.iteration, a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let cfg_path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join(RUN_CONFIG),
    };
    let run = RunConfig::load(&cfg_path)?;
    let mcfg = run.model_config()?;
    let mut model = checkpoint::load_model(&mcfg, &a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let image = match &a.image {
        Some(p) => imageio::match_channels(imageio::load_png(p)?, mcfg.channels)?,
        None => {
            let len = run.train_config()?.dataset_len;
            let src = open_dataset(run.dataset, mcfg.resolution, run.seed, len, run.mnist_idx.as_deref())?;
            src.clip(a.seed % src.len())?.frame(0)
        }
    };
    let s = image.shape();
    if s[1] != mcfg.resolution || s[2] != mcfg.resolution {
        bail!("input is {}x{}, the model expects {r}x{r}", s[1], s[2], r = mcfg.resolution);
    }
    let clips = model.imagine(&image, &SampleConfig { m: a.num, seed: a.seed })?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, clip) in clips.iter().enumerate() {
        let frames: Vec<Tensor<f32>> = (0..clip.len()).map(|j| clip.frame(j)).collect();
        for (j, f) in frames.iter().enumerate() {
            imageio::save_png(f, &a.out.join(format!("clip{i}_f{j}.png")))?;
            if j > 0 {
                imageio::save_png(&imageio::difference(f, &frames[0])?, &a.out.join(format!("clip{i}_d{j}.png")))?;
            }
        }
        imageio::save_gif(&frames, &a.out.join(format!("clip{i}.gif")))?;
    }
    println!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(())
}

/// Groups `clip<i>_f<j>.png` files; every clip must have frames `0..n`.
pub fn load_clip_dir(dir: &Path) -> Result<Vec<VideoClip<f32>>> {
    let mut found: BTreeMap<usize, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_prefix("clip").and_then(|n| n.strip_suffix(".png")) else { continue };
        let Some((i, j)) = stem.split_once("_f") else { continue };
        if let (Ok(i), Ok(j)) = (i.parse(), j.parse()) {
            found.entry(i).or_default().insert(j, path);
        }
    }
    if found.is_empty() {
        bail!("no clip<i>_f<j>.png frames in {}", dir.display());
    }
    found
        .into_iter()
        .map(|(i, frames)| {
            if frames.keys().copied().ne(0..frames.len()) {
                bail!("clip {i} frames are not numbered 0..{}", frames.len());
            }
            let t: Result<Vec<_>> = frames.values().map(|p| imageio::load_png(p)).collect();
            Ok(VideoClip::from_frames(&t?)?)
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => Some(RegressionModel::load(p)?),
        None => None,
    };
    let input = GrayImage::from_chw(&imageio::load_png(&a.input)?)?;
    let clips = load_clip_dir(&a.clips)?;
    let report = match evaluate(&input, &clips, model.as_ref()) {
        Err(QualityError::NoScorer) => bail!("no quality scorer configured; pass --model <file>"),
        r => r?,
    };
    println!("{}", report.summary());
    println!("riqa_fraction {:e}", report.riqa);
    let out = a.out.unwrap_or(a.clips.clone());
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join(REPORT_FILE))?;
    w.write_record(["item", "clip", "frame", "score"])?;
    w.write_record(["input", "", "", &format!("{:e}", report.input_score)])?;
    let per_clip = clips.first().map_or(0, |c| c.len() - 1).max(1);
    for (n, s) in report.frame_scores.iter().enumerate() {
        w.write_record(["frame", &(n / per_clip).to_string(), &(n % per_clip + 1).to_string(), &format!("{s:e}")])?;
    }
    w.write_record(["output", "", "", &format!("{:e}", report.output_score)])?;
    w.write_record(["riqa", "", "", &format!("{:e}", report.riqa)])?;
    w.flush()?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let suite = match a.suite {
        SuiteArg::Ops => Suite::Ops,
        SuiteArg::Pipeline => Suite::Pipeline,
    };
    let results = run_suite(suite, a.seed, a.perturb)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<28} {:>10} {:>12}  result", "case", "tolerance", "max_rel_err")?;
    for r in &results {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        writeln!(out, "{:<28} {:>10.0e} {:>12.3e}  {verdict}", r.name, r.tolerance, r.max_rel_err)?;
        if let Some(d) = &r.detail {
            writeln!(out, "    {d}")?;
        }
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.pass).map(|r| r.name).collect();
    if !failed.is_empty() {
        bail!("{} of {} gradient checks failed: {}", failed.len(), results.len(), failed.join(", "));
    }
    writeln!(out, "all {} gradient checks passed", results.len())?;
    Ok(())
}
