//! Command-line driver for the soar pipeline.
//!
//! Every subcommand is a pure function of its flags and input files; all
//! randomness is keyed by the mandatory `--seed` (or the config's seed).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use soar_core::heatmap::{self, grid_to_pgm, DEFAULT_SIGMA_SCALE};
use soar_core::io;
use soar_core::loss::loss_weights;
use soar_core::masking::{generate_mask, visibility_stats, MaskParams};
use soar_core::objectness::{patch_objectness, token_scores};
use soar_core::par::{self, Exec};
use soar_core::synth::{self, DetectorNoise, Motion, Placement, SynthConfig};
use soar_core::toymae::{self, ToyModel, TrainConfig, TrainSample};
use soar_core::{PatchGeometry, SigmaPolicy, Strategy, VideoTensor, Window};

/// Version written into JSON outputs and required in JSON inputs.
pub const FORMAT_VERSION: u32 = 1;

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "SOAR_THREADS";

#[derive(Parser, Debug)]
#[command(name = "soar", version, about = "Object-aware masking and reconstruction loss for video masked autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tailed video with exact detections.
    Synth(SynthArgs),
    /// Render the frame-averaged Gaussian center heatmap.
    Heatmap(HeatmapArgs),
    /// Sum a heatmap into per-patch objectness scores.
    Objectness(ObjectnessArgs),
    /// Draw one visibility mask.
    Mask(MaskArgs),
    /// Compute reconstruction-loss weights for a mask.
    Weights(WeightsArgs),
    /// Train the toy masked autoencoder on synthetic data.
    TrainToy(TrainArgs),
    /// Monte-Carlo object-visibility statistics per masking strategy.
    BenchMasking(BenchArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct PatchArgs {
    /// Patch extent along time.
    #[arg(long, default_value_t = 2)]
    patch_t: usize,
    /// Patch height in pixels.
    #[arg(long, default_value_t = 16)]
    patch_h: usize,
    /// Patch width in pixels.
    #[arg(long, default_value_t = 16)]
    patch_w: usize,
}

#[derive(Args, Debug, Clone)]
struct SceneArgs {
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 224)]
    height: usize,
    #[arg(long, default_value_t = 224)]
    width: usize,
    #[command(flatten)]
    patch: PatchArgs,
    /// Fraction of the frame covered by each object.
    #[arg(long, default_value_t = 0.05)]
    coverage: f64,
    /// Number of objects.
    #[arg(long, default_value_t = 1)]
    objects: usize,
    /// Object side in pixels (overrides --coverage).
    #[arg(long)]
    object_size: Option<usize>,
    /// Horizontal drift in pixels per frame.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    drift_x: i64,
    /// Vertical drift in pixels per frame.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    drift_y: i64,
    #[arg(long, default_value_t = 0.1)]
    background_amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    object_amplitude: f64,
    /// Pin the object texture across videos.
    #[arg(long)]
    texture_seed: Option<u64>,
    /// Detector center jitter in pixels.
    #[arg(long, default_value_t = 0.0)]
    center_jitter: f64,
    /// Detector relative size jitter.
    #[arg(long, default_value_t = 0.0)]
    size_jitter: f64,
    /// Per-frame probability that a detection is dropped.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

impl SceneArgs {
    fn config(&self) -> Result<SynthConfig> {
        let p = self.patch;
        let geometry =
            PatchGeometry::new(self.frames, self.channels, self.height, self.width, p.patch_t, p.patch_h, p.patch_w)?;
        let config = SynthConfig {
            geometry,
            object_count: self.objects,
            object_size: self.object_size,
            coverage: self.coverage,
            motion: if (self.drift_x, self.drift_y) == (0, 0) {
                Motion::Static
            } else {
                Motion::Drift { dx: self.drift_x, dy: self.drift_y }
            },
            placement: Placement::Random,
            texture_seed: self.texture_seed,
            background_amplitude: self.background_amplitude,
            object_amplitude: self.object_amplitude,
            detector: DetectorNoise {
                center_jitter: self.center_jitter,
                size_jitter: self.size_jitter,
                dropout: self.dropout,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WindowArg {
    Full,
    ThreeSigma,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[command(flatten)]
    patch: PatchArgs,
    /// Box-scaled sigma fraction [default: 1/6, printed as 0.1667].
    #[arg(long, conflicts_with = "sigma_fixed")]
    sigma_scale: Option<f64>,
    /// Fixed sigma in pixels.
    #[arg(long)]
    sigma_fixed: Option<f64>,
    #[arg(long, value_enum, default_value_t = WindowArg::Full)]
    window: WindowArg,
    /// Heatmap tensor; a PGM preview is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ObjectnessArgs {
    #[arg(long)]
    heatmap: PathBuf,
    /// Video whose geometry defines the patch grid.
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    patch: PatchArgs,
    /// Objectness tensor; a PGM preview is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    /// Video whose geometry defines the token grid.
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    patch: PatchArgs,
    /// Objectness scores; required by object-aware, ratio-x and leaky-3d.
    #[arg(long)]
    objectness: Option<PathBuf>,
    #[arg(long, default_value = "object-aware", value_parser = ["object-aware", "ratio-x", "leaky-3d", "random", "tube", "block"])]
    strategy: String,
    /// Mask ratio.
    #[arg(long, default_value_t = 0.7)]
    rho: f64,
    /// Foreground fraction for ratio-x.
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[arg(long)]
    objectness: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Drop the mean-score offset so zero-score tokens get zero weight.
    #[arg(long)]
    no_mu: bool,
    /// JSON-lines output, one `{"token", "weight"}` object per masked token.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for `trace.csv` and `model.soart`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    rho: f64,
    /// Foreground fraction for the ratio-x row.
    #[arg(long, default_value_t = 0.5)]
    x: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
}

/// Configuration file for `train-toy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainToyConfig {
    pub version: u32,
    pub synth: SynthConfig,
    /// Number of synthetic training videos.
    pub videos: usize,
    /// Seed of the first video; video `i` uses `data_seed + i`.
    pub data_seed: u64,
    pub train: TrainConfig,
    #[serde(default)]
    pub sigma: SigmaPolicy,
    #[serde(default)]
    pub normalize_targets: bool,
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    version: u32,
    seed: u64,
    config: &'a SynthConfig,
    object_tokens: &'a [usize],
}

/// Error category for a failed run: the core error kind when there is one.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<soar_core::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return "usage";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "error"
}

/// Single-line JSON diagnostic: `{"error": kind, "message": text}`.
pub fn error_line(err: &anyhow::Error) -> String {
    let message = format!("{err:#}").split_whitespace().collect::<Vec<_>>().join(" ");
    serde_json::json!({ "error": error_kind(err), "message": message }).to_string()
}

/// Runs `argv` (including the program name) and returns the text clap asked
/// to print for `--help`/`--version`, if any.
pub fn run<I, T>(argv: I) -> Result<Option<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            return Ok(Some(e.to_string()));
        }
        Err(e) => return Err(anyhow::Error::new(e)),
    };
    let threads = thread_cap()?;
    par::with_threads(threads, || dispatch(cli.command))?;
    Ok(None)
}

fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            soar_core::Error::Param(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")).into()
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(soar_core::Error::Param(format!("{THREADS_ENV}: {e}")).into()),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Objectness(a) => cmd_objectness(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Weights(a) => cmd_weights(a),
        Command::TrainToy(a) => cmd_train(a),
        Command::BenchMasking(a) => cmd_bench(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_video(path: &Path, p: PatchArgs) -> Result<VideoTensor> {
    io::decode_video(&read(path)?, p.patch_t, p.patch_h, p.patch_w)
        .with_context(|| format!("decoding video {}", path.display()))
}

fn pgm_path(path: &Path) -> PathBuf {
    path.with_extension("pgm")
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config = a.scene.config()?;
    let sample = synth::generate(&config, a.seed)?;
    write(&a.out.join("video.soart"), &io::encode_video(&sample.video)?)?;
    write(&a.out.join("detections.jsonl"), io::encode_detections(&sample.detections)?.as_bytes())?;
    let gt =
        GroundTruth { version: FORMAT_VERSION, seed: a.seed, config: &config, object_tokens: &sample.object_tokens };
    let mut json = serde_json::to_string_pretty(&gt)?;
    json.push('\n');
    write(&a.out.join("ground_truth.json"), json.as_bytes())
}

fn cmd_heatmap(a: HeatmapArgs) -> Result<()> {
    let sigma = match (a.sigma_fixed, a.sigma_scale) {
        (Some(s), _) => SigmaPolicy::Fixed(s),
        (None, Some(f)) => SigmaPolicy::BoxScaled(f),
        (None, None) => SigmaPolicy::BoxScaled(DEFAULT_SIGMA_SCALE),
    };
    sigma.validate()?;
    let window = match a.window {
        WindowArg::Full => Window::Full,
        WindowArg::ThreeSigma => Window::ThreeSigma,
    };
    let video = read_video(&a.video, a.patch)?;
    let g = *video.geometry();
    let text = String::from_utf8(read(&a.dets)?).context("detections are not UTF-8")?;
    let dets = io::decode_detections(&text, g.frames())?;
    let map = heatmap::video_heatmap_with(&dets, &g, sigma, window, Exec::Parallel)?;
    write(&a.out, &io::encode_heatmap(&map)?)?;
    write(&pgm_path(&a.out), &map.to_pgm())
}

fn cmd_objectness(a: ObjectnessArgs) -> Result<()> {
    let video = read_video(&a.video, a.patch)?;
    let g = *video.geometry();
    let heat = io::decode_heatmap(&read(&a.heatmap)?, SigmaPolicy::default())?;
    let map = patch_objectness(&heat, &g)?;
    write(&a.out, &io::encode_objectness(&map)?)?;
    write(&pgm_path(&a.out), &grid_to_pgm(g.patch_cols(), g.patch_rows(), map.scores()))
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let strategy = Strategy::parse(&a.strategy, a.x)?;
    let params = MaskParams::new(strategy, a.rho, a.seed);
    params.validate()?;
    let needs_scores = !matches!(strategy, Strategy::Random | Strategy::Tube | Strategy::Block);
    if needs_scores && a.objectness.is_none() {
        return Err(soar_core::Error::Param(format!("strategy `{}` needs --objectness", a.strategy)).into());
    }
    let video = read_video(&a.video, a.patch)?;
    let g = *video.geometry();
    let map = match &a.objectness {
        Some(p) => io::decode_objectness(&read(p)?, g)?,
        None => soar_core::ObjectnessMap::new(g, vec![0.0; g.spatial_count()])?,
    };
    let mask = generate_mask(&map, &params)?;
    write(&a.out, &io::encode_mask(&mask)?)
}

fn cmd_weights(a: WeightsArgs) -> Result<()> {
    let mask = io::decode_mask(&read(&a.mask)?)?;
    let map = io::decode_objectness(&read(&a.objectness)?, *mask.geometry())?;
    let w = loss_weights(&token_scores(&map), &mask, !a.no_mu)?;
    write(&a.out, w.to_jsonl().as_bytes())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let text = String::from_utf8(read(&a.config)?).context("config is not UTF-8")?;
    let cfg: TrainToyConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    if cfg.version != FORMAT_VERSION {
        bail!(soar_core::Error::Format(format!("config version {} (expected {FORMAT_VERSION})", cfg.version)));
    }
    cfg.synth.validate()?;
    cfg.train.validate()?;
    cfg.sigma.validate()?;
    if cfg.videos == 0 {
        bail!(soar_core::Error::Param("config needs at least one video".into()));
    }
    let data = par::map_indices(Exec::Parallel, cfg.videos, |i| -> soar_core::Result<TrainSample> {
        let sample = synth::generate(&cfg.synth, cfg.data_seed.wrapping_add(i as u64))?;
        TrainSample::from_synth(&sample, cfg.sigma, cfg.normalize_targets)
    })
    .into_iter()
    .collect::<soar_core::Result<Vec<_>>>()?;
    let mut model = ToyModel::init(cfg.synth.geometry, cfg.train.model, cfg.train.seed)?;
    let trace = toymae::train_with(&mut model, &data, &cfg.train, Exec::Parallel)?;
    write(&a.out.join("trace.csv"), trace.to_csv().as_bytes())?;
    write(&a.out.join("model.soart"), &io::encode_model(&model)?)
}

/// Header of the `bench-masking` CSV.
pub const BENCH_HEADER: &str =
    "strategy,rho,trials,tokens,object_tokens,p_any_object_visible,mean_object_visible,mean_visible";

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.trials == 0 {
        bail!(soar_core::Error::Param("--trials must be positive".into()));
    }
    let strategies = [
        Strategy::ObjectAware,
        Strategy::RatioX(a.x),
        Strategy::Leaky3d,
        Strategy::Random,
        Strategy::Tube,
        Strategy::Block,
    ];
    for s in strategies {
        MaskParams::new(s, a.rho, a.seed).validate()?;
    }
    let config = a.scene.config()?;
    let sample = synth::generate(&config, a.seed)?;
    let g = config.geometry;
    let heat =
        heatmap::video_heatmap_with(&sample.detections, &g, SigmaPolicy::default(), Window::Full, Exec::Parallel)?;
    let map = patch_objectness(&heat, &g)?;
    let mut object = vec![false; g.token_count()];
    for &t in &sample.object_tokens {
        object[t] = true;
    }
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for s in strategies {
        let stats = visibility_stats(&map, &object, &MaskParams::new(s, a.rho, 0), a.trials, a.seed, Exec::Parallel)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{:e}\n",
            s,
            a.rho,
            stats.trials,
            g.token_count(),
            sample.object_tokens.len(),
            stats.p_any_object_visible(),
            stats.mean_object_visible(),
            stats.mean_visible()
        ));
    }
    match &a.out {
        Some(p) => write(p, csv.as_bytes()),
        None => {
            std::io::stdout().lock().write_all(csv.as_bytes())?;
            Ok(())
        }
    }
}
