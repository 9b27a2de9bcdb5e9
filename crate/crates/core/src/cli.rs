//! Command-line front end. Every subcommand reads JSON configs, writes its
//! artifacts under `--out`, and maps failures to exit codes: 1 for usage
//! errors, 2 for runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, geometry_error, load_for_dataset, reenact, render_frame, EvalOptions};
use crate::fields::{ExpressionVector, FieldParams};
use crate::renderer::{extract_mesh, NetworkField, SamplingConfig};
use crate::scene_synth::{generate_dataset, make_scene, Dataset, DatasetConfig, SceneConfig, Split};
use crate::trainer::ablation::{run_ablation_suite, AblationSettings};
use crate::trainer::{train, TrainConfig, CHECKPOINT_DIR};
use crate::util::{read_json, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "svefield", version, about = "Train and evaluate expression-conditioned SDF radiance fields on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Dataset directory written by `synth-data`.
    #[arg(long)]
    data: PathBuf,
    /// Training output directory or checkpoint directory.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Number of frames (overrides the config).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Train a model on a dataset, resuming from `<out>/checkpoint` if present.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Print the effective config as JSON and exit.
        #[arg(long)]
        dump_config: bool,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Score a trained model on a split and write metrics.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "heldout")]
        split: SplitArg,
        /// Restrict metrics to ground-truth foreground pixels.
        #[arg(long)]
        masked: bool,
    },
    /// Render dataset frames (views and expressions) with a trained model.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "heldout")]
        split: SplitArg,
    },
    /// Drive a trained model with an expression sequence from a fixed camera.
    Reenact {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// JSON file holding a list of expression vectors; defaults to every
        /// expression of the dataset in frame order.
        #[arg(long)]
        expressions: Option<PathBuf>,
        /// Dataset frame whose camera is used.
        #[arg(long, default_value_t = 0)]
        camera_frame: usize,
    },
    /// Extract the learned surface under one frame's expression as OBJ.
    ExtractMesh {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Train the ablation variants and write the comparison table.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        verbose: bool,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Heldout,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Heldout => Split::Heldout,
        }
    }
}

/// Config of `synth-data`: scene shape plus frame sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene_seed: u64,
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { scene_seed: 0, scene: SceneConfig::default(), dataset: DatasetConfig::default() }
    }
}

/// Config of `ablate`: the full method's training config and suite settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub suite: AblationSettings,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig { train: TrainConfig::default(), suite: AblationSettings::default() }
    }
}

/// Config shared by the rendering subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub sampling: SamplingConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { sampling: SamplingConfig::evaluation() }
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn load_model(args: &ModelArgs) -> Result<(Dataset, FieldParams<f32>)> {
    let dataset = Dataset::load(&args.data)?;
    let nested = args.model.join(CHECKPOINT_DIR);
    let dir = if nested.is_dir() { nested } else { args.model.clone() };
    let params = load_for_dataset(&dir, &dataset)?;
    Ok((dataset, params))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::SynthData { common, frames, width, height } => {
            let mut cfg: SynthConfig = load_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.scene_seed = seed;
                cfg.dataset.seed = seed;
            }
            cfg.dataset.n_frames = frames.unwrap_or(cfg.dataset.n_frames);
            cfg.dataset.width = width.unwrap_or(cfg.dataset.width);
            cfg.dataset.height = height.unwrap_or(cfg.dataset.height);
            let scene = make_scene(cfg.scene_seed, &cfg.scene)?;
            let manifest = generate_dataset(&scene, &cfg.dataset, &common.out)?;
            println!("wrote {} frames (K = {}) to {}", manifest.frames.len(), manifest.k, common.out.display());
        }
        Command::Train { common, data, dump_config, verbose } => {
            let mut cfg: TrainConfig = load_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if dump_config {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("configs serialize"));
                return Ok(());
            }
            let dataset = Dataset::load(&data)?;
            let summary = train(&dataset, &cfg, &common.out, verbose)?;
            match summary.final_loss {
                Some(l) => println!("trained to step {} (loss {:.6}); checkpoint in {}", summary.steps, l.total, summary.checkpoint_dir.display()),
                None => println!("nothing to train; checkpoint in {}", summary.checkpoint_dir.display()),
            }
        }
        Command::Evaluate { common, model, split, masked } => {
            let cfg: RenderConfig = load_config(common.config.as_deref())?;
            let (dataset, params) = load_model(&model)?;
            let report = evaluate(&params, &dataset, split.into(), &EvalOptions { sampling: cfg.sampling, masked })?;
            create_dir(&common.out)?;
            write_json(&common.out.join("metrics.json"), &report)?;
            println!("L1 {:.5}  PSNR {:.3}  SSIM {:.4}  ({} frames)", report.mae, report.psnr, report.ssim, report.n_frames);
        }
        Command::Render { common, model, split } => {
            let cfg: RenderConfig = load_config(common.config.as_deref())?;
            let (dataset, params) = load_model(&model)?;
            let m = &dataset.manifest;
            for frame in dataset.split(split.into()) {
                let img = render_frame(&params, frame, m.bound_radius, &cfg.sampling, m.scene.background)?;
                img.save(&common.out, &format!("{:04}", frame.frame_id))?;
            }
            println!("rendered to {}", common.out.display());
        }
        Command::Reenact { common, model, expressions, camera_frame } => {
            let cfg: RenderConfig = load_config(common.config.as_deref())?;
            let (dataset, params) = load_model(&model)?;
            let exprs: Vec<ExpressionVector> = match expressions {
                Some(path) => read_json::<Vec<Vec<f64>>>(&path)?.into_iter().map(ExpressionVector::new).collect(),
                None => dataset.frames.iter().map(|f| f.expression.clone()).collect(),
            };
            let frame = dataset
                .frame(camera_frame)
                .ok_or_else(|| Error::Dataset(format!("no frame {camera_frame} in {}", model.data.display())))?;
            let m = &dataset.manifest;
            let images = reenact(&params, &exprs, &frame.camera, m.bound_radius, &cfg.sampling, m.scene.background)?;
            for (i, img) in images.iter().enumerate() {
                img.save(&common.out, &format!("{i:04}"))?;
            }
            println!("wrote {} frames to {}", images.len(), common.out.display());
        }
        Command::ExtractMesh { common, model, frame, resolution } => {
            let (dataset, params) = load_model(&model)?;
            let record = dataset
                .frame(frame)
                .ok_or_else(|| Error::Dataset(format!("no frame {frame} in {}", model.data.display())))?;
            let scene = &dataset.manifest.scene;
            let field = NetworkField::new(&params, &record.expression)?;
            let mesh = extract_mesh(&field, scene.bound_radius(), resolution, 0.0)?;
            create_dir(&common.out)?;
            mesh.write_obj(&common.out.join("mesh.obj"))?;
            let err = geometry_error(&params, scene, &record.expression, resolution)?;
            write_json(&common.out.join("geometry.json"), &err)?;
            println!("{} vertices; mean |analytic SDF| {:.5}", err.n_vertices, err.mean_abs_sdf);
        }
        Command::Ablate { common, data, verbose } => {
            let mut cfg: AblateConfig = load_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.suite.seeds = vec![seed];
            }
            cfg.suite.verbose |= verbose;
            let dataset = Dataset::load(&data)?;
            let table = run_ablation_suite(&dataset, &cfg.train, &cfg.suite)?;
            create_dir(&common.out)?;
            write_json(&common.out.join("ablation.json"), &table)?;
            let md = format!("{}\n{}", table.to_markdown(), table.geometry_markdown());
            write_text(&common.out.join("ablation.md"), &md)?;
            print!("{md}");
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
