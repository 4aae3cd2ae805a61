use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "snhq", version, about = "Fuse per-view 2D masks into a 3D object field")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SNHQ_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every random stream; overrides config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render RGB, depth, ground-truth masks and volumes for a scene and rig.
    SceneGen(SceneGenArgs),
    /// Apply synthetic noise to mask frames.
    Corrupt(CorruptArgs),
    /// Train an object field from mask frames.
    Fuse(FuseArgs),
    /// Render mask or feature frames from a trained field.
    Render(RenderArgs),
    /// Score predicted mask frames against ground truth.
    Eval(EvalArgs),
    /// Measure cross-view label agreement of a trained field.
    Consistency(ConsistencyArgs),
    /// Fit a feature field to feature frames.
    Distill(DistillArgs),
    /// Compare analytic and finite-difference gradients on random problems.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SceneGenArgs {
    /// scene.json to render; not needed with --fixture.
    #[arg(long, required_unless_present = "fixture")]
    pub scene_file: Option<PathBuf>,
    /// cameras.json to render; not needed with --fixture.
    #[arg(long, required_unless_present = "fixture")]
    pub cameras_file: Option<PathBuf>,
    /// Built-in scene with an orbit rig: two-spheres or opaque-box.
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long, default_value_t = 40)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Focal length in pixels; defaults to 1.4 x size.
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Azimuth offset of the orbit rig in radians.
    #[arg(long, default_value_t = 0.0)]
    pub phase: f64,
    #[arg(long, default_value_t = 0)]
    pub first_id: u32,
    /// Also write synthetic feature frames with this many channels.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Grid points per axis of the exported volumes.
    #[arg(long, default_value_t = 64)]
    pub volume_res: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub masks: PathBuf,
    /// Corruption spec JSON; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub view_fraction: Option<f64>,
    #[arg(long)]
    pub dilate: Option<u32>,
    #[arg(long)]
    pub erode: Option<u32>,
    #[arg(long)]
    pub flip_rate: Option<f64>,
    #[arg(long)]
    pub drop_view_rate: Option<f64>,
    #[arg(long)]
    pub blob_rate: Option<f64>,
    #[arg(long)]
    pub blob_radius: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Directory holding scene.json and cameras.json.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    /// Fusion config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup_iters: Option<usize>,
    #[arg(long)]
    pub global_batch: Option<usize>,
    #[arg(long)]
    pub samples_per_ray: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train with cross-entropy only (warm-up spans the whole run).
    #[arg(long)]
    pub no_rgb_loss: bool,
    /// Output field file.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    /// Cameras to render; defaults to the scene's cameras.json.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Render a feature field instead of mask probabilities.
    #[arg(long)]
    pub feature: bool,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    /// Also write label overlays (PPM) and per-class images (PGM).
    #[arg(long)]
    pub images: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// report.json path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples_per_pair: usize,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub configs: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<snhq_core::Error>().map_or(2, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
