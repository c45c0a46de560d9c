use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stereogen::config::{DenoiserKind, PipelineConfig};
use stereogen::diffusion::CodecKind;
use stereogen::imaging::io::DepthFormat;
use stereogen::matrix::TrajectoryKind;
use stereogen::pipeline::{
    cmd_assemble, cmd_inpaint, cmd_matrix, cmd_preview, cmd_smooth_depth, cmd_warp, AssembleArgs, DepthInput,
    FramesInput, InpaintArgs, MatrixArgs, MatrixSource, PreviewArgs, SmoothDepthArgs, WarpArgs, DEPTH_PATTERN,
    FLOW_PATTERN, FRAME_PATTERN,
};
use stereogen::Error;

#[derive(Parser)]
#[command(name = "stereogen", version, about = "Stereo video from a monocular video, depth and flow")]
struct Cli {
    /// TOML config file, or a run manifest whose config is reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    depth_lo: Option<f32>,
    #[arg(long, global = true)]
    depth_hi: Option<f32>,
    /// Temporal smoothing window (odd).
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f32>,
    /// Baseline of the rightmost camera, in scene units.
    #[arg(long, global = true)]
    baseline: Option<f64>,
    #[arg(long, global = true)]
    max_baseline: Option<f64>,
    /// Focal length in pixels.
    #[arg(long, global = true)]
    focal: Option<f64>,
    #[arg(long, global = true)]
    planes: Option<usize>,
    #[arg(long, global = true)]
    n_views: Option<usize>,
    #[arg(long, global = true)]
    n_frames_limit: Option<usize>,
    #[arg(long, global = true, value_enum)]
    trajectory: Option<TrajectoryArg>,
    #[arg(long, global = true)]
    total_steps: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    beta_lo: Option<f64>,
    #[arg(long, global = true)]
    beta_hi: Option<f64>,
    #[arg(long, global = true)]
    resample_hi: Option<usize>,
    #[arg(long, global = true)]
    resample_lo: Option<usize>,
    #[arg(long, global = true, value_enum)]
    codec: Option<CodecArg>,
    #[arg(long, global = true, value_enum)]
    denoiser: Option<DenoiserArg>,
    /// External denoiser address: tcp://host:port, host:port or stdio:<command>.
    /// Falls back to STEREOGEN_DENOISER.
    #[arg(long, global = true)]
    address: Option<String>,
    #[arg(long, global = true)]
    no_reinject: bool,
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Linear,
    Spiral,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecArg {
    Identity,
    Avgpool8,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserArg {
    Oracle,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepthFormatArg {
    Pfm,
    Png16,
}

#[derive(Args)]
struct DepthOpts {
    #[arg(long)]
    depth_dir: PathBuf,
    #[arg(long, default_value = DEPTH_PATTERN)]
    depth_pattern: String,
    #[arg(long, value_enum, default_value = "pfm")]
    depth_format: DepthFormatArg,
    /// Depth units per 16-bit code for png16 depth.
    #[arg(long, default_value_t = 1.0)]
    png16_scale: f32,
    /// Files hold inverse depth (disparity-like); reciprocate on load.
    #[arg(long)]
    inverse_depth: bool,
}

impl DepthOpts {
    fn input(&self) -> DepthInput {
        DepthInput {
            dir: self.depth_dir.clone(),
            pattern: self.depth_pattern.clone(),
            format: match self.depth_format {
                DepthFormatArg::Pfm => DepthFormat::Pfm,
                DepthFormatArg::Png16 => DepthFormat::Png16 { scale: self.png16_scale },
            },
            inverse: self.inverse_depth,
        }
    }
}

#[derive(Args)]
struct FrameOpts {
    #[arg(long)]
    frames_dir: PathBuf,
    #[arg(long, default_value = FRAME_PATTERN)]
    frames_pattern: String,
    /// Convert sRGB-encoded PNGs to linear on load.
    #[arg(long)]
    srgb: bool,
}

impl FrameOpts {
    fn input(&self) -> FramesInput {
        FramesInput { dir: self.frames_dir.clone(), pattern: self.frames_pattern.clone(), srgb_decode: self.srgb }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Normalize depth and smooth it along the optical flow.
    SmoothDepth {
        #[command(flatten)]
        depth: DepthOpts,
        /// Forward flow directory (frame i to i+1).
        #[arg(long, requires = "flow_bwd")]
        flow_fwd: Option<PathBuf>,
        /// Backward flow directory (frame i+1 to i).
        #[arg(long, requires = "flow_fwd")]
        flow_bwd: Option<PathBuf>,
        #[arg(long, default_value = FLOW_PATTERN)]
        flow_pattern: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp the video to the right camera.
    Warp {
        #[command(flatten)]
        frames: FrameOpts,
        #[command(flatten)]
        depth: DepthOpts,
        /// Normalize depth on load instead of requiring the working range.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the frame matrix (frames x views of warped videos).
    Matrix {
        #[command(flatten)]
        frames: Option<FrameOpts>,
        #[command(flatten)]
        depth: Option<DepthOpts>,
        #[arg(long)]
        normalize: bool,
        #[arg(long, default_value = "")]
        prompt: String,
        /// Rebuild from the recipe in an existing matrix manifest.
        #[arg(long, conflicts_with_all = ["frames_dir", "depth_dir"])]
        from_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inpaint the disoccluded regions of a frame matrix.
    Inpaint {
        #[arg(long)]
        matrix: PathBuf,
        /// Matrix of clean targets for the oracle denoiser.
        #[arg(long)]
        oracle_targets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the stereo pair and write left/right/sbs/anaglyph sequences.
    Assemble {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tile matrix cells into one preview image.
    Preview {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let o = &cli.overrides;
    macro_rules! set {
        ($field:expr, $opt:expr) => {
            if let Some(v) = $opt.clone() {
                $field = v;
            }
        };
    }
    set!(c.depth.lo, o.depth_lo);
    set!(c.depth.hi, o.depth_hi);
    set!(c.depth.window, o.window);
    set!(c.depth.sigma, o.sigma);
    set!(c.warp.baseline, o.baseline);
    set!(c.warp.max_baseline, o.max_baseline);
    set!(c.warp.focal_px, o.focal);
    set!(c.warp.planes, o.planes);
    set!(c.matrix.n_views, o.n_views);
    set!(c.matrix.n_frames_limit, o.n_frames_limit);
    set!(c.diffusion.total_steps, o.total_steps);
    set!(c.diffusion.denoise_steps, o.steps);
    set!(c.diffusion.beta_lo, o.beta_lo);
    set!(c.diffusion.beta_hi, o.beta_hi);
    set!(c.diffusion.resample_hi, o.resample_hi);
    set!(c.diffusion.resample_lo, o.resample_lo);
    set!(c.diffusion.seed, o.seed);
    if let Some(t) = o.trajectory {
        c.matrix.trajectory = match t {
            TrajectoryArg::Linear => TrajectoryKind::LinearBaseline,
            TrajectoryArg::Spiral => TrajectoryKind::Spiral,
        };
    }
    if let Some(k) = o.codec {
        c.diffusion.codec = match k {
            CodecArg::Identity => CodecKind::Identity,
            CodecArg::Avgpool8 => CodecKind::AvgPool8,
            CodecArg::External => {
                return Err(Error::InvalidArgument(
                    "external codecs are not supported: the denoiser protocol carries no encode/decode".into(),
                ))
            }
        };
    }
    if let Some(d) = o.denoiser {
        c.diffusion.denoiser = match d {
            DenoiserArg::Oracle => DenoiserKind::Oracle,
            DenoiserArg::External => DenoiserKind::External,
        };
    }
    if o.address.is_some() {
        c.diffusion.address = o.address.clone();
    }
    if o.no_reinject {
        c.diffusion.reinject = false;
    }
    if o.deterministic {
        c.diffusion.deterministic = true;
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::SmoothDepth { depth, flow_fwd, flow_bwd, flow_pattern, out } => {
            let flows = flow_fwd.zip(flow_bwd);
            cmd_smooth_depth(&cfg, &SmoothDepthArgs { depth: depth.input(), flows, flow_pattern, out_dir: out })?;
        }
        Command::Warp { frames, depth, normalize, out } => {
            cmd_warp(&cfg, &WarpArgs { frames: frames.input(), depth: depth.input(), normalize, out_dir: out })?;
        }
        Command::Matrix { frames, depth, normalize, prompt, from_manifest, out } => {
            let source = match (from_manifest, frames, depth) {
                (Some(m), _, _) => MatrixSource::Manifest(m),
                (None, Some(f), Some(d)) => {
                    MatrixSource::Inputs { frames: f.input(), depth: d.input(), normalize, prompt }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "matrix needs --frames-dir and --depth-dir, or --from-manifest".into(),
                    ))
                }
            };
            cmd_matrix(&cfg, &MatrixArgs { source, out_dir: out })?;
        }
        Command::Inpaint { matrix, oracle_targets, out } => {
            cmd_inpaint(&cfg, &InpaintArgs { matrix_dir: matrix, oracle_targets, out_dir: out })?;
        }
        Command::Assemble { matrix, out } => {
            cmd_assemble(&cfg, &AssembleArgs { matrix_dir: matrix, out_dir: out })?;
        }
        Command::Preview { matrix, frames, views, out } => {
            cmd_preview(&cfg, &PreviewArgs { matrix_dir: matrix, out_file: out, frames, views })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
