//! Stage orchestration behind the command-line subcommands. Every command
//! writes a run manifest next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DenoiserKind, PipelineConfig};
use crate::depth::{normalize_depth, smooth_depth, DepthSequence};
use crate::diffusion::protocol::DENOISER_ENV;
use crate::diffusion::{
    inpaint_frame_matrix, make_schedule, DenoiserEndpoint, ExternalDenoiser, LatentCodec, OracleDenoiser,
    OracleVariance, SequenceLimit,
};
use crate::error::{Error, Result};
use crate::imaging::io::{
    read_depth_sequence, read_flow_sequence, read_frame_sequence, write_depth_pfm, write_frame_sequence,
    write_mask_sequence, DepthFormat, SequencePattern,
};
use crate::imaging::{DepthMap, FrameBuffer};
use crate::matrix::{
    build_frame_matrix, build_linear_trajectory, build_spiral_trajectory, FrameMatrix, MatrixManifest,
    MatrixRecipe, Trajectory, TrajectoryKind, MANIFEST_FILE,
};
use crate::stereo::{extract_stereo, render_preview_grid, write_stereo_outputs, StereoStatus};
use crate::warp::{warp_video, CameraOffset};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const DEPTH_PATTERN: &str = "d###.pfm";
pub const FRAME_PATTERN: &str = "f###.png";
pub const MASK_PATTERN: &str = "m###.png";
pub const FLOW_PATTERN: &str = "f###.flo";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: PipelineConfig,
    pub args: BTreeMap<String, String>,
    /// Input file path -> SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    /// Stage name -> wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
    pub report: serde_json::Value,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode { path: path.into(), detail: e.to_string() })
    }
}

struct Run {
    manifest: RunManifest,
}

impl Run {
    fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: cfg.clone(),
                args: BTreeMap::new(),
                inputs: BTreeMap::new(),
                timings: BTreeMap::new(),
                report: serde_json::Value::Null,
            },
        }
    }

    fn arg(&mut self, key: &str, value: impl ToString) {
        self.manifest.args.insert(key.into(), value.to_string());
    }

    fn hash_inputs(&mut self, path: &Path) -> Result<()> {
        for file in walk_files(path)? {
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            self.manifest.inputs.insert(file.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.manifest.timings.insert(name.into(), start.elapsed().as_secs_f64());
        log::info!("{name}: {:.3}s", start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn finish(mut self, out_dir: &Path, report: serde_json::Value) -> Result<RunManifest> {
        self.manifest.report = report;
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

/// Files under `path` in sorted order; a file path yields itself. Run
/// manifests are skipped so re-runs hash the same inputs.
fn walk_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(walk_files(&p)?);
        } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST) {
            out.push(p);
        }
    }
    Ok(out)
}

fn load_depth(
    cfg: &PipelineConfig,
    dir: &Path,
    pattern: &str,
    format: DepthFormat,
    inverse: bool,
    normalize: bool,
) -> Result<DepthSequence> {
    let maps = read_depth_sequence(dir, pattern, format, inverse)?;
    if normalize {
        Ok(normalize_depth(&DepthSequence::new(maps)?, cfg.depth.lo, cfg.depth.hi)?.0)
    } else {
        DepthSequence::from_normalized(maps, cfg.depth.lo, cfg.depth.hi)
    }
}

#[derive(Clone, Debug)]
pub struct DepthInput {
    pub dir: PathBuf,
    pub pattern: String,
    pub format: DepthFormat,
    pub inverse: bool,
}

#[derive(Clone, Debug)]
pub struct SmoothDepthArgs {
    pub depth: DepthInput,
    /// Forward (`i -> i+1`) and backward (`i+1 -> i`) flow directories; not
    /// needed with a window of 1.
    pub flows: Option<(PathBuf, PathBuf)>,
    pub flow_pattern: String,
    pub out_dir: PathBuf,
}

/// Normalizes raw depth to the working range, smooths it along the flow and
/// writes `d###.pfm`.
pub fn cmd_smooth_depth(cfg: &PipelineConfig, args: &SmoothDepthArgs) -> Result<RunManifest> {
    let mut run = Run::new("smooth-depth", cfg);
    run.arg("depth_dir", args.depth.dir.display());
    run.arg("depth_pattern", &args.depth.pattern);
    run.arg("inverse", args.depth.inverse);
    run.arg("out_dir", args.out_dir.display());
    run.hash_inputs(&args.depth.dir)?;
    let d = &args.depth;
    let (seq, status) = run.stage("load", || {
        let maps = read_depth_sequence(&d.dir, &d.pattern, d.format, d.inverse)?;
        normalize_depth(&DepthSequence::new(maps)?, cfg.depth.lo, cfg.depth.hi)
    })?;
    let n = seq.len();
    let (fwd, bwd) = match &args.flows {
        Some((f, b)) => {
            run.arg("flow_fwd_dir", f.display());
            run.arg("flow_bwd_dir", b.display());
            run.hash_inputs(f)?;
            run.hash_inputs(b)?;
            run.stage("load-flow", || {
                Ok((read_flow_sequence(f, &args.flow_pattern)?, read_flow_sequence(b, &args.flow_pattern)?))
            })?
        }
        None if cfg.depth.window == 1 || n <= 1 => (Vec::new(), Vec::new()),
        None => return Err(Error::InvalidArgument("flow directories are required for temporal smoothing".into())),
    };
    let smoothed = if cfg.depth.window == 1 {
        seq
    } else {
        run.stage("smooth", || smooth_depth(&seq, &fwd, &bwd, cfg.depth.smooth_params()))?
    };
    let pat = SequencePattern::parse(DEPTH_PATTERN)?;
    run.stage("write", || {
        fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
        for (i, d) in smoothed.frames().iter().enumerate() {
            write_depth_pfm(args.out_dir.join(pat.file_name(i)), d)?;
        }
        Ok(())
    })?;
    let report = serde_json::json!({ "frames": n, "degenerate_range": status != crate::depth::NormalizeStatus::Ok });
    run.finish(&args.out_dir, report)
}

#[derive(Clone, Debug)]
pub struct FramesInput {
    pub dir: PathBuf,
    pub pattern: String,
    pub srgb_decode: bool,
}

#[derive(Clone, Debug)]
pub struct WarpArgs {
    pub frames: FramesInput,
    pub depth: DepthInput,
    /// Normalize the depth on load instead of requiring it in range.
    pub normalize: bool,
    pub out_dir: PathBuf,
}

/// Warps the video to the camera `baseline` to the right; writes frames
/// `f###.png` and masks `m###.png`.
pub fn cmd_warp(cfg: &PipelineConfig, args: &WarpArgs) -> Result<RunManifest> {
    let mut run = Run::new("warp", cfg);
    run.arg("frames_dir", args.frames.dir.display());
    run.arg("depth_dir", args.depth.dir.display());
    run.arg("normalize", args.normalize);
    run.arg("out_dir", args.out_dir.display());
    let cam = CameraOffset::horizontal(cfg.warp.baseline, cfg.warp.focal_px);
    cam.validate(cfg.warp.max_baseline)?;
    run.hash_inputs(&args.frames.dir)?;
    run.hash_inputs(&args.depth.dir)?;
    let (frames, depth) = run.stage("load", || load_inputs(cfg, &args.frames, &args.depth, args.normalize))?;
    let (warped, masks) = run.stage("warp", || warp_video(&frames, depth.frames(), &cam, &cfg.warp_params()))?;
    run.stage("write", || {
        write_frame_sequence(&args.out_dir, FRAME_PATTERN, &warped)?;
        write_mask_sequence(&args.out_dir, MASK_PATTERN, &masks)
    })?;
    let unknown: usize = masks.iter().map(|m| m.count_unknown()).sum();
    run.finish(&args.out_dir, serde_json::json!({ "frames": frames.len(), "disoccluded_pixels": unknown }))
}

fn load_inputs(
    cfg: &PipelineConfig,
    frames: &FramesInput,
    depth: &DepthInput,
    normalize: bool,
) -> Result<(Vec<FrameBuffer>, DepthSequence)> {
    let rgb = read_frame_sequence(&frames.dir, &frames.pattern, frames.srgb_decode)?;
    let d = load_depth(cfg, &depth.dir, &depth.pattern, depth.format, depth.inverse, normalize)?;
    if rgb.len() != d.len() {
        return Err(Error::InvalidArgument(format!("{} frames but {} depth maps", rgb.len(), d.len())));
    }
    if let (Some(f), Some(dm)) = (rgb.first(), d.frames().first()) {
        check_dims(f, dm)?;
    }
    Ok((rgb, d))
}

fn check_dims(f: &FrameBuffer, d: &DepthMap) -> Result<()> {
    if f.dims() != d.dims() {
        return Err(Error::DimensionMismatch { expected: f.dims(), found: d.dims(), context: "frame vs depth".into() });
    }
    Ok(())
}

pub fn build_trajectory(cfg: &PipelineConfig) -> Result<Trajectory> {
    let (b, n, f) = (cfg.warp.baseline, cfg.matrix.n_views, cfg.warp.focal_px);
    match cfg.matrix.trajectory {
        TrajectoryKind::LinearBaseline => build_linear_trajectory(b, n, f),
        TrajectoryKind::Spiral => build_spiral_trajectory(b, n, f, cfg.matrix.spiral_ax, cfg.matrix.spiral_ay),
    }
}

#[derive(Clone, Debug)]
pub enum MatrixSource {
    Inputs { frames: FramesInput, depth: DepthInput, normalize: bool, prompt: String },
    /// Rebuild from the recipe and trajectory recorded in a matrix manifest.
    Manifest(PathBuf),
}

#[derive(Clone, Debug)]
pub struct MatrixArgs {
    pub source: MatrixSource,
    pub out_dir: PathBuf,
}

pub fn cmd_matrix(cfg: &PipelineConfig, args: &MatrixArgs) -> Result<RunManifest> {
    let mut run = Run::new("matrix", cfg);
    run.arg("out_dir", args.out_dir.display());
    let (recipe, traj, prompt) = match &args.source {
        MatrixSource::Inputs { frames, depth, normalize, prompt } => {
            let traj = build_trajectory(cfg)?;
            traj.validate(cfg.warp.max_baseline)?;
            if depth.format != DepthFormat::Pfm || depth.inverse {
                return Err(Error::InvalidArgument("matrix inputs take PFM depth".into()));
            }
            let recipe = MatrixRecipe {
                frames_dir: frames.dir.clone(),
                frames_pattern: frames.pattern.clone(),
                depth_dir: depth.dir.clone(),
                depth_pattern: depth.pattern.clone(),
                srgb_decode: frames.srgb_decode,
                normalize_depth: *normalize,
                warp: cfg.warp_params(),
            };
            (recipe, traj, prompt.clone())
        }
        MatrixSource::Manifest(path) => {
            run.arg("from_manifest", path.display());
            run.hash_inputs(path)?;
            let m = MatrixManifest::read(path)?;
            let recipe = m.recipe.ok_or_else(|| {
                Error::InvalidArgument(format!("{} records no recipe to rebuild from", path.display()))
            })?;
            (recipe, m.trajectory, m.prompt)
        }
    };
    run.arg("frames_dir", recipe.frames_dir.display());
    run.arg("depth_dir", recipe.depth_dir.display());
    run.hash_inputs(&recipe.frames_dir)?;
    run.hash_inputs(&recipe.depth_dir)?;
    let frames = FramesInput {
        dir: recipe.frames_dir.clone(),
        pattern: recipe.frames_pattern.clone(),
        srgb_decode: recipe.srgb_decode,
    };
    let depth = DepthInput {
        dir: recipe.depth_dir.clone(),
        pattern: recipe.depth_pattern.clone(),
        format: DepthFormat::Pfm,
        inverse: false,
    };
    let mut stage_cfg = cfg.clone();
    stage_cfg.depth.lo = recipe.warp.depth_lo;
    stage_cfg.depth.hi = recipe.warp.depth_hi;
    let (rgb, d) = run.stage("load", || load_inputs(&stage_cfg, &frames, &depth, recipe.normalize_depth))?;
    if rgb.len() > cfg.matrix.n_frames_limit {
        return Err(Error::SequenceTooLong { len: rgb.len(), limit: cfg.matrix.n_frames_limit });
    }
    let fm = run.stage("build", || build_frame_matrix(&rgb, &d, &traj, &recipe.warp, &prompt))?;
    run.stage("write", || fm.save(&args.out_dir, Some(&recipe)))?;
    let unknown: Vec<usize> = (0..fm.n_views()).map(|v| fm.column_unknown_count(v)).collect();
    run.finish(
        &args.out_dir,
        serde_json::json!({ "n_frames": fm.n_frames(), "n_views": fm.n_views(), "unknown_per_view": unknown }),
    )
}

#[derive(Clone, Debug)]
pub struct InpaintArgs {
    pub matrix_dir: PathBuf,
    /// Matrix directory of clean targets for the oracle denoiser.
    pub oracle_targets: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn build_endpoint(
    cfg: &PipelineConfig,
    fm: &FrameMatrix,
    codec: &dyn LatentCodec,
    targets: Option<&Path>,
    sched: &crate::diffusion::NoiseSchedule,
) -> Result<Box<dyn DenoiserEndpoint>> {
    let limit = cfg.matrix.n_frames_limit;
    match cfg.diffusion.denoiser {
        DenoiserKind::Oracle => {
            let dir = targets.ok_or_else(|| {
                Error::InvalidArgument("the oracle denoiser needs a target matrix (--oracle-targets)".into())
            })?;
            let (tm, _) = FrameMatrix::load(dir)?;
            if (tm.n_frames(), tm.n_views(), tm.dims()) != (fm.n_frames(), fm.n_views(), fm.dims()) {
                return Err(Error::ShapeMismatch(format!(
                    "target matrix {}x{} of {:?} vs input {}x{} of {:?}",
                    tm.n_frames(),
                    tm.n_views(),
                    tm.dims(),
                    fm.n_frames(),
                    fm.n_views(),
                    fm.dims()
                )));
            }
            let mut cells = Vec::with_capacity(tm.n_frames() * tm.n_views());
            for s in 0..tm.n_frames() {
                cells.extend(codec.encode(&tm.row(s))?);
            }
            let oracle =
                OracleDenoiser::for_grid(tm.n_views(), cells, sched.clone()).with_variance(OracleVariance::Posterior);
            Ok(Box::new(SequenceLimit::new(oracle, limit)))
        }
        DenoiserKind::External => {
            let addr = match &cfg.diffusion.address {
                Some(a) => a.clone(),
                None => std::env::var(DENOISER_ENV).map_err(|_| {
                    Error::InvalidArgument(format!("no denoiser address given and {DENOISER_ENV} is unset"))
                })?,
            };
            Ok(Box::new(ExternalDenoiser::connect(&addr)?.with_max_sequence_len(limit)))
        }
    }
}

/// Runs frame-matrix inpainting and writes the inpainted matrix.
pub fn cmd_inpaint(cfg: &PipelineConfig, args: &InpaintArgs) -> Result<RunManifest> {
    let mut run = Run::new("inpaint", cfg);
    run.arg("matrix_dir", args.matrix_dir.display());
    run.arg("out_dir", args.out_dir.display());
    run.hash_inputs(&args.matrix_dir)?;
    if let Some(t) = &args.oracle_targets {
        run.arg("oracle_targets", t.display());
        run.hash_inputs(t)?;
    }
    let sched = make_schedule(&cfg.diffusion.schedule())?;
    let codec = cfg.diffusion.codec.build();
    let (fm, manifest) = run.stage("load", || FrameMatrix::load(&args.matrix_dir))?;
    let endpoint = run.stage("connect", || {
        build_endpoint(cfg, &fm, codec.as_ref(), args.oracle_targets.as_deref(), &sched)
    })?;
    let (out, report) = run.stage("inpaint", || {
        inpaint_frame_matrix(&fm, codec.as_ref(), endpoint.as_ref(), &sched, &cfg.diffusion.options())
    })?;
    run.stage("write", || out.save(&args.out_dir, manifest.recipe.as_ref()))?;
    run.finish(&args.out_dir, serde_json::to_value(&report).expect("report serializes"))
}

#[derive(Clone, Debug)]
pub struct AssembleArgs {
    pub matrix_dir: PathBuf,
    pub out_dir: PathBuf,
}

/// Writes `left/`, `right/`, `sbs/` and `anaglyph/`. A right column with
/// remaining holes is reported, not rejected.
pub fn cmd_assemble(cfg: &PipelineConfig, args: &AssembleArgs) -> Result<RunManifest> {
    let mut run = Run::new("assemble", cfg);
    run.arg("matrix_dir", args.matrix_dir.display());
    run.arg("out_dir", args.out_dir.display());
    run.hash_inputs(&args.matrix_dir)?;
    let (fm, _) = run.stage("load", || FrameMatrix::load(&args.matrix_dir))?;
    let (pair, status) = extract_stereo(&fm);
    if let StereoStatus::Uninpainted { unknown_pixels } = status {
        log::warn!("right view still has {unknown_pixels} disoccluded pixels");
    }
    run.stage("write", || write_stereo_outputs(&args.out_dir, &pair))?;
    run.finish(&args.out_dir, serde_json::to_value(status).expect("status serializes"))
}

#[derive(Clone, Debug)]
pub struct PreviewArgs {
    pub matrix_dir: PathBuf,
    pub out_file: PathBuf,
    pub frames: Option<Vec<usize>>,
    pub views: Option<Vec<usize>>,
}

/// Renders a grid of matrix cells into one PNG; the run manifest goes next
/// to it.
pub fn cmd_preview(cfg: &PipelineConfig, args: &PreviewArgs) -> Result<RunManifest> {
    let mut run = Run::new("preview", cfg);
    run.arg("matrix_dir", args.matrix_dir.display());
    run.arg("out_file", args.out_file.display());
    run.hash_inputs(&args.matrix_dir.join(MANIFEST_FILE))?;
    let (fm, _) = run.stage("load", || FrameMatrix::load(&args.matrix_dir))?;
    let frames = args.frames.clone().unwrap_or_else(|| (0..fm.n_frames()).collect());
    let views = args.views.clone().unwrap_or_else(|| (0..fm.n_views()).collect());
    let grid = run.stage("render", || render_preview_grid(&fm, &frames, &views))?;
    let parent = args.out_file.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    crate::imaging::io::write_png_frame(&args.out_file, &grid)?;
    run.finish(parent, serde_json::json!({ "width": grid.width(), "height": grid.height() }))
}
