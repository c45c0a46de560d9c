//! Pipeline configuration. Values come from built-in defaults, optionally
//! overridden by a TOML file, then by command-line flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::{SmoothParams, DEFAULT_DEPTH_HI, DEFAULT_DEPTH_LO};
use crate::diffusion::{CodecKind, InpaintOptions, ScheduleConfig};
use crate::error::{Error, Result};
use crate::matrix::{TrajectoryKind, DEFAULT_VIEWS};
use crate::warp::{WarpParams, DEFAULT_BASELINE, DEFAULT_MAX_BASELINE, DEFAULT_PLANES};

/// Longest sequence the video model accepts.
pub const DEFAULT_SEQUENCE_LIMIT: usize = 16;
pub const DEFAULT_FOCAL_PX: f64 = 512.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub lo: f32,
    pub hi: f32,
    pub window: usize,
    pub sigma: f32,
}

impl Default for DepthConfig {
    fn default() -> Self {
        let s = SmoothParams::default();
        Self { lo: DEFAULT_DEPTH_LO, hi: DEFAULT_DEPTH_HI, window: s.window, sigma: s.sigma }
    }
}

impl DepthConfig {
    pub fn smooth_params(&self) -> SmoothParams {
        SmoothParams { window: self.window, sigma: self.sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    pub baseline: f64,
    pub max_baseline: f64,
    pub focal_px: f64,
    pub planes: usize,
    pub isolation_threshold: f64,
    pub crack_threshold: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            baseline: DEFAULT_BASELINE,
            max_baseline: DEFAULT_MAX_BASELINE,
            focal_px: DEFAULT_FOCAL_PX,
            planes: DEFAULT_PLANES,
            isolation_threshold: 0.5,
            crack_threshold: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub n_views: usize,
    pub n_frames_limit: usize,
    pub trajectory: TrajectoryKind,
    pub spiral_ax: f64,
    pub spiral_ay: f64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            n_views: DEFAULT_VIEWS,
            n_frames_limit: DEFAULT_SEQUENCE_LIMIT,
            trajectory: TrajectoryKind::LinearBaseline,
            spiral_ax: 1.0,
            spiral_ay: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    Oracle,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub total_steps: usize,
    pub denoise_steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub resample_hi: usize,
    pub resample_lo: usize,
    pub codec: CodecKind,
    pub denoiser: DenoiserKind,
    /// `tcp://host:port`, `host:port` or `stdio:<command>`.
    pub address: Option<String>,
    pub reinject: bool,
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self {
            total_steps: s.total_steps,
            denoise_steps: s.denoise_steps,
            beta_lo: s.beta_lo,
            beta_hi: s.beta_hi,
            resample_hi: s.resample_hi,
            resample_lo: s.resample_lo,
            codec: CodecKind::Identity,
            denoiser: DenoiserKind::Oracle,
            address: None,
            reinject: true,
            deterministic: false,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_steps: self.total_steps,
            denoise_steps: self.denoise_steps,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
            resample_hi: self.resample_hi,
            resample_lo: self.resample_lo,
        }
    }

    pub fn options(&self) -> InpaintOptions {
        InpaintOptions { seed: self.seed, deterministic: self.deterministic, reinject: self.reinject }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub depth: DepthConfig,
    pub warp: WarpConfig,
    pub matrix: MatrixConfig,
    pub diffusion: DiffusionConfig,
}

impl PipelineConfig {
    /// Reads a TOML config, or the `config` object of a JSON run manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            #[derive(Deserialize)]
            struct Wrapper {
                config: PipelineConfig,
            }
            let w: Wrapper = serde_json::from_str(&text)
                .map_err(|e| Error::Decode { path: path.into(), detail: e.to_string() })?;
            return Ok(w.config);
        }
        toml::from_str(&text).map_err(|e| Error::Decode { path: path.into(), detail: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn warp_params(&self) -> WarpParams {
        WarpParams {
            n_planes: self.warp.planes,
            depth_lo: self.depth.lo,
            depth_hi: self.depth.hi,
            isolation_threshold: self.warp.isolation_threshold,
            crack_threshold: self.warp.crack_threshold,
            ..WarpParams::default()
        }
    }
}
