//! The frame matrix: a grid of warped frames indexed by (time, view).
//!
//! Columns are videos seen from a fixed camera, rows are sweeps across the
//! cameras at a fixed instant. Column 0 is the reference video.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::DepthSequence;
use crate::error::{Error, Result};
use crate::imaging::io::{read_mask_png, read_png_frame, write_mask_png, write_png_frame};
use crate::imaging::{DisocclusionMask, FrameBuffer};
use crate::warp::{warp_video, CameraOffset, WarpParams};

pub const DEFAULT_VIEWS: usize = 8;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    LinearBaseline,
    Spiral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub views: Vec<CameraOffset>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn validate(&self, max_baseline: f64) -> Result<()> {
        let first = self.views.first().ok_or(Error::InvalidViewCount(0))?;
        if !first.is_identity() {
            return Err(Error::InvalidArgument("view 0 must be the reference camera".into()));
        }
        for v in &self.views {
            v.validate(max_baseline)?;
        }
        if self.kind == TrajectoryKind::LinearBaseline && self.views.last().unwrap().baseline_offset != 0.0 {
            let increasing = self.views.windows(2).all(|p| p[1].baseline_offset > p[0].baseline_offset);
            if !increasing {
                return Err(Error::InvalidArgument("linear trajectory offsets must increase".into()));
            }
        }
        Ok(())
    }
}

/// `n_views` cameras evenly spaced from the reference (0) to `baseline`.
pub fn build_linear_trajectory(baseline: f64, n_views: usize, focal_px: f64) -> Result<Trajectory> {
    if n_views < 2 {
        return Err(Error::InvalidViewCount(n_views));
    }
    let views = (0..n_views)
        .map(|k| CameraOffset::horizontal(baseline * k as f64 / (n_views - 1) as f64, focal_px))
        .collect();
    Ok(Trajectory { kind: TrajectoryKind::LinearBaseline, views })
}

/// Cameras on a closed loop around the reference:
/// `(b sin(2 pi k / K) a_x, b (1 - cos(2 pi k / K)) a_y)` for `k < K = n_views`.
pub fn build_spiral_trajectory(
    baseline: f64,
    n_views: usize,
    focal_px: f64,
    amp_x: f64,
    amp_y: f64,
) -> Result<Trajectory> {
    if n_views < 2 {
        return Err(Error::InvalidViewCount(n_views));
    }
    let views = (0..n_views)
        .map(|k| {
            let a = TAU * k as f64 / n_views as f64;
            CameraOffset {
                baseline_offset: baseline * a.sin() * amp_x,
                vertical_offset: baseline * (1.0 - a.cos()) * amp_y,
                focal_px,
            }
        })
        .collect();
    Ok(Trajectory { kind: TrajectoryKind::Spiral, views })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    n_frames: usize,
    n_views: usize,
    /// Row-major: index `s * n_views + v`.
    frames: Vec<FrameBuffer>,
    masks: Vec<DisocclusionMask>,
    trajectory: Trajectory,
    prompt: String,
}

impl FrameMatrix {
    /// Assembles a matrix from per-column videos.
    pub fn from_columns(
        columns: Vec<(Vec<FrameBuffer>, Vec<DisocclusionMask>)>,
        trajectory: Trajectory,
        prompt: impl Into<String>,
    ) -> Result<Self> {
        let n_views = columns.len();
        if n_views == 0 || n_views != trajectory.len() {
            return Err(Error::InvalidArgument(format!(
                "{n_views} columns for a {}-view trajectory",
                trajectory.len()
            )));
        }
        let n_frames = columns[0].0.len();
        let dims = columns[0].0.first().map(FrameBuffer::dims).unwrap_or((0, 0));
        let mut frames = vec![None; n_frames * n_views];
        let mut masks = vec![None; n_frames * n_views];
        for (v, (fs, ms)) in columns.into_iter().enumerate() {
            if fs.len() != n_frames || ms.len() != n_frames {
                return Err(Error::InvalidArgument(format!("column {v} has the wrong length")));
            }
            for (s, (f, m)) in fs.into_iter().zip(ms).enumerate() {
                if f.dims() != dims || m.dims() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        found: f.dims(),
                        context: format!("matrix cell ({s}, {v})"),
                    });
                }
                frames[s * n_views + v] = Some(f);
                masks[s * n_views + v] = Some(m);
            }
        }
        Ok(Self {
            n_frames,
            n_views,
            frames: frames.into_iter().map(Option::unwrap).collect(),
            masks: masks.into_iter().map(Option::unwrap).collect(),
            trajectory,
            prompt: prompt.into(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map(FrameBuffer::dims).unwrap_or((0, 0))
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn set_prompt(&mut self, prompt: impl Into<String>) {
        self.prompt = prompt.into();
    }

    pub fn frame(&self, s: usize, v: usize) -> &FrameBuffer {
        &self.frames[s * self.n_views + v]
    }

    pub fn mask(&self, s: usize, v: usize) -> &DisocclusionMask {
        &self.masks[s * self.n_views + v]
    }

    pub fn set_cell(&mut self, s: usize, v: usize, frame: FrameBuffer, mask: DisocclusionMask) {
        assert_eq!(frame.dims(), self.dims());
        assert_eq!(mask.dims(), self.dims());
        self.frames[s * self.n_views + v] = frame;
        self.masks[s * self.n_views + v] = mask;
    }

    /// Time sequence seen by camera `v`.
    pub fn column(&self, v: usize) -> Vec<&FrameBuffer> {
        (0..self.n_frames).map(|s| self.frame(s, v)).collect()
    }

    pub fn column_masks(&self, v: usize) -> Vec<&DisocclusionMask> {
        (0..self.n_frames).map(|s| self.mask(s, v)).collect()
    }

    /// View sweep at time `s`.
    pub fn row(&self, s: usize) -> Vec<&FrameBuffer> {
        (0..self.n_views).map(|v| self.frame(s, v)).collect()
    }

    pub fn row_masks(&self, s: usize) -> Vec<&DisocclusionMask> {
        (0..self.n_views).map(|v| self.mask(s, v)).collect()
    }

    pub fn column_unknown_count(&self, v: usize) -> usize {
        self.column_masks(v).iter().map(|m| m.count_unknown()).sum()
    }

    /// Swaps the roles of time and view.
    pub fn transposed(&self) -> FrameMatrix {
        let mut frames = Vec::with_capacity(self.frames.len());
        let mut masks = Vec::with_capacity(self.masks.len());
        for v in 0..self.n_views {
            for s in 0..self.n_frames {
                frames.push(self.frame(s, v).clone());
                masks.push(self.mask(s, v).clone());
            }
        }
        FrameMatrix {
            n_frames: self.n_views,
            n_views: self.n_frames,
            frames,
            masks,
            trajectory: self.trajectory.clone(),
            prompt: self.prompt.clone(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>, recipe: Option<&MatrixRecipe>) -> Result<()> {
        let dir = dir.as_ref();
        for v in 0..self.n_views {
            let col = dir.join(format!("v{v:02}"));
            fs::create_dir_all(&col).map_err(|e| Error::io(&col, e))?;
            for s in 0..self.n_frames {
                write_png_frame(col.join(format!("f{s:03}.png")), self.frame(s, v))?;
                write_mask_png(col.join(format!("m{s:03}.png")), self.mask(s, v))?;
            }
        }
        let (width, height) = self.dims();
        let manifest = MatrixManifest {
            n_frames: self.n_frames,
            n_views: self.n_views,
            width,
            height,
            prompt: self.prompt.clone(),
            trajectory: self.trajectory.clone(),
            recipe: recipe.cloned(),
        };
        manifest.write(dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, MatrixManifest)> {
        let dir = dir.as_ref();
        let manifest = MatrixManifest::read(dir.join(MANIFEST_FILE))?;
        let columns = (0..manifest.n_views)
            .map(|v| {
                let col = dir.join(format!("v{v:02}"));
                let mut frames = Vec::with_capacity(manifest.n_frames);
                let mut masks = Vec::with_capacity(manifest.n_frames);
                for s in 0..manifest.n_frames {
                    let f = read_png_frame(col.join(format!("f{s:03}.png")), false)?;
                    let m = read_mask_png(col.join(format!("m{s:03}.png")))?;
                    if f.dims() != (manifest.width, manifest.height) {
                        return Err(Error::DimensionMismatch {
                            expected: (manifest.width, manifest.height),
                            found: f.dims(),
                            context: format!("matrix cell ({s}, {v})"),
                        });
                    }
                    frames.push(f);
                    masks.push(m);
                }
                Ok((frames, masks))
            })
            .collect::<Result<Vec<_>>>()?;
        let m = FrameMatrix::from_columns(columns, manifest.trajectory.clone(), manifest.prompt.clone())?;
        Ok((m, manifest))
    }
}

/// Inputs a matrix was built from, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecipe {
    pub frames_dir: PathBuf,
    pub frames_pattern: String,
    pub depth_dir: PathBuf,
    pub depth_pattern: String,
    pub srgb_decode: bool,
    /// Depth was affinely normalized on load rather than read as normalized.
    #[serde(default)]
    pub normalize_depth: bool,
    pub warp: WarpParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub n_frames: usize,
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    pub prompt: String,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<MatrixRecipe>,
}

impl MatrixManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Decode { path: path.into(), detail: e.to_string() })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Warps the reference video into every camera of `traj`. Column 0 is the
/// input copied verbatim with all-known masks.
pub fn build_frame_matrix(
    rgb_seq: &[FrameBuffer],
    depth_seq: &DepthSequence,
    traj: &Trajectory,
    params: &WarpParams,
    prompt: &str,
) -> Result<FrameMatrix> {
    if !depth_seq.is_normalized() {
        return Err(Error::InvalidArgument("depth sequence must be normalized before warping".into()));
    }
    if traj.is_empty() || !traj.views[0].is_identity() {
        return Err(Error::InvalidArgument("trajectory view 0 must be the reference camera".into()));
    }
    let columns = traj
        .views
        .par_iter()
        .enumerate()
        .map(|(v, cam)| {
            if v == 0 {
                let masks = rgb_seq.iter().map(|f| DisocclusionMask::full(f.width(), f.height())).collect();
                Ok((rgb_seq.to_vec(), masks))
            } else {
                warp_video(rgb_seq, depth_seq.frames(), cam, params)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FrameMatrix::from_columns(columns, traj.clone(), prompt)
}
