#![allow(dead_code)]

use std::fs;
use std::path::Path;

use stereogen::imaging::io::{write_depth_pfm, write_flo, write_frame_sequence};
use stereogen::imaging::{DepthMap, DisocclusionMask, FlowField, FrameBuffer};
use stereogen::matrix::FrameMatrix;

pub const FG_DEPTH: f32 = 1.0;
pub const BG_DEPTH: f32 = 10.0;

/// Smooth colour field in roughly [0.15, 0.85].
pub fn texture(seed: u64, x: f64, y: f64) -> [f32; 3] {
    let p = seed as f64 * 0.7311;
    let c = |k: f64| {
        let v = 0.5
            + 0.2 * ((x * (0.21 + 0.03 * k) + p * (1.0 + k)).sin())
            + 0.15 * ((y * (0.17 + 0.02 * k) - p * 0.5 * k).cos());
        v as f32
    };
    [c(0.0), c(1.0), c(2.0)]
}

#[derive(Clone, Copy, Debug)]
pub struct Layered {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    /// Foreground rectangle `[x0, x1) x [y0, y1)` in frame 0.
    pub rect: (usize, usize, usize, usize),
    /// Foreground motion in pixels per frame.
    pub motion: usize,
    pub seed: u64,
}

impl Layered {
    pub fn small(seed: u64) -> Self {
        Self { width: 32, height: 24, n_frames: 4, rect: (10, 18, 6, 16), motion: 1, seed }
    }

    fn in_fg(&self, s: usize, x: usize, y: usize) -> bool {
        let (x0, x1, y0, y1) = self.rect;
        let shift = s * self.motion;
        x >= x0 + shift && x < x1 + shift && y >= y0 && y < y1
    }

    pub fn background(&self, x: f64, y: f64) -> [f32; 3] {
        texture(self.seed, x, y)
    }

    pub fn frames(&self) -> Vec<FrameBuffer> {
        (0..self.n_frames)
            .map(|s| {
                let mut f = FrameBuffer::zeros(self.width, self.height, 3);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let v = if self.in_fg(s, x, y) {
                            let xs = (x - s * self.motion) as f64;
                            texture(self.seed + 101, xs, y as f64)
                        } else {
                            self.background(x as f64, y as f64)
                        };
                        f.pixel_mut(x, y).copy_from_slice(&v);
                    }
                }
                f
            })
            .collect()
    }

    pub fn depth(&self) -> Vec<DepthMap> {
        (0..self.n_frames)
            .map(|s| {
                let data = (0..self.width * self.height)
                    .map(|k| if self.in_fg(s, k % self.width, k / self.width) { FG_DEPTH } else { BG_DEPTH })
                    .collect();
                DepthMap::new(self.width, self.height, data).unwrap()
            })
            .collect()
    }

    /// Forward flows (frame i to i+1) and backward flows (i+1 to i).
    pub fn flows(&self) -> (Vec<FlowField>, Vec<FlowField>) {
        let (w, h) = (self.width, self.height);
        let m = self.motion as f32;
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for s in 0..self.n_frames.saturating_sub(1) {
            let mut uf = vec![0.0; w * h];
            let mut ub = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    if self.in_fg(s, x, y) {
                        uf[y * w + x] = m;
                    }
                    if self.in_fg(s + 1, x, y) {
                        ub[y * w + x] = -m;
                    }
                }
            }
            fwd.push(FlowField::new(w, h, uf, vec![0.0; w * h]).unwrap());
            bwd.push(FlowField::new(w, h, ub, vec![0.0; w * h]).unwrap());
        }
        (fwd, bwd)
    }

    /// Writes `frames/f###.png`, `depth/d###.pfm`, `flow_fwd/f###.flo` and
    /// `flow_bwd/f###.flo` under `dir`.
    pub fn write(&self, dir: &Path) {
        write_frame_sequence(dir.join("frames"), "f###.png", &self.frames()).unwrap();
        fs::create_dir_all(dir.join("depth")).unwrap();
        for (i, d) in self.depth().iter().enumerate() {
            write_depth_pfm(dir.join("depth").join(format!("d{i:03}.pfm")), d).unwrap();
        }
        let (fwd, bwd) = self.flows();
        for (name, flows) in [("flow_fwd", fwd), ("flow_bwd", bwd)] {
            fs::create_dir_all(dir.join(name)).unwrap();
            for (i, f) in flows.iter().enumerate() {
                write_flo(dir.join(name).join(format!("f{i:03}.flo")), f).unwrap();
            }
        }
    }

    /// Ground-truth matrix: every disoccluded pixel shows the background the
    /// camera would see there, `background(x + f b / z_bg, y)`.
    pub fn truth_matrix(&self, fm: &FrameMatrix) -> FrameMatrix {
        let mut out = fm.clone();
        for v in 0..fm.n_views() {
            let cam = fm.trajectory().views[v];
            let dx = cam.focal_px * cam.baseline_offset / BG_DEPTH as f64;
            let dy = cam.focal_px * cam.vertical_offset / BG_DEPTH as f64;
            for s in 0..fm.n_frames() {
                let mut f = fm.frame(s, v).clone();
                let m = fm.mask(s, v);
                for y in 0..self.height {
                    for x in 0..self.width {
                        if !m.get(x, y) {
                            let c = self.background(x as f64 + dx, y as f64 + dy);
                            f.pixel_mut(x, y).copy_from_slice(&c);
                        }
                    }
                }
                out.set_cell(s, v, f, DisocclusionMask::full(self.width, self.height));
            }
        }
        out
    }
}

/// Relative L2 error between two equally long slices.
pub fn rel_err(got: &[f32], want: &[f32]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    let den: f64 = want.iter().map(|b| (*b as f64).powi(2)).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Values of `frame` at the pixels `mask` marks unknown.
pub fn hole_values(frame: &FrameBuffer, mask: &DisocclusionMask) -> Vec<f32> {
    let c = frame.channels();
    mask.data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0)
        .flat_map(|(k, _)| frame.data()[k * c..(k + 1) * c].to_vec())
        .collect()
}

/// Every file under `dir` as (relative path, bytes), sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
