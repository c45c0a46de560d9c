//! Forward warping of RGB-D frames into a translated camera through a
//! multi-plane image stack.
//!
//! Each source pixel is splatted (rounded to the nearest target pixel) into
//! one of `N` depth planes. Each plane is then cleaned independently:
//! isolated splats are dropped and thin cracks are filled from their
//! neighbours. The planes are finally composited back to front, so the
//! nearest plane covering a pixel wins. Pixels no plane covers are
//! disoccluded and come out black with mask 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth::{DEFAULT_DEPTH_HI, DEFAULT_DEPTH_LO};
use crate::error::{Error, Result};
use crate::imaging::{DepthMap, DisocclusionMask, FrameBuffer};

pub const DEFAULT_BASELINE: f64 = 0.08;
pub const DEFAULT_MAX_BASELINE: f64 = 0.20;
pub const DEFAULT_PLANES: usize = 4;

/// Normalized 3x3 box kernel.
pub const BOX_KERNEL: [f64; 9] = [1.0 / 9.0; 9];
/// Normalized 3x3 binomial Gaussian, `[1 2 1; 2 4 2; 1 2 1] / 16`.
pub const GAUSSIAN_KERNEL: [f64; 9] = [
    1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
    2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0,
    1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
];

/// Translation of the target camera relative to the reference camera.
/// Orientation is unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraOffset {
    /// Metres along the stereo baseline, positive = rightward.
    pub baseline_offset: f64,
    /// Metres along the image y axis, positive = downward. Zero for stereo pairs.
    #[serde(default)]
    pub vertical_offset: f64,
    pub focal_px: f64,
}

impl CameraOffset {
    pub fn horizontal(baseline_offset: f64, focal_px: f64) -> Self {
        Self { baseline_offset, vertical_offset: 0.0, focal_px }
    }

    pub fn validate(&self, max_baseline: f64) -> Result<()> {
        let reach = self.baseline_offset.hypot(self.vertical_offset);
        if !reach.is_finite() || reach > max_baseline {
            return Err(Error::BaselineOutOfRange { offset: reach, max: max_baseline });
        }
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::InvalidArgument(format!("focal length {} px", self.focal_px)));
        }
        Ok(())
    }

    /// Image-space shift `(dx, dy)` of a point at `depth`.
    #[inline]
    pub fn disparity(&self, depth: f64) -> (f64, f64) {
        (self.focal_px * self.baseline_offset / depth, self.focal_px * self.vertical_offset / depth)
    }

    pub fn is_identity(&self) -> bool {
        self.baseline_offset == 0.0 && self.vertical_offset == 0.0
    }
}

/// Tunables for the warp and its cleanup passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpParams {
    pub n_planes: usize,
    pub depth_lo: f32,
    pub depth_hi: f32,
    pub isolation_threshold: f64,
    pub crack_threshold: f64,
    pub isolation_kernel: [f64; 9],
    pub crack_kernel: [f64; 9],
}

impl Default for WarpParams {
    fn default() -> Self {
        Self {
            n_planes: DEFAULT_PLANES,
            depth_lo: DEFAULT_DEPTH_LO,
            depth_hi: DEFAULT_DEPTH_HI,
            isolation_threshold: 0.5,
            crack_threshold: 0.2,
            isolation_kernel: BOX_KERNEL,
            crack_kernel: GAUSSIAN_KERNEL,
        }
    }
}

/// Splits `[lo, hi]` into `n` planes spaced uniformly in inverse depth.
/// Plane 0 is the nearest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanePartition {
    lo: f64,
    hi: f64,
    n: usize,
}

impl PlanePartition {
    pub fn new(lo: f32, hi: f32, n: usize) -> Result<Self> {
        if n == 0 || !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidArgument(format!("plane partition [{lo}, {hi}] x {n}")));
        }
        Ok(Self { lo: lo as f64, hi: hi as f64, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn inv_step(&self) -> f64 {
        (1.0 / self.lo - 1.0 / self.hi) / self.n as f64
    }

    /// `[near, far)` of plane `i`; the last plane is closed at `hi`.
    pub fn range(&self, i: usize) -> (f64, f64) {
        let near = if i == 0 { self.lo } else { 1.0 / (1.0 / self.lo - i as f64 * self.inv_step()) };
        let far =
            if i + 1 == self.n { self.hi } else { 1.0 / (1.0 / self.lo - (i + 1) as f64 * self.inv_step()) };
        (near, far)
    }

    pub fn plane_of(&self, depth: f64) -> usize {
        let t = (1.0 / self.lo - 1.0 / depth) / self.inv_step();
        (t.floor().max(0.0) as usize).min(self.n - 1)
    }
}

/// One layer of a [`MultiPlaneStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub image: FrameBuffer,
    pub mask: DisocclusionMask,
    /// Per-pixel depth of the splat that owns the pixel; `INFINITY` when empty.
    pub zbuf: Vec<f32>,
    pub near: f64,
    pub far: f64,
}

impl Plane {
    pub fn empty(width: usize, height: usize, channels: usize, near: f64, far: f64) -> Self {
        Self {
            image: FrameBuffer::zeros(width, height, channels),
            mask: DisocclusionMask::empty(width, height),
            zbuf: vec![f32::INFINITY; width * height],
            near,
            far,
        }
    }

    fn clear(&mut self, x: usize, y: usize) {
        self.image.pixel_mut(x, y).fill(0.0);
        self.mask.set(x, y, false);
        self.zbuf[y * self.image.width() + x] = f32::INFINITY;
    }
}

/// Depth-ordered image layers, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPlaneStack {
    planes: Vec<Plane>,
}

impl MultiPlaneStack {
    /// Planes must be non-empty, share dimensions and be ordered near to far
    /// with contiguous depth ranges.
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::InvalidArgument("empty plane stack".into()))?;
        let dims = first.image.dims();
        for (i, p) in planes.iter().enumerate() {
            if p.image.dims() != dims || p.mask.dims() != dims || p.zbuf.len() != dims.0 * dims.1 {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: p.image.dims(),
                    context: format!("plane {i}"),
                });
            }
            if i > 0 && (planes[i - 1].far - p.near).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("plane {i} range is not contiguous")));
            }
        }
        Ok(Self { planes })
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].image.dims()
    }
}

/// Forward-splats `rgb` into the target camera, one plane per depth band.
/// Within a plane the nearest splat wins.
pub fn splat_to_planes(
    rgb: &FrameBuffer,
    depth: &DepthMap,
    cam: &CameraOffset,
    params: &WarpParams,
) -> Result<MultiPlaneStack> {
    if rgb.dims() != depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: rgb.dims(),
            found: depth.dims(),
            context: "depth vs frame".into(),
        });
    }
    let tol = 1e-4;
    if let Some(&v) = depth
        .data()
        .iter()
        .find(|&&v| !(v >= params.depth_lo - tol && v <= params.depth_hi + tol))
    {
        return Err(Error::UnnormalizedDepth { value: v, lo: params.depth_lo, hi: params.depth_hi });
    }
    let partition = PlanePartition::new(params.depth_lo, params.depth_hi, params.n_planes)?;
    let (w, h) = rgb.dims();
    let c = rgb.channels();
    let mut planes: Vec<Plane> = (0..partition.len())
        .map(|i| {
            let (near, far) = partition.range(i);
            Plane::empty(w, h, c, near, far)
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let d = depth.at(x, y);
            let (dx, dy) = cam.disparity(d as f64);
            let tx = (x as f64 - dx).round();
            let ty = (y as f64 - dy).round();
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                continue;
            }
            let (tx, ty) = (tx as usize, ty as usize);
            let plane = &mut planes[partition.plane_of(d as f64)];
            let k = ty * w + tx;
            if d < plane.zbuf[k] {
                plane.zbuf[k] = d;
                plane.mask.set(tx, ty, true);
                plane.image.pixel_mut(tx, ty).copy_from_slice(rgb.pixel(x, y));
            }
        }
    }
    Ok(MultiPlaneStack { planes })
}

/// 3x3 correlation of a binary mask with zero padding.
pub fn convolve_mask(mask: &DisocclusionMask, kernel: &[f64; 9]) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (sx, sy) = (x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                    if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h && mask.get(sx as usize, sy as usize)
                    {
                        acc += kernel[ky * 3 + kx];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Clears every set pixel whose kernel-weighted neighbourhood coverage is
/// below `params.isolation_threshold`.
pub fn remove_isolated(stack: &MultiPlaneStack, params: &WarpParams) -> MultiPlaneStack {
    let planes = stack
        .planes
        .iter()
        .map(|p| {
            let cover = convolve_mask(&p.mask, &params.isolation_kernel);
            let mut out = p.clone();
            let w = p.mask.width();
            for (k, &v) in cover.iter().enumerate() {
                if p.mask.data()[k] != 0 && v < params.isolation_threshold {
                    out.clear(k % w, k / w);
                }
            }
            out
        })
        .collect();
    MultiPlaneStack { planes }
}

/// Fills unset pixels whose kernel-weighted coverage exceeds
/// `params.crack_threshold`, interpolating colour (and depth) from the set
/// neighbours with the same kernel weights. All cracks are detected on the
/// input mask, so filled pixels do not seed further fills.
pub fn fill_cracks(stack: &MultiPlaneStack, params: &WarpParams) -> MultiPlaneStack {
    let kernel = &params.crack_kernel;
    let planes = stack
        .planes
        .iter()
        .map(|p| {
            let cover = convolve_mask(&p.mask, kernel);
            let (w, h) = p.mask.dims();
            let c = p.image.channels();
            let mut out = p.clone();
            let mut colour = [0f64; 3];
            for y in 0..h {
                for x in 0..w {
                    let k = y * w + x;
                    if p.mask.data()[k] != 0 || cover[k] <= params.crack_threshold {
                        continue;
                    }
                    colour[..c].fill(0.0);
                    let mut z = 0.0;
                    let mut wsum = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sx, sy) = (x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                            if sx < 0 || sy < 0 || sx as usize >= w || sy as usize >= h {
                                continue;
                            }
                            let (sx, sy) = (sx as usize, sy as usize);
                            if !p.mask.get(sx, sy) {
                                continue;
                            }
                            let wt = kernel[ky * 3 + kx];
                            for (acc, &v) in colour.iter_mut().zip(p.image.pixel(sx, sy)) {
                                *acc += wt * v as f64;
                            }
                            z += wt * p.zbuf[sy * w + sx] as f64;
                            wsum += wt;
                        }
                    }
                    if wsum <= 0.0 {
                        continue;
                    }
                    for (dst, acc) in out.image.pixel_mut(x, y).iter_mut().zip(&colour) {
                        *dst = (acc / wsum) as f32;
                    }
                    out.zbuf[k] = (z / wsum) as f32;
                    out.mask.set(x, y, true);
                }
            }
            out
        })
        .collect();
    MultiPlaneStack { planes }
}

/// Back-to-front composite: `I = I * (1 - M_i) + I_i * M_i` for the farthest
/// plane first. Returns the blended image and the union of plane masks;
/// uncovered pixels are black.
pub fn blend_planes(stack: &MultiPlaneStack) -> (FrameBuffer, DisocclusionMask) {
    let first = &stack.planes[0];
    let (w, h) = first.image.dims();
    let c = first.image.channels();
    let mut img = FrameBuffer::zeros(w, h, c);
    let mut mask = DisocclusionMask::empty(w, h);
    for plane in stack.planes.iter().rev() {
        for (k, &m) in plane.mask.data().iter().enumerate() {
            let m = m as f32;
            let dst = &mut img.data_mut()[k * c..(k + 1) * c];
            let src = &plane.image.data()[k * c..(k + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d * (1.0 - m) + s * m;
            }
            if m != 0.0 {
                mask.set(k % w, k / w, true);
            }
        }
    }
    (img, mask)
}

/// Splat and blend only, without the cleanup passes.
pub fn project_frame(
    rgb: &FrameBuffer,
    depth: &DepthMap,
    cam: &CameraOffset,
    params: &WarpParams,
) -> Result<(FrameBuffer, DisocclusionMask)> {
    Ok(blend_planes(&splat_to_planes(rgb, depth, cam, params)?))
}

/// Full per-frame warp: splat, remove isolated points, fill cracks, blend.
///
/// The reference camera itself is returned unchanged with a full mask; the
/// cleanup passes would otherwise erode image corners and plane boundaries
/// of an exact identity warp.
pub fn warp_frame(
    rgb: &FrameBuffer,
    depth: &DepthMap,
    cam: &CameraOffset,
    params: &WarpParams,
) -> Result<(FrameBuffer, DisocclusionMask)> {
    if cam.is_identity() {
        let stack = splat_to_planes(rgb, depth, cam, params)?;
        return Ok(blend_planes(&stack));
    }
    let stack = splat_to_planes(rgb, depth, cam, params)?;
    let stack = remove_isolated(&stack, params);
    let stack = fill_cracks(&stack, params);
    Ok(blend_planes(&stack))
}

pub fn warp_video(
    rgb_seq: &[FrameBuffer],
    depth_seq: &[DepthMap],
    cam: &CameraOffset,
    params: &WarpParams,
) -> Result<(Vec<FrameBuffer>, Vec<DisocclusionMask>)> {
    if rgb_seq.len() != depth_seq.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but {} depth maps",
            rgb_seq.len(),
            depth_seq.len()
        )));
    }
    let warped = rgb_seq
        .par_iter()
        .zip(depth_seq.par_iter())
        .map(|(rgb, depth)| warp_frame(rgb, depth, cam, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(warped.into_iter().unzip())
}
