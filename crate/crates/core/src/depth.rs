//! Depth preparation: global range normalization and flow-aligned temporal
//! Gaussian smoothing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, FlowField};

pub const DEFAULT_DEPTH_LO: f32 = 1.0;
pub const DEFAULT_DEPTH_HI: f32 = 10.0;

/// Forward-backward round-trip error (pixels) above which a flow-followed
/// neighbour sample is discarded.
pub const FLOW_CONSISTENCY_PX: f32 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthSequence {
    frames: Vec<DepthMap>,
    normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizeStatus {
    Ok,
    /// The input was (numerically) constant; every sample was mapped to `lo`.
    DegenerateRange,
}

impl DepthSequence {
    pub fn new(frames: Vec<DepthMap>) -> Result<Self> {
        check_same_dims(&frames)?;
        Ok(Self { frames, normalized: false })
    }

    /// Wraps frames that are already in the working range, e.g. loaded from a
    /// previous `smooth-depth` run. Every sample must lie in `[lo, hi]`.
    pub fn from_normalized(frames: Vec<DepthMap>, lo: f32, hi: f32) -> Result<Self> {
        check_same_dims(&frames)?;
        let tol = 1e-4;
        for f in &frames {
            if let Some(&v) = f.data().iter().find(|&&v| v < lo - tol || v > hi + tol) {
                return Err(Error::UnnormalizedDepth { value: v, lo, hi });
            }
        }
        Ok(Self { frames, normalized: true })
    }

    pub fn frames(&self) -> &[DepthMap] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<DepthMap> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(DepthMap::dims)
    }

    /// Global (min, max) over every frame.
    pub fn range(&self) -> Option<(f32, f32)> {
        let mut it = self.frames.iter().flat_map(|f| f.data().iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

fn check_same_dims(frames: &[DepthMap]) -> Result<()> {
    if let Some(first) = frames.first() {
        for (i, f) in frames.iter().enumerate().skip(1) {
            if f.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    expected: first.dims(),
                    found: f.dims(),
                    context: format!("depth frame {i}"),
                });
            }
        }
    }
    Ok(())
}

/// Affine map of the sequence-global range onto `[lo, hi]`.
pub fn normalize_depth(seq: &DepthSequence, lo: f32, hi: f32) -> Result<(DepthSequence, NormalizeStatus)> {
    if seq.normalized {
        return Err(Error::InvalidArgument("depth sequence is already normalized".into()));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("depth range ({lo}, {hi})")));
    }
    let Some((min, max)) = seq.range() else {
        return Err(Error::InvalidArgument("empty depth sequence".into()));
    };
    let span = max as f64 - min as f64;
    let status = if span < 1e-12 { NormalizeStatus::DegenerateRange } else { NormalizeStatus::Ok };
    let (lo64, hi64, min64) = (lo as f64, hi as f64, min as f64);
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let data = f
                .data()
                .iter()
                .map(|&d| match status {
                    NormalizeStatus::DegenerateRange => lo,
                    NormalizeStatus::Ok => (lo64 + (hi64 - lo64) * (d as f64 - min64) / span) as f32,
                })
                .collect();
            DepthMap::new(f.width(), f.height(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    if status == NormalizeStatus::DegenerateRange {
        log::warn!("depth sequence is constant; mapped to {lo}");
    }
    Ok((DepthSequence { frames, normalized: true }, status))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothParams {
    /// Odd temporal window length (1 = identity).
    pub window: usize,
    pub sigma: f32,
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self { window: 5, sigma: 1.0 }
    }
}

/// Flow-aligned temporal Gaussian smoothing.
///
/// `flows_fwd[i]` maps frame `i` to `i + 1`, `flows_bwd[i]` maps `i + 1` back
/// to `i`. For each pixel the chain of flows is followed outwards from the
/// centre frame; a chain stops at the first sample that leaves the image or
/// fails the forward-backward consistency check. The output is the Gaussian
/// weighted mean of the surviving samples.
pub fn smooth_depth(
    seq: &DepthSequence,
    flows_fwd: &[FlowField],
    flows_bwd: &[FlowField],
    params: SmoothParams,
) -> Result<DepthSequence> {
    let SmoothParams { window, sigma } = params;
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("smoothing window {window} must be odd")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing sigma {sigma}")));
    }
    let n = seq.len();
    let Some(dims) = seq.dims() else {
        return Ok(seq.clone());
    };
    if window == 1 || n == 1 {
        return Ok(seq.clone());
    }
    let pairs = n - 1;
    if flows_fwd.len() != pairs || flows_bwd.len() != pairs {
        return Err(Error::InvalidArgument(format!(
            "{n} depth frames need {pairs} forward and backward flows, got {} and {}",
            flows_fwd.len(),
            flows_bwd.len()
        )));
    }
    for (i, f) in flows_fwd.iter().chain(flows_bwd).enumerate() {
        if f.dims() != dims {
            return Err(Error::FlowDimensionMismatch { index: i % pairs, expected: dims, found: f.dims() });
        }
    }

    let half = window / 2;
    let weights: Vec<f64> = (0..=half)
        .map(|k| (-((k * k) as f64) / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let (w, _) = dims;
    let frames = &seq.frames;

    let out = (0..n)
        .map(|j| {
            let mut data = vec![0f32; frames[j].data().len()];
            data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                for (x, out) in row.iter_mut().enumerate() {
                    let centre = frames[j].at(x, y);
                    let mut acc = weights[0] * centre as f64;
                    let mut wsum = weights[0];
                    let origin = (x as f32, y as f32);
                    // forward in time
                    let mut pos = origin;
                    for k in 1..=half.min(n - 1 - j) {
                        let i = j + k - 1;
                        match follow(pos, &flows_fwd[i], &flows_bwd[i], &frames[j + k]) {
                            Some((next, d)) => {
                                acc += weights[k] * d as f64;
                                wsum += weights[k];
                                pos = next;
                            }
                            None => break,
                        }
                    }
                    // backward in time
                    let mut pos = origin;
                    for k in 1..=half.min(j) {
                        let i = j - k;
                        match follow(pos, &flows_bwd[i], &flows_fwd[i], &frames[j - k]) {
                            Some((next, d)) => {
                                acc += weights[k] * d as f64;
                                wsum += weights[k];
                                pos = next;
                            }
                            None => break,
                        }
                    }
                    *out = (acc / wsum) as f32;
                }
            });
            DepthMap::new(dims.0, dims.1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DepthSequence { frames: out, normalized: seq.normalized })
}

/// One link of a flow chain: displaces `pos` by `there`, verifies that `back`
/// returns within tolerance, and samples the destination depth.
fn follow(
    pos: (f32, f32),
    there: &FlowField,
    back: &FlowField,
    depth: &DepthMap,
) -> Option<((f32, f32), f32)> {
    let (du, dv) = there.sample(pos.0, pos.1)?;
    let next = (pos.0 + du, pos.1 + dv);
    let (bu, bv) = back.sample(next.0, next.1)?;
    let err = ((next.0 + bu - pos.0).powi(2) + (next.1 + bv - pos.1).powi(2)).sqrt();
    if err >= FLOW_CONSISTENCY_PX {
        return None;
    }
    let d = depth.sample_bilinear(next.0, next.1)?;
    Some((next, d))
}
