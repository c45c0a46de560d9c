//! Masked DDPM inpainting of a single sequence and of a whole frame matrix,
//! alternating time sequences (columns) and view sequences (rows).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::denoiser::{Capability, DenoiserEndpoint, PredictRequest, SequenceOrigin};
use super::latent::{downsample_mask, LatentCodec, LatentMask, LatentTensor};
use super::rng::{NoiseKey, Purpose};
use super::sampler::{combine_masked, denoise_step, predict_x0, resample_noise, sample_known};
use super::schedule::{NoiseSchedule, Scope};
use crate::error::{Error, Result};
use crate::imaging::{DisocclusionMask, FrameBuffer};
use crate::matrix::FrameMatrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintOptions {
    pub seed: u64,
    /// Drop the predicted variance from every reverse step.
    pub deterministic: bool,
    /// Refresh the known latent from the current clean estimate once per
    /// visited step.
    pub reinject: bool,
}

impl Default for InpaintOptions {
    fn default() -> Self {
        Self { seed: 0, deterministic: false, reinject: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintReport {
    /// Denoise-and-combine repetitions, summed over visited steps.
    pub repetitions: usize,
    /// Sequence passes (endpoint calls made by the sampler).
    pub passes: usize,
    /// Endpoint calls made by boundary re-injection.
    pub reinjections: usize,
    /// Columns driven all the way to `t = 0`.
    pub completed_columns: Vec<usize>,
}

/// Replaces the known latent with the re-encoded composite of the warped
/// pixels (where known) and the decoded clean estimate from `z_t` (elsewhere).
#[allow(clippy::too_many_arguments)]
pub fn boundary_reinject(
    z_t: &[LatentTensor],
    x_warp: &[&FrameBuffer],
    masks: &[&DisocclusionMask],
    codec: &dyn LatentCodec,
    endpoint: &dyn DenoiserEndpoint,
    cond: &str,
    t: usize,
    sched: &NoiseSchedule,
    origin: SequenceOrigin,
) -> Result<Vec<LatentTensor>> {
    if z_t.len() != x_warp.len() || z_t.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "re-injection over {} latents, {} frames, {} masks",
            z_t.len(),
            x_warp.len(),
            masks.len()
        )));
    }
    let Some(first) = x_warp.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = first.dims();
    let pred = endpoint.predict(&PredictRequest { latents: z_t, cond, t, origin })?;
    pred.check(z_t)?;
    let ab = sched.alpha_bar(t);
    let x0: Vec<LatentTensor> = z_t.iter().zip(&pred.eps).map(|(z, e)| predict_x0(z, e, ab)).collect();
    let decoded = codec.decode(&x0, w, h)?;
    let mut composite = Vec::with_capacity(decoded.len());
    for ((mut est, warped), mask) in decoded.into_iter().zip(x_warp).zip(masks) {
        if est.dims() != warped.dims() || mask.dims() != warped.dims() || est.channels() != warped.channels() {
            return Err(Error::ShapeMismatch("re-injection frame, mask and estimate differ in size".into()));
        }
        let c = warped.channels();
        for (k, &known) in mask.data().iter().enumerate() {
            if known == 1 {
                est.data_mut()[k * c..(k + 1) * c].copy_from_slice(&warped.data()[k * c..(k + 1) * c]);
            }
        }
        composite.push(est);
    }
    let refs: Vec<&FrameBuffer> = composite.iter().collect();
    codec.encode(&refs)
}

struct Stepper<'a> {
    endpoint: &'a dyn DenoiserEndpoint,
    sched: &'a NoiseSchedule,
    cond: &'a str,
    opts: &'a InpaintOptions,
}

impl Stepper<'_> {
    /// One repetition over one sequence: known sample, reverse step, combine,
    /// and the optional re-noise back to level `t`.
    #[allow(clippy::too_many_arguments)]
    fn pass(
        &self,
        t: usize,
        prev: usize,
        rep: usize,
        renoise: bool,
        origin: SequenceOrigin,
        z: &[LatentTensor],
        known: &[&LatentTensor],
        masks: &[&LatentMask],
    ) -> Result<Vec<LatentTensor>> {
        let (ab_t, ab_prev) = (self.sched.alpha_bar(t), self.sched.alpha_bar(prev));
        let beta = 1.0 - ab_t / ab_prev;
        let (axis, seq) = (origin.axis_code(), origin.index());
        let key = |p: Purpose, i: usize| NoiseKey::new(self.opts.seed, p).at(t, rep).seq(axis, seq, i).stream();

        let pred = self.endpoint.predict(&PredictRequest { latents: z, cond: self.cond, t, origin })?;
        let unknown = denoise_step(z, &pred, beta, ab_t, self.opts.deterministic, |i| key(Purpose::Denoise, i))?;
        unknown
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let k = sample_known(known[i], ab_prev, &mut key(Purpose::Known, i));
                let c = combine_masked(&k, u, masks[i])?;
                Ok(if renoise { resample_noise(&c, beta, &mut key(Purpose::Renoise, i)) } else { c })
            })
            .collect()
    }
}

fn check_len(endpoint: &dyn DenoiserEndpoint, len: usize) -> Result<()> {
    match endpoint.max_sequence_len() {
        Some(limit) if len > limit => Err(Error::SequenceTooLong { len, limit }),
        _ => Ok(()),
    }
}

fn init_latent(seed: u64, shape: [usize; 3], axis: u8, seq: usize, cell: usize) -> LatentTensor {
    let [c, h, w] = shape;
    let data = NoiseKey::new(seed, Purpose::Init).seq(axis, seq, cell).stream().normals(c * h * w);
    LatentTensor::new(c, h, w, data).expect("shape product")
}

/// Inpaints one sequence; every visited step runs its full repetition count
/// regardless of scope.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_sequence(
    x_warp: &[&FrameBuffer],
    masks: &[&DisocclusionMask],
    cond: &str,
    codec: &dyn LatentCodec,
    endpoint: &dyn DenoiserEndpoint,
    sched: &NoiseSchedule,
    opts: &InpaintOptions,
) -> Result<(Vec<FrameBuffer>, InpaintReport)> {
    if x_warp.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!("{} frames with {} masks", x_warp.len(), masks.len())));
    }
    let Some(first) = x_warp.first() else {
        return Ok((Vec::new(), InpaintReport::default()));
    };
    check_len(endpoint, x_warp.len())?;
    let (w, h) = first.dims();
    let mut z0k = codec.encode(x_warp)?;
    let lmasks = masks.iter().map(|m| downsample_mask(m, codec.down())).collect::<Result<Vec<_>>>()?;
    let any_unknown = masks.iter().any(|m| !m.is_full());
    let origin = SequenceOrigin::Single;
    let mut z: Vec<LatentTensor> =
        z0k.iter().enumerate().map(|(i, k)| init_latent(opts.seed, k.shape(), origin.axis_code(), 0, i)).collect();

    let stepper = Stepper { endpoint, sched, cond, opts };
    let mut report = InpaintReport::default();
    for (t, prev, rs) in sched.steps() {
        if opts.reinject && any_unknown {
            z0k = boundary_reinject(&z, x_warp, masks, codec, endpoint, cond, t, sched, origin)?;
            report.reinjections += 1;
        }
        for rep in 1..=rs.count {
            let known: Vec<&LatentTensor> = z0k.iter().collect();
            let lm: Vec<&LatentMask> = lmasks.iter().collect();
            z = stepper.pass(t, prev, rep, rep < rs.count, origin, &z, &known, &lm)?;
            report.repetitions += 1;
            report.passes += 1;
        }
    }
    report.completed_columns.push(0);
    Ok((codec.decode(&z, w, h)?, report))
}

/// Runs the alternating column/row sampler over the matrix. Columns that
/// reach `t = 0` are decoded with full masks; fully known columns are
/// returned as their codec round trip; any other column is left as warped.
pub fn inpaint_frame_matrix(
    fm: &FrameMatrix,
    codec: &dyn LatentCodec,
    endpoint: &dyn DenoiserEndpoint,
    sched: &NoiseSchedule,
    opts: &InpaintOptions,
) -> Result<(FrameMatrix, InpaintReport)> {
    let (n_frames, n_views) = (fm.n_frames(), fm.n_views());
    let idx = |s: usize, v: usize| s * n_views + v;
    let right = n_views - 1;

    if !sched.step_plan().is_empty() {
        check_len(endpoint, n_frames)?;
        if sched.resample_plan().iter().any(|r| r.scope == Scope::AllViews && r.count >= 2) {
            check_len(endpoint, n_views)?;
        }
    }

    let mut z0k: Vec<LatentTensor> = vec![LatentTensor::zeros(0, 0, 0); n_frames * n_views];
    for v in 0..n_views {
        for (s, lat) in codec.encode(&fm.column(v))?.into_iter().enumerate() {
            z0k[idx(s, v)] = lat;
        }
    }
    let mut lmasks = Vec::with_capacity(n_frames * n_views);
    for s in 0..n_frames {
        for v in 0..n_views {
            lmasks.push(downsample_mask(fm.mask(s, v), codec.down())?);
        }
    }
    let mut z: Vec<LatentTensor> = (0..n_frames * n_views)
        .map(|i| init_latent(opts.seed, z0k[i].shape(), 0, i % n_views, i / n_views))
        .collect();
    let mut level = vec![usize::MAX; n_frames * n_views];

    let cond = fm.prompt();
    let stepper = Stepper { endpoint, sched, cond, opts };
    let concurrent = endpoint.capability() == Capability::Concurrent;
    let mut report = InpaintReport::default();
    let cells_of = |o: SequenceOrigin| -> Vec<usize> {
        match o {
            SequenceOrigin::Column(v) => (0..n_frames).map(|s| idx(s, v)).collect(),
            SequenceOrigin::Row(s) => (0..n_views).map(|v| idx(s, v)).collect(),
            SequenceOrigin::Single => unreachable!("matrix passes are rows or columns"),
        }
    };

    for (t, prev, rs) in sched.steps() {
        let scope_cols: Vec<usize> = match rs.scope {
            Scope::AllViews => (0..n_views).collect(),
            Scope::RightOnly => vec![right],
        };
        if opts.reinject {
            for &v in &scope_cols {
                if fm.column_unknown_count(v) == 0 {
                    continue;
                }
                let cells = cells_of(SequenceOrigin::Column(v));
                let zc: Vec<LatentTensor> = cells.iter().map(|&i| z[i].clone()).collect();
                let fresh = boundary_reinject(
                    &zc,
                    &fm.column(v),
                    &fm.column_masks(v),
                    codec,
                    endpoint,
                    cond,
                    t,
                    sched,
                    SequenceOrigin::Column(v),
                )?;
                for (&i, lat) in cells.iter().zip(fresh) {
                    z0k[i] = lat;
                }
                report.reinjections += 1;
            }
        }
        for rep in 1..=rs.count {
            let origins: Vec<SequenceOrigin> = match rs.scope {
                Scope::RightOnly => vec![SequenceOrigin::Column(right)],
                Scope::AllViews if rep % 2 == 1 => (0..n_views).map(SequenceOrigin::Column).collect(),
                Scope::AllViews => (0..n_frames).map(SequenceOrigin::Row).collect(),
            };
            let renoise = rep < rs.count;
            let run = |&o: &SequenceOrigin| -> Result<(Vec<usize>, Vec<LatentTensor>)> {
                let cells = cells_of(o);
                let zs: Vec<LatentTensor> = cells.iter().map(|&i| z[i].clone()).collect();
                let known: Vec<&LatentTensor> = cells.iter().map(|&i| &z0k[i]).collect();
                let lm: Vec<&LatentMask> = cells.iter().map(|&i| &lmasks[i]).collect();
                let out = stepper.pass(t, prev, rep, renoise, o, &zs, &known, &lm)?;
                Ok((cells, out))
            };
            let results: Vec<(Vec<usize>, Vec<LatentTensor>)> = if concurrent {
                origins.par_iter().map(run).collect::<Result<_>>()?
            } else {
                origins.iter().map(run).collect::<Result<_>>()?
            };
            report.passes += results.len();
            for (cells, out) in results {
                for (i, lat) in cells.into_iter().zip(out) {
                    z[i] = lat;
                    level[i] = if renoise { t } else { prev };
                }
            }
            report.repetitions += 1;
        }
    }

    let (w, h) = fm.dims();
    let mut out = fm.clone();
    for v in 0..n_views {
        let cells = cells_of(SequenceOrigin::Column(v));
        let source = if cells.iter().all(|&i| level[i] == 0) {
            report.completed_columns.push(v);
            &z
        } else if fm.column_unknown_count(v) == 0 {
            &z0k
        } else {
            continue;
        };
        let lat: Vec<LatentTensor> = cells.iter().map(|&i| source[i].clone()).collect();
        for (s, frame) in codec.decode(&lat, w, h)?.into_iter().enumerate() {
            out.set_cell(s, v, frame, DisocclusionMask::full(w, h));
        }
    }
    Ok((out, report))
}
