//! Noise-prediction endpoints.

use std::sync::Mutex;

use super::latent::LatentTensor;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capability {
    /// One request at a time.
    Serialized,
    /// Requests for independent sequences may run concurrently.
    Concurrent,
}

/// Where a latent sequence sits in the frame matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SequenceOrigin {
    /// Time sequence of camera `v`.
    Column(usize),
    /// View sweep at time `s`.
    Row(usize),
    /// A standalone video outside any matrix.
    Single,
}

impl SequenceOrigin {
    pub(crate) fn axis_code(self) -> u8 {
        match self {
            SequenceOrigin::Column(_) => 0,
            SequenceOrigin::Row(_) => 1,
            SequenceOrigin::Single => 2,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            SequenceOrigin::Column(i) | SequenceOrigin::Row(i) => i,
            SequenceOrigin::Single => 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PredictRequest<'a> {
    pub latents: &'a [LatentTensor],
    pub cond: &'a str,
    pub t: usize,
    /// Informational; remote endpoints never see it.
    pub origin: SequenceOrigin,
}

/// Predicted noise and per-element variance, shaped like the request.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub eps: Vec<LatentTensor>,
    pub var: Vec<LatentTensor>,
}

impl Prediction {
    pub fn check(&self, latents: &[LatentTensor]) -> Result<()> {
        if self.eps.len() != latents.len() || self.var.len() != latents.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction for {} latents has {} eps / {} var tensors",
                latents.len(),
                self.eps.len(),
                self.var.len()
            )));
        }
        for ((z, e), v) in latents.iter().zip(&self.eps).zip(&self.var) {
            if !z.same_shape(e) || !z.same_shape(v) {
                return Err(Error::ShapeMismatch(format!(
                    "prediction shapes {:?}/{:?} for latent {:?}",
                    e.shape(),
                    v.shape(),
                    z.shape()
                )));
            }
            if v.data().iter().any(|&x| x.is_nan() || x < 0.0) {
                return Err(Error::InvalidData("predicted variance must be non-negative".into()));
            }
            if e.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidData("predicted noise must be finite".into()));
            }
        }
        Ok(())
    }
}

pub trait DenoiserEndpoint: Send + Sync {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction>;

    fn capability(&self) -> Capability {
        Capability::Serialized
    }

    /// Longest sequence the endpoint accepts, if bounded.
    fn max_sequence_len(&self) -> Option<usize> {
        None
    }
}

impl<T: DenoiserEndpoint + ?Sized> DenoiserEndpoint for Box<T> {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        (**self).predict(req)
    }

    fn capability(&self) -> Capability {
        (**self).capability()
    }

    fn max_sequence_len(&self) -> Option<usize> {
        (**self).max_sequence_len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleVariance {
    Zero,
    /// DDPM posterior variance of the jump out of `t`.
    Posterior,
}

#[derive(Clone, Debug)]
enum Targets {
    Sequence(Vec<LatentTensor>),
    Grid { n_views: usize, cells: Vec<LatentTensor> },
}

/// Test double that predicts the exact noise separating `z_t` from a known
/// clean latent: `eps = (z_t - sqrt(abar_t) * target) / sqrt(1 - abar_t)`.
/// Deterministic DDPM stepping with it lands on the target at `t = 0`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    targets: Targets,
    schedule: NoiseSchedule,
    variance: OracleVariance,
}

impl OracleDenoiser {
    /// Targets for a single sequence, matched by position.
    pub fn for_sequence(targets: Vec<LatentTensor>, schedule: NoiseSchedule) -> Self {
        Self { targets: Targets::Sequence(targets), schedule, variance: OracleVariance::Zero }
    }

    /// Targets for every matrix cell, row-major `(s, v)`.
    pub fn for_grid(n_views: usize, cells: Vec<LatentTensor>, schedule: NoiseSchedule) -> Self {
        assert!(n_views > 0 && cells.len().is_multiple_of(n_views));
        Self { targets: Targets::Grid { n_views, cells }, schedule, variance: OracleVariance::Zero }
    }

    pub fn with_variance(mut self, variance: OracleVariance) -> Self {
        self.variance = variance;
        self
    }

    fn targets_for(&self, origin: SequenceOrigin, len: usize) -> Result<Vec<&LatentTensor>> {
        match (&self.targets, origin) {
            (Targets::Sequence(seq), _) => Ok(seq.iter().collect()),
            (Targets::Grid { n_views, cells }, SequenceOrigin::Column(v)) => {
                let n_frames = cells.len() / n_views;
                if v >= *n_views {
                    return Err(Error::ShapeMismatch(format!("column {v} of {n_views}")));
                }
                Ok((0..n_frames).map(|s| &cells[s * n_views + v]).collect())
            }
            (Targets::Grid { n_views, cells }, SequenceOrigin::Row(s)) => {
                if (s + 1) * n_views > cells.len() {
                    return Err(Error::ShapeMismatch(format!("row {s} out of range")));
                }
                Ok(cells[s * n_views..(s + 1) * n_views].iter().collect())
            }
            (Targets::Grid { .. }, SequenceOrigin::Single) => {
                Err(Error::InvalidArgument(format!("grid oracle asked for a standalone {len}-sequence")))
            }
        }
    }
}

impl DenoiserEndpoint for OracleDenoiser {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let targets = self.targets_for(req.origin, req.latents.len())?;
        if targets.len() != req.latents.len() {
            return Err(Error::ShapeMismatch(format!(
                "oracle holds {} targets, request has {} latents",
                targets.len(),
                req.latents.len()
            )));
        }
        let ab = self.schedule.alpha_bar(req.t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let var_value = match self.variance {
            OracleVariance::Zero => 0.0,
            OracleVariance::Posterior => self.schedule.posterior_variance(req.t) as f32,
        };
        let mut eps = Vec::with_capacity(targets.len());
        let mut var = Vec::with_capacity(targets.len());
        for (z, x) in req.latents.iter().zip(targets) {
            if !z.same_shape(x) {
                return Err(Error::ShapeMismatch(format!(
                    "oracle target {:?} vs latent {:?}",
                    x.shape(),
                    z.shape()
                )));
            }
            let [c, h, w] = z.shape();
            let e = z
                .data()
                .iter()
                .zip(x.data())
                .map(|(&zt, &x0)| ((zt as f64 - sa * x0 as f64) / sn) as f32)
                .collect();
            eps.push(LatentTensor::new(c, h, w, e)?);
            var.push(LatentTensor::new(c, h, w, vec![var_value; c * h * w])?);
        }
        Ok(Prediction { eps, var })
    }

    fn capability(&self) -> Capability {
        Capability::Concurrent
    }
}

/// Caps the sequence length an endpoint admits.
pub struct SequenceLimit<E> {
    inner: E,
    limit: usize,
}

impl<E: DenoiserEndpoint> SequenceLimit<E> {
    pub fn new(inner: E, limit: usize) -> Self {
        Self { inner, limit }
    }
}

impl<E: DenoiserEndpoint> DenoiserEndpoint for SequenceLimit<E> {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        if req.latents.len() > self.limit {
            return Err(Error::SequenceTooLong { len: req.latents.len(), limit: self.limit });
        }
        self.inner.predict(req)
    }

    fn capability(&self) -> Capability {
        self.inner.capability()
    }

    fn max_sequence_len(&self) -> Option<usize> {
        Some(self.inner.max_sequence_len().map_or(self.limit, |l| l.min(self.limit)))
    }
}

/// One logged endpoint call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub t: usize,
    pub origin: SequenceOrigin,
    pub len: usize,
}

/// Wraps an endpoint and records every request in arrival order.
pub struct RecordingDenoiser<E> {
    inner: E,
    log: Mutex<Vec<CallRecord>>,
    capability: Capability,
}

impl<E: DenoiserEndpoint> RecordingDenoiser<E> {
    /// Records with the inner endpoint forced to serialized execution so the
    /// log order is deterministic.
    pub fn new(inner: E) -> Self {
        Self { inner, log: Mutex::new(Vec::new()), capability: Capability::Serialized }
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: DenoiserEndpoint> DenoiserEndpoint for RecordingDenoiser<E> {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        self.log.lock().unwrap().push(CallRecord { t: req.t, origin: req.origin, len: req.latents.len() });
        self.inner.predict(req)
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn max_sequence_len(&self) -> Option<usize> {
        self.inner.max_sequence_len()
    }
}
