//! Per-step sampling primitives: noising the known latent, the DDPM reverse
//! step, masked combination and the resampling re-noise.

use super::denoiser::Prediction;
use super::latent::{LatentMask, LatentTensor};
use super::rng::NoiseStream;
use crate::error::{Error, Result};

/// Draws from `N(sqrt(abar) * z0, (1 - abar) I)`.
pub fn sample_known(z0: &LatentTensor, alpha_bar: f64, noise: &mut NoiseStream) -> LatentTensor {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt());
    affine_noise(z0, a, b, noise)
}

/// Draws from `N(sqrt(1 - beta) * z, beta I)`: one forward step back up the
/// chain between resampling repetitions.
pub fn resample_noise(z: &LatentTensor, beta: f64, noise: &mut NoiseStream) -> LatentTensor {
    affine_noise(z, (1.0 - beta).sqrt(), beta.sqrt(), noise)
}

fn affine_noise(z: &LatentTensor, a: f64, b: f64, noise: &mut NoiseStream) -> LatentTensor {
    let mut out = z.clone();
    for v in out.data_mut() {
        let e = noise.normal() as f64;
        *v = (a * *v as f64 + b * e) as f32;
    }
    out
}

/// DDPM posterior mean `(z_t - beta / sqrt(1 - abar_t) * eps) / sqrt(1 - beta)`.
pub fn ddpm_mean(z_t: &LatentTensor, eps: &LatentTensor, beta: f64, alpha_bar_t: f64) -> LatentTensor {
    let k = beta / (1.0 - alpha_bar_t).sqrt();
    let inv = 1.0 / (1.0 - beta).sqrt();
    let mut out = z_t.clone();
    for (v, &e) in out.data_mut().iter_mut().zip(eps.data()) {
        *v = ((*v as f64 - k * e as f64) * inv) as f32;
    }
    out
}

/// Reverse step for a whole sequence given the endpoint's prediction. Adds
/// `sqrt(var) * N(0, 1)` unless `deterministic`; `noise(i)` supplies the
/// stream for latent `i`.
pub fn denoise_step(
    z_t: &[LatentTensor],
    pred: &Prediction,
    beta: f64,
    alpha_bar_t: f64,
    deterministic: bool,
    mut noise: impl FnMut(usize) -> NoiseStream,
) -> Result<Vec<LatentTensor>> {
    pred.check(z_t)?;
    Ok(z_t
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut mean = ddpm_mean(z, &pred.eps[i], beta, alpha_bar_t);
            let var = pred.var[i].data();
            if !deterministic && var.iter().any(|&v| v > 0.0) {
                let mut stream = noise(i);
                for (m, &v) in mean.data_mut().iter_mut().zip(var) {
                    let e = stream.normal() as f64;
                    *m = (*m as f64 + (v as f64).sqrt() * e) as f32;
                }
            }
            mean
        })
        .collect())
}

/// `m * known + (1 - m) * unknown` with the mask broadcast over channels.
/// Known lanes are copied bit-exactly.
pub fn combine_masked(known: &LatentTensor, unknown: &LatentTensor, m: &LatentMask) -> Result<LatentTensor> {
    if !known.same_shape(unknown) || (known.height(), known.width()) != (m.height(), m.width()) {
        return Err(Error::ShapeMismatch(format!(
            "combine {:?} / {:?} with {}x{} mask",
            known.shape(),
            unknown.shape(),
            m.height(),
            m.width()
        )));
    }
    let plane = m.data().len();
    let mut out = unknown.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if m.data()[i % plane] == 1 {
            *v = known.data()[i];
        }
    }
    Ok(out)
}

/// Clean-latent estimate `(z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)`.
pub fn predict_x0(z_t: &LatentTensor, eps: &LatentTensor, alpha_bar_t: f64) -> LatentTensor {
    let (sa, sn) = (alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt());
    let mut out = z_t.clone();
    for (v, &e) in out.data_mut().iter_mut().zip(eps.data()) {
        *v = ((*v as f64 - sn * e as f64) / sa) as f32;
    }
    out
}
