//! Latent tensors, latent masks and the codec interface between pixel frames
//! and latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DisocclusionMask, FrameBuffer};

/// Channel-planar (C x h x w) float tensor for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(channels: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{h}x{w} latent needs {} values, got {}",
                channels * h * w,
                data.len()
            )));
        }
        Ok(Self { channels, h, w, data })
    }

    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self { channels, h, w, data: vec![0.0; channels * h * w] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn squared_distance(&self, other: &LatentTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum()
    }
}

/// Binary latent-resolution mask: 1 = known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LatentMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!("{h}x{w} latent mask, got {} values", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidData("latent mask values must be 0 or 1".into()));
        }
        Ok(Self { h, w, data })
    }

    pub fn full(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![1; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
    }
}

/// Min-pool over `down x down` blocks: a latent cell is known only if every
/// pixel it covers is known. Edge blocks cover whatever pixels remain.
pub fn downsample_mask(mask: &DisocclusionMask, down: usize) -> Result<LatentMask> {
    if down == 0 {
        return Err(Error::InvalidArgument("downsample factor must be at least 1".into()));
    }
    let (w, h) = mask.dims();
    let (lw, lh) = (w.div_ceil(down), h.div_ceil(down));
    let mut data = vec![1u8; lw * lh];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                data[(y / down) * lw + x / down] = 0;
            }
        }
    }
    LatentMask::new(lh, lw, data)
}

/// Encoder/decoder pair between pixel frames and latents.
pub trait LatentCodec: Send + Sync {
    /// Spatial downsampling factor.
    fn down(&self) -> usize;

    fn encode(&self, frames: &[&FrameBuffer]) -> Result<Vec<LatentTensor>>;

    /// Decodes to frames of `width x height`.
    fn decode(&self, latents: &[LatentTensor], width: usize, height: usize) -> Result<Vec<FrameBuffer>>;

    fn latent_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (height.div_ceil(self.down()), width.div_ceil(self.down()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    Identity,
    #[serde(rename = "avgpool8")]
    AvgPool8,
}

impl CodecKind {
    pub fn build(self) -> Box<dyn LatentCodec> {
        match self {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::AvgPool8 => Box::new(AvgPoolCodec::new(8)),
        }
    }
}

/// Reorders pixels into channel-planar latents; exact in both directions.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn down(&self) -> usize {
        1
    }

    fn encode(&self, frames: &[&FrameBuffer]) -> Result<Vec<LatentTensor>> {
        Ok(frames
            .iter()
            .map(|f| {
                let (w, h, c) = (f.width(), f.height(), f.channels());
                let mut data = vec![0f32; c * h * w];
                for (k, px) in f.data().chunks_exact(c).enumerate() {
                    for (ch, &v) in px.iter().enumerate() {
                        data[ch * h * w + k] = v;
                    }
                }
                LatentTensor { channels: c, h, w, data }
            })
            .collect())
    }

    fn decode(&self, latents: &[LatentTensor], width: usize, height: usize) -> Result<Vec<FrameBuffer>> {
        latents
            .iter()
            .map(|z| {
                if (z.w, z.h) != (width, height) {
                    return Err(Error::ShapeMismatch(format!(
                        "identity decode of {}x{} latent into {width}x{height}",
                        z.w, z.h
                    )));
                }
                let plane = z.h * z.w;
                let mut data = vec![0f32; plane * z.channels];
                for ch in 0..z.channels {
                    for k in 0..plane {
                        data[k * z.channels + ch] = z.data[ch * plane + k];
                    }
                }
                FrameBuffer::new(width, height, z.channels, data)
            })
            .collect()
    }
}

/// Average-pools `down x down` blocks per channel; decodes by replicating
/// each cell over its block. A stand-in for a VAE with the same footprint.
#[derive(Clone, Copy, Debug)]
pub struct AvgPoolCodec {
    down: usize,
}

impl AvgPoolCodec {
    pub fn new(down: usize) -> Self {
        assert!(down >= 1);
        Self { down }
    }
}

impl LatentCodec for AvgPoolCodec {
    fn down(&self) -> usize {
        self.down
    }

    fn encode(&self, frames: &[&FrameBuffer]) -> Result<Vec<LatentTensor>> {
        let d = self.down;
        Ok(frames
            .iter()
            .map(|f| {
                let (w, h, c) = (f.width(), f.height(), f.channels());
                let (lw, lh) = (w.div_ceil(d), h.div_ceil(d));
                let mut acc = vec![0f64; c * lh * lw];
                let mut count = vec![0u32; lh * lw];
                for y in 0..h {
                    for x in 0..w {
                        let cell = (y / d) * lw + x / d;
                        count[cell] += 1;
                        for (ch, &v) in f.pixel(x, y).iter().enumerate() {
                            acc[ch * lh * lw + cell] += v as f64;
                        }
                    }
                }
                let data = acc
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s / count[i % (lh * lw)] as f64) as f32)
                    .collect();
                LatentTensor { channels: c, h: lh, w: lw, data }
            })
            .collect())
    }

    fn decode(&self, latents: &[LatentTensor], width: usize, height: usize) -> Result<Vec<FrameBuffer>> {
        let d = self.down;
        let (lh, lw) = self.latent_dims(width, height);
        latents
            .iter()
            .map(|z| {
                if (z.h, z.w) != (lh, lw) {
                    return Err(Error::ShapeMismatch(format!(
                        "{}x{} latent cannot decode to {width}x{height} at down {d}",
                        z.w, z.h
                    )));
                }
                let c = z.channels;
                let mut data = vec![0f32; width * height * c];
                for y in 0..height {
                    for x in 0..width {
                        let cell = (y / d) * lw + x / d;
                        for ch in 0..c {
                            data[(y * width + x) * c + ch] = z.data[ch * lh * lw + cell];
                        }
                    }
                }
                FrameBuffer::new(width, height, c, data)
            })
            .collect()
    }
}
