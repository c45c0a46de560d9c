//! Latent diffusion inpainting over the frame matrix.

pub mod denoiser;
pub mod inpaint;
pub mod latent;
pub mod protocol;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use denoiser::{
    CallRecord, Capability, DenoiserEndpoint, OracleDenoiser, OracleVariance, PredictRequest, Prediction,
    RecordingDenoiser, SequenceLimit, SequenceOrigin,
};
pub use latent::{downsample_mask, AvgPoolCodec, CodecKind, IdentityCodec, LatentCodec, LatentMask, LatentTensor};
pub use schedule::{make_schedule, NoiseSchedule, Resample, ScheduleConfig, Scope};
pub use inpaint::{boundary_reinject, inpaint_frame_matrix, inpaint_sequence, InpaintOptions, InpaintReport};
pub use protocol::ExternalDenoiser;
