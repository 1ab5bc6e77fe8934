//! Noise schedule, forward noising, the conditioned noise predictor and the
//! reverse sampling loop.

pub mod denoiser;
pub mod sampler;
pub mod schedule;

pub use denoiser::{timestep_embedding, Denoiser, DenoiserConfig};
pub use sampler::{
    reverse_step, reverse_step_with, sample, sample_with, Conditioned, DiffusionState,
    NoisePredictor,
};
pub use schedule::{
    forward_noise, forward_noise_with, predict_x0, predict_x0_unclamped, NoiseSchedule,
    ScheduleConfig,
};

use crate::tensor::{Scalar, Tensor};

/// Maps `[0, 1]` pixel values to the diffusion range `[−1, 1]`.
pub fn to_signed<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let two = T::lit(2.0);
    x.map(|v| v * two - T::one())
}

/// Maps `[−1, 1]` back to `[0, 1]`.
pub fn to_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(0.5);
    x.map(|v| (v + T::one()) * half)
}
