use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Parameters of a linear β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 100,
            beta_start: 1e-4,
            // Ends near zero signal, so sampling can start from N(0, I).
            beta_end: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Per-timestep coefficients, indexed by `t ∈ 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` at `t = 1` to `beta_end` at `t = T`.
    // The negated comparisons also reject NaN bounds.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!(
                "timesteps must be at least 2, got {timesteps}"
            )));
        }
        if !(beta_start > 0.0) {
            return Err(Error::Config(format!(
                "beta_start must be > 0, got {beta_start}"
            )));
        }
        if !(beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta_end must be < 1, got {beta_end}"
            )));
        }
        if !(beta_start <= beta_end) {
            return Err(Error::Config(format!(
                "beta_start ({beta_start}) must not exceed beta_end ({beta_end})"
            )));
        }
        let span = (timesteps - 1) as f64;
        let beta: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let sigma = beta
            .iter()
            .enumerate()
            .map(|(i, b)| if i == 0 { 0.0 } else { b.sqrt() })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> usize {
        assert!(
            (1..=self.timesteps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.timesteps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[self.index(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[self.index(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[self.index(t)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[self.index(t)]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::SamplingComplete);
        }
        if t > self.timesteps() {
            return Err(Error::Config(format!(
                "timestep {t} exceeds schedule length {}",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

/// `sqrt(ᾱ)·x0 + sqrt(1 − ᾱ)·ε` for an explicit `ᾱ`.
pub fn forward_noise_with<T: Scalar>(
    x0: &Tensor<T>,
    alpha_bar: f64,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    let a = T::lit(alpha_bar.sqrt());
    let b = T::lit((1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

pub fn forward_noise<T: Scalar>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_timestep(t)?;
    forward_noise_with(x0, sched.alpha_bar(t), eps)
}

/// `(x_t − sqrt(1 − ᾱ)·ε̂) / sqrt(ᾱ)` without clamping.
pub fn predict_x0_unclamped<T: Scalar>(
    x_t: &Tensor<T>,
    alpha_bar: f64,
    eps_hat: &Tensor<T>,
) -> Result<Tensor<T>> {
    let inv = T::lit(1.0 / alpha_bar.sqrt());
    let b = T::lit((1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - b * e) * inv)
}

/// Clean-image estimate implied by a noise prediction, clamped to `[−1, 1]`.
pub fn predict_x0<T: Scalar>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_timestep(t)?;
    Ok(predict_x0_unclamped(x_t, sched.alpha_bar(t), eps_hat)?
        .map(|v| v.max(-T::one()).min(T::one())))
}
