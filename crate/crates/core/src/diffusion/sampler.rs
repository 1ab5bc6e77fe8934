use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::Denoiser;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Anything that predicts the noise in `x_t` at timestep `t`.
pub trait NoisePredictor<T: Scalar> {
    fn predict(&self, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

/// A denoiser with its structure prior and text embedding fixed.
pub struct Conditioned<'a, T: Scalar> {
    pub denoiser: &'a Denoiser<T>,
    pub prior: &'a Tensor<T>,
    pub text: &'a [T],
}

impl<T: Scalar> NoisePredictor<T> for Conditioned<'_, T> {
    fn predict(&self, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self.denoiser.denoise(x_t, t, self.prior, self.text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState<T = f32> {
    pub x: Tensor<T>,
    pub t: usize,
}

/// `(1/sqrt α)(x_t − ((1 − α)/sqrt(1 − ᾱ))·ε̂) + σ·z` for explicit coefficients.
pub fn reverse_step_with<T: Scalar>(
    x_t: &Tensor<T>,
    alpha: f64,
    alpha_bar: f64,
    sigma: f64,
    eps_hat: &Tensor<T>,
    z: &Tensor<T>,
) -> Result<Tensor<T>> {
    let inv = T::lit(1.0 / alpha.sqrt());
    let k = T::lit((1.0 - alpha) / (1.0 - alpha_bar).sqrt());
    let sig = T::lit(sigma);
    let mean = x_t.zip_map(eps_hat, |x, e| inv * (x - k * e))?;
    mean.zip_map(z, |m, n| m + sig * n)
}

/// One reverse step from `state.t` to `state.t − 1`.
pub fn reverse_step<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    state: &DiffusionState<T>,
    predictor: &P,
    sched: &NoiseSchedule,
    z: &Tensor<T>,
) -> Result<DiffusionState<T>> {
    sched.check_timestep(state.t)?;
    let t = state.t;
    let eps_hat = predictor.predict(&state.x, t)?;
    if !eps_hat.is_finite() {
        return Err(Error::NonFinite {
            term: format!("noise prediction at t = {t}"),
        });
    }
    let x = reverse_step_with(
        &state.x,
        sched.alpha(t),
        sched.alpha_bar(t),
        sched.sigma(t),
        &eps_hat,
        z,
    )?;
    Ok(DiffusionState { x, t: t - 1 })
}

pub fn gaussian<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

/// Runs all `T` reverse steps from a Gaussian `x_T` drawn from `seed` and
/// returns `x_0` clamped to `[−1, 1]`.
pub fn sample_with<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    predictor: &P,
    shape: &[usize],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DiffusionState {
        x: gaussian(shape, &mut rng),
        t: sched.timesteps(),
    };
    while state.t > 0 {
        let z = if sched.sigma(state.t) > 0.0 {
            gaussian(shape, &mut rng)
        } else {
            Tensor::zeros(shape)
        };
        state = reverse_step(&state, predictor, sched, &z)?;
    }
    Ok(state.x.map(|v| v.max(-T::one()).min(T::one())))
}

/// Samples an image conditioned on `prior` (`[1, S, S]`) and `text`.
pub fn sample<T: Scalar>(
    prior: &Tensor<T>,
    text: &[T],
    denoiser: &Denoiser<T>,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Tensor<T>> {
    let s = denoiser.config.canvas_size;
    let cond = Conditioned {
        denoiser,
        prior,
        text,
    };
    sample_with(&cond, &[3, s, s], sched, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl NoisePredictor<f64> for Zero {
        fn predict(&self, x_t: &Tensor<f64>, _t: usize) -> Result<Tensor<f64>> {
            Ok(Tensor::zeros(x_t.shape()))
        }
    }

    #[test]
    fn worked_scalar_step() {
        let x = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let e = Tensor::new(vec![1], vec![0.1f64.sqrt()]).unwrap();
        let z = Tensor::zeros(&[1]);
        let y = reverse_step_with(&x, 0.99, 0.9, 0.3, &e, &z).unwrap();
        assert!((y.data()[0] - 0.99f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_state_with_zero_noise_stays_zero() {
        let sched = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let state = DiffusionState {
            x: Tensor::<f64>::zeros(&[2, 2]),
            t: 7,
        };
        let z = Tensor::zeros(&[2, 2]);
        let next = reverse_step(&state, &Zero, &sched, &z).unwrap();
        assert_eq!(next.t, 6);
        assert!(next.x.data().iter().all(|&v| v == 0.0));
        let done = DiffusionState { x: next.x, t: 0 };
        assert!(matches!(
            reverse_step(&done, &Zero, &sched, &z),
            Err(Error::SamplingComplete)
        ));
    }

    #[test]
    fn sampling_is_seeded() {
        let sched = NoiseSchedule::linear(10, 1e-3, 0.05).unwrap();
        let a = sample_with(&Zero, &[3, 4, 4], &sched, 5).unwrap();
        assert_eq!(a, sample_with(&Zero, &[3, 4, 4], &sched, 5).unwrap());
        assert_ne!(a, sample_with(&Zero, &[3, 4, 4], &sched, 6).unwrap());
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }
}
