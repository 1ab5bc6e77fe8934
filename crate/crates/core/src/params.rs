//! Named parameter collections with seeded initialization and
//! write-protection for frozen networks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parameter tensors of one network, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T = f32> {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
    frozen: bool,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        let (specs, tensors) = entries
            .into_iter()
            .map(|(name, t)| {
                (
                    ParamSpec {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        Self {
            specs,
            tensors,
            frozen: false,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the set read-only. There is no way back.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn tensors_mut(&mut self) -> Result<&mut [Tensor<T>]> {
        if self.frozen {
            return Err(Error::Frozen(
                "attempted to mutate frozen parameters".into(),
            ));
        }
        Ok(&mut self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Registers every tensor on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            frozen: self.frozen,
        }
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            specs: self.specs.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            frozen: false,
        }
    }

    /// Flat view across all tensors, in declaration order.
    pub fn flat_get(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn flat_set(&mut self, mut i: usize, v: T) -> Result<()> {
        for t in self.tensors_mut()? {
            if i < t.len() {
                t.data_mut()[i] = v;
                return Ok(());
            }
            i -= t.len();
        }
        Err(Error::Dimension("flat parameter index out of range".into()))
    }

    /// Accumulates the tape gradients of `vars` (bound from this set).
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                t.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
    }

    /// In-place `self += other`, element by element in declaration order.
    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, &y)| *x += y);
        }
    }

    /// Plain SGD: `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grads: &ParamSet<T>, lr: T) -> Result<()> {
        if grads.specs != self.specs {
            return Err(Error::Internal(
                "gradient layout does not match parameters".into(),
            ));
        }
        if lr == T::zero() {
            // Skips `x − 0·g`, which would turn −0.0 into +0.0.
            self.tensors_mut()?;
            return Ok(());
        }
        for (p, g) in self.tensors_mut()?.iter_mut().zip(&grads.tensors) {
            p.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(x, &d)| *x -= lr * d);
        }
        Ok(())
    }

    /// Adam at 1-based iteration `iter`: updates the moment estimates `m`
    /// and `v`, then `θ ← θ − lr·m̂/(sqrt(v̂) + eps)` with bias-corrected
    /// `m̂`, `v̂`.
    #[allow(clippy::too_many_arguments)]
    pub fn adam_step(
        &mut self,
        grads: &ParamSet<T>,
        m: &mut ParamSet<T>,
        v: &mut ParamSet<T>,
        lr: T,
        (beta1, beta2, eps): (f64, f64, f64),
        iter: u64,
    ) -> Result<()> {
        if grads.specs != self.specs || m.specs != self.specs || v.specs != self.specs {
            return Err(Error::Internal(
                "gradient or moment layout does not match parameters".into(),
            ));
        }
        let params = self.tensors_mut()?;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let c1 = T::lit(1.0 - beta1.powf(iter as f64));
        let c2 = T::lit(1.0 - beta2.powf(iter as f64));
        let eps = T::lit(eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut m.tensors)
            .zip(&mut v.tensors)
        {
            let rows = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((x, &d), mi), vi) in rows {
                *mi = b1 * *mi + (T::one() - b1) * d;
                *vi = b2 * *vi + (T::one() - b2) * d * d;
                if lr != T::zero() {
                    *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Collects `(name, tensor)` pairs with seeded Glorot-uniform weights.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[−a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<T: Scalar>(
        &mut self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> Tensor<T> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(self.rng.random_range(-a..=a)))
    }

    pub fn linear<T: Scalar>(&mut self, out: usize, inp: usize) -> Tensor<T> {
        self.glorot(&[out, inp], inp, out)
    }

    pub fn conv<T: Scalar>(&mut self, out: usize, inp: usize, k: usize) -> Tensor<T> {
        self.glorot(&[out, inp, k, k], inp * k * k, out * k * k)
    }
}

/// Deterministic 64-bit mixer for deriving independent seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        ^ index
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
