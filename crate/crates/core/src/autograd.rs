//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every forward operation appends a node holding its value and the data
//! its backward rule needs. [`Tape::backward`] walks the list once in
//! reverse and accumulates adjoints into nodes that depend on a trainable
//! leaf; constant subgraphs are skipped entirely.

use crate::error::{Error, Result};
use crate::kernels::{self, LUMA};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    Silu(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    NormFloor(Var, T),
    Stack(Vec<Var>),
    Index(Var, usize),
    LogSumExp(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    EmbedMean {
        table: Var,
        tokens: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    AddChannel(Var, Var),
    ConcatChannels(Var, Var),
    AvgPool2(Var),
    Luminance(Var),
    SobelMag {
        x: Var,
        eps: T,
        gx: Vec<T>,
        gy: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recording of one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the root with respect to `v`, or `None` if `v` does not
    /// influence the root through any trainable path.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        self.value(a).ensure_same_shape(self.value(b))
    }

    fn ensure_scalar(&self, a: Var) -> Result<()> {
        if self.value(a).len() != 1 {
            return Err(Error::Dimension(format!(
                "expected a scalar, got shape {:?}",
                self.shape(a)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        self.unary(a, Op::Affine(a, scale), |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: T) -> Var {
        self.affine(a, scale, T::zero())
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x / (T::one() + (-x).exp()))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let needs = self.needs(a);
        self.push(value, Op::Mean(a), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let d = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b), needs))
    }

    /// `max(‖a‖₂, floor)`.
    pub fn norm_floor(&mut self, a: Var, floor: T) -> Var {
        let n = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt();
        let needs = self.needs(a);
        self.push(Tensor::scalar(n.max(floor)), Op::NormFloor(a, floor), needs)
    }

    /// Packs scalar nodes into a vector.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(items.len());
        for &v in items {
            self.ensure_scalar(v)?;
            data.push(self.item(v));
        }
        let needs = items.iter().any(|&v| self.needs(v));
        let n = data.len();
        Ok(self.push(
            Tensor::new(vec![n], data)?,
            Op::Stack(items.to_vec()),
            needs,
        ))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let len = self.value(a).len();
        if i >= len {
            return Err(Error::Dimension(format!(
                "index {i} out of bounds for length {len}"
            )));
        }
        let value = Tensor::scalar(self.value(a).data()[i]);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Index(a, i), needs))
    }

    /// Numerically stable `ln Σ exp(a)` (max-subtracted).
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data();
        if data.is_empty() {
            return Err(Error::Empty("logsumexp of an empty vector".into()));
        }
        let m = data.iter().copied().fold(T::neg_infinity(), T::max);
        let s: T = data.iter().map(|&x| (x - m).exp()).sum();
        let value = Tensor::scalar(m + s.ln());
        let needs = self.needs(a);
        Ok(self.push(value, Op::LogSumExp(a), needs))
    }

    /// Flattens and concatenates nodes into one vector.
    pub fn concat(&mut self, items: &[Var]) -> Var {
        let mut data = Vec::new();
        for &v in items {
            data.extend_from_slice(self.value(v).data());
        }
        let n = data.len();
        let needs = items.iter().any(|&v| self.needs(v));
        self.push(
            Tensor::new(vec![n], data).expect("concat length"),
            Op::Concat(items.to_vec()),
            needs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// `w·x + b` for `x: [in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || self.value(x).len() != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::Dimension(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                self.shape(x),
                ws,
                self.shape(b)
            )));
        }
        let (out, inp) = (ws[0], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y = self.value(b).data().to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &wv[o * inp..(o + 1) * inp];
            *yo += row.iter().zip(xv).map(|(&a, &c)| a * c).sum::<T>();
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Tensor::new(vec![out], y)?, Op::Linear { x, w, b }, needs))
    }

    /// Mean of embedding-table rows selected by `tokens`.
    pub fn embed_mean(&mut self, table: Var, tokens: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::Dimension(format!("embedding table shape {ts:?}")));
        }
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        let tab = self.value(table).data();
        let mut y = vec![T::zero(); dim];
        for &tok in tokens {
            if tok >= vocab {
                return Err(Error::TokenOutOfRange { id: tok, vocab });
            }
            for (yi, &e) in y.iter_mut().zip(&tab[tok * dim..(tok + 1) * dim]) {
                *yi += e;
            }
        }
        let inv = T::one() / T::lit(tokens.len() as f64);
        y.iter_mut().for_each(|v| *v *= inv);
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![dim], y)?,
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
            },
            needs,
        ))
    }

    /// Square-kernel 2-D convolution with zero padding:
    /// `x: [c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3
            || ws.len() != 4
            || ws[1] != xs[0]
            || ws[2] != ws[3]
            || self.shape(b) != [ws[0]]
        {
            return Err(Error::Dimension(format!(
                "conv2d: x {:?}, w {:?}, b {:?}",
                xs,
                ws,
                self.shape(b)
            )));
        }
        let geom = ConvGeom {
            c: xs[0],
            h: xs[1],
            w: xs[2],
            o: ws[0],
            k: ws[2],
            stride,
            pad,
        };
        let (cols, ho, wo) = kernels::im2col(
            self.value(x).data(),
            geom.c,
            geom.h,
            geom.w,
            geom.k,
            stride,
            pad,
        );
        let p = ho * wo;
        let kk = geom.c * geom.k * geom.k;
        let mut out = vec![T::zero(); geom.o * p];
        for (o, &bias) in self.value(b).data().iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bias);
        }
        T::gemm(
            geom.o,
            kk,
            p,
            T::one(),
            self.value(w).data(),
            kk as isize,
            1,
            &cols,
            p as isize,
            1,
            T::one(),
            &mut out,
            p as isize,
            1,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![geom.o, ho, wo], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// Adds `v[c]` to every pixel of channel `c` of `x: [c, h, w]`.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || self.shape(v) != [xs[0]] {
            return Err(Error::Dimension(format!(
                "add_channel: x {:?}, v {:?}",
                xs,
                self.shape(v)
            )));
        }
        let hw = xs[1] * xs[2];
        let mut out = self.value(x).clone();
        let vv = self.value(v).data();
        for (c, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|p| *p += vv[c]);
        }
        let needs = self.needs(x) || self.needs(v);
        Ok(self.push(out, Op::AddChannel(x, v), needs))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::Dimension(format!(
                "concat_channels: {sa:?} vs {sb:?}"
            )));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![sa[0] + sb[0], sa[1], sa[2]], data)?,
            Op::ConcatChannels(a, b),
            needs,
        ))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || !xs[1].is_multiple_of(2) || !xs[2].is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "avg_pool2 needs even spatial dims, got {xs:?}"
            )));
        }
        let out = kernels::avg_pool2(self.value(x).data(), xs[0], xs[1], xs[2]);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![xs[0], xs[1] / 2, xs[2] / 2], out)?,
            Op::AvgPool2(x),
            needs,
        ))
    }

    /// Luma plane of an RGB image; a one-channel image passes through.
    pub fn luminance(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || !(xs[0] == 1 || xs[0] == 3) {
            return Err(Error::Dimension(format!(
                "luminance needs 1 or 3 channels, got {xs:?}"
            )));
        }
        let value = kernels::luminance(self.value(x));
        let needs = self.needs(x);
        Ok(self.push(value, Op::Luminance(x), needs))
    }

    /// Smoothed Sobel gradient magnitude `sqrt(gx² + gy² + eps²) − eps`
    /// per channel. Exactly zero on flat regions, differentiable everywhere.
    pub fn sobel_magnitude(&mut self, x: Var, eps: T) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Dimension(format!(
                "sobel_magnitude needs [c, h, w], got {xs:?}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut gx_all = Vec::with_capacity(c * h * w);
        let mut gy_all = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            let (gx, gy) = kernels::sobel(self.value(x).plane(ci), h, w);
            gx_all.extend(gx);
            gy_all.extend(gy);
        }
        let out = gx_all
            .iter()
            .zip(&gy_all)
            .map(|(&a, &b)| (a * a + b * b + eps * eps).sqrt() - eps)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::SobelMag {
                x,
                eps,
                gx: gx_all,
                gy: gy_all,
            },
            needs,
        ))
    }

    /// Softmax cross-entropy of `logits` against class `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let l = self.value(logits).data();
        if target >= l.len() {
            return Err(Error::Dimension(format!(
                "target class {target} for {} logits",
                l.len()
            )));
        }
        let m = l.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = l.iter().map(|&x| (x - m).exp()).collect();
        let s: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / s).collect();
        let loss = m + s.ln() - l[target];
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            needs,
        ))
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.ensure_scalar(root)?;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi / bi;
                    }
                });
                acc(*b, &mut |gb| {
                    for (((x, &gi), &ai), &bi) in gb.iter_mut().zip(g).zip(av).zip(bv) {
                        *x -= gi * ai / (bi * bi);
                    }
                });
            }
            Op::Affine(a, scale) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &gi)| *x += *scale * gi)
                });
            }
            Op::Silu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                        let s = T::one() / (T::one() + (-xi).exp());
                        *x += gi * s * (T::one() + xi * (T::one() - s));
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                        if xi > T::zero() {
                            *x += gi;
                        } else if xi < T::zero() {
                            *x -= gi;
                        }
                    }
                });
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                        *x += T::lit(2.0) * gi * xi;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((x, &gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                        if xi >= *lo && xi <= *hi {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).len() as f64);
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(bv).for_each(|(x, &bi)| *x += g[0] * bi)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(av).for_each(|(x, &ai)| *x += g[0] * ai)
                });
            }
            Op::NormFloor(a, floor) => {
                let av = self.value(*a).data();
                let n = av.iter().map(|&x| x * x).sum::<T>().sqrt();
                if n > *floor {
                    acc(*a, &mut |ga| {
                        ga.iter_mut()
                            .zip(av)
                            .for_each(|(x, &ai)| *x += g[0] * ai / n)
                    });
                }
            }
            Op::Stack(items) => {
                for (i, &v) in items.iter().enumerate() {
                    acc(v, &mut |gv| gv[0] += g[i]);
                }
            }
            Op::Index(a, i) => acc(*a, &mut |ga| ga[*i] += g[0]),
            Op::LogSumExp(a) => {
                let av = self.value(*a).data();
                let lse = out.item();
                acc(*a, &mut |ga| {
                    for (x, &ai) in ga.iter_mut().zip(av) {
                        *x += g[0] * (ai - lse).exp();
                    }
                });
            }
            Op::Concat(items) => {
                let mut offset = 0;
                for &v in items {
                    let n = self.value(v).len();
                    acc(v, &mut |gv| add_into(gv, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (outd, inp) = (ws[0], ws[1]);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &mut |gx| {
                    for (o, &go) in g.iter().enumerate().take(outd) {
                        let row = &wv[o * inp..(o + 1) * inp];
                        gx.iter_mut().zip(row).for_each(|(v, &wi)| *v += go * wi);
                    }
                });
                acc(*w, &mut |gw| {
                    for (o, &go) in g.iter().enumerate().take(outd) {
                        let row = &mut gw[o * inp..(o + 1) * inp];
                        row.iter_mut().zip(xv).for_each(|(v, &xi)| *v += go * xi);
                    }
                });
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::EmbedMean { table, tokens } => {
                let dim = self.shape(*table)[1];
                let inv = T::one() / T::lit(tokens.len() as f64);
                acc(*table, &mut |gt| {
                    for &tok in tokens {
                        for (v, &gi) in gt[tok * dim..(tok + 1) * dim].iter_mut().zip(g) {
                            *v += gi * inv;
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let ConvGeom {
                    c,
                    h,
                    w: width,
                    o,
                    k,
                    stride,
                    pad,
                } = *geom;
                let p = out.len() / o;
                let kk = c * k * k;
                acc(*w, &mut |gw| {
                    T::gemm(
                        o,
                        p,
                        kk,
                        T::one(),
                        g,
                        p as isize,
                        1,
                        cols,
                        1,
                        p as isize,
                        T::one(),
                        gw,
                        kk as isize,
                        1,
                    );
                });
                acc(*b, &mut |gb| {
                    for (oi, v) in gb.iter_mut().enumerate() {
                        *v += g[oi * p..(oi + 1) * p].iter().copied().sum::<T>();
                    }
                });
                let wv = self.value(*w).data();
                acc(*x, &mut |gx| {
                    let mut dcols = vec![T::zero(); kk * p];
                    T::gemm(
                        kk,
                        o,
                        p,
                        T::one(),
                        wv,
                        1,
                        kk as isize,
                        g,
                        p as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        p as isize,
                        1,
                    );
                    kernels::col2im_add(&dcols, c, h, width, k, stride, pad, gx);
                });
            }
            Op::AddChannel(x, v) => {
                let xs = self.shape(*x);
                let hw = xs[1] * xs[2];
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*v, &mut |gv| {
                    for (c, val) in gv.iter_mut().enumerate() {
                        *val += g[c * hw..(c + 1) * hw].iter().copied().sum::<T>();
                    }
                });
            }
            Op::ConcatChannels(a, b) => {
                let na = self.value(*a).len();
                acc(*a, &mut |ga| add_into(ga, &g[..na]));
                acc(*b, &mut |gb| add_into(gb, &g[na..]));
            }
            Op::AvgPool2(x) => {
                let xs = self.shape(*x);
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (h2, w2) = (h / 2, w / 2);
                let q = T::lit(0.25);
                acc(*x, &mut |gx| {
                    for ci in 0..c {
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                let gi = g[ci * h2 * w2 + y * w2 + xx] * q;
                                let base = ci * h * w;
                                gx[base + 2 * y * w + 2 * xx] += gi;
                                gx[base + 2 * y * w + 2 * xx + 1] += gi;
                                gx[base + (2 * y + 1) * w + 2 * xx] += gi;
                                gx[base + (2 * y + 1) * w + 2 * xx + 1] += gi;
                            }
                        }
                    }
                });
            }
            Op::Luminance(x) => {
                let c = self.shape(*x)[0];
                acc(*x, &mut |gx| {
                    if c == 1 {
                        add_into(gx, g);
                    } else {
                        let hw = g.len();
                        for (ci, &wt) in LUMA.iter().enumerate() {
                            let wt = T::lit(wt);
                            gx[ci * hw..(ci + 1) * hw]
                                .iter_mut()
                                .zip(g)
                                .for_each(|(v, &gi)| *v += wt * gi);
                        }
                    }
                });
            }
            Op::SobelMag { x, eps, gx, gy } => {
                let xs = self.shape(*x);
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let hw = h * w;
                let mag = out.data();
                let mut dgx = vec![T::zero(); c * hw];
                let mut dgy = vec![T::zero(); c * hw];
                for i in 0..c * hw {
                    let denom = mag[i] + *eps;
                    if denom > T::zero() {
                        dgx[i] = g[i] * gx[i] / denom;
                        dgy[i] = g[i] * gy[i] / denom;
                    }
                }
                acc(*x, &mut |gxin| {
                    for ci in 0..c {
                        kernels::sobel_backward(
                            &dgx[ci * hw..(ci + 1) * hw],
                            &dgy[ci * hw..(ci + 1) * hw],
                            h,
                            w,
                            &mut gxin[ci * hw..(ci + 1) * hw],
                        );
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                acc(*logits, &mut |gl| {
                    for (i, (v, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *v += g[0] * (p - onehot);
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of `f` at `x0` against the tape's gradient.
    fn check(shape: &[usize], x0: &[f64], build: impl Fn(&mut Tape<f64>, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(shape.to_vec(), x0.to_vec()).unwrap());
        let y = build(&mut tape, x);
        let grads = tape.backward(y).unwrap();
        let analytic = grads
            .get(x)
            .map(|g| g.to_vec())
            .unwrap_or(vec![0.0; x0.len()]);
        let eval = |xs: &[f64]| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::new(shape.to_vec(), xs.to_vec()).unwrap());
            let out = build(&mut t, v);
            t.item(out)
        };
        for i in 0..x0.len() {
            let h = 1e-5 * x0[i].abs().max(1.0);
            let mut xp = x0.to_vec();
            xp[i] += h;
            let mut xm = x0.to_vec();
            xm[i] -= h;
            let numeric = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let err =
                (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                err < 1e-6,
                "coord {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    fn wave(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    #[test]
    fn elementwise_rules() {
        let x0 = wave(6, 0.7);
        check(&[6], &x0, |t, x| {
            let s = t.silu(x);
            let q = t.square(s);
            let a = t.abs(x);
            let m = t.mul(q, a).unwrap();
            let d = t.affine(x, 2.0, 3.0);
            let r = t.div(m, d).unwrap();
            let c = t.clamp(r, -0.1, 0.1);
            let z = t.sub(c, x).unwrap();
            t.sum(z)
        });
    }

    #[test]
    fn reductions_and_softmax() {
        let x0 = wave(5, 1.3);
        check(&[5], &x0, |t, x| {
            let n = t.norm_floor(x, 1e-12);
            let l = t.logsumexp(x).unwrap();
            let i = t.index(x, 2).unwrap();
            let ce = t.cross_entropy(x, 3).unwrap();
            let s = t.stack(&[n, l, i, ce]).unwrap();
            let d = t.dot(s, s).unwrap();
            let m = t.mean(x);
            t.add(d, m).unwrap()
        });
    }

    #[test]
    fn conv_and_image_ops() {
        let x0 = wave(3 * 6 * 6, 0.37);
        check(&[3, 6, 6], &x0, |t, x| {
            let w = t.constant(Tensor::new(vec![2, 3, 3, 3], wave(54, 0.9)).unwrap());
            let b = t.constant(Tensor::new(vec![2], vec![0.1, -0.2]).unwrap());
            let y = t.conv2d(x, w, b, 2, 1).unwrap();
            let v = t.constant(Tensor::new(vec![2], vec![0.3, 0.5]).unwrap());
            let y = t.add_channel(y, v).unwrap();
            let lum = t.luminance(x).unwrap();
            let e = t.sobel_magnitude(lum, 1e-3).unwrap();
            let p = t.avg_pool2(e).unwrap();
            let cc = t.concat_channels(y, p).unwrap();
            let sq = t.square(cc);
            t.mean(sq)
        });
    }

    #[test]
    fn conv_weight_gradient() {
        let w0 = wave(2 * 2 * 3 * 3, 0.41);
        check(&[2, 2, 3, 3], &w0, |t, w| {
            let x = t.constant(Tensor::new(vec![2, 5, 5], wave(50, 0.23)).unwrap());
            let b = t.constant(Tensor::zeros(&[2]));
            let y = t.conv2d(x, w, b, 1, 1).unwrap();
            let s = t.silu(y);
            t.sum(s)
        });
    }

    #[test]
    fn linear_embed_concat_reshape() {
        let table0 = wave(5 * 3, 0.61);
        check(&[5, 3], &table0, |t, table| {
            let e = t.embed_mean(table, &[0, 2, 2, 4]).unwrap();
            let w = t.constant(Tensor::new(vec![2, 3], wave(6, 1.1)).unwrap());
            let b = t.constant(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
            let y = t.linear(e, w, b).unwrap();
            let c = t.concat(&[y, e]);
            let r = t.reshape(c, &[5, 1]).unwrap();
            let q = t.square(r);
            t.sum(q)
        });
    }

    #[test]
    fn constant_subgraph_gets_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(c, p).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &[2.0]);
    }

    #[test]
    fn out_of_vocab_token_is_named() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(Tensor::zeros(&[4, 2]));
        match tape.embed_mean(table, &[1, 7]) {
            Err(Error::TokenOutOfRange { id: 7, vocab: 4 }) => {}
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
