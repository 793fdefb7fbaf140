//! Dense-layer building blocks shared by the denoiser and the autoencoder.
//!
//! Matrices are row-major `Vec`s. A batch of `rows` samples of width `d` is a
//! `rows * d` slice. Weights are stored `out x in`, so a layer computes
//! `Y = X W^T + b`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

/// Floating-point element type of the networks: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha A B + beta C` with explicit strides. The caller guarantees
    /// that every addressed element lies inside the slices.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn of(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows as isize - 1) * rs + (cols as isize - 1) * cs
                };
                assert!(last(m, n, rsc, csc) < c.len() as isize);
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len() as isize);
                    assert!(last(k, n, rsb, csb) < b.len() as isize);
                }
                // SAFETY: strides are nonnegative and the largest offset of each
                // operand was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `C (rows x n) = A (rows x k) * B^T + beta C`, with `B` stored `n x k`.
pub fn matmul_abt<S: Scalar>(a: &[S], rows: usize, k: usize, b: &[S], n: usize, beta: S, c: &mut [S]) {
    assert_eq!(a.len(), rows * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), rows * n);
    let (k_, n_) = (k as isize, n as isize);
    S::gemm(rows, k, n, S::one(), a, (k_, 1), b, (1, k_), beta, c, (n_, 1));
}

/// `C (rows x n) = A (rows x k) * B + beta C`, with `B` stored `k x n`.
pub fn matmul_ab<S: Scalar>(a: &[S], rows: usize, k: usize, b: &[S], n: usize, beta: S, c: &mut [S]) {
    assert_eq!(a.len(), rows * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), rows * n);
    let (k_, n_) = (k as isize, n as isize);
    S::gemm(rows, k, n, S::one(), a, (k_, 1), b, (n_, 1), beta, c, (n_, 1));
}

/// `C (m x n) = A^T * B + beta C`, with `A` stored `rows x m` and `B` stored `rows x n`.
pub fn matmul_atb<S: Scalar>(a: &[S], rows: usize, m: usize, b: &[S], n: usize, beta: S, c: &mut [S]) {
    assert_eq!(a.len(), rows * m);
    assert_eq!(b.len(), rows * n);
    assert_eq!(c.len(), m * n);
    let (m_, n_) = (m as isize, n as isize);
    S::gemm(m, rows, n, S::one(), a, (1, m_), b, (n_, 1), beta, c, (n_, 1));
}

pub fn tanh_in_place<S: Scalar>(values: &mut [S]) {
    for v in values {
        *v = v.tanh();
    }
}

/// `d_out * (1 - y^2)` for `y = tanh(x)`, written into `d_out`.
pub fn tanh_backward<S: Scalar>(activations: &[S], d_out: &mut [S]) {
    for (d, &y) in d_out.iter_mut().zip(activations) {
        *d *= S::one() - y * y;
    }
}

/// Column sums of a `rows x cols` matrix, added into `out`.
pub fn add_column_sums<S: Scalar>(m: &[S], cols: usize, out: &mut [S]) {
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// A borrowed parameter tensor with its name and shape.
#[derive(Debug, Clone)]
pub struct TensorRef<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [S],
}

/// Models whose trainable tensors can be enumerated in a fixed order.
pub trait Parameters<S: Scalar> {
    fn tensors(&self) -> Vec<TensorRef<'_, S>>;

    /// Mutable views in the same order as [`Parameters::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Affine layer `y = W x + b`; layers without a bias hold an empty `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| S::of(rng.random_range(-limit..=limit)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: if with_bias { vec![S::zero(); out_dim] } else { Vec::new() },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: vec![S::zero(); self.weight.len()],
            bias: vec![S::zero(); self.bias.len()],
        }
    }

    pub fn cast<T: Scalar>(&self) -> Linear<T> {
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|v| T::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }

    pub fn has_bias(&self) -> bool {
        !self.bias.is_empty()
    }

    /// `y = x W^T + b` for a batch of `rows` inputs.
    pub fn forward(&self, x: &[S], rows: usize) -> Vec<S> {
        let mut y = vec![S::zero(); rows * self.out_dim];
        self.forward_into(x, rows, &mut y);
        y
    }

    /// Overwrites `y` with the layer output.
    pub fn forward_into(&self, x: &[S], rows: usize, y: &mut [S]) {
        matmul_abt(x, rows, self.in_dim, &self.weight, self.out_dim, S::zero(), y);
        if self.has_bias() {
            for row in y.chunks_exact_mut(self.out_dim) {
                for (v, &b) in row.iter_mut().zip(&self.bias) {
                    *v += b;
                }
            }
        }
    }

    /// Adds `dW = dy^T x` and `db = sum(dy)` into `grad`.
    pub fn accumulate_grad(&self, x: &[S], dy: &[S], rows: usize, grad: &mut Linear<S>) {
        matmul_atb(dy, rows, self.out_dim, x, self.in_dim, S::one(), &mut grad.weight);
        if self.has_bias() {
            add_column_sums(dy, self.out_dim, &mut grad.bias);
        }
    }

    /// `dx = dy W`, added into `dx` when `accumulate` is set.
    pub fn input_grad_into(&self, dy: &[S], rows: usize, dx: &mut [S], accumulate: bool) {
        let beta = if accumulate { S::one() } else { S::zero() };
        matmul_ab(dy, rows, self.out_dim, &self.weight, self.in_dim, beta, dx);
    }

    pub fn input_grad(&self, dy: &[S], rows: usize) -> Vec<S> {
        let mut dx = vec![S::zero(); rows * self.in_dim];
        self.input_grad_into(dy, rows, &mut dx, false);
        dx
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, S>>) {
        out.push(TensorRef {
            name: format!("{prefix}.weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: &self.weight,
        });
        if self.has_bias() {
            out.push(TensorRef {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_dim],
                data: &self.bias,
            });
        }
    }

    pub(crate) fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [S]>) {
        out.push(&mut self.weight);
        if !self.bias.is_empty() {
            out.push(&mut self.bias);
        }
    }
}

/// Fully connected stack: tanh after every layer except the last, which is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Linear<S>>,
}

/// Activations of one [`Mlp`] forward pass; `outputs[i]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub struct MlpTape<S> {
    pub rows: usize,
    pub input: Vec<S>,
    pub outputs: Vec<Vec<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// Layers through the listed widths, e.g. `[20, 100, 20]` gives two layers.
    pub fn glorot<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            layers: self.layers.iter().map(Linear::cast).collect(),
        }
    }

    pub fn forward_tape(&self, input: &[S], rows: usize) -> MlpTape<S> {
        let last = self.layers.len() - 1;
        let mut outputs: Vec<Vec<S>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let mut y = layer.forward(x, rows);
            if i < last {
                tanh_in_place(&mut y);
            }
            outputs.push(y);
        }
        MlpTape {
            rows,
            input: input.to_vec(),
            outputs,
        }
    }

    pub fn forward(&self, input: &[S], rows: usize) -> Vec<S> {
        self.forward_tape(input, rows).outputs.pop().unwrap_or_default()
    }

    /// Parameter gradients given `d_output`, the loss gradient w.r.t. the final output.
    pub fn backward(&self, tape: &MlpTape<S>, d_output: Vec<S>) -> Mlp<S> {
        let mut grads = self.zeros_like();
        let mut dy = d_output;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let x = if i == 0 { &tape.input } else { &tape.outputs[i - 1] };
            layer.accumulate_grad(x, &dy, tape.rows, &mut grads.layers[i]);
            if i > 0 {
                let mut dx = layer.input_grad(&dy, tape.rows);
                tanh_backward(&tape.outputs[i - 1], &mut dx);
                dy = dx;
            }
        }
        grads
    }
}

impl<S: Scalar> Parameters<S> for Mlp<S> {
    fn tensors(&self) -> Vec<TensorRef<'_, S>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.push_tensors(&format!("layers.{i}"), &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            layer.push_tensors_mut(&mut out);
        }
        out
    }
}
