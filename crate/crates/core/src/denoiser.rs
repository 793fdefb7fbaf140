//! Per-pixel noise estimator conditioned on the diffusion step and on the
//! pixel's own mean and standard deviation.
//!
//! Each residual layer computes
//! `out = W2 tanh(W1 x + b1 + P_t e_t + P_s e_s) + b2 + skip(x)`, where `e_t`
//! is the time embedding (shared by all pixels), `e_s` the statistical offset
//! embedding of the pixel, and `skip` is the identity when the widths match
//! and an affine projection otherwise. A final linear head maps back to the
//! band count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{add_column_sums, matmul_abt, tanh_backward, tanh_in_place, Linear, Parameters, Scalar, TensorRef};
use crate::{Error, Result};

/// Network widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub bands: usize,
    pub hidden: Vec<usize>,
    pub inner: usize,
    pub embed: usize,
    pub time_features: usize,
    pub stat_layers: usize,
}

impl DenoiserConfig {
    pub fn new(bands: usize) -> Self {
        Self {
            bands,
            hidden: vec![100, 50, 50, 100],
            inner: 200,
            embed: 512,
            time_features: 128,
            stat_layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.bands > 0
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0)
            && self.inner > 0
            && self.embed > 0
            && self.stat_layers > 0;
        if !positive || self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::InvalidArgument(format!("invalid denoiser config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer<S> {
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
    pub time_proj: Linear<S>,
    pub stat_proj: Linear<S>,
    pub skip: Option<Linear<S>>,
}

impl<S: Scalar> ResidualLayer<S> {
    fn map<T>(&self, f: impl Fn(&Linear<S>) -> Linear<T>) -> ResidualLayer<T> {
        ResidualLayer {
            fc1: f(&self.fc1),
            fc2: f(&self.fc2),
            time_proj: f(&self.time_proj),
            stat_proj: f(&self.stat_proj),
            skip: self.skip.as_ref().map(&f),
        }
    }
}

/// All trainable weights of the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<S> {
    pub config: DenoiserConfig,
    pub time_embed: Linear<S>,
    pub stat_embed: Vec<Linear<S>>,
    pub layers: Vec<ResidualLayer<S>>,
    pub head: Linear<S>,
}

/// Gradients share the parameter layout.
pub type GradientSet<S> = DenoiserParams<S>;

pub fn init_params<S: Scalar>(bands: usize, seed: u64) -> DenoiserParams<S> {
    DenoiserParams::init(DenoiserConfig::new(bands), seed).expect("default config is valid")
}

/// Interleaved sinusoidal features `[sin(t w_0), cos(t w_0), sin(t w_1), ..]`
/// with `w_k = 10000^(-2k/dim)`.
pub fn sinusoidal_features<S: Scalar>(t: f64, dim: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * k) as f64) / dim as f64);
        out.push(S::of((t * freq).sin()));
        out.push(S::of((t * freq).cos()));
    }
    out
}

/// `[mean, population standard deviation]` of one pixel spectrum.
pub fn stat_offset_features<S: Scalar>(pixel: &[S]) -> [S; 2] {
    let n = S::of(pixel.len() as f64);
    let mean = pixel.iter().copied().sum::<S>() / n;
    let var = pixel.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
    [mean, var.sqrt()]
}

/// Intermediate values of a batched forward pass, kept for [`DenoiserParams::backward`].
#[derive(Debug, Clone)]
pub struct DenoiserTape<S> {
    rows: usize,
    time_features: Vec<S>,
    time_embedding: Vec<S>,
    stats: Vec<S>,
    /// tanh outputs of each statistical embedding layer; the last is `e_s`.
    stat_acts: Vec<Vec<S>>,
    /// Input of each residual layer, followed by the input of the head.
    layer_inputs: Vec<Vec<S>>,
    hidden: Vec<Vec<S>>,
    pub output: Vec<S>,
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let time_embed = Linear::glorot(config.time_features, config.embed, true, &mut rng);
        let mut stat_embed = Vec::with_capacity(config.stat_layers);
        for i in 0..config.stat_layers {
            let fan_in = if i == 0 { 2 } else { config.embed };
            stat_embed.push(Linear::glorot(fan_in, config.embed, true, &mut rng));
        }
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut width = config.bands;
        for &out in &config.hidden {
            layers.push(ResidualLayer {
                fc1: Linear::glorot(width, config.inner, true, &mut rng),
                fc2: Linear::glorot(config.inner, out, true, &mut rng),
                time_proj: Linear::glorot(config.embed, config.inner, false, &mut rng),
                stat_proj: Linear::glorot(config.embed, config.inner, false, &mut rng),
                skip: (width != out).then(|| Linear::glorot(width, out, true, &mut rng)),
            });
            width = out;
        }
        let head = Linear::glorot(width, config.bands, true, &mut rng);
        Ok(Self {
            config,
            time_embed,
            stat_embed,
            layers,
            head,
        })
    }

    pub fn bands(&self) -> usize {
        self.config.bands
    }

    fn map<T>(&self, f: impl Fn(&Linear<S>) -> Linear<T>) -> DenoiserParams<T> {
        DenoiserParams {
            config: self.config.clone(),
            time_embed: f(&self.time_embed),
            stat_embed: self.stat_embed.iter().map(&f).collect(),
            layers: self.layers.iter().map(|l| l.map(&f)).collect(),
            head: f(&self.head),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(Linear::zeros_like)
    }

    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        self.map(Linear::cast)
    }

    /// `tanh(A phi(t) + b)`: the 512-wide time embedding.
    pub fn time_embedding(&self, t: usize) -> Vec<S> {
        let features = sinusoidal_features::<S>(t as f64, self.config.time_features);
        let mut e = self.time_embed.forward(&features, 1);
        tanh_in_place(&mut e);
        e
    }

    /// Cascaded affine + tanh layers applied to `[mean, std]`.
    pub fn stat_offset_embedding(&self, stats: [S; 2]) -> Vec<S> {
        let mut x = stats.to_vec();
        for layer in &self.stat_embed {
            x = layer.forward(&x, 1);
            tanh_in_place(&mut x);
        }
        x
    }

    fn check_width(&self, pixels: &[S]) -> Result<usize> {
        let bands = self.config.bands;
        if pixels.len() % bands != 0 {
            return Err(Error::Shape(format!(
                "input of {} values is not a whole number of {bands}-band pixels",
                pixels.len()
            )));
        }
        Ok(pixels.len() / bands)
    }

    pub fn forward_tape(&self, pixels: &[S], t: usize) -> Result<DenoiserTape<S>> {
        let rows = self.check_width(pixels)?;
        let embed = self.config.embed;
        let inner = self.config.inner;

        let time_features = sinusoidal_features::<S>(t as f64, self.config.time_features);
        let mut time_embedding = self.time_embed.forward(&time_features, 1);
        tanh_in_place(&mut time_embedding);

        let mut stats = Vec::with_capacity(rows * 2);
        for px in pixels.chunks_exact(self.config.bands) {
            stats.extend(stat_offset_features(px));
        }
        let mut stat_acts: Vec<Vec<S>> = Vec::with_capacity(self.stat_embed.len());
        for (i, layer) in self.stat_embed.iter().enumerate() {
            let x = if i == 0 { &stats } else { &stat_acts[i - 1] };
            let mut y = layer.forward(x, rows);
            tanh_in_place(&mut y);
            stat_acts.push(y);
        }
        let stat_embedding = &stat_acts[stat_acts.len() - 1];

        let mut layer_inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut hidden = Vec::with_capacity(self.layers.len());
        layer_inputs.push(pixels.to_vec());
        for layer in &self.layers {
            let x = &layer_inputs[layer_inputs.len() - 1];
            let time_shift = layer.time_proj.forward(&time_embedding, 1);
            let mut z = layer.fc1.forward(x, rows);
            for row in z.chunks_exact_mut(inner) {
                for (v, &c) in row.iter_mut().zip(&time_shift) {
                    *v += c;
                }
            }
            matmul_abt(stat_embedding, rows, embed, &layer.stat_proj.weight, inner, S::one(), &mut z);
            tanh_in_place(&mut z);
            let mut y = layer.fc2.forward(&z, rows);
            match &layer.skip {
                Some(skip) => {
                    let s = skip.forward(x, rows);
                    y.iter_mut().zip(&s).for_each(|(a, &b)| *a += b);
                }
                None => y.iter_mut().zip(x).for_each(|(a, &b)| *a += b),
            }
            hidden.push(z);
            layer_inputs.push(y);
        }
        let output = self.head.forward(&layer_inputs[layer_inputs.len() - 1], rows);
        Ok(DenoiserTape {
            rows,
            time_features,
            time_embedding,
            stats,
            stat_acts,
            layer_inputs,
            hidden,
            output,
        })
    }

    /// Noise estimate for each pixel row of `pixels` (`L x bands`).
    pub fn forward(&self, pixels: &[S], t: usize) -> Result<Vec<S>> {
        Ok(self.forward_tape(pixels, t)?.output)
    }

    /// Mean over pixels of the squared distance to `target`, with its gradient.
    pub fn backward(&self, pixels: &[S], target: &[S], t: usize) -> Result<(S, GradientSet<S>)> {
        if target.len() != pixels.len() {
            return Err(Error::Shape(format!(
                "target has {} values, input has {}",
                target.len(),
                pixels.len()
            )));
        }
        let tape = self.forward_tape(pixels, t)?;
        let rows = S::of(tape.rows as f64);
        let mut loss = S::zero();
        let mut d_output = Vec::with_capacity(target.len());
        for (&y, &n) in tape.output.iter().zip(target) {
            let r = y - n;
            loss += r * r;
            d_output.push(S::of(2.0) * r / rows);
        }
        Ok((loss / rows, self.backward_tape(&tape, d_output)))
    }

    /// Parameter gradients for an arbitrary output gradient.
    pub fn backward_tape(&self, tape: &DenoiserTape<S>, d_output: Vec<S>) -> GradientSet<S> {
        let rows = tape.rows;
        let embed = self.config.embed;
        let inner = self.config.inner;
        let mut grads = self.zeros_like();

        let head_input = &tape.layer_inputs[self.layers.len()];
        self.head.accumulate_grad(head_input, &d_output, rows, &mut grads.head);
        let mut dy = self.head.input_grad(&d_output, rows);

        let stat_embedding = &tape.stat_acts[tape.stat_acts.len() - 1];
        let mut d_time = vec![S::zero(); embed];
        let mut d_stat = vec![S::zero(); rows * embed];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g = &mut grads.layers[i];
            let x = &tape.layer_inputs[i];
            let h = &tape.hidden[i];

            layer.fc2.accumulate_grad(h, &dy, rows, &mut g.fc2);
            let mut dz = layer.fc2.input_grad(&dy, rows);
            tanh_backward(h, &mut dz);

            layer.fc1.accumulate_grad(x, &dz, rows, &mut g.fc1);
            let mut d_shift = vec![S::zero(); inner];
            add_column_sums(&dz, inner, &mut d_shift);
            layer.time_proj.accumulate_grad(&tape.time_embedding, &d_shift, 1, &mut g.time_proj);
            layer.time_proj.input_grad_into(&d_shift, 1, &mut d_time, true);
            layer.stat_proj.accumulate_grad(stat_embedding, &dz, rows, &mut g.stat_proj);
            layer.stat_proj.input_grad_into(&dz, rows, &mut d_stat, true);

            if i == 0 {
                break;
            }
            let mut dx = layer.fc1.input_grad(&dz, rows);
            match (&layer.skip, g.skip.as_mut()) {
                (Some(skip), Some(gs)) => {
                    skip.accumulate_grad(x, &dy, rows, gs);
                    skip.input_grad_into(&dy, rows, &mut dx, true);
                }
                _ => dx.iter_mut().zip(&dy).for_each(|(a, &b)| *a += b),
            }
            dy = dx;
        }
        // The first layer's skip projection still needs its parameter gradient.
        if let (Some(skip), Some(gs)) = (&self.layers[0].skip, grads.layers[0].skip.as_mut()) {
            skip.accumulate_grad(&tape.layer_inputs[0], &dy, rows, gs);
        }

        tanh_backward(&tape.time_embedding, &mut d_time);
        self.time_embed
            .accumulate_grad(&tape.time_features, &d_time, 1, &mut grads.time_embed);

        let mut d = d_stat;
        for i in (0..self.stat_embed.len()).rev() {
            tanh_backward(&tape.stat_acts[i], &mut d);
            let x = if i == 0 { &tape.stats } else { &tape.stat_acts[i - 1] };
            self.stat_embed[i].accumulate_grad(x, &d, rows, &mut grads.stat_embed[i]);
            if i > 0 {
                d = self.stat_embed[i].input_grad(&d, rows);
            }
        }
        grads
    }
}

impl<S: Scalar> Parameters<S> for DenoiserParams<S> {
    fn tensors(&self) -> Vec<TensorRef<'_, S>> {
        let mut out = Vec::new();
        self.time_embed.push_tensors("time_embed", &mut out);
        for (i, l) in self.stat_embed.iter().enumerate() {
            l.push_tensors(&format!("stat_embed.{i}"), &mut out);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.fc1.push_tensors(&format!("res.{i}.fc1"), &mut out);
            l.fc2.push_tensors(&format!("res.{i}.fc2"), &mut out);
            l.time_proj.push_tensors(&format!("res.{i}.time_proj"), &mut out);
            l.stat_proj.push_tensors(&format!("res.{i}.stat_proj"), &mut out);
            if let Some(skip) = &l.skip {
                skip.push_tensors(&format!("res.{i}.skip"), &mut out);
            }
        }
        self.head.push_tensors("head", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::new();
        self.time_embed.push_tensors_mut(&mut out);
        for l in &mut self.stat_embed {
            l.push_tensors_mut(&mut out);
        }
        for l in &mut self.layers {
            l.fc1.push_tensors_mut(&mut out);
            l.fc2.push_tensors_mut(&mut out);
            l.time_proj.push_tensors_mut(&mut out);
            l.stat_proj.push_tensors_mut(&mut out);
            if let Some(skip) = &mut l.skip {
                skip.push_tensors_mut(&mut out);
            }
        }
        self.head.push_tensors_mut(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_pixels(rows: usize, bands: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * bands).map(|_| rng.random()).collect()
    }

    #[test]
    fn layer_shapes_follow_config() {
        let p = init_params::<f32>(20, 0);
        let widths: Vec<(usize, usize)> = p.layers.iter().map(|l| (l.fc1.in_dim, l.fc2.out_dim)).collect();
        assert_eq!(widths, vec![(20, 100), (100, 50), (50, 50), (50, 100)]);
        assert!(p.layers[0].skip.is_some());
        assert!(p.layers[2].skip.is_none());
        assert_eq!((p.head.in_dim, p.head.out_dim), (100, 20));
        assert_eq!(p.layers[0].fc1.out_dim, 200);
        assert_eq!((p.time_embed.in_dim, p.time_embed.out_dim), (128, 512));
        assert_eq!((p.stat_embed[0].in_dim, p.stat_embed[1].in_dim), (2, 512));
        assert!(p.tensors().iter().filter(|t| t.name.ends_with(".bias")).all(|t| t.data.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params::<f64>(7, 3), init_params::<f64>(7, 3));
        assert_ne!(init_params::<f64>(7, 3), init_params::<f64>(7, 4));
    }

    #[test]
    fn time_embedding_range() {
        let p = init_params::<f64>(5, 1);
        let e = p.time_embedding(30);
        assert_eq!(e.len(), 512);
        assert!(e.iter().all(|v| v.abs() < 1.0));
        assert_eq!(e, p.time_embedding(30));
        let zero: Vec<f64> = sinusoidal_features(0.0, 128);
        for (i, v) in zero.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn stat_features_examples() {
        let s = stat_offset_features(&[1.0f64, 2.0, 3.0]);
        assert!((s[0] - 2.0).abs() < 1e-15);
        assert!((s[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(stat_offset_features(&[4.5f64; 6]), [4.5, 0.0]);

        let px = random_pixels(1, 37, 9);
        let mean = px.iter().sum::<f64>() / 37.0;
        let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 37.0;
        let s = stat_offset_features(&px);
        assert!((s[0] - mean).abs() < 1e-6 && (s[1] - var.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn stat_embedding_zero_at_init() {
        let p = init_params::<f64>(5, 2);
        let e = p.stat_offset_embedding([0.0, 0.0]);
        assert_eq!(e.len(), 512);
        assert!(e.iter().all(|&v| v == 0.0));
        let e = p.stat_offset_embedding([0.4, 0.2]);
        assert!(e.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn forward_shape_and_purity() {
        let p = init_params::<f32>(6, 0);
        let mut px: Vec<f32> = random_pixels(5, 6, 1).iter().map(|&v| v as f32).collect();
        px.copy_within(0..6, 18); // pixel 3 duplicates pixel 0
        let out = p.forward(&px, 30).unwrap();
        assert_eq!(out.len(), px.len());
        assert_eq!(out[0..6], out[18..24]);
        assert!(p.forward(&px[..7], 30).is_err());
    }

    #[test]
    fn forward_matches_single_pixel_evaluation() {
        // The batched path against explicit per-pixel composition of the embeddings.
        let p = init_params::<f64>(4, 8);
        let px = random_pixels(3, 4, 2);
        let out = p.forward(&px, 12).unwrap();
        let e_t = p.time_embedding(12);
        for r in 0..3 {
            let mut x = px[r * 4..(r + 1) * 4].to_vec();
            let e_s = p.stat_offset_embedding(stat_offset_features(&x));
            for l in &p.layers {
                let mut z = l.fc1.forward(&x, 1);
                let a = l.time_proj.forward(&e_t, 1);
                let b = l.stat_proj.forward(&e_s, 1);
                for j in 0..z.len() {
                    z[j] = (z[j] + a[j] + b[j]).tanh();
                }
                let mut y = l.fc2.forward(&z, 1);
                let s = match &l.skip {
                    Some(skip) => skip.forward(&x, 1),
                    None => x.clone(),
                };
                y.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                x = y;
            }
            let expected = p.head.forward(&x, 1);
            for j in 0..4 {
                assert!((out[r * 4 + j] - expected[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_loss_at_own_output() {
        let p = init_params::<f64>(5, 4);
        let px = random_pixels(4, 5, 3);
        let target = p.forward(&px, 7).unwrap();
        let (loss, grads) = p.backward(&px, &target, 7).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().iter().all(|t| t.data.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn tensors_and_mut_views_align() {
        let mut p = init_params::<f32>(3, 0);
        let lens: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
        let mut_lens: Vec<usize> = p.tensors_mut().iter().map(|t| t.len()).collect();
        assert_eq!(lens, mut_lens);
        let shapes_ok = p.tensors().iter().all(|t| t.shape.iter().product::<usize>() == t.data.len());
        assert!(shapes_ok);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]

        #[test]
        fn permuting_pixels_permutes_output(seed in 0u64..1000, shift in 1usize..6) {
            let p = init_params::<f64>(4, seed);
            let px = random_pixels(6, 4, seed + 1);
            let mut rotated = px.clone();
            rotated.rotate_left(shift * 4);
            let out = p.forward(&px, 3).unwrap();
            let mut out_rot = p.forward(&rotated, 3).unwrap();
            out_rot.rotate_right(shift * 4);
            for (a, b) in out.iter().zip(&out_rot) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn loss_is_nonnegative(seed in 0u64..1000) {
            let p = init_params::<f64>(3, seed);
            let px = random_pixels(4, 3, seed);
            let target = random_pixels(4, 3, seed + 7);
            let (loss, _) = p.backward(&px, &target, 5).unwrap();
            proptest::prop_assert!(loss >= 0.0 && loss.is_finite());
        }
    }
}
