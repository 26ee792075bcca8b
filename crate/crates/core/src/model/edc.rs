//! Edge-preserving depth-wise convolution.
//!
//! Five parallel 3x3 depth-wise branches: one learnable kernel plus two
//! Sobel and two Laplacian kernels that stay fixed. The branch outputs are
//! mixed by softmax competition weights `(a1, a2, a3)`:
//!
//! ```text
//! out = a1 (K3 * x + B3)
//!     + a2 (Kdx * x + Bdx + Kdy * x + Bdy)
//!     + a3 (Kl4 * x + Bl4 + Kl8 * x + Bl8)
//! ```
//!
//! Every branch is linear in `x`, so for inference the whole layer collapses
//! into one depth-wise convolution (see [`EdcWeights::fuse`]).

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::model::ModelError;
use crate::nn::{join, kernels, DwConvWeights, Parameters};
use crate::tensor::{Real, Shape, Tensor, TensorError};

/// Horizontal Sobel filter, row-major, applied as cross-correlation.
pub const SOBEL_X: [f32; 9] = [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0];
/// Vertical Sobel filter.
pub const SOBEL_Y: [f32; 9] = [1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0];
/// 4-neighbourhood Laplacian.
pub const LAPLACE_4: [f32; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
/// 8-neighbourhood Laplacian.
pub const LAPLACE_8: [f32; 9] = [1.0, 1.0, 1.0, 1.0, -8.0, 1.0, 1.0, 1.0, 1.0];

/// Repeats a 3x3 kernel over `channels` depth-wise slices.
pub fn expand_kernel(kernel: &[f32; 9], channels: usize) -> Tensor {
    Tensor::from_fn(Shape::new(channels, 1, 3, 3), |i| kernel[i % 9])
}

/// The four gradient-prior kernels, each expanded to (C,1,3,3).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedKernels {
    pub sobel_x: Tensor,
    pub sobel_y: Tensor,
    pub lap4: Tensor,
    pub lap8: Tensor,
}

impl FixedKernels {
    pub fn new(channels: usize) -> Self {
        Self {
            sobel_x: expand_kernel(&SOBEL_X, channels),
            sobel_y: expand_kernel(&SOBEL_Y, channels),
            lap4: expand_kernel(&LAPLACE_4, channels),
            lap8: expand_kernel(&LAPLACE_8, channels),
        }
    }

    /// True when every slice equals its reference matrix bit for bit.
    pub fn is_pristine(&self) -> bool {
        let same = |t: &Tensor, k: &[f32; 9]| {
            t.shape().c == 1
                && t.shape().h == 3
                && t.shape().w == 3
                && t.data().chunks(9).all(|s| s.iter().zip(k).all(|(a, b)| a.to_bits() == b.to_bits()))
        };
        same(&self.sobel_x, &SOBEL_X)
            && same(&self.sobel_y, &SOBEL_Y)
            && same(&self.lap4, &LAPLACE_4)
            && same(&self.lap8, &LAPLACE_8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdcWeights {
    /// Learnable 3x3 branch.
    pub conv: DwConvWeights,
    pub sobel_x_bias: Tensor,
    pub sobel_y_bias: Tensor,
    pub lap4_bias: Tensor,
    pub lap8_bias: Tensor,
    /// Raw competition logits, shape (3,1,1,1).
    pub logits: Tensor,
    fixed: FixedKernels,
}

impl EdcWeights {
    pub fn zeros(channels: usize) -> Self {
        let bias = || Tensor::zeros(Shape::vector(channels));
        Self {
            conv: DwConvWeights::zeros(channels, 3),
            sobel_x_bias: bias(),
            sobel_y_bias: bias(),
            lap4_bias: bias(),
            lap8_bias: bias(),
            logits: Tensor::zeros(Shape::vector(3)),
            fixed: FixedKernels::new(channels),
        }
    }

    /// Learnable kernel initialised fan-in uniform; biases and logits zero.
    pub fn init(channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: DwConvWeights::init(channels, 3, rng),
            ..Self::zeros(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.conv.channels()
    }

    pub fn fixed(&self) -> &FixedKernels {
        &self.fixed
    }

    /// Softmax of the logits.
    pub fn alphas(&self) -> [f64; 3] {
        let l = self.logits.data();
        kernels::softmax3([l[0] as f64, l[1] as f64, l[2] as f64])
    }

    /// Merges the five branches into a single depth-wise kernel and bias:
    /// `K = a1 K3 + a2 (Kdx + Kdy) + a3 (Kl4 + Kl8)` and
    /// `B = a1 B3 + a2 (Bdx + Bdy) + a3 (Bl4 + Bl8)`.
    pub fn fuse(&self) -> DwConvWeights {
        let [a1, a2, a3] = self.alphas();
        let c = self.channels();
        let k3 = self.conv.kernel.data();
        let f = &self.fixed;
        let kernel = Tensor::from_fn(Shape::new(c, 1, 3, 3), |i| {
            let sobel = f.sobel_x.data()[i] as f64 + f.sobel_y.data()[i] as f64;
            let lap = f.lap4.data()[i] as f64 + f.lap8.data()[i] as f64;
            (a1 * k3[i] as f64 + a2 * sobel + a3 * lap) as f32
        });
        let b3 = self.conv.bias.data();
        let bias = Tensor::from_fn(Shape::vector(c), |ch| {
            let sobel = self.sobel_x_bias.data()[ch] as f64 + self.sobel_y_bias.data()[ch] as f64;
            let lap = self.lap4_bias.data()[ch] as f64 + self.lap8_bias.data()[ch] as f64;
            (a1 * b3[ch] as f64 + a2 * sobel + a3 * lap) as f32
        });
        DwConvWeights { kernel, bias }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let logits = tape.param(join(name, "logits"), &self.logits);
        let alpha = tape.softmax(logits);

        let plain = self.conv.forward(tape, &join(name, "conv"), x)?;

        let f = &self.fixed;
        let branch = |tape: &mut Tape<T>, kernel: &Tensor, bias_name: &str, bias: &Tensor| {
            let k = tape.constant(kernel.cast());
            let b = tape.param(join(name, bias_name), bias);
            tape.dwconv(x, k, Some(b))
        };
        let dx = branch(tape, &f.sobel_x, "sobel_x.bias", &self.sobel_x_bias)?;
        let dy = branch(tape, &f.sobel_y, "sobel_y.bias", &self.sobel_y_bias)?;
        let l4 = branch(tape, &f.lap4, "lap4.bias", &self.lap4_bias)?;
        let l8 = branch(tape, &f.lap8, "lap8.bias", &self.lap8_bias)?;
        let sobel = tape.add(dx, dy)?;
        let lap = tape.add(l4, l8)?;

        let t1 = tape.scale_by(plain, alpha, 0)?;
        let t2 = tape.scale_by(sobel, alpha, 1)?;
        let t3 = tape.scale_by(lap, alpha, 2)?;
        let s = tape.add(t1, t2)?;
        tape.add(s, t3)
    }
}

impl Parameters for EdcWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv.visit(&join(prefix, "conv"), f);
        f(join(prefix, "sobel_x.bias"), &self.sobel_x_bias);
        f(join(prefix, "sobel_y.bias"), &self.sobel_y_bias);
        f(join(prefix, "lap4.bias"), &self.lap4_bias);
        f(join(prefix, "lap8.bias"), &self.lap8_bias);
        f(join(prefix, "logits"), &self.logits);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        f(join(prefix, "sobel_x.bias"), &mut self.sobel_x_bias);
        f(join(prefix, "sobel_y.bias"), &mut self.sobel_y_bias);
        f(join(prefix, "lap4.bias"), &mut self.lap4_bias);
        f(join(prefix, "lap8.bias"), &mut self.lap8_bias);
        f(join(prefix, "logits"), &mut self.logits);
    }
}

/// An edge-preserving layer in either training (branched) or inference
/// (fused) form.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Edc {
    Branched(EdcWeights),
    Fused(DwConvWeights),
}

impl Edc {
    pub fn is_fused(&self) -> bool {
        matches!(self, Edc::Fused(_))
    }

    pub fn branched(&self) -> Result<&EdcWeights, ModelError> {
        match self {
            Edc::Branched(w) => Ok(w),
            Edc::Fused(_) => Err(ModelError::State("edge-preserving layer is already fused".into())),
        }
    }

    pub fn fused(&self) -> Edc {
        match self {
            Edc::Branched(w) => Edc::Fused(w.fuse()),
            Edc::Fused(w) => Edc::Fused(w.clone()),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        match self {
            Edc::Branched(w) => w.forward(tape, name, x),
            Edc::Fused(w) => w.forward(tape, name, x),
        }
    }
}

impl Parameters for Edc {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        match self {
            Edc::Branched(w) => w.visit(prefix, f),
            Edc::Fused(w) => w.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match self {
            Edc::Branched(w) => w.visit_mut(prefix, f),
            Edc::Fused(w) => w.visit_mut(prefix, f),
        }
    }
}

/// Branched forward without gradient tracking.
pub fn edc_forward_branched(x: &Tensor, edc: &Edc) -> Result<Tensor, ModelError> {
    let w = edc.branched()?;
    let mut tape = Tape::<f32>::no_grad();
    let xv = tape.constant(x.clone());
    let y = w.forward(&mut tape, "edc", xv)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dwconv;

    #[test]
    fn fixed_kernels_match_reference() {
        let f = FixedKernels::new(5);
        assert!(f.is_pristine());
        assert_eq!(f.sobel_x.data()[9..18], SOBEL_X);
        assert_eq!(f.lap8.data()[36..45], LAPLACE_8);
    }

    #[test]
    fn equal_logits_average_all_five_kernels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::SeedableRng;
        let w = EdcWeights::init(2, &mut rng);
        let fused = w.fuse();
        for i in 0..18 {
            let j = i % 9;
            let expected = (w.conv.kernel.data()[i] + SOBEL_X[j] + SOBEL_Y[j] + LAPLACE_4[j] + LAPLACE_8[j]) / 3.0;
            assert!((fused.kernel.data()[i] - expected).abs() < 1e-6);
        }
        assert!(fused.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dominant_sobel_branch() {
        let mut w = EdcWeights::zeros(1);
        w.logits = Tensor::from_vec(Shape::vector(3), vec![0.0, 50.0, 0.0]).unwrap();
        let k = w.fuse().kernel;
        for j in 0..9 {
            assert!((k.data()[j] - (SOBEL_X[j] + SOBEL_Y[j])).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_input_vanishes_in_interior() {
        let w = Edc::Branched(EdcWeights::zeros(3));
        let x = Tensor::full(Shape::new(1, 3, 6, 6), 0.7);
        let y = edc_forward_branched(&x, &w).unwrap();
        for c in 0..3 {
            for h in 1..5 {
                for wi in 1..5 {
                    assert!(y.at(0, c, h, wi).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dominant_plain_branch() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        use rand::SeedableRng;
        let mut w = EdcWeights::init(2, &mut rng);
        w.logits = Tensor::from_vec(Shape::vector(3), vec![60.0, 0.0, 0.0]).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 2, 5, 5), |i| ((i * 7) % 11) as f32 / 11.0);
        let y = edc_forward_branched(&x, &Edc::Branched(w.clone())).unwrap();
        let plain = dwconv(&x, &w.conv).unwrap();
        assert!(y.max_abs_diff(&plain).unwrap() < 1e-5);
    }

    #[test]
    fn branched_access_on_fused_is_state_error() {
        let e = Edc::Branched(EdcWeights::zeros(2)).fused();
        assert!(matches!(e.branched(), Err(ModelError::State(_))));
        let x = Tensor::zeros(Shape::new(1, 2, 3, 3));
        assert!(matches!(edc_forward_branched(&x, &e), Err(ModelError::State(_))));
    }
}
