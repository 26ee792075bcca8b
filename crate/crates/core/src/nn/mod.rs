//! Primitive layers: pointwise and dense convolutions, depth-wise
//! convolution, GELU, softmax and pixel shuffle.

pub mod kernels;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::tensor::{Real, Shape, Tensor, TensorError};

pub use kernels::{gelu_scalar, softmax3};

/// Kernel sizes accepted for depth-wise convolutions.
pub const DW_KERNEL_SIZES: [usize; 5] = [3, 5, 7, 9, 11];

/// Visits named parameter tensors in a fixed order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform fan-in initialisation with bound `1/sqrt(fan_in)`
/// (Kaiming-uniform with negative slope `sqrt(5)`).
pub fn kaiming_uniform(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1Weights {
    /// (C_out, C_in, 1, 1)
    pub kernel: Tensor,
    /// (C_out, 1, 1, 1)
    pub bias: Tensor,
}

impl Conv1x1Weights {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self, TensorError> {
        let ks = kernel.shape();
        if ks.h != 1 || ks.w != 1 || bias.shape() != Shape::vector(ks.n) {
            return Err(TensorError::InvalidShape {
                op: "conv1x1",
                msg: format!("kernel {ks} with bias {}", bias.shape()),
            });
        }
        Ok(Self { kernel, bias })
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            kernel: Tensor::zeros(Shape::new(c_out, c_in, 1, 1)),
            bias: Tensor::zeros(Shape::vector(c_out)),
        }
    }

    pub fn identity(c: usize) -> Self {
        let mut w = Self::zeros(c, c);
        for i in 0..c {
            w.kernel.data_mut()[i * c + i] = 1.0;
        }
        w
    }

    pub fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: kaiming_uniform(Shape::new(c_out, c_in, 1, 1), c_in, rng),
            bias: Tensor::zeros(Shape::vector(c_out)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(join(name, "weight"), &self.kernel);
        let b = tape.param(join(name, "bias"), &self.bias);
        tape.conv2d(x, w, Some(b))
    }
}

impl Parameters for Conv1x1Weights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Dense k x k convolution weights (shallow extractor, block tails, head).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// (C_out, C_in, k, k)
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvWeights {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Self {
            kernel: Tensor::zeros(Shape::new(c_out, c_in, k, k)),
            bias: Tensor::zeros(Shape::vector(c_out)),
        }
    }

    pub fn init(c_in: usize, c_out: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: kaiming_uniform(Shape::new(c_out, c_in, k, k), c_in * k * k, rng),
            bias: Tensor::zeros(Shape::vector(c_out)),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(join(name, "weight"), &self.kernel);
        let b = tape.param(join(name, "bias"), &self.bias);
        tape.conv2d(x, w, Some(b))
    }
}

impl Parameters for ConvWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwConvWeights {
    /// (C, 1, k, k)
    pub kernel: Tensor,
    /// (C, 1, 1, 1)
    pub bias: Tensor,
}

impl DwConvWeights {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self, TensorError> {
        let ks = kernel.shape();
        if ks.c != 1 || ks.h != ks.w || !DW_KERNEL_SIZES.contains(&ks.h) {
            return Err(TensorError::InvalidShape {
                op: "dwconv",
                msg: format!("kernel shape {ks}; expected (C,1,k,k) with k in {DW_KERNEL_SIZES:?}"),
            });
        }
        if bias.shape() != Shape::vector(ks.n) {
            return Err(TensorError::ShapeMismatch {
                op: "dwconv",
                lhs: Shape::vector(ks.n),
                rhs: bias.shape(),
            });
        }
        Ok(Self { kernel, bias })
    }

    pub fn zeros(c: usize, k: usize) -> Self {
        Self {
            kernel: Tensor::zeros(Shape::new(c, 1, k, k)),
            bias: Tensor::zeros(Shape::vector(c)),
        }
    }

    /// Centre tap 1, all else 0.
    pub fn identity(c: usize, k: usize) -> Self {
        let mut w = Self::zeros(c, k);
        let centre = (k / 2) * k + k / 2;
        for ch in 0..c {
            w.kernel.data_mut()[ch * k * k + centre] = 1.0;
        }
        w
    }

    pub fn init(c: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: kaiming_uniform(Shape::new(c, 1, k, k), k * k, rng),
            bias: Tensor::zeros(Shape::vector(c)),
        }
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().h
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(join(name, "weight"), &self.kernel);
        let b = tape.param(join(name, "bias"), &self.bias);
        tape.dwconv(x, w, Some(b))
    }
}

impl Parameters for DwConvWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.kernel);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.kernel);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

pub fn conv1x1(x: &Tensor, w: &Conv1x1Weights) -> Result<Tensor, TensorError> {
    kernels::conv2d_forward(x, &w.kernel, Some(&w.bias))
}

pub fn conv2d(x: &Tensor, w: &ConvWeights) -> Result<Tensor, TensorError> {
    kernels::conv2d_forward(x, &w.kernel, Some(&w.bias))
}

pub fn dwconv(x: &Tensor, w: &DwConvWeights) -> Result<Tensor, TensorError> {
    kernels::dwconv_forward(x, &w.kernel, Some(&w.bias))
}

pub fn gelu(x: &Tensor) -> Tensor {
    kernels::gelu_forward(x)
}

pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor, TensorError> {
    kernels::pixel_shuffle(x, r)
}
