//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its output
//! value and the handles of its inputs. `backward` walks the nodes in reverse
//! recording order and accumulates gradients additively, so a value consumed
//! twice receives the sum of both contributions.

use std::collections::HashMap;

use crate::nn::kernels::{self, Needs};
use crate::tensor::{Real, Shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleBy { x: Var, s: Var, index: usize },
    Conv2d { x: Var, w: Var, b: Option<Var> },
    DwConv { x: Var, w: Var, b: Option<Var> },
    Gelu { x: Var },
    Softmax { x: Var },
    PixelShuffle { x: Var, r: usize },
    Sum { x: Var },
    L1 { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    record_grad: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `b` is either the same shape as `a` or a per-channel (1,C,1,1) vector.
fn broadcast_kind(op: &'static str, a: Shape, b: Shape) -> Result<bool, TensorError> {
    if a == b {
        Ok(false)
    } else if b == Shape::new(1, a.c, 1, 1) {
        Ok(true)
    } else {
        Err(TensorError::ShapeMismatch { op, lhs: a, rhs: b })
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            record_grad: true,
        }
    }

    /// A tape on which parameters are registered as constants; nothing on it
    /// requires a gradient.
    pub fn no_grad() -> Self {
        Self {
            record_grad: false,
            ..Self::new()
        }
    }

    pub fn records_grad(&self) -> bool {
        self.record_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Leaf whose gradient is tracked (when the tape records gradients).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let rg = self.record_grad;
        self.push(value, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient (inputs, targets, fixed kernels).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a named model parameter. The stored `f32` weights are cast to
    /// the tape's scalar type.
    pub fn param(&mut self, name: impl Into<String>, value: &Tensor<f32>) -> Var {
        let v = self.leaf(value.cast());
        self.params.push((name.into(), v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bcast = broadcast_kind("add", sa, sb)?;
        let av = self.value(a);
        let bd = self.value(b).data();
        let out = if bcast {
            let plane = sa.plane();
            Tensor::from_fn(sa, |i| av.data()[i] + bd[(i / plane) % sa.c])
        } else {
            Tensor::from_fn(sa, |i| av.data()[i] + bd[i])
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bcast = broadcast_kind("mul", sa, sb)?;
        let av = self.value(a);
        let bd = self.value(b).data();
        let out = if bcast {
            let plane = sa.plane();
            Tensor::from_fn(sa, |i| av.data()[i] * bd[(i / plane) % sa.c])
        } else {
            Tensor::from_fn(sa, |i| av.data()[i] * bd[i])
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Multiplies every element of `x` by the single component `s[index]`.
    pub fn scale_by(&mut self, x: Var, s: Var, index: usize) -> Result<Var, TensorError> {
        let len = self.value(s).numel();
        if index >= len {
            return Err(TensorError::InvalidShape {
                op: "scale_by",
                msg: format!("component {index} out of range for {len}-vector"),
            });
        }
        let alpha = self.value(s).data()[index];
        let out = self.value(x).map(|v| v * alpha);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy { x, s, index }, rg))
    }

    /// Dense same-padded convolution; a 1x1 kernel gives the pointwise layer.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b }, rg))
    }

    pub fn dwconv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let out = kernels::dwconv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::DwConv { x, w, b }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu_forward(self.value(x));
        let rg = self.rg(x);
        self.push(out, Op::Gelu { x }, rg)
    }

    /// Softmax over all elements of `x`, treated as one flat vector.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let probs = kernels::softmax(xv.data());
        let out = Tensor::from_vec(xv.shape(), probs).expect("softmax preserves length");
        let rg = self.rg(x);
        self.push(out, Op::Softmax { x }, rg)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var, TensorError> {
        let out = kernels::pixel_shuffle(self.value(x), r)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, rg)
    }

    /// Mean absolute difference. The subgradient at exact ties is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: sp,
                rhs: st,
            });
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let total: T = p.iter().zip(t).map(|(a, b)| (*a - *b).abs()).sum();
        let mean = total / T::of(p.len().max(1) as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(mean), Op::L1 { pred, target }, rg))
    }

    /// Accumulates d(loss)/d(v) into every recorded value that requires it.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.accumulate_grad(&[T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].value.take_grad() else {
                continue;
            };
            let out_shape = self.nodes[idx].value.shape();
            let grad = Tensor::from_vec(out_shape, g).expect("gradient matches value");
            let contributions = self.backward_rule(idx, &grad);
            self.nodes[idx].value.accumulate_grad(grad.data());
            for (v, c) in contributions {
                self.nodes[v.0].value.accumulate_grad(c.data());
            }
        }
        Ok(())
    }

    fn backward_rule(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if self.rg(a) {
                    out.push((a, g.clone()));
                }
                if self.rg(b) {
                    out.push((b, reduce_to(g, self.shape(b))));
                }
            }
            Op::Mul { a, b } => {
                let sa = self.shape(a);
                let sb = self.shape(b);
                let bcast = sa != sb;
                let plane = sa.plane();
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let gd = g.data();
                if self.rg(a) {
                    let ga = if bcast {
                        Tensor::from_fn(sa, |i| gd[i] * bd[(i / plane) % sa.c])
                    } else {
                        Tensor::from_fn(sa, |i| gd[i] * bd[i])
                    };
                    out.push((a, ga));
                }
                if self.rg(b) {
                    let prod = Tensor::from_fn(sa, |i| gd[i] * ad[i]);
                    out.push((b, reduce_to(&prod, sb)));
                }
            }
            Op::ScaleBy { x, s, index } => {
                let alpha = self.value(s).data()[index];
                if self.rg(x) {
                    out.push((x, g.map(|v| v * alpha)));
                }
                if self.rg(s) {
                    let dot: T = g.data().iter().zip(self.value(x).data()).map(|(a, b)| *a * *b).sum();
                    let mut gs = Tensor::zeros(self.shape(s));
                    gs.data_mut()[index] = dot;
                    out.push((s, gs));
                }
            }
            Op::Conv2d { x, w, b } | Op::DwConv { x, w, b } => {
                let needs = Needs {
                    input: self.rg(x),
                    weight: self.rg(w),
                    bias: b.is_some_and(|b| self.rg(b)),
                };
                let grads = if matches!(self.nodes[idx].op, Op::Conv2d { .. }) {
                    kernels::conv2d_backward(self.value(x), self.value(w), g, needs)
                } else {
                    kernels::dwconv_backward(self.value(x), self.value(w), g, needs)
                };
                if let Some(gx) = grads.input {
                    out.push((x, gx));
                }
                if let Some(gw) = grads.weight {
                    out.push((w, gw));
                }
                if let (Some(b), Some(gb)) = (b, grads.bias) {
                    out.push((b, gb));
                }
            }
            Op::Gelu { x } => out.push((x, kernels::gelu_backward(self.value(x), g))),
            Op::Softmax { x } => {
                let probs = self.nodes[idx].value.data();
                let gx = kernels::softmax_backward(probs, g.data());
                out.push((x, Tensor::from_vec(self.shape(x), gx).expect("same length")));
            }
            Op::PixelShuffle { x, r } => {
                out.push((x, kernels::pixel_unshuffle(g, r).expect("shape validated in forward")));
            }
            Op::Sum { x } => out.push((x, Tensor::full(self.shape(x), g.data()[0]))),
            Op::L1 { pred, target } => {
                let p = self.value(pred).data();
                let t = self.value(target).data();
                let scale = g.data()[0] / T::of(p.len().max(1) as f64);
                let sign = |d: T| {
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                let shape = self.shape(pred);
                if self.rg(pred) {
                    out.push((pred, Tensor::from_fn(shape, |i| sign(p[i] - t[i]))));
                }
                if self.rg(target) {
                    out.push((target, Tensor::from_fn(shape, |i| -sign(p[i] - t[i]))));
                }
            }
        }
        // A variable in its own gradient path cannot occur: inputs always precede outputs.
        out.retain(|(v, _)| v.0 < idx);
        out
    }

    /// Names of all registered parameters, in registration order.
    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Gradients of named parameters after `backward`. Parameters that did
    /// not receive a gradient are absent.
    pub fn param_grads(&self) -> HashMap<String, Tensor<T>> {
        self.params
            .iter()
            .filter_map(|(name, v)| {
                let g = self.grad(*v)?;
                let t = Tensor::from_vec(self.shape(*v), g.to_vec()).ok()?;
                Some((name.clone(), t))
            })
            .collect()
    }
}

/// Sums `g` down to `target`, which is either `g`'s shape or (1,C,1,1).
fn reduce_to<T: Real>(g: &Tensor<T>, target: Shape) -> Tensor<T> {
    let s = g.shape();
    if s == target {
        return g.clone();
    }
    let plane = s.plane();
    let gd = g.data();
    Tensor::from_fn(target, |c| {
        (0..s.n)
            .map(|n| gd[(n * s.c + c) * plane..][..plane].iter().copied().sum::<T>())
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn mul_hand_example() {
        let mut tape = Tape::<f64>::new();
        let s = Shape::new(1, 1, 1, 2);
        let a = tape.leaf(t(s, &[3.0, 4.0]));
        let b = tape.leaf(t(s, &[2.0, 0.0]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[6.0, 0.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut tape = Tape::<f32>::new();
        let s = Shape::new(1, 2, 2, 2);
        let a = tape.leaf(Tensor::from_fn(s, |i| i as f32 - 3.5));
        let ones = tape.constant(Tensor::ones(s));
        let c = tape.mul(a, ones).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(a).data());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 2, 2, 2)));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        let err = tape.add(a, b).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "add", .. }));
        assert!(err.to_string().contains("(1,2,2,2)"));
    }

    #[test]
    fn channel_broadcast() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(Shape::new(1, 2, 1, 1), &[10.0, 100.0]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[10.0, 20.0, 300.0, 400.0]);
        let l = tape.sum(c);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(b).unwrap(), &[3.0, 7.0]);
        assert_eq!(tape.grad(a).unwrap(), &[10.0, 10.0, 100.0, 100.0]);
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_fn(Shape::new(2, 3, 2, 1), |i| i as f32));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn half_square_gives_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(Shape::new(1, 1, 2, 2), &[0.5, -1.5, 2.0, 0.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.constant(Tensor::scalar(0.5));
        let l = tape.mul(s, half).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), tape.value(x).data());
    }

    #[test]
    fn double_use_adds_contributions() {
        let s = Shape::new(1, 1, 1, 3);
        let vals = [1.0, -2.0, 0.5];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(s, &vals));
        let y = tape.add(x, x).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert_eq!(tape.backward(x), Err(TensorError::NonScalarLoss(Shape::new(1, 1, 2, 2))));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut tape = Tape::<f32>::new();
        let k = tape.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
        let x = tape.leaf(Tensor::ones(Shape::new(1, 1, 4, 4)));
        let y = tape.dwconv(x, k, None).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert!(tape.grad(k).is_none());
        assert!(tape.grad(x).is_some());
    }

    #[test]
    fn l1_tie_has_zero_subgradient() {
        let mut tape = Tape::<f32>::new();
        let s = Shape::new(1, 1, 1, 2);
        let p = tape.leaf(Tensor::from_vec(s, vec![1.0, 3.0]).unwrap());
        let q = tape.constant(Tensor::from_vec(s, vec![1.0, 2.0]).unwrap());
        let l = tape.l1_loss(p, q).unwrap();
        assert_eq!(tape.value(l).data(), &[0.5]);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn no_grad_tape_params_are_constants() {
        let mut tape = Tape::<f32>::no_grad();
        let w = tape.param("w", &Tensor::ones(Shape::scalar()));
        assert!(!tape.requires_grad(w));
    }
}
