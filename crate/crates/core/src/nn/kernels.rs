//! Forward and backward loops for the primitive layers.
//!
//! Every spatial convolution is a "same" zero-padded cross-correlation
//! (no kernel flip). Output planes are computed independently and each
//! output element accumulates its terms in a fixed (input channel, row
//! tap, column tap) order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::tensor::{Real, Shape, Tensor, TensorError};

/// `out[y][x] += alpha * inp[y + dy][x + dx]` wherever the source is in bounds.
#[inline]
fn shifted_axpy<T: Real>(out: &mut [T], inp: &[T], h: usize, w: usize, dy: isize, dx: isize, alpha: T) {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let src_row = (y as isize + dy) as usize * w;
        let src = &inp[(src_row as isize + x0 as isize + dx) as usize..][..x1 - x0];
        let dst = &mut out[y * w + x0..y * w + x1];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + alpha * *s;
        }
    }
}

/// `sum_{y,x} a[y][x] * b[y + dy][x + dx]` over in-bounds positions.
#[inline]
fn shifted_dot<T: Real>(a: &[T], b: &[T], h: usize, w: usize, dy: isize, dx: isize) -> T {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    let mut acc = T::zero();
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let src_row = (y as isize + dy) as usize * w;
        let bs = &b[(src_row as isize + x0 as isize + dx) as usize..][..x1 - x0];
        let as_ = &a[y * w + x0..y * w + x1];
        let row: T = as_.iter().zip(bs).map(|(p, q)| *p * *q).sum();
        acc = acc + row;
    }
    acc
}

/// Rows `y` (or columns) for which `y + d` lies in `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

fn plane_sum<T: Real>(p: &[T]) -> T {
    p.iter().copied().sum()
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<(), TensorError> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: Shape::vector(channels),
                rhs: b.shape(),
            });
        }
    }
    Ok(())
}

fn check_odd_square(op: &'static str, s: Shape) -> Result<usize, TensorError> {
    if s.h != s.w || s.h.is_multiple_of(2) {
        return Err(TensorError::InvalidShape {
            op,
            msg: format!("kernel must be square with odd size, got {s}"),
        });
    }
    Ok(s.h)
}

/// Gradients requested from a backward kernel.
#[derive(Debug, Clone, Copy)]
pub struct Needs {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

#[derive(Debug, Default)]
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

// ---------------------------------------------------------------------------
// dense k x k convolution (k = 1 is the pointwise case)

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = check_odd_square("conv2d", ws)?;
    if ws.c != xs.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    }
    check_bias("conv2d", bias, ws.n)?;
    let (cin, cout, h, w) = (xs.c, ws.n, xs.h, xs.w);
    let plane = h * w;
    let pad = (k / 2) as isize;
    let out_shape = Shape::new(xs.n, cout, h, w);
    let mut out = Tensor::zeros(out_shape);
    if plane == 0 {
        return Ok(out);
    }
    let xd = x.data();
    let wd = weight.data();
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (n, o) = (idx / cout, idx % cout);
            if let Some(b) = bias {
                dst.fill(b.data()[o]);
            }
            for i in 0..cin {
                let src = &xd[(n * cin + i) * plane..][..plane];
                let taps = &wd[(o * cin + i) * k * k..][..k * k];
                if k == 1 {
                    let a = taps[0];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + a * *s;
                    }
                    continue;
                }
                for u in 0..k {
                    for v in 0..k {
                        let dy = u as isize - pad;
                        let dx = v as isize - pad;
                        shifted_axpy(dst, src, h, w, dy, dx, taps[u * k + v]);
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    needs: Needs,
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = ws.h;
    let (nb, cin, cout, h, w) = (xs.n, xs.c, ws.n, xs.h, xs.w);
    let plane = h * w;
    let pad = (k / 2) as isize;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut grads = ConvGrads::default();

    if needs.input {
        let mut dx = Tensor::zeros(xs);
        if plane > 0 {
            dx.data_mut()
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(idx, dst)| {
                    let (n, i) = (idx / cin, idx % cin);
                    for o in 0..cout {
                        let g = &gd[(n * cout + o) * plane..][..plane];
                        let taps = &wd[(o * cin + i) * k * k..][..k * k];
                        for u in 0..k {
                            for v in 0..k {
                                let dy = u as isize - pad;
                                let dx = v as isize - pad;
                                shifted_axpy(dst, g, h, w, -dy, -dx, taps[u * k + v]);
                            }
                        }
                    }
                });
        }
        grads.input = Some(dx);
    }
    if needs.weight {
        let mut dw = Tensor::zeros(ws);
        dw.data_mut()
            .par_chunks_mut(cin * k * k)
            .enumerate()
            .for_each(|(o, dst)| {
                for i in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let dy = u as isize - pad;
                            let dx = v as isize - pad;
                            let mut acc = T::zero();
                            for n in 0..nb {
                                let g = &gd[(n * cout + o) * plane..][..plane];
                                let src = &xd[(n * cin + i) * plane..][..plane];
                                acc = acc + shifted_dot(g, src, h, w, dy, dx);
                            }
                            dst[(i * k + u) * k + v] = acc;
                        }
                    }
                }
            });
        grads.weight = Some(dw);
    }
    if needs.bias {
        grads.bias = Some(bias_grad(grad_out));
    }
    grads
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let s = grad_out.shape();
    let gd = grad_out.data();
    let plane = s.plane();
    Tensor::from_fn(Shape::vector(s.c), |c| {
        (0..s.n)
            .map(|n| plane_sum(&gd[(n * s.c + c) * plane..][..plane]))
            .sum()
    })
}

// ---------------------------------------------------------------------------
// depth-wise convolution

pub fn dwconv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = check_odd_square("dwconv", ws)?;
    if ws.n != xs.c || ws.c != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "dwconv",
            lhs: xs,
            rhs: ws,
        });
    }
    check_bias("dwconv", bias, xs.c)?;
    let (c, h, w) = (xs.c, xs.h, xs.w);
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(xs);
    if plane == 0 {
        return Ok(out);
    }
    let xd = x.data();
    let wd = weight.data();
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let ch = idx % c;
            if let Some(b) = bias {
                dst.fill(b.data()[ch]);
            }
            let src = &xd[idx * plane..][..plane];
            let taps = &wd[ch * k * k..][..k * k];
            for u in 0..k {
                for v in 0..k {
                    shifted_axpy(dst, src, h, w, u as isize - pad, v as isize - pad, taps[u * k + v]);
                }
            }
        });
    Ok(out)
}

pub fn dwconv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    needs: Needs,
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let k = ws.h;
    let (nb, c, h, w) = (xs.n, xs.c, xs.h, xs.w);
    let plane = h * w;
    let pad = (k / 2) as isize;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut grads = ConvGrads::default();

    if needs.input {
        let mut dx = Tensor::zeros(xs);
        if plane > 0 {
            dx.data_mut()
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(idx, dst)| {
                    let ch = idx % c;
                    let g = &gd[idx * plane..][..plane];
                    let taps = &wd[ch * k * k..][..k * k];
                    for u in 0..k {
                        for v in 0..k {
                            let dy = u as isize - pad;
                            let dx = v as isize - pad;
                            shifted_axpy(dst, g, h, w, -dy, -dx, taps[u * k + v]);
                        }
                    }
                });
        }
        grads.input = Some(dx);
    }
    if needs.weight {
        let mut dw = Tensor::zeros(ws);
        dw.data_mut()
            .par_chunks_mut(k * k)
            .enumerate()
            .for_each(|(ch, dst)| {
                for u in 0..k {
                    for v in 0..k {
                        let mut acc = T::zero();
                        for n in 0..nb {
                            let g = &gd[(n * c + ch) * plane..][..plane];
                            let src = &xd[(n * c + ch) * plane..][..plane];
                            acc = acc + shifted_dot(g, src, h, w, u as isize - pad, v as isize - pad);
                        }
                        dst[u * k + v] = acc;
                    }
                }
            });
        grads.weight = Some(dw);
    }
    if needs.bias {
        grads.bias = Some(bias_grad(grad_out));
    }
    grads
}

// ---------------------------------------------------------------------------
// GELU, exact erf form

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(FRAC_1_SQRT_2)).erf());
    let pdf = T::of(INV_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}

pub fn gelu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let xd = x.data();
    let gd = grad_out.data();
    Tensor::from_fn(x.shape(), |i| gd[i] * gelu_grad_scalar(xd[i]))
}

// ---------------------------------------------------------------------------
// softmax over a flat vector

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Competition weights for the three edge-preserving branches.
pub fn softmax3<T: Real>(logits: [T; 3]) -> [T; 3] {
    let s = softmax(&logits);
    [s[0], s[1], s[2]]
}

pub fn softmax_backward<T: Real>(probs: &[T], grad_out: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_out).map(|(p, g)| *p * *g).sum();
    probs.iter().zip(grad_out).map(|(p, g)| *p * (*g - dot)).collect()
}

// ---------------------------------------------------------------------------
// pixel shuffle: out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]

pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(TensorError::InvalidShape {
            op: "pixel_shuffle",
            msg: format!("{} channels not divisible by r^2 = {}", s.c, r * r),
        });
    }
    let c_out = s.c / (r * r);
    let out_shape = Shape::new(s.n, c_out, s.h * r, s.w * r);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    let (ow, oplane) = (s.w * r, s.h * r * s.w * r);
    for n in 0..s.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src_c = c * r * r + i * r + j;
                    let src = &xd[(n * s.c + src_c) * s.plane()..][..s.plane()];
                    let dst = &mut od[(n * c_out + c) * oplane..][..oplane];
                    for h in 0..s.h {
                        for w in 0..s.w {
                            dst[(h * r + i) * ow + w * r + j] = src[h * s.w + w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; this is also its backward rule.
pub fn pixel_unshuffle<T: Real>(y: &Tensor<T>, r: usize) -> Result<Tensor<T>, TensorError> {
    let s = y.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(TensorError::InvalidShape {
            op: "pixel_unshuffle",
            msg: format!("spatial size {}x{} not divisible by {}", s.h, s.w, r),
        });
    }
    let (h, w) = (s.h / r, s.w / r);
    let c_in = s.c * r * r;
    let mut out = Tensor::zeros(Shape::new(s.n, c_in, h, w));
    let yd = y.data();
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = &yd[(n * s.c + c) * s.plane()..][..s.plane()];
            for i in 0..r {
                for j in 0..r {
                    let dst_c = c * r * r + i * r + j;
                    let dst = &mut od[(n * c_in + dst_c) * h * w..][..h * w];
                    for hh in 0..h {
                        for ww in 0..w {
                            dst[hh * w + ww] = src[(hh * r + i) * s.w + ww * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_clips_shifts() {
        assert_eq!(valid_range(5, 0), (0, 5));
        assert_eq!(valid_range(5, 2), (0, 3));
        assert_eq!(valid_range(5, -2), (2, 5));
        assert_eq!(valid_range(2, 4), (0, 0));
        assert_eq!(valid_range(2, -4), (2, 2));
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(2, 1, 2, 2));
        assert!(matches!(
            dwconv_forward(&x, &w, None),
            Err(TensorError::InvalidShape { op: "dwconv", .. })
        ));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax3([1000.0f32, 0.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1] < 1e-30);
        let p = softmax3([0.0f32; 3]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-7));
    }

    #[test]
    fn shuffle_rejects_indivisible_channels() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 6, 2, 2));
        assert!(pixel_shuffle(&x, 2).is_err());
    }
}
