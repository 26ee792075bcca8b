use rayon::prelude::*;

use crate::data::{DataError, ImageBuffer};

const A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Normalised taps for one axis: `taps[i]` lists `(source index, weight)`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    // downscaling stretches the kernel by 1/scale
    let (stretch, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    let n_taps = width.ceil() as i64 + 2;
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(n_taps as usize);
            let mut total = 0.0;
            for t in 0..n_taps {
                let j = left + t;
                let w = stretch * keys_cubic(stretch * (u - j as f64));
                if w == 0.0 {
                    continue;
                }
                let src = j.clamp(0, in_len as i64 - 1) as usize;
                total += w;
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(slot) => slot.1 += w,
                    None => taps.push((src, w)),
                }
            }
            for tap in &mut taps {
                tap.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable antialiased bicubic resize. Sample centres map as
/// `u = (i + 0.5) / scale - 0.5`; out-of-range taps are clamped to the edge.
/// The result is real-valued and unclamped.
pub fn bicubic_resize(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer, DataError> {
    if out_h == 0 || out_w == 0 {
        return Err(DataError::Dimensions(format!("zero-sized resize target {out_h}x{out_w}")));
    }
    let (in_h, in_w) = (img.height(), img.width());
    let col_taps = axis_taps(in_w, out_w);
    let row_taps = axis_taps(in_h, out_h);

    // horizontal pass: in_h x out_w x 3
    let mut mid = vec![0.0f64; in_h * out_w * 3];
    mid.par_chunks_mut(out_w * 3).enumerate().for_each(|(y, row)| {
        for (x, taps) in col_taps.iter().enumerate() {
            for c in 0..3 {
                row[x * 3 + c] = taps.iter().map(|&(s, w)| w * img.get(y, s, c) as f64).sum();
            }
        }
    });

    // vertical pass
    let mut out = vec![0.0f32; out_h * out_w * 3];
    out.par_chunks_mut(out_w * 3).enumerate().for_each(|(y, row)| {
        let taps = &row_taps[y];
        for (i, v) in row.iter_mut().enumerate() {
            let acc: f64 = taps.iter().map(|&(s, w)| w * mid[s * out_w * 3 + i]).sum();
            *v = acc as f32;
        }
    });
    ImageBuffer::from_real(out_h, out_w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(keys_cubic(0.0), 1.0);
        assert_eq!(keys_cubic(1.0), 0.0);
        assert_eq!(keys_cubic(2.0), 0.0);
        assert!((keys_cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((keys_cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn taps_sum_to_one() {
        for (i, o) in [(8, 4), (7, 3), (4, 9), (5, 5), (1, 3)] {
            for taps in axis_taps(i, o) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_target_rejected() {
        let img = ImageBuffer::from_u8(2, 2, vec![0; 12]).unwrap();
        assert!(bicubic_resize(&img, 0, 2).is_err());
    }
}
