//! Luma PSNR and SSIM.
//!
//! Image-level entry points quantise both inputs to 8 bits, convert to
//! BT.601 luma and shave `border` pixels from every side. Plane-level entry
//! points take luma on the [0, 1] scale directly.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{rgb_to_y, ImageBuffer, LumaPlane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("border {border} leaves nothing of a {h}x{w} image")]
    BorderTooLarge { border: usize, h: usize, w: usize },
    #[error("{h}x{w} region is smaller than the {window}x{window} SSIM window")]
    TooSmall { h: usize, w: usize, window: usize },
}

fn shave(a: &LumaPlane, b: &LumaPlane, border: usize) -> Result<(LumaPlane, LumaPlane), MetricError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(MetricError::DimensionMismatch {
            a: (a.height, a.width),
            b: (b.height, b.width),
        });
    }
    let (h, w) = (a.height, a.width);
    if 2 * border >= h || 2 * border >= w {
        return Err(MetricError::BorderTooLarge { border, h, w });
    }
    let crop = |p: &LumaPlane| LumaPlane::from_fn(h - 2 * border, w - 2 * border, |y, x| p.at(y + border, x + border));
    Ok((crop(a), crop(b)))
}

fn luma_u8(img: &ImageBuffer) -> LumaPlane {
    rgb_to_y(&img.to_u8())
}

/// `10 log10(1 / MSE)` on [0, 1] luma; `+inf` for identical planes.
pub fn psnr_planes(a: &LumaPlane, b: &LumaPlane, border: usize) -> Result<f64, MetricError> {
    let (a, b) = shave(a, b, border)?;
    let sse: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

pub fn psnr_y(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<f64, MetricError> {
    psnr_planes(&luma_u8(a), &luma_u8(b), border)
}

/// Normalised `SSIM_WINDOW`-tap Gaussian.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over valid window positions only.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut mid = vec![0.0; h * ow];
    mid.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let s = &src[y * w..(y + 1) * w];
        for (x, v) in row.iter_mut().enumerate() {
            *v = g.iter().zip(&s[x..x + SSIM_WINDOW]).map(|(k, p)| k * p).sum();
        }
    });
    let mut out = vec![0.0; oh * ow];
    out.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = g.iter().enumerate().map(|(i, k)| k * mid[(y + i) * ow + x]).sum();
        }
    });
    out
}

/// Mean SSIM over all valid windows, computed on the 0-255 luma scale.
pub fn ssim_planes(a: &LumaPlane, b: &LumaPlane, border: usize) -> Result<f64, MetricError> {
    let (a, b) = shave(a, b, border)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let x: Vec<f64> = a.data.iter().map(|v| v * 255.0).collect();
    let y: Vec<f64> = b.data.iter().map(|v| v * 255.0).collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(s, t)| s * t).collect() };
    let g = gaussian_taps();
    let mu_x = filter_valid(&x, h, w, &g);
    let mu_y = filter_valid(&y, h, w, &g);
    let e_xx = filter_valid(&prod(&x, &x), h, w, &g);
    let e_yy = filter_valid(&prod(&y, &y), h, w, &g);
    let e_xy = filter_valid(&prod(&x, &y), h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2));
    }
    Ok(total / mu_x.len() as f64)
}

pub fn ssim_y(a: &ImageBuffer, b: &ImageBuffer, border: usize) -> Result<f64, MetricError> {
    ssim_planes(&luma_u8(a), &luma_u8(b), border)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Scores an SR output against its ground truth.
pub fn score(name: &str, sr: &ImageBuffer, hr: &ImageBuffer, border: usize) -> Result<ImageScore, MetricError> {
    Ok(ImageScore {
        name: name.to_string(),
        psnr_db: psnr_y(sr, hr, border)?,
        ssim: ssim_y(sr, hr, border)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricResult {
    pub psnr_db: f64,
    pub ssim: f64,
    pub n_images: usize,
}

/// Arithmetic means in input order. Infinite PSNR values are left out of the
/// PSNR mean; if every value is infinite the mean is `+inf`.
pub fn aggregate(scores: &[ImageScore]) -> MetricResult {
    let finite: Vec<f64> = scores.iter().map(|s| s.psnr_db).filter(|p| p.is_finite()).collect();
    let skipped = scores.len() - finite.len();
    if skipped > 0 {
        log::warn!("{skipped} image(s) identical to ground truth; excluded from mean PSNR");
    }
    let psnr_db = if finite.is_empty() {
        if scores.is_empty() {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let ssim = if scores.is_empty() {
        f64::NAN
    } else {
        scores.iter().map(|s| s.ssim).sum::<f64>() / scores.len() as f64
    };
    MetricResult {
        psnr_db,
        ssim,
        n_images: scores.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_normalised_and_symmetric() {
        let g = gaussian_taps();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn aggregate_excludes_infinite() {
        let s = |p| ImageScore {
            name: String::new(),
            psnr_db: p,
            ssim: 1.0,
        };
        let r = aggregate(&[s(30.0), s(f64::INFINITY), s(40.0)]);
        assert_eq!(r.psnr_db, 35.0);
        assert_eq!(r.n_images, 3);
        assert_eq!(aggregate(&[s(f64::INFINITY)]).psnr_db, f64::INFINITY);
    }

    #[test]
    fn border_errors() {
        let p = LumaPlane::from_fn(4, 4, |_, _| 0.5);
        assert!(matches!(psnr_planes(&p, &p, 2), Err(MetricError::BorderTooLarge { .. })));
        assert!(matches!(ssim_planes(&p, &p, 0), Err(MetricError::TooSmall { .. })));
    }
}
