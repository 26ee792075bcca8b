use rand::Rng;

use crate::data::{DataError, ImageBuffer};
use crate::tensor::Tensor;

/// Element of the dihedral group of the square: an optional horizontal flip
/// followed by `quarter_turns` counter-clockwise rotations by 90 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Augmentation {
    pub quarter_turns: u8,
    pub hflip: bool,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        hflip: false,
    };

    pub fn all() -> [Augmentation; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, a) in out.iter_mut().enumerate() {
            *a = Augmentation {
                quarter_turns: (i % 4) as u8,
                hflip: i >= 4,
            };
        }
        out
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let i = rng.gen_range(0..8usize);
        Augmentation {
            quarter_turns: (i % 4) as u8,
            hflip: i >= 4,
        }
    }

    pub fn rotation_degrees(&self) -> u32 {
        90 * self.quarter_turns as u32
    }

    /// Flipped elements are reflections and therefore self-inverse.
    pub fn inverse(&self) -> Self {
        if self.hflip {
            *self
        } else {
            Augmentation {
                quarter_turns: (4 - self.quarter_turns % 4) % 4,
                hflip: false,
            }
        }
    }

    /// Applies `self` after `first`.
    pub fn compose(&self, first: &Augmentation) -> Self {
        // R^a F^f then R^b F^g: F R^a = R^-a F
        let (a, f) = (first.quarter_turns % 4, first.hflip);
        let (b, g) = (self.quarter_turns % 4, self.hflip);
        let turns = if g { (b + 4 - a) % 4 } else { (a + b) % 4 };
        Augmentation {
            quarter_turns: turns,
            hflip: f ^ g,
        }
    }

    /// Transforms every s x s plane of an (N, C, s, s) tensor.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor, DataError> {
        let sh = t.shape();
        if sh.h != sh.w {
            return Err(DataError::Dimensions(format!("augmentation needs square planes, got {sh}")));
        }
        let s = sh.h;
        let mut out = Vec::with_capacity(t.numel());
        for plane in t.data().chunks_exact(s * s) {
            out.extend(self.apply_plane(plane, s));
        }
        Ok(Tensor::from_vec(sh, out)?)
    }

    fn apply_plane(&self, src: &[f32], s: usize) -> Vec<f32> {
        let mut cur: Vec<f32> = if self.hflip {
            (0..s * s).map(|i| src[(i / s) * s + (s - 1 - i % s)]).collect()
        } else {
            src.to_vec()
        };
        for _ in 0..self.quarter_turns % 4 {
            // counter-clockwise: out[y][x] = in[x][s - 1 - y]
            cur = (0..s * s).map(|i| cur[(i % s) * s + (s - 1 - i / s)]).collect();
        }
        cur
    }
}

/// Aligned LR/HR training crop. `origin` is the top-left LR pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub lr: Tensor,
    pub hr: Tensor,
    pub augmentation: Augmentation,
    pub origin: (usize, usize),
}

fn check_pair(hr: &ImageBuffer, lr: &ImageBuffer, p: usize, r: usize) -> Result<(), DataError> {
    if r == 0 || p == 0 {
        return Err(DataError::Dimensions("patch size and scale must be positive".into()));
    }
    if hr.height() != lr.height() * r || hr.width() != lr.width() * r {
        return Err(DataError::ScaleMismatch {
            hr: (hr.height(), hr.width()),
            lr: (lr.height(), lr.width()),
            scale: r,
        });
    }
    if p > lr.height() || p > lr.width() {
        return Err(DataError::PatchTooLarge {
            patch: p,
            lr: (lr.height(), lr.width()),
        });
    }
    Ok(())
}

/// Uniform random origin and augmentation.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    p: usize,
    r: usize,
    rng: &mut R,
) -> Result<PatchSample, DataError> {
    check_pair(hr, lr, p, r)?;
    let y = rng.gen_range(0..=lr.height() - p);
    let x = rng.gen_range(0..=lr.width() - p);
    let aug = Augmentation::random(rng);
    extract_patch(hr, lr, p, r, (y, x), aug)
}

/// Deterministic crop at LR `origin`, with the HR window at `r * origin`.
pub fn extract_patch(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    p: usize,
    r: usize,
    origin: (usize, usize),
    augmentation: Augmentation,
) -> Result<PatchSample, DataError> {
    check_pair(hr, lr, p, r)?;
    let (y, x) = origin;
    let lr_crop = lr.crop(y, x, p, p)?.to_tensor();
    let hr_crop = hr.crop(y * r, x * r, p * r, p * r)?.to_tensor();
    Ok(PatchSample {
        lr: augmentation.apply(&lr_crop)?,
        hr: augmentation.apply(&hr_crop)?,
        augmentation,
        origin,
    })
}

/// Stacks samples into (B, 3, p, p) and (B, 3, rp, rp) batches.
pub fn collate(samples: &[PatchSample]) -> Result<(Tensor, Tensor), DataError> {
    let lr: Vec<Tensor> = samples.iter().map(|s| s.lr.clone()).collect();
    let hr: Vec<Tensor> = samples.iter().map(|s| s.hr.clone()).collect();
    if lr.is_empty() {
        return Err(DataError::Dimensions("empty batch".into()));
    }
    Ok((Tensor::stack_batch(&lr)?, Tensor::stack_batch(&hr)?))
}
