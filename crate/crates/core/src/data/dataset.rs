use std::path::{Path, PathBuf};

use crate::data::{bicubic_resize, load_png, DataError, ImageBuffer};

/// Centre-crops `hr` to a multiple of `r` and downsamples it by `r`.
/// The LR image is quantised to 8 bits so that synthesised pairs match
/// pairs read back from PNG.
pub fn degrade(hr: &ImageBuffer, r: usize) -> Result<(ImageBuffer, ImageBuffer), DataError> {
    let hr = hr.center_crop_to_multiple(r)?;
    let lr = bicubic_resize(&hr, hr.height() / r, hr.width() / r)?.to_u8();
    Ok((hr, lr))
}

/// Lexicographically sorted `*.png` files in `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, DataError> {
    let dir = dir.as_ref();
    let shown = dir.display().to_string();
    let entries = std::fs::read_dir(dir).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::NotFound(shown.clone())
        } else {
            DataError::Io {
                path: shown.clone(),
                source: e,
            }
        }
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| DataError::Io {
                path: shown.clone(),
                source,
            })?
            .path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ImagePair {
    pub name: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
}

/// In-memory set of aligned HR/LR pairs with `hr = r * lr` in both axes.
#[derive(Debug, Clone)]
pub struct Dataset {
    scale: usize,
    pairs: Vec<ImagePair>,
}

impl Dataset {
    /// Pairs each named HR image with its degraded counterpart.
    pub fn from_hr_images(images: Vec<(String, ImageBuffer)>, scale: usize) -> Result<Self, DataError> {
        let pairs = images
            .into_iter()
            .map(|(name, img)| {
                let (hr, lr) = degrade(&img, scale)?;
                Ok(ImagePair { name, hr, lr })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Self::from_pairs(pairs, scale)
    }

    pub fn from_pairs(pairs: Vec<ImagePair>, scale: usize) -> Result<Self, DataError> {
        if pairs.is_empty() {
            return Err(DataError::Empty);
        }
        for p in &pairs {
            if p.hr.height() != p.lr.height() * scale || p.hr.width() != p.lr.width() * scale {
                return Err(DataError::ScaleMismatch {
                    hr: (p.hr.height(), p.hr.width()),
                    lr: (p.lr.height(), p.lr.width()),
                    scale,
                });
            }
        }
        Ok(Self { scale, pairs })
    }

    /// Loads every PNG in `hr_dir`. A same-named file in `lr_dir` is used as
    /// the LR image when present; otherwise the LR image is synthesised.
    pub fn from_dir(hr_dir: impl AsRef<Path>, lr_dir: Option<&Path>, scale: usize) -> Result<Self, DataError> {
        let mut pairs = Vec::new();
        for path in list_pngs(hr_dir)? {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let img = load_png(&path)?;
            let lr_path = lr_dir.map(|d| d.join(&name)).filter(|p| p.is_file());
            let pair = match lr_path {
                Some(lp) => {
                    let lr = load_png(&lp)?;
                    let hr = img.center_crop_to_multiple(scale)?;
                    if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
                        return Err(DataError::ScaleMismatch {
                            hr: (hr.height(), hr.width()),
                            lr: (lr.height(), lr.width()),
                            scale,
                        });
                    }
                    ImagePair { name, hr, lr }
                }
                None => {
                    let (hr, lr) = degrade(&img, scale)?;
                    ImagePair { name, hr, lr }
                }
            };
            pairs.push(pair);
        }
        Self::from_pairs(pairs, scale)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn get(&self, i: usize) -> Option<&ImagePair> {
        self.pairs.get(i)
    }

    /// Smallest LR side over all pairs.
    pub fn min_lr_side(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.lr.height().min(p.lr.width()))
            .min()
            .unwrap_or(0)
    }
}
