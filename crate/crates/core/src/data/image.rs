use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::data::DataError;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    /// 8-bit sRGB code values.
    Srgb8,
    /// Real values, nominally in [0, 1].
    Real,
}

#[derive(Debug, Clone, PartialEq)]
enum Pixels {
    U8(Vec<u8>),
    Real(Vec<f32>),
}

/// Interleaved H x W x 3 RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    pixels: Pixels,
}

impl ImageBuffer {
    pub fn from_u8(height: usize, width: usize, data: Vec<u8>) -> Result<Self, DataError> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            pixels: Pixels::U8(data),
        })
    }

    pub fn from_real(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DataError> {
        check_dims(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            pixels: Pixels::Real(data),
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self, DataError> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_real(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> ColorSpace {
        match self.pixels {
            Pixels::U8(_) => ColorSpace::Srgb8,
            Pixels::Real(_) => ColorSpace::Real,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.pixels {
            Pixels::U8(d) => Some(d),
            Pixels::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f32]> {
        match &self.pixels {
            Pixels::Real(d) => Some(d),
            Pixels::U8(_) => None,
        }
    }

    /// Channel `c` at (`y`, `x`) on the real scale (u8 values divided by 255).
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        let i = (y * self.width + x) * 3 + c;
        match &self.pixels {
            Pixels::U8(d) => d[i] as f32 / 255.0,
            Pixels::Real(d) => d[i],
        }
    }

    pub fn to_real(&self) -> ImageBuffer {
        let data = match &self.pixels {
            Pixels::U8(d) => d.iter().map(|&v| v as f32 / 255.0).collect(),
            Pixels::Real(d) => d.clone(),
        };
        Self {
            pixels: Pixels::Real(data),
            ..*self
        }
    }

    /// Quantises to 8 bits: `round(v * 255)` clamped to [0, 255].
    pub fn to_u8(&self) -> ImageBuffer {
        let data = match &self.pixels {
            Pixels::U8(d) => d.clone(),
            Pixels::Real(d) => d.iter().map(|&v| quantize(v)).collect(),
        };
        Self {
            pixels: Pixels::U8(data),
            ..*self
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageBuffer, DataError> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(DataError::Dimensions(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let pixels = match &self.pixels {
            Pixels::U8(d) => Pixels::U8(crop_rows(d, self.width, (y0, x0), (h, w))),
            Pixels::Real(d) => Pixels::Real(crop_rows(d, self.width, (y0, x0), (h, w))),
        };
        Ok(Self {
            height: h,
            width: w,
            pixels,
        })
    }

    /// Centre crop to the largest size divisible by `r` in both axes.
    pub fn center_crop_to_multiple(&self, r: usize) -> Result<ImageBuffer, DataError> {
        let h = self.height / r * r;
        let w = self.width / r * r;
        if h == 0 || w == 0 {
            return Err(DataError::Dimensions(format!(
                "{}x{} image is smaller than scale {r}",
                self.height, self.width
            )));
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    /// (1, 3, H, W) tensor on the real scale.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(c * h + y) * w + x] = self.get(y, x, c);
                }
            }
        }
        Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("sizes match")
    }

    /// Real-valued image from batch item `n` of a (N, 3, H, W) tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<ImageBuffer, DataError> {
        let s = t.shape();
        if s.c != 3 || n >= s.n {
            return Err(DataError::Dimensions(format!("cannot take image {n} of tensor {s}")));
        }
        let mut data = Vec::with_capacity(3 * s.plane());
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    data.push(t.at(n, c, y, x));
                }
            }
        }
        ImageBuffer::from_real(s.h, s.w, data)
    }
}

fn crop_rows<V: Copy>(src: &[V], width: usize, (y0, x0): (usize, usize), (h, w): (usize, usize)) -> Vec<V> {
    (y0..y0 + h)
        .flat_map(|y| {
            let start = (y * width + x0) * 3;
            src[start..start + w * 3].iter().copied()
        })
        .collect()
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn check_dims(h: usize, w: usize, len: usize) -> Result<(), DataError> {
    if h == 0 || w == 0 {
        return Err(DataError::Dimensions(format!("empty image {h}x{w}")));
    }
    if len != h * w * 3 {
        return Err(DataError::Dimensions(format!("{len} values for a {h}x{w}x3 image")));
    }
    Ok(())
}

/// Single-channel luma plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaPlane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LumaPlane {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// BT.601 studio-swing luma on the [0, 1] scale:
/// `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`.
pub fn rgb_to_y(img: &ImageBuffer) -> LumaPlane {
    LumaPlane::from_fn(img.height(), img.width(), |y, x| {
        let r = img.get(y, x, 0) as f64;
        let g = img.get(y, x, 1) as f64;
        let b = img.get(y, x, 2) as f64;
        (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PngOptions {
    /// Reject 16-bit, palette and alpha images instead of converting them.
    pub strict: bool,
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBuffer, DataError> {
    load_png_with(path, PngOptions::default())
}

/// Reads an 8-bit RGB PNG. Palette, 16-bit and RGBA inputs are converted to
/// 8-bit RGB with a warning unless `strict` is set; grayscale is rejected.
pub fn load_png_with(path: impl AsRef<Path>, opts: PngOptions) -> Result<ImageBuffer, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::NotFound(shown.clone())
        } else {
            DataError::Io {
                path: shown.clone(),
                source: e,
            }
        }
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let corrupt = |e: png::DecodingError| DataError::Decode {
        path: shown.clone(),
        msg: e.to_string(),
    };
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let info = reader.info();
    let (src_color, src_depth) = (info.color_type, info.bit_depth);
    let (width, height) = (info.width as usize, info.height as usize);

    use png::ColorType as C;
    if matches!(src_color, C::Grayscale | C::GrayscaleAlpha) {
        return Err(DataError::NonRgb {
            path: shown,
            color: format!("{src_color:?}"),
        });
    }
    let mut conversions = Vec::new();
    if src_color == C::Indexed {
        conversions.push("palette");
    }
    if src_depth == png::BitDepth::Sixteen {
        conversions.push("16-bit");
    }
    let (out_color, out_depth) = reader.output_color_type();
    if out_color == C::Rgba {
        conversions.push("alpha");
    }
    if !conversions.is_empty() {
        let what = conversions.join("+");
        if opts.strict {
            return Err(DataError::Unsupported { path: shown, what });
        }
        log::warn!("{shown}: converting {what} PNG to 8-bit RGB");
    }
    if out_depth != png::BitDepth::Eight || !matches!(out_color, C::Rgb | C::Rgba) {
        return Err(DataError::Unsupported {
            path: shown,
            what: format!("{out_color:?} at {out_depth:?}"),
        });
    }
    let size = reader.output_buffer_size().ok_or_else(|| DataError::Decode {
        path: shown.clone(),
        msg: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(corrupt)?;
    buf.truncate(frame.buffer_size());
    let rgb = if out_color == C::Rgba {
        buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    } else {
        buf
    };
    ImageBuffer::from_u8(height, width, rgb)
}

/// Writes an 8-bit RGB PNG; real-valued images are quantised first.
pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let q = img.to_u8();
    let data = q.as_u8().expect("quantised image");
    let file = File::create(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| DataError::Encode {
        path: shown.clone(),
        msg: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(data).map_err(encode)?;
    writer.finish().map_err(encode)
}
