//! Grayscale image container, PGM/PNG I/O, cropping and PSNR.
//!
//! Intensities live on the unit scale: 8-bit samples are divided by 255 on load
//! and quantized with `round(clamp(x, 0, 1) * 255)` on save.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Peak value used for PSNR, on the 0-255 scale.
pub const PSNR_PEAK: f64 = 255.0;

/// A grayscale image with row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, checking the length and that every value is in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParameter(format!(
                "intensity {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from arbitrary finite values, clamping them into `[0, 1]`.
    /// Non-finite values map to 0.
    pub fn from_clamped(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        check_len(width, height, data.len())?;
        let data = data
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Signal length `width * height`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major intensities; this is the flattened signal `u`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Quantizes to 8-bit samples with `round(clamp(x, 0, 1) * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "image dimensions must be nonzero, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} image needs {} samples, got {len}",
            width * height
        )));
    }
    Ok(())
}

#[inline]
fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v };
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit grayscale PGM (P2 or P5) or PNG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(&bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pnm(&bytes)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: expected PGM or PNG",
            path.display()
        )))
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let data = buf
                .into_raw()
                .into_iter()
                .map(|s| s as f64 / 255.0)
                .collect();
            Image::new(w, h, data)
        }
        image::DynamicImage::ImageLuma16(_) => Err(Error::UnsupportedFormat(
            "16-bit PNG; only 8-bit samples are supported".into(),
        )),
        other => Err(Error::NonGrayscale(format!(
            "PNG with color type {:?}",
            other.color()
        ))),
    }
}

/// Minimal netpbm header tokenizer: whitespace separated, `#` starts a comment.
struct PnmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmTokens<'a> {
    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::UnsupportedFormat(format!("truncated PGM: missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat(format!("bad PGM {what}")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let ascii = match &bytes[..2] {
        b"P2" => true,
        b"P5" => false,
        b"P3" | b"P6" => return Err(Error::NonGrayscale("PPM color image".into())),
        b"P1" | b"P4" => {
            return Err(Error::UnsupportedFormat(
                "PBM bitmaps are not supported".into(),
            ))
        }
        _ => return Err(Error::UnsupportedFormat("unknown netpbm variant".into())),
    };
    let mut tokens = PnmTokens { bytes, pos: 2 };
    let width = tokens.next_usize("width")?;
    let height = tokens.next_usize("height")?;
    let maxval = tokens.next_usize("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval}; only 8-bit (255) samples are supported"
        )));
    }
    let n = width * height;
    let samples: Vec<u8> = if ascii {
        (0..n)
            .map(|_| {
                let s = tokens.next_usize("sample")?;
                u8::try_from(s)
                    .ok()
                    .filter(|_| s <= maxval)
                    .ok_or_else(|| Error::UnsupportedFormat(format!("sample {s} > maxval")))
            })
            .collect::<Result<_>>()?
    } else {
        // exactly one whitespace byte separates maxval from the raster
        let start = tokens.pos + 1;
        bytes
            .get(start..start + n)
            .ok_or_else(|| Error::UnsupportedFormat("truncated P5 raster".into()))?
            .to_vec()
    };
    Image::new(
        width,
        height,
        samples.into_iter().map(|s| s as f64 / 255.0).collect(),
    )
}

/// Saves as 8-bit grayscale. The format follows the extension: `.pgm` writes
/// binary P5, `.png` writes an L8 PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let samples = img.to_u8();
    match ext.as_deref() {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend_from_slice(&samples);
            let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(&out).map_err(|e| Error::io(path, e))
        }
        Some("png") => {
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, samples)
                .expect("sample count matches dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(path, io),
                    other => Error::UnsupportedFormat(other.to_string()),
                })
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: output must end in .pgm or .png",
            path.display()
        ))),
    }
}

/// Returns the `w x h` sub-image whose top-left corner is at column `x0`, row `y0`.
pub fn crop(img: &Image, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 || x0 + w > img.width || y0 + h > img.height {
        return Err(Error::OutOfBounds(format!(
            "crop ({x0},{y0}) {w}x{h} outside {}x{} image",
            img.width, img.height
        )));
    }
    let data = (y0..y0 + h)
        .flat_map(|r| {
            img.data[r * img.width + x0..r * img.width + x0 + w]
                .iter()
                .copied()
        })
        .collect();
    Image::new(w, h, data)
}

/// PSNR in dB with peak 255, MSE taken on the 0-255 scale without quantization.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "psnr of {}x{} and {}x{} images",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(psnr_slices(&a.data, &b.data))
}

/// PSNR between two unit-scale signals of equal length (not necessarily in `[0, 1]`).
pub fn psnr_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) * PSNR_PEAK;
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
    }
}
