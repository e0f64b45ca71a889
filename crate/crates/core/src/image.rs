//! Grayscale rasters, binary netpbm codecs and summed-area tables.
//!
//! Everything the detector computes is a rectangle sum over an
//! [`IntegralImage`], so the tables here are exact 64-bit integers. A
//! 4096x4096 image of 255s sums to about 4.3e9 and its squared table to
//! about 1.1e12, both far inside `u64`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from decoding a PGM/PPM byte stream.
///
/// Every variant carries the byte offset at which decoding stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("byte {offset}: bad magic number, expected P5 or P6")]
    BadMagic { offset: usize },
    #[error("byte {offset}: malformed header: {reason}")]
    MalformedHeader { offset: usize, reason: &'static str },
    #[error("byte {offset}: unsupported maxval {maxval}, only 255 is accepted")]
    UnsupportedMaxval { offset: usize, maxval: u64 },
    #[error("byte {offset}: truncated payload, need {needed} bytes but {available} remain")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("rect {rect} lies outside a {width}x{height} image")]
pub struct BoundsError {
    pub rect: Rect,
    pub width: usize,
    pub height: usize,
}

/// Axis-aligned rectangle in pixel coordinates; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    /// True when the rect is non-empty and fits inside a `width` x `height` raster.
    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    /// True when `other` (non-empty) lies inside `self`.
    pub fn contains(&self, other: &Rect) -> bool {
        other.w >= 1
            && other.h >= 1
            && other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    /// Wraps a row-major buffer. Returns `None` if the dimensions are zero or
    /// do not match the buffer length.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        if width == 0 || height == 0 || data.len() != width.checked_mul(height)? {
            return None;
        }
        Some(GrayImage {
            width,
            height,
            data,
        })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut img = Self::filled(width, height, 0);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Copies out the sub-image under `r`.
    pub fn crop(&self, r: Rect) -> Result<GrayImage, BoundsError> {
        if !r.fits_in(self.width, self.height) {
            return Err(self.bounds_error(r));
        }
        let mut data = Vec::with_capacity(r.area());
        for y in r.y..r.bottom() {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + r.x..row + r.right()]);
        }
        Ok(GrayImage {
            width: r.w,
            height: r.h,
            data,
        })
    }

    /// Pastes `src` with its top-left corner at `(x, y)`, clipping at the border.
    pub fn blit(&mut self, src: &GrayImage, x: usize, y: usize) {
        for sy in 0..src.height {
            let ty = y + sy;
            if ty >= self.height {
                break;
            }
            for sx in 0..src.width {
                let tx = x + sx;
                if tx >= self.width {
                    break;
                }
                self.data[ty * self.width + tx] = src.get(sx, sy);
            }
        }
    }

    fn bounds_error(&self, rect: Rect) -> BoundsError {
        BoundsError {
            rect,
            width: self.width,
            height: self.height,
        }
    }
}

/// Row-major interleaved 8-bit RGB raster, used for annotated output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Sets `(x, y)` if it is inside the raster; coordinates may be negative.
    pub fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set(x as usize, y as usize, rgb);
        }
    }
}

impl From<&GrayImage> for RgbImage {
    fn from(img: &GrayImage) -> Self {
        let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
        RgbImage {
            width: img.width,
            height: img.height,
            data,
        }
    }
}

/// BT.601 luma, rounded half away from zero.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Decodes a complete binary PGM (P5) or PPM (P6) file. PPM input is reduced
/// to luma. Trailing bytes after the payload are ignored.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage, FormatError> {
    decode_image_prefix(bytes).map(|(img, _)| img)
}

/// Decodes one image from the front of `bytes` and returns it together with
/// the number of bytes consumed. This is how concatenated frame streams are
/// split.
pub fn decode_image_prefix(bytes: &[u8]) -> Result<(GrayImage, usize), FormatError> {
    let header = parse_header(bytes)?;
    let start = header.data_offset;
    let needed = header.payload_len();
    let available = bytes.len() - start;
    if available < needed {
        return Err(FormatError::Truncated {
            offset: start,
            needed,
            available,
        });
    }
    let payload = &bytes[start..start + needed];
    let data = if header.channels == 1 {
        payload.to_vec()
    } else {
        payload
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect()
    };
    Ok((
        GrayImage {
            width: header.width,
            height: header.height,
            data,
        },
        start + needed,
    ))
}

/// Dimensions and payload position of a binary netpbm image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PnmHeader {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Offset of the first payload byte.
    pub data_offset: usize,
}

impl PnmHeader {
    pub fn payload_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Header plus payload.
    pub fn encoded_len(&self) -> usize {
        self.data_offset + self.payload_len()
    }
}

/// Parses the header at the front of `bytes` without touching the payload.
pub fn parse_header(bytes: &[u8]) -> Result<PnmHeader, FormatError> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(FormatError::BadMagic { offset: 0 }),
    };
    cur.pos = 2;
    let (width, _) = cur.number()?;
    let (height, _) = cur.number()?;
    let (maxval, maxval_at) = cur.number()?;
    if width == 0 || height == 0 {
        return Err(FormatError::MalformedHeader {
            offset: maxval_at,
            reason: "zero image dimension",
        });
    }
    if maxval != 255 {
        return Err(FormatError::UnsupportedMaxval {
            offset: maxval_at,
            maxval,
        });
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => {
            return Err(FormatError::MalformedHeader {
                offset: cur.pos,
                reason: "expected a single whitespace byte after maxval",
            })
        }
        None => {
            return Err(FormatError::Truncated {
                offset: cur.pos,
                needed: 1,
                available: 0,
            })
        }
    }
    let (width, height) = (width as usize, height as usize);
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_add(cur.pos))
        .ok_or(FormatError::MalformedHeader {
            offset: maxval_at,
            reason: "image dimensions overflow",
        })?;
    Ok(PnmHeader {
        width,
        height,
        channels,
        data_offset: cur.pos,
    })
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_separators(&mut self) -> Result<(), FormatError> {
        let mut saw_space = false;
        loop {
            match self.bytes.get(self.pos) {
                Some(c) if c.is_ascii_whitespace() => {
                    saw_space = true;
                    self.pos += 1;
                }
                Some(b'#') => {
                    saw_space = true;
                    while let Some(&c) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) if saw_space => return Ok(()),
                Some(_) => {
                    return Err(FormatError::MalformedHeader {
                        offset: self.pos,
                        reason: "expected whitespace between header fields",
                    })
                }
                None => {
                    return Err(FormatError::MalformedHeader {
                        offset: self.pos,
                        reason: "header ends early",
                    })
                }
            }
        }
    }

    /// Next header number and the offset of its first digit.
    fn number(&mut self) -> Result<(u64, usize), FormatError> {
        self.skip_separators()?;
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&c) = self.bytes.get(self.pos) {
            if !c.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(c - b'0')))
                .ok_or(FormatError::MalformedHeader {
                    offset: start,
                    reason: "header number too large",
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(FormatError::MalformedHeader {
                offset: start,
                reason: "expected a decimal number",
            });
        }
        Ok((value, start))
    }
}

/// Encodes a grayscale image as binary PGM (P5).
pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Encodes an RGB image as binary PPM (P6).
pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Summed-area tables of intensities and squared intensities.
///
/// Both tables are `(width + 1) x (height + 1)`; entry `(x, y)` holds the sum
/// over all pixels strictly above and to the left of `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<u64>,
    squared: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width, img.height);
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        let mut squared = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = u64::from(img.data[y * w + x]);
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                table[i] = table[i - stride] + row;
                squared[i] = squared[i - stride] + row_sq;
            }
        }
        IntegralImage {
            width: w,
            height: h,
            table,
            squared,
        }
    }

    /// Width of the source image (the table is one wider).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Table entry `(x, y)` for `x <= width`, `y <= height`.
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.table[y * (self.width + 1) + x]
    }

    pub fn squared_at(&self, x: usize, y: usize) -> u64 {
        self.squared[y * (self.width + 1) + x]
    }

    pub fn total(&self) -> u64 {
        self.at(self.width, self.height)
    }

    fn check(&self, r: Rect) -> Result<(), BoundsError> {
        if r.fits_in(self.width, self.height) {
            Ok(())
        } else {
            Err(BoundsError {
                rect: r,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Pixel sum under `r` from four table lookups.
    pub fn rect_sum(&self, r: Rect) -> Result<u64, BoundsError> {
        self.check(r)?;
        Ok(four_corner(&self.table, self.width + 1, r))
    }

    pub fn rect_sum_squared(&self, r: Rect) -> Result<u64, BoundsError> {
        self.check(r)?;
        Ok(four_corner(&self.squared, self.width + 1, r))
    }

    /// Unchecked variant for inner loops whose rects were validated up front.
    #[inline]
    pub(crate) fn sum_unchecked(&self, r: Rect) -> u64 {
        debug_assert!(r.fits_in(self.width, self.height));
        four_corner(&self.table, self.width + 1, r)
    }

    /// Mean and population standard deviation of the pixels under `r`.
    pub fn window_mean_std(&self, r: Rect) -> Result<(f64, f64), BoundsError> {
        self.check(r)?;
        Ok(self.mean_std_unchecked(r))
    }

    #[inline]
    pub(crate) fn mean_std_unchecked(&self, r: Rect) -> (f64, f64) {
        let stride = self.width + 1;
        let area = r.area() as f64;
        let sum = four_corner(&self.table, stride, r) as f64;
        let sq = four_corner(&self.squared, stride, r) as f64;
        mean_std_from_sums(sum, sq, area)
    }
}

/// `mean = sum / area`, `std = sqrt(max(0, sq / area - mean^2))`.
pub fn mean_std_from_sums(sum: f64, sq_sum: f64, area: f64) -> (f64, f64) {
    let mean = sum / area;
    let var = (sq_sum / area - mean * mean).max(0.0);
    (mean, var.sqrt())
}

#[inline]
fn four_corner(table: &[u64], stride: usize, r: Rect) -> u64 {
    let (x0, y0, x1, y1) = (r.x, r.y, r.right(), r.bottom());
    // Added before subtracting so intermediate values stay non-negative.
    table[y1 * stride + x1] + table[y0 * stride + x0]
        - table[y1 * stride + x0]
        - table[y0 * stride + x1]
}
