//! Binary masks, RGB appearances, bounding boxes, and their PNG / RLE encodings.
//!
//! Coordinates have their origin at the top-left corner with `y` growing
//! downward. All rasters are stored row-major.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Inclusive bottom row.
    pub fn max_y(&self) -> u32 {
        self.y + self.h - 1
    }

    /// COCO `[x, y, w, h]` layout.
    pub fn to_array(&self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Binary raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl Mask {
    /// All-false mask. Panics on zero dimensions.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidRaster(format!(
                "expected {} bits for {width}x{height}, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Mask with a filled rectangle, clipped to the canvas.
    pub fn from_rect(width: u32, height: u32, rect: BBox) -> Self {
        Self::from_fn(width, height, |x, y| {
            x >= rect.x && x < rect.x + rect.w && y >= rect.y && y < rect.y + rect.h
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    /// Like [`Mask::get`] but false outside the canvas.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.bits[i] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_dims(other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// `self \ other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn union_in_place(&mut self, other: &Mask) -> Result<()> {
        self.check_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &Mask) -> Result<bool> {
        self.check_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Shift by `(dx, dy)`; pixels leaving the canvas are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    /// Mean `(x, y)` of set pixels, `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for (x, y) in self.iter_set() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Largest `y` of any set pixel.
    pub fn max_y(&self) -> Option<u32> {
        (0..self.height)
            .rev()
            .find(|&y| (0..self.width).any(|x| self.get(x, y)))
    }

    pub fn to_rle(&self) -> Rle {
        Rle::encode(self)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut writer = enc.write_header()?;
            let stride = (self.width as usize).div_ceil(8);
            let mut data = vec![0u8; stride * self.height as usize];
            for (x, y) in self.iter_set() {
                data[y as usize * stride + x as usize / 8] |= 0x80 >> (x % 8);
            }
            writer.write_image_data(&data)?;
        }
        Ok(out)
    }

    /// Decodes a grayscale PNG; any nonzero sample is a set bit.
    pub fn decode_png(bytes: &[u8]) -> Result<Mask> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        let channels = info.color_type.samples();
        let (w, h) = (info.width, info.height);
        let mut m = Mask::new(w, h);
        for y in 0..h {
            let row = &buf[y as usize * info.line_size..];
            for x in 0..w {
                if row[x as usize * channels] != 0 {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }
}

/// Tight bounds of the set pixels.
pub fn bbox_from_mask(m: &Mask) -> Result<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for (x, y) in m.iter_set() {
        any = true;
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// `|a ∩ b|`.
pub fn overlap_area(a: &Mask, b: &Mask) -> Result<u64> {
    a.check_dims(b)?;
    Ok(a.bits.iter().zip(&b.bits).filter(|(&x, &y)| x && y).count() as u64)
}

/// `|a ∩ b| / |a ∪ b|`, zero when the union is empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_dims(b)?;
    let (mut inter, mut uni) = (0u64, 0u64);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as u64;
        uni += (x || y) as u64;
    }
    Ok(if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    })
}

/// Uncompressed COCO run-length encoding.
///
/// Runs alternate starting with zeros and traverse the raster column-major,
/// matching pycocotools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(m: &Mask) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..m.width {
            for y in 0..m.height {
                let v = m.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Rle {
            size: [m.height, m.width],
            counts,
        }
    }

    pub fn decode(&self) -> Result<Mask> {
        let [h, w] = self.size;
        let n = h as u64 * w as u64;
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != n {
            return Err(Error::InvalidRaster(format!(
                "RLE counts sum to {total}, expected {n} for {w}x{h}"
            )));
        }
        let mut m = Mask::from_bits(w, h, vec![false; n as usize])?;
        let mut i = 0u64;
        for (k, &c) in self.counts.iter().enumerate() {
            if k % 2 == 1 {
                for j in i..i + c as u64 {
                    let (x, y) = ((j / h as u64) as u32, (j % h as u64) as u32);
                    m.set(x, y, true);
                }
            }
            i += c as u64;
        }
        Ok(m)
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rle().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Rle::deserialize(d)?
            .decode()
            .map_err(serde::de::Error::custom)
    }
}

pub type Rgb = [u8; 3];

/// 8-bit RGB raster. Channel values map to `[0, 1]` as `v / 255`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Appearance {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl std::fmt::Debug for Appearance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Appearance")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Appearance {
    pub fn filled(width: u32, height: u32, rgb: Rgb) -> Self {
        assert!(width > 0 && height > 0, "appearance dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![rgb; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidRaster(format!(
                "{} pixels do not fill {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_pixels(width, height, pixels).expect("dimensions are consistent")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: Rgb) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    pub fn check_mask(&self, m: &Mask) -> Result<()> {
        if self.dims() != m.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: m.dims(),
            });
        }
        Ok(())
    }

    /// Copies `src` into `self` wherever `mask` is set.
    pub fn paint(&mut self, src: &Appearance, mask: &Mask) -> Result<()> {
        self.check_mask(mask)?;
        src.check_mask(mask)?;
        for (i, &b) in mask.bits().iter().enumerate() {
            if b {
                self.pixels[i] = src.pixels[i];
            }
        }
        Ok(())
    }

    /// Shift by `(dx, dy)`, filling uncovered pixels with `fill`.
    pub fn translate(&self, dx: i64, dy: i64, fill: Rgb) -> Appearance {
        Appearance::from_fn(self.width, self.height, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            if sx >= 0 && sy >= 0 && sx < self.width as i64 && sy < self.height as i64 {
                self.get(sx as u32, sy as u32)
            } else {
                fill
            }
        })
    }

    pub fn crop(&self, b: BBox) -> Appearance {
        Appearance::from_fn(b.w, b.h, |x, y| self.get(b.x + x, b.y + y))
    }

    /// Channel values scaled to `[0, 1]`, interleaved RGB.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .flat_map(|p| p.iter().map(|&c| c as f64 / 255.0))
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(self.pixels.as_flattened())?;
        }
        Ok(out)
    }

    /// RGBA PNG whose alpha is opaque under `mask` and transparent elsewhere.
    pub fn encode_png_with_alpha(&self, mask: &Mask) -> Result<Vec<u8>> {
        self.check_mask(mask)?;
        let data: Vec<u8> = self
            .pixels
            .iter()
            .zip(mask.bits())
            .flat_map(|(p, &on)| [p[0], p[1], p[2], if on { 255 } else { 0 }])
            .collect();
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&data)?;
        }
        Ok(out)
    }

    /// Decodes 8-bit gray, gray+alpha, RGB, or RGBA PNGs; alpha is dropped.
    pub fn decode_png(bytes: &[u8]) -> Result<Appearance> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        let channels = info.color_type.samples();
        let mut pixels = Vec::with_capacity(info.width as usize * info.height as usize);
        for y in 0..info.height as usize {
            let row = &buf[y * info.line_size..];
            for x in 0..info.width as usize {
                let p = &row[x * channels..x * channels + channels];
                pixels.push(match channels {
                    1 | 2 => [p[0]; 3],
                    _ => [p[0], p[1], p[2]],
                });
            }
        }
        Appearance::from_pixels(info.width, info.height, pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Appearance> {
        Appearance::decode_png(&std::fs::read(path)?)
    }
}
