//! In-memory RGB images, binary PPM I/O, and raw float buffer sidecars.
//!
//! Pixel values are reals in `[0, 1]`. A pixel with integer index `(x, y)`
//! has its continuous-coordinate center at `(x + 0.5, y + 0.5)`; every
//! sampler and the rasterizer share that convention.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::num::Real;

/// Row-major interleaved RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: u32, height: u32) -> Self {
        Image { width, height, data: vec![T::zero(); (width * height * 3) as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Vector3<T>) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        ((y * self.width + x) * 3) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Vector3<T> {
        let i = self.idx(x, y);
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: Vector3<T>) {
        let i = self.idx(x, y);
        self.data[i] = rgb.x;
        self.data[i + 1] = rgb.y;
        self.data[i + 2] = rgb.z;
    }

    /// Luminance conversion with the usual video weights.
    pub fn to_gray(&self) -> GrayImage<T> {
        let (wr, wg, wb) = (T::of(0.299), T::of(0.587), T::of(0.114));
        let mut data = Vec::with_capacity((self.width * self.height) as usize);
        for px in self.data.chunks_exact(3) {
            data.push(wr * px[0] + wg * px[1] + wb * px[2]);
        }
        GrayImage { width: self.width, height: self.height, data }
    }

    /// Box-filter downsampling by an integer factor per axis. Trailing rows
    /// or columns that do not fill a full box are dropped.
    pub fn downsample(&self, factor: u32) -> Image<T> {
        assert!(factor >= 1);
        let w = self.width / factor;
        let h = self.height / factor;
        let norm = T::one() / T::of((factor * factor) as f64);
        Image::from_fn(w, h, |x, y| {
            let mut acc = Vector3::zeros();
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.get(x * factor + dx, y * factor + dy);
                }
            }
            acc * norm
        })
    }

    /// Writes binary PPM (P6, maxval 255). Values are clamped to `[0, 1]`
    /// and quantized with round-half-up.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(self.data.len() + 32);
        bytes.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for &v in &self.data {
            bytes.push(quantize_channel(v));
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image<T>> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_ppm(&bytes)
    }
}

/// Round-half-up quantization of a `[0, 1]` channel to a byte.
pub fn quantize_channel<T: Real>(v: T) -> u8 {
    let v = v.clamp(T::zero(), T::one());
    (v.as_f64() * 255.0 + 0.5).floor() as u8
}

pub fn decode_ppm<T: Real>(bytes: &[u8]) -> Result<Image<T>> {
    let mut pos = 0usize;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Format(format!(
            "unsupported PPM magic {:?} (only binary P6 is handled)",
            String::from_utf8_lossy(&magic)
        )));
    }
    let width: u32 = parse_header_number(bytes, &mut pos)?;
    let height: u32 = parse_header_number(bytes, &mut pos)?;
    let maxval: u32 = parse_header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval} (need 255)")));
    }
    // exactly one whitespace byte separates the header from pixel data
    pos += 1;
    let need = (width as usize) * (height as usize) * 3;
    let pixels = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Format(format!(
            "truncated PPM: need {need} pixel bytes for {width}x{height}, have {}",
            bytes.len().saturating_sub(pos)
        ))
    })?;
    let scale = T::one() / T::of(255.0);
    let data = pixels.iter().map(|&b| T::of(b as f64) * scale).collect();
    Ok(Image { width, height, data })
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_header_number(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PPM header field {:?}", String::from_utf8_lossy(&tok))))
}

/// Single-channel image used for patch matching.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    pub fn from_raw(width: u32, height: u32, data: Vec<T>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[(y * self.width + x) as usize]
    }

    /// Bilinear sample at a continuous coordinate, or `None` when the four
    /// surrounding pixel centers are not all inside the image.
    #[inline]
    pub fn sample(&self, x: T, y: T) -> Option<T> {
        self.sample_with_grad(x, y).map(|(v, _, _)| v)
    }

    /// Bilinear sample plus its spatial derivative `(value, d/dx, d/dy)`.
    pub fn sample_with_grad(&self, x: T, y: T) -> Option<(T, T, T)> {
        let half = T::of(0.5);
        let xf = x - half;
        let yf = y - half;
        let zero = T::zero();
        if xf < zero || yf < zero {
            return None;
        }
        let x0 = xf.floor();
        let y0 = yf.floor();
        let xi = x0.as_f64() as u32;
        let yi = y0.as_f64() as u32;
        if xi + 1 >= self.width || yi + 1 >= self.height {
            return None;
        }
        let tx = xf - x0;
        let ty = yf - y0;
        let one = T::one();
        let v00 = self.get(xi, yi);
        let v10 = self.get(xi + 1, yi);
        let v01 = self.get(xi, yi + 1);
        let v11 = self.get(xi + 1, yi + 1);
        let value = (one - ty) * ((one - tx) * v00 + tx * v10) + ty * ((one - tx) * v01 + tx * v11);
        let dx = (one - ty) * (v10 - v00) + ty * (v11 - v01);
        let dy = (one - tx) * (v01 - v00) + tx * (v11 - v10);
        Some((value, dx, dy))
    }
}

/// Writes a raw float buffer: ASCII header `"W H C\n"` followed by
/// little-endian `f32` values, row-major, channel-interleaved.
pub fn write_float_buffer<T: Real>(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    channels: u32,
    data: &[T],
) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(data.len(), (width * height * channels) as usize);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        write!(w, "{} {} {}\n", width, height, channels)?;
        for &v in data {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        w.flush()
    };
    run().map_err(|e| Error::io(path, e))
}

/// Reads a buffer written by [`write_float_buffer`].
pub fn read_float_buffer<T: Real>(path: impl AsRef<Path>) -> Result<(u32, u32, u32, Vec<T>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("float buffer missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("float buffer header is not UTF-8".into()))?;
    let mut dims = header.split_whitespace().map(|t| t.parse::<u32>());
    let mut next = |name: &str| {
        dims.next()
            .and_then(|r| r.ok())
            .ok_or_else(|| Error::Format(format!("float buffer header missing {name}")))
    };
    let (width, height, channels) = (next("width")?, next("height")?, next("channels")?);
    let body = &bytes[nl + 1..];
    let need = (width as usize) * (height as usize) * (channels as usize) * 4;
    if body.len() != need {
        return Err(Error::Format(format!(
            "float buffer body is {} bytes, expected {need}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok((width, height, channels, data))
}
