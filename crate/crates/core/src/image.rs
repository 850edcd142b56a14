//! Floating-point images, boolean masks and their file formats.
//!
//! Images are stored row-major as `H×W×C` with `C ∈ {1, 3}` and values in
//! `[0, 1]`. Files are 8-bit PNG, PGM (`P2`/`P5`) or PPM (`P3`/`P6`); masks are
//! PBM (`P1`/`P4`).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::io::write_bytes;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, fill: f64) -> Result<Self> {
        ensure!(channels == 1 || channels == 3, Shape, "image channels must be 1 or 3, got {channels}");
        ensure!(height > 0 && width > 0, Shape, "image dimensions must be positive, got {height}x{width}");
        Ok(Self {
            height,
            width,
            channels,
            data: vec![fill.clamp(0.0, 1.0); height * width * channels],
        })
    }

    /// Builds an image from `f(row, col, channel)`, clamping to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut img = Self::new(height, width, channels, 0.0)?;
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    img.set(r, c, ch, f(r, c, ch));
                }
            }
        }
        Ok(img)
    }

    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let mut img = Self::new(height, width, channels, 0.0)?;
        ensure!(
            data.len() == height * width * channels,
            Shape,
            "raw image buffer has {} values, expected {}",
            data.len(),
            height * width * channels
        );
        ensure!(data.iter().all(|v| v.is_finite()), Domain, "image contains non-finite values");
        img.data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value.clamp(0.0, 1.0);
    }

    pub fn same_shape(&self, other: &Image, what: &str) -> Result<()> {
        ensure!(
            self.height == other.height && self.width == other.width && self.channels == other.channels,
            Shape,
            "{what}: image shape mismatch ({}x{}x{} vs {}x{}x{})",
            self.height,
            self.width,
            self.channels,
            other.height,
            other.width,
            other.channels
        );
        Ok(())
    }

    /// Luma (Rec. 601 weights) for colour images, a copy for gray ones.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Gray image averaged over an `n×n` grid of blocks, row-major.
    pub fn average_pool(&self, n: usize) -> Vec<f64> {
        let gray = self.to_gray();
        let mut out = vec![0.0; n * n];
        for (i, o) in out.iter_mut().enumerate() {
            let (br, bc) = (i / n, i % n);
            let r0 = br * self.height / n;
            let r1 = ((br + 1) * self.height / n).max(r0 + 1);
            let c0 = bc * self.width / n;
            let c1 = ((bc + 1) * self.width / n).max(c0 + 1);
            let mut sum = 0.0;
            for r in r0..r1.min(self.height) {
                for c in c0..c1.min(self.width) {
                    sum += gray.get(r, c, 0);
                }
            }
            *o = sum / ((r1.min(self.height) - r0) * (c1.min(self.width) - c0)) as f64;
        }
        out
    }

    /// 8-bit quantisation, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_raw(height, width, channels, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match extension(path).as_str() {
            "png" => read_png(path),
            "pgm" | "ppm" | "pnm" => read_pnm(path),
            other => Err(Error::format(path, format!("unsupported image extension '{other}'"))),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match extension(path).as_str() {
            "png" => self.write_png(path),
            "pgm" | "ppm" | "pnm" => self.write_pnm(path),
            other => Err(Error::format(path, format!("unsupported image extension '{other}'"))),
        }
    }

    fn write_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
            w.write_image_data(&self.to_u8())
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        write_bytes(path, &bytes)
    }

    fn write_pnm(&self, path: &Path) -> Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(self.to_u8());
        write_bytes(path, &bytes)
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let src_channels = info.color_type.samples();
    let buf = &buf[..info.buffer_size()];
    let (channels, keep): (usize, &[usize]) = match src_channels {
        1 => (1, &[0]),
        2 => (1, &[0]),
        3 => (3, &[0, 1, 2]),
        4 => (3, &[0, 1, 2]),
        n => return Err(Error::format(path, format!("unsupported PNG sample count {n}"))),
    };
    let mut bytes = Vec::with_capacity(h * w * channels);
    for px in buf.chunks_exact(src_channels) {
        bytes.extend(keep.iter().map(|&i| px[i]));
    }
    Image::from_u8(h, w, channels, &bytes)
}

/// Tokenizer for the ASCII header of the portable any-map formats.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn token(&mut self) -> Option<&'a str> {
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
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.bytes[start..self.pos]).ok())?
    }

    fn number(&mut self, path: &Path) -> Result<usize> {
        self.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed header"))
    }

    /// Skips the single whitespace byte that separates header and raster.
    fn raster(&self) -> &'a [u8] {
        &self.bytes[(self.pos + 1).min(self.bytes.len())..]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let mut hdr = PnmHeader { bytes: &bytes, pos: 0 };
    let magic = hdr.token().unwrap_or("").to_string();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        m => return Err(Error::format(path, format!("unsupported any-map magic '{m}'"))),
    };
    let w = hdr.number(path)?;
    let h = hdr.number(path)?;
    let maxval = hdr.number(path)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("invalid maxval {maxval}")));
    }
    let n = h * w * channels;
    let values: Vec<f64> = if binary {
        let raster = hdr.raster();
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if raster.len() < need {
            return Err(Error::format(path, "truncated raster"));
        }
        if wide {
            raster[..need]
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / maxval as f64)
                .collect()
        } else {
            raster[..n].iter().map(|&b| b as f64 / maxval as f64).collect()
        }
    } else {
        (0..n)
            .map(|_| hdr.number(path).map(|v| v as f64 / maxval as f64))
            .collect::<Result<_>>()?
    };
    Image::from_raw(h, w, channels, values)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a ^ b)
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask dims");
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn check_dims(&self, height: usize, width: usize, what: &str) -> Result<()> {
        ensure!(
            self.height == height && self.width == width,
            Shape,
            "{what}: mask is {}x{}, expected {height}x{width}",
            self.height,
            self.width
        );
        Ok(())
    }

    /// Binary PBM (`P4`), 1 = set.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        let stride = self.width.div_ceil(8);
        for r in 0..self.height {
            let mut row = vec![0u8; stride];
            for c in 0..self.width {
                if self.get(r, c) {
                    row[c / 8] |= 0x80 >> (c % 8);
                }
            }
            bytes.extend(row);
        }
        write_bytes(path.as_ref(), &bytes)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let mut hdr = PnmHeader { bytes: &bytes, pos: 0 };
        let magic = hdr.token().unwrap_or("").to_string();
        let w = hdr.number(path)?;
        let h = hdr.number(path)?;
        let mut mask = Mask::new(h, w, false);
        match magic.as_str() {
            "P1" => {
                for i in 0..h * w {
                    // P1 allows digits without separators
                    let mut bit = None;
                    while hdr.pos < bytes.len() {
                        let b = bytes[hdr.pos];
                        hdr.pos += 1;
                        match b {
                            b'0' => bit = Some(false),
                            b'1' => bit = Some(true),
                            b'#' => {
                                while hdr.pos < bytes.len() && bytes[hdr.pos] != b'\n' {
                                    hdr.pos += 1;
                                }
                            }
                            _ => {}
                        }
                        if bit.is_some() {
                            break;
                        }
                    }
                    mask.data[i] = bit.ok_or_else(|| Error::format(path, "truncated raster"))?;
                }
            }
            "P4" => {
                let raster = hdr.raster();
                let stride = w.div_ceil(8);
                if raster.len() < stride * h {
                    return Err(Error::format(path, "truncated raster"));
                }
                for r in 0..h {
                    for c in 0..w {
                        mask.set(r, c, raster[r * stride + c / 8] & (0x80 >> (c % 8)) != 0);
                    }
                }
            }
            m => return Err(Error::format(path, format!("unsupported bitmap magic '{m}'"))),
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rgb() -> Image {
        Image::from_fn(5, 7, 3, |r, c, ch| ((r * 7 + c) * 3 + ch) as f64 / 105.0).unwrap()
    }

    fn quantized(img: &Image) -> Image {
        Image::from_u8(img.height(), img.width(), img.channels(), &img.to_u8()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(4, 4, 2, 0.0).is_err());
        assert!(Image::new(0, 4, 1, 0.0).is_err());
        assert!(Image::from_raw(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn values_are_clamped() {
        let img = Image::from_raw(1, 2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn png_and_pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = sample_rgb();
        let gray = rgb.to_gray();
        for (img, name) in [(&rgb, "a.png"), (&gray, "b.png"), (&rgb, "c.ppm"), (&gray, "d.pgm")] {
            let p = dir.path().join(name);
            img.write(&p).unwrap();
            assert_eq!(Image::read(&p).unwrap(), quantized(img), "{name}");
        }
        assert!(Image::read(dir.path().join("x.bmp")).is_err());
    }

    #[test]
    fn ascii_pnm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        std::fs::write(&p, "P2\n# comment\n2 1\n4\n0 4\n").unwrap();
        assert_eq!(Image::read(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mask_round_trip_and_logic() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(3, 11, |r, c| (r + c) % 3 == 0);
        let p = dir.path().join("m.pbm");
        m.write(&p).unwrap();
        assert_eq!(Mask::read(&p).unwrap(), m);
        let p1 = dir.path().join("m1.pbm");
        std::fs::write(&p1, "P1\n3 2\n101\n0 1 0\n").unwrap();
        let m1 = Mask::read(&p1).unwrap();
        assert_eq!(m1.count(), 3);
        assert!(m1.get(0, 0) && !m1.get(0, 1) && m1.get(1, 1));
        let c = m.complement();
        assert_eq!(m.and(&c).count(), 0);
        assert_eq!(m.or(&c).count(), m.len());
    }

    #[test]
    fn pooling_constant_and_blocks() {
        let img = Image::from_fn(16, 16, 1, |r, _, _| if r < 8 { 0.0 } else { 1.0 }).unwrap();
        let f = img.average_pool(2);
        assert_eq!(f, vec![0.0, 0.0, 1.0, 1.0]);
    }
}
