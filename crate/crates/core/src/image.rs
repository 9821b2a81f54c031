//! Grayscale images, 2-D points and their on-disk formats.
//!
//! Images are stored as binary PGM (P5, 8-bit). Landmark sidecars hold one
//! `x y` pair per line. Pixel centres sit at integer coordinates: pixel
//! `(col, row)` is the point `(x = col, y = row)`.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// `(1 - alpha)·self + alpha·other`.
    pub fn lerp(self, other: Point, alpha: f64) -> Point {
        Point {
            x: (1.0 - alpha) * self.x + alpha * other.x,
            y: (1.0 - alpha) * self.y + alpha * other.y,
        }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Bilinear sample; coordinates are clamped to the pixel-centre grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = (1.0 - fx) * self.get(x0, y0) + fx * self.get(x1, y0);
        let bottom = (1.0 - fx) * self.get(x0, y1) + fx * self.get(x1, y1);
        (1.0 - fy) * top + fy * bottom
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Rounds every pixel to the nearest 8-bit level, so the image survives a
    /// PGM round trip unchanged.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    /// Parses a binary PGM (maxval up to 65535). `#` comments in the header are
    /// skipped.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Shape(format!("invalid PGM: {msg}"));
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // Skip whitespace and comments.
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap (P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("header number"));
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        pos += 1; // single whitespace after maxval
        let bps = if maxval < 256 { 1 } else { 2 };
        let body = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
        if body.len() < w * h * bps {
            return Err(bad("truncated raster"));
        }
        let scale = maxval as f64;
        let data = (0..w * h)
            .map(|i| {
                let v = if bps == 1 {
                    u16::from(body[i])
                } else {
                    u16::from_be_bytes([body[2 * i], body[2 * i + 1]])
                };
                f64::from(v) / scale
            })
            .collect();
        GrayImage::from_vec(w, h, data)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        GrayImage::from_pgm(&bytes).map_err(|e| match e {
            Error::Shape(msg) => Error::parse(path.display().to_string(), 1, msg),
            other => other,
        })
    }
}

pub fn render_landmarks(points: &[Point]) -> String {
    points.iter().map(|p| format!("{} {}\n", p.x, p.y)).collect()
}

pub fn parse_landmarks(text: &str, source: &str) -> Result<Vec<Point>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok(Point::new(x, y)),
                _ => Err(Error::parse(source, n + 1, "expected `x y`")),
            }
        })
        .collect()
}
