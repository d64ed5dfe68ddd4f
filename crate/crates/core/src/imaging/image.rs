use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImagingError;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Values outside `[0, 1]` are clamped.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::SizeMismatch {
                width,
                height,
                pixels: pixels.len(),
            });
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("size matches")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let pixels = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, pixels).expect("size matches")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Add `delta` to every pixel, clamping to `[0, 1]`.
    pub fn offset(&self, delta: f64) -> Self {
        Self::new(self.width, self.height, self.pixels.iter().map(|p| p + delta).collect()).expect("same size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Mean intensity inside `roi`.
pub fn measure_turbidity(img: &GrayImage, roi: Roi) -> Result<f64, ImagingError> {
    if roi.width == 0 || roi.height == 0 || roi.x + roi.width > img.width || roi.y + roi.height > img.height {
        return Err(ImagingError::RoiOutOfBounds {
            roi,
            width: img.width,
            height: img.height,
        });
    }
    let mut sum = 0.0;
    for y in roi.y..roi.y + roi.height {
        sum += img.pixels[y * img.width + roi.x..y * img.width + roi.x + roi.width].iter().sum::<f64>();
    }
    Ok(sum / (roi.width * roi.height) as f64)
}

/// Binary PGM (`P5`). `maxval` above 255 writes two big-endian bytes per pixel.
pub fn write_pgm(img: &GrayImage, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(1);
    let mut out = format!("P5\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    for &p in &img.pixels {
        let v = (p * maxval as f64).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, ImagingError> {
    let bad = |m: &str| ImagingError::Pgm(m.into());
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("magic number is not P5"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[pos + 1..];
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    if data.len() < need {
        return Err(bad("raster shorter than header claims"));
    }
    let pixels = (0..width * height)
        .map(|i| {
            let v = if wide {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
            } else {
                data[i] as f64
            };
            v / maxval as f64
        })
        .collect();
    GrayImage::new(width, height, pixels)
}

fn convolve_separable(img: &GrayImage, kernel: &[f64]) -> GrayImage {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let at = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * img.pixels[y as usize * img.width + at(x + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[at(y + k as isize - r, h) * img.width + x as usize])
                .sum();
        }
    }
    GrayImage::new(img.width, img.height, out).expect("same size")
}

/// Gaussian blur with edge clamping; `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    convolve_separable(img, &k)
}

/// Mean over a `(2 radius + 1)` square window with edge clamping.
pub fn box_blur(img: &GrayImage, radius: usize) -> GrayImage {
    let n = 2 * radius + 1;
    convolve_separable(img, &vec![1.0 / n as f64; n])
}

pub fn checkerboard(width: usize, height: usize, cell: usize, low: f64, high: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| if (x / cell + y / cell).is_multiple_of(2) { low } else { high })
}

/// Uniform noise in `[low, high]`.
pub fn random_texture<R: Rng>(width: usize, height: usize, low: f64, high: f64, rng: &mut R) -> GrayImage {
    let pixels = (0..width * height).map(|_| rng.random_range(low..=high)).collect();
    GrayImage::new(width, height, pixels).expect("size matches")
}

/// A gel pad seen from above: `background` everywhere plus `gain * density`
/// inside the disk inscribed in the image.
pub fn render_pad(size: usize, density: f64, gain: f64, background: f64) -> GrayImage {
    let c = (size as f64 - 1.0) / 2.0;
    let r2 = (size as f64 / 2.0).powi(2);
    GrayImage::from_fn(size, size, |x, y| {
        let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
        if d2 <= r2 {
            background + gain * density
        } else {
            background
        }
    })
}

/// Bounding boxes of 4-connected regions brighter than `threshold`, in scan order.
pub fn segment(img: &GrayImage, threshold: f64) -> Vec<Roi> {
    let (w, h) = (img.width, img.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || img.pixels[start] <= threshold {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            let mut visit = |j: usize| {
                if !seen[j] && img.pixels[j] > threshold {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        out.push(Roi {
            x: x0,
            y: y0,
            width: x1 - x0 + 1,
            height: y1 - y0 + 1,
        });
    }
    out
}
