use rand::Rng;

use super::image::{gaussian_blur, GrayImage};
use super::ImagingError;

/// Planes per stack captured by the scanner.
pub const DEFAULT_STACK_PLANES: usize = 10;

/// Frames at strictly increasing focal positions, all of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalStack {
    frames: Vec<GrayImage>,
    z: Vec<f64>,
}

impl FocalStack {
    pub fn new(frames: Vec<GrayImage>, z: Vec<f64>) -> Result<Self, ImagingError> {
        let bad = |m: String| Err(ImagingError::InvalidStack(m));
        if frames.len() < 3 {
            return bad(format!("{} frames; at least 3 are required", frames.len()));
        }
        if frames.len() != z.len() {
            return bad(format!("{} frames but {} z positions", frames.len(), z.len()));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("z positions must increase strictly".into());
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        if let Some(i) = frames.iter().position(|f| f.width() != w || f.height() != h) {
            return bad(format!("frame {i} differs in size from frame 0"));
        }
        Ok(Self { frames, z })
    }

    /// Frames at `z = 0, 1, 2, ...`.
    pub fn evenly_spaced(frames: Vec<GrayImage>) -> Result<Self, ImagingError> {
        let z = (0..frames.len()).map(|i| i as f64).collect();
        Self::new(frames, z)
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn map(&self, f: impl Fn(&GrayImage) -> GrayImage) -> Self {
        Self {
            frames: self.frames.iter().map(f).collect(),
            z: self.z.clone(),
        }
    }

    /// Defocus series of `sharp`: plane `i` is blurred with
    /// `sigma = sigma_per_plane * |i - best|`.
    pub fn synthetic(sharp: &GrayImage, planes: usize, best: usize, sigma_per_plane: f64) -> Result<Self, ImagingError> {
        let frames = (0..planes)
            .map(|i| gaussian_blur(sharp, sigma_per_plane * i.abs_diff(best) as f64))
            .collect();
        Self::evenly_spaced(frames)
    }

    /// Random-texture stack with a random sharpest plane; returns it with that plane.
    pub fn random<R: Rng>(size: usize, planes: usize, sigma_per_plane: f64, rng: &mut R) -> (Self, usize) {
        let best = rng.random_range(0..planes);
        let sharp = super::image::random_texture(size, size, 0.2, 0.8, rng);
        let stack = Self::synthetic(&sharp, planes, best, sigma_per_plane).expect("at least 3 planes");
        (stack, best)
    }
}

/// Variance of the 4-neighbour Laplacian over interior pixels.
pub fn focus_measure(img: &GrayImage) -> Result<f64, ImagingError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(ImagingError::ImageTooSmall { width: w, height: h });
    }
    let p = img.pixels();
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            responses.push(4.0 * p[i] - p[i - 1] - p[i + 1] - p[i - w] - p[i + w]);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
}

/// Index of the sharpest frame; ties go to the lowest index.
pub fn autofocus(stack: &FocalStack) -> usize {
    let scores: Vec<f64> = stack
        .frames
        .iter()
        .map(|f| focus_measure(f).unwrap_or(0.0))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
