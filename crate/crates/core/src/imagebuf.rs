//! RGB image buffer used across rendering, distortion, and metrics.
//!
//! Pixels are stored row-major as `f64` triples. Rendered images live in
//! `[0, 1]`; the same container is reused for per-pixel gradients, which are
//! unbounded.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    width: usize,
    height: usize,
    /// `height * width * 3`, row-major, channels interleaved.
    data: Vec<f64>,
}

impl RenderedImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Convert a channel to a separate plane (used by SSIM and JPEG).
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn from_channels(width: usize, height: usize, planes: [&[f64]; 3]) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::ShapeMismatch("channel plane size mismatch".into()));
        }
        let mut data = vec![0.0; n * 3];
        for i in 0..n {
            data[i * 3] = planes[0][i];
            data[i * 3 + 1] = planes[1][i];
            data[i * 3 + 2] = planes[2][i];
        }
        Ok(Self { width, height, data })
    }

    /// Planar (3, H, W) copy for the conv/resize helpers.
    pub fn to_chw(&self) -> ndarray::Array3<f64> {
        ndarray::Array3::from_shape_fn((3, self.height, self.width), |(c, y, x)| {
            self.data[(y * self.width + x) * 3 + c]
        })
    }

    pub fn from_chw(chw: &ndarray::Array3<f64>) -> Self {
        let (c, h, w) = (chw.shape()[0], chw.shape()[1], chw.shape()[2]);
        assert_eq!(c, 3, "expected a 3-channel planar image");
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(x, y, [chw[(0, y, x)], chw[(1, y, x)], chw[(2, y, x)]]);
            }
        }
        out
    }

    /// Quantize to 8-bit RGB (clamping first).
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                out.put_pixel(x as u32, y as u32, image::Rgb([q(p[0]), q(p[1]), q(p[2])]));
            }
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                out.set_pixel(x, y, [
                    f64::from(p[0]) / 255.0,
                    f64::from(p[1]) / 255.0,
                    f64::from(p[2]) / 255.0,
                ]);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::ImageCodec(format!("png write {}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::ImageCodec(format!("image read {}: {e}", path.display())))?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}
