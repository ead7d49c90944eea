//! RGB raster with real-valued samples in `[0, 1]`.

use std::path::Path;

use crate::error::{ensure, Error, Result};

/// Height × width × 3 raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// Builds a buffer from interleaved RGB samples. Values must already lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(height > 0 && width > 0, Validation, "image dimensions must be positive, got {height}x{width}");
        ensure!(
            data.len() == height * width * Self::CHANNELS,
            Validation,
            "expected {} samples for a {height}x{width} RGB image, got {}",
            height * width * Self::CHANNELS,
            data.len()
        );
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a buffer and clamps every sample into `[0, 1]`; NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    /// Interleaved 8-bit RGB, scaled by 1/255.
    pub fn from_rgb8(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        Self::new(height, width, raw.iter().map(|&v| f64::from(v) / 255.0).collect())
    }

    /// Nearest 8-bit code of every sample.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Sample with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x, c)
    }

    /// Bilinear sample at a continuous pixel-center coordinate, edge-clamped.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.get_clamped(y0, x0, c);
        let b = self.get_clamped(y0, x0 + 1, c);
        let d = self.get_clamped(y0 + 1, x0, c);
        let e = self.get_clamped(y0 + 1, x0 + 1, c);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared difference against another image of the same size.
    pub fn mse(&self, other: &ImageBuffer) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "mse on mismatched images");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "mad on mismatched images");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Resize with bilinear interpolation using half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        ensure!(height > 0 && width > 0, Validation, "resize target must be positive, got {height}x{width}");
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
            for x in 0..width {
                let src_x = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                for c in 0..3 {
                    out.push(self.sample_bilinear(src_y, src_x, c));
                }
            }
        }
        Self::from_clamped(height, width, out)
    }

    /// Area-average downsampling, exact for integer factors.
    pub fn resize_area(&self, height: usize, width: usize) -> Result<Self> {
        ensure!(height > 0 && width > 0, Validation, "resize target must be positive, got {height}x{width}");
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let (y_lo, y_hi) = (y as f64 * sy, (y + 1) as f64 * sy);
            for x in 0..width {
                let (x_lo, x_hi) = (x as f64 * sx, (x + 1) as f64 * sx);
                let mut acc = [0.0; 3];
                let mut total = 0.0;
                let mut yy = y_lo.floor() as usize;
                while (yy as f64) < y_hi && yy < self.height {
                    let wy = (y_hi.min(yy as f64 + 1.0) - y_lo.max(yy as f64)).max(0.0);
                    let mut xx = x_lo.floor() as usize;
                    while (xx as f64) < x_hi && xx < self.width {
                        let wx = (x_hi.min(xx as f64 + 1.0) - x_lo.max(xx as f64)).max(0.0);
                        let w = wy * wx;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += w * self.get(yy, xx, c);
                        }
                        total += w;
                        xx += 1;
                    }
                    yy += 1;
                }
                out.extend(acc.iter().map(|a| a / total));
            }
        }
        Self::from_clamped(height, width, out)
    }

    /// Axis-aligned crop `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        ensure!(
            height > 0 && width > 0 && y0 + height <= self.height && x0 + width <= self.width,
            Validation,
            "crop {height}x{width}+{y0}+{x0} outside {}x{} image",
            self.height,
            self.width
        );
        let mut out = Vec::with_capacity(height * width * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self {
            height,
            width,
            data: out,
        })
    }

    /// Per-channel planar copy, `[c][y][x]`.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        out
    }

    /// Decodes PNG/JPEG; grayscale inputs are replicated to three channels, samples scaled by 1/255.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb8(h as usize, w as usize, rgb.as_raw())
    }

    /// Writes an 8-bit PNG, rounding each sample to the nearest code value.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Validation("raster size mismatch".into()))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Round-trips every sample through the 8-bit code that [`save_png`](Self::save_png) would write.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
        }
    }
}

#[inline]
pub fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
