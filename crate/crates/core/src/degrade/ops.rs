//! Pixel-level implementations of every degradation operator.
//!
//! Each operator takes a single scalar strength whose unit depends on the
//! operator (sigma in pixels, noise std, quality loss, ...). Strength 0 is
//! the identity for every operator.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::imagebuf::ImageBuffer;
use crate::seed;

use super::OpKind;

pub(super) fn apply(img: &ImageBuffer, op: OpKind, strength: f64, op_seed: u64) -> Result<ImageBuffer> {
    let (lo, hi) = op.domain();
    if !strength.is_finite() || strength < lo || strength > hi {
        return Err(Error::Validation(format!(
            "{} strength {strength} outside domain [{lo}, {hi}]",
            op.id()
        )));
    }
    if strength == 0.0 {
        return Ok(img.clone());
    }
    match op {
        OpKind::GaussianBlur => gaussian_blur(img, strength),
        OpKind::MotionBlur => motion_blur(img, strength, op_seed),
        OpKind::DefocusBlur => defocus_blur(img, strength),
        OpKind::GaussianNoise => gaussian_noise(img, strength, op_seed),
        OpKind::ImpulseNoise => impulse_noise(img, strength, op_seed),
        OpKind::ShotNoise => shot_noise(img, strength, op_seed),
        OpKind::Jpeg => jpeg(img, 100.0 - strength),
        OpKind::Pixelate => pixelate(img, strength),
        OpKind::Brighten => map_samples(img, |v| v.powf(1.0 / (1.0 + strength))),
        OpKind::Darken => map_samples(img, |v| v.powf(1.0 + strength)),
        OpKind::ChannelShift => channel_shift(img, strength, op_seed),
        OpKind::Saturation => desaturate(img, strength),
        OpKind::Elastic => elastic(img, strength, op_seed),
        OpKind::Oversharpen => oversharpen(img, strength),
        OpKind::Contrast => contrast(img, strength),
    }
}

fn map_samples(img: &ImageBuffer, f: impl Fn(f64) -> f64) -> Result<ImageBuffer> {
    let data = img.data().iter().map(|&v| f(v)).collect();
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with edge clamping.
fn separable(img: &ImageBuffer, kernel: &[f64]) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * img.get_clamped(y as isize, x as isize + i as isize - r, c);
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mid = ImageBuffer::from_clamped(h, w, tmp)?;
    let mut out = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    acc += k * mid.get_clamped(y as isize + i as isize - r, x as isize, c);
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

pub(crate) fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    separable(img, &gaussian_kernel(sigma))
}

fn motion_blur(img: &ImageBuffer, length: f64, op_seed: u64) -> Result<ImageBuffer> {
    let angle = seed::rng(op_seed).random::<f64>() * PI;
    let (dy, dx) = (angle.sin(), angle.cos());
    let taps = (length.ceil() as usize + 1).max(2);
    let offsets: Vec<f64> = (0..taps)
        .map(|k| -length / 2.0 + length * k as f64 / (taps - 1) as f64)
        .collect();
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let acc: f64 = offsets
                    .iter()
                    .map(|t| img.sample_bilinear(y as f64 + t * dy, x as f64 + t * dx, c))
                    .sum();
                out.push(acc / taps as f64);
            }
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

fn defocus_blur(img: &ImageBuffer, radius: f64) -> Result<ImageBuffer> {
    let r = radius.ceil() as isize;
    let mut taps = Vec::new();
    for oy in -r..=r {
        for ox in -r..=r {
            let dist = ((oy * oy + ox * ox) as f64).sqrt();
            let weight = (radius + 0.5 - dist).clamp(0.0, 1.0);
            if weight > 0.0 {
                taps.push((oy, ox, weight));
            }
        }
    }
    let norm: f64 = taps.iter().map(|t| t.2).sum();
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..3 {
                let acc: f64 = taps
                    .iter()
                    .map(|&(oy, ox, wt)| wt * img.get_clamped(y + oy, x + ox, c))
                    .sum();
                out.push(acc / norm);
            }
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

fn gaussian_noise(img: &ImageBuffer, sigma: f64, op_seed: u64) -> Result<ImageBuffer> {
    let mut rng = seed::rng(op_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = img
        .data()
        .iter()
        .map(|&v| v + sigma * normal.sample(&mut rng))
        .collect();
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

fn impulse_noise(img: &ImageBuffer, amount: f64, op_seed: u64) -> Result<ImageBuffer> {
    let mut rng = seed::rng(op_seed);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            // both draws happen unconditionally so corrupted sets nest across amounts
            let hit = rng.random::<f64>();
            let salt = rng.random::<bool>();
            if hit < amount {
                if salt {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        })
        .collect();
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

/// Poisson photon noise; `scale` is the inverse photon count per unit intensity.
fn shot_noise(img: &ImageBuffer, scale: f64, op_seed: u64) -> Result<ImageBuffer> {
    let mut rng = seed::rng(op_seed);
    let photons = 1.0 / scale;
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let lambda = v * photons;
            if lambda <= 0.0 {
                0.0
            } else {
                let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                k / photons
            }
        })
        .collect();
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

const JPEG_LUMA: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16., 24., 40., 57., 69.,
    56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64., 81.,
    104., 113., 92., 49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

const JPEG_CHROMA: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., 18., 21., 26., 66., 99., 99., 99., 99., 24., 26., 56., 99., 99., 99., 99.,
    99., 47., 66., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
];

fn quant_table(base: &[f64; 64], quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut out = [0.0; 64];
    for (o, b) in out.iter_mut().zip(base) {
        *o = ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = alpha * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
        }
    }
    m
}

/// Block-DCT quantization in YCbCr with the baseline JPEG tables and
/// IJG quality scaling. No chroma subsampling and no entropy stage.
fn jpeg(img: &ImageBuffer, quality: f64) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let mut planes = vec![vec![0.0; ph * pw]; 3];
    for y in 0..ph {
        for x in 0..pw {
            let (sy, sx) = (y.min(h - 1), x.min(w - 1));
            let r = img.get(sy, sx, 0) * 255.0;
            let g = img.get(sy, sx, 1) * 255.0;
            let b = img.get(sy, sx, 2) * 255.0;
            planes[0][y * pw + x] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][y * pw + x] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
            planes[2][y * pw + x] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
        }
    }
    let basis = dct_basis();
    let tables = [
        quant_table(&JPEG_LUMA, quality),
        quant_table(&JPEG_CHROMA, quality),
        quant_table(&JPEG_CHROMA, quality),
    ];
    let mut block = [[0.0; 8]; 8];
    let mut coef = [[0.0; 8]; 8];
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = plane[(by + i) * pw + bx + j];
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = 0.0;
                        for i in 0..8 {
                            for j in 0..8 {
                                acc += basis[u][i] * basis[v][j] * block[i][j];
                            }
                        }
                        let q = table[u * 8 + v];
                        coef[u][v] = (acc / q).round() * q;
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        let mut acc = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                acc += basis[u][i] * basis[v][j] * coef[u][v];
                            }
                        }
                        plane[(by + i) * pw + bx + j] = acc;
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let luma = planes[0][y * pw + x] + 128.0;
            let cb = planes[1][y * pw + x];
            let cr = planes[2][y * pw + x];
            out.push((luma + 1.402 * cr) / 255.0);
            out.push((luma - 0.344_136 * cb - 0.714_136 * cr) / 255.0);
            out.push((luma + 1.772 * cb) / 255.0);
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

/// Area downsampling by `1 - loss` followed by nearest-neighbour upsampling.
fn pixelate(img: &ImageBuffer, loss: f64) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    let sh = ((h as f64 * (1.0 - loss)).round() as usize).max(1);
    let sw = ((w as f64 * (1.0 - loss)).round() as usize).max(1);
    let small = img.resize_area(sh, sw)?;
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let src_y = ((2 * y + 1) * sh / (2 * h)).min(sh - 1);
        for x in 0..w {
            let src_x = ((2 * x + 1) * sw / (2 * w)).min(sw - 1);
            for c in 0..3 {
                out.push(small.get(src_y, src_x, c));
            }
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

/// Shifts red and blue in opposite directions along a seeded angle.
fn channel_shift(img: &ImageBuffer, pixels: f64, op_seed: u64) -> Result<ImageBuffer> {
    let angle = seed::rng(op_seed).random::<f64>() * 2.0 * PI;
    let (dy, dx) = (pixels * angle.sin(), pixels * angle.cos());
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64, x as f64);
            out.push(img.sample_bilinear(fy + dy, fx + dx, 0));
            out.push(img.get(y, x, 1));
            out.push(img.sample_bilinear(fy - dy, fx - dx, 2));
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

fn desaturate(img: &ImageBuffer, amount: f64) -> Result<ImageBuffer> {
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        data.extend(px.iter().map(|v| gray + (1.0 - amount) * (v - gray)));
    }
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

/// Smooth random displacement field: coarse Gaussian control grid,
/// bilinearly upsampled and scaled so its largest component equals `amplitude`.
fn elastic(img: &ImageBuffer, amplitude: f64, op_seed: u64) -> Result<ImageBuffer> {
    const GRID: usize = 5;
    let mut rng = seed::rng(op_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let ctrl: Vec<(f64, f64)> = (0..GRID * GRID)
        .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    let (h, w) = (img.height(), img.width());
    let mut field = Vec::with_capacity(h * w);
    for y in 0..h {
        let gy = y as f64 / (h.max(2) - 1) as f64 * (GRID - 1) as f64;
        let y0 = (gy.floor() as usize).min(GRID - 2);
        let ty = gy - y0 as f64;
        for x in 0..w {
            let gx = x as f64 / (w.max(2) - 1) as f64 * (GRID - 1) as f64;
            let x0 = (gx.floor() as usize).min(GRID - 2);
            let tx = gx - x0 as f64;
            let at = |yy: usize, xx: usize| ctrl[yy * GRID + xx];
            let lerp = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
            let top = lerp(at(y0, x0), at(y0, x0 + 1), tx);
            let bottom = lerp(at(y0 + 1, x0), at(y0 + 1, x0 + 1), tx);
            field.push(lerp(top, bottom, ty));
        }
    }
    let peak = field
        .iter()
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let gain = amplitude / peak;
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = field[y * w + x];
            for c in 0..3 {
                out.push(img.sample_bilinear(y as f64 + gain * dy, x as f64 + gain * dx, c));
            }
        }
    }
    ImageBuffer::from_clamped(h, w, out)
}

fn oversharpen(img: &ImageBuffer, amount: f64) -> Result<ImageBuffer> {
    let blurred = gaussian_blur(img, 1.0)?;
    let data = img
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(v, b)| v + amount * (v - b))
        .collect();
    ImageBuffer::from_clamped(img.height(), img.width(), data)
}

fn contrast(img: &ImageBuffer, amount: f64) -> Result<ImageBuffer> {
    let mean = img.mean();
    map_samples(img, |v| mean + (1.0 - amount) * (v - mean))
}
