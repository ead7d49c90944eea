//! Procedural pristine scenes for desk-scale experiments: gradient
//! backgrounds, anti-aliased shapes, stripes and fine texture.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSet;
use crate::error::Result;
use crate::imagebuf::ImageBuffer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SceneStyle {
    /// Bright, shape-dominated scenes.
    Shapes,
    /// Darker palette with dense periodic texture.
    Texture,
    #[default]
    /// Shapes whose surfaces and background carry multi-octave value-noise
    /// texture with a roughly 1/f spectrum.
    Natural,
}

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Stripe { cy: f64, cx: f64, ny: f64, nx: f64, half: f64 },
}

impl Shape {
    /// Signed distance approximation, negative inside.
    fn distance(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let q = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
                (q - 1.0) * ry.min(rx)
            }
            Shape::Rect { y0, x0, y1, x1 } => {
                let dy = (y0 - y).max(y - y1);
                let dx = (x0 - x).max(x - x1);
                dy.max(dx)
            }
            Shape::Stripe { cy, cx, ny, nx, half } => ((y - cy) * ny + (x - cx) * nx).abs() - half,
        }
    }
}

fn color(rng: &mut seed::Rng, lo: f64, hi: f64) -> [f64; 3] {
    [0, 1, 2].map(|_| lo + (hi - lo) * rng.random::<f64>())
}

/// Deterministic scene of `size`×`size` pixels.
pub fn generate(seed: u64, size: usize, style: SceneStyle) -> Result<ImageBuffer> {
    let mut rng = seed::rng(seed::derive(seed, "scene"));
    let s = size as f64;
    let (lo, hi) = match style {
        SceneStyle::Shapes => (0.15, 0.95),
        SceneStyle::Texture => (0.05, 0.7),
        SceneStyle::Natural => (0.1, 0.9),
    };
    let c0 = color(&mut rng, lo, hi);
    let c1 = color(&mut rng, lo, hi);
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let (gy, gx) = (angle.sin(), angle.cos());

    let n_shapes = rng.random_range(3..=7);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let kind = rng.random_range(0..3);
        let cy = rng.random::<f64>() * s;
        let cx = rng.random::<f64>() * s;
        let shape = match kind {
            0 => Shape::Ellipse {
                cy,
                cx,
                ry: s * (0.06 + 0.22 * rng.random::<f64>()),
                rx: s * (0.06 + 0.22 * rng.random::<f64>()),
            },
            1 => {
                let hh = s * (0.05 + 0.2 * rng.random::<f64>());
                let hw = s * (0.05 + 0.2 * rng.random::<f64>());
                Shape::Rect {
                    y0: cy - hh,
                    x0: cx - hw,
                    y1: cy + hh,
                    x1: cx + hw,
                }
            }
            _ => {
                let a = rng.random::<f64>() * std::f64::consts::PI;
                Shape::Stripe {
                    cy,
                    cx,
                    ny: a.sin(),
                    nx: a.cos(),
                    half: s * (0.01 + 0.03 * rng.random::<f64>()),
                }
            }
        };
        shapes.push((shape, color(&mut rng, lo, hi)));
    }

    let tex_amp = match style {
        SceneStyle::Shapes | SceneStyle::Natural => 0.03 + 0.05 * rng.random::<f64>(),
        SceneStyle::Texture => 0.08 + 0.08 * rng.random::<f64>(),
    };
    let tex_freq = match style {
        SceneStyle::Shapes | SceneStyle::Natural => 0.25 + 0.5 * rng.random::<f64>(),
        SceneStyle::Texture => 0.6 + 0.8 * rng.random::<f64>(),
    };
    let tex_angle = rng.random::<f64>() * std::f64::consts::PI;
    let (ty, tx) = (tex_angle.sin() * tex_freq, tex_angle.cos() * tex_freq);
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let surfaces: Vec<Vec<f64>> = if style == SceneStyle::Natural {
        let mut trng = seed::rng(seed::derive(seed, "surface"));
        (0..=shapes.len()).map(|_| surface_texture(&mut trng, size)).collect()
    } else {
        Vec::new()
    };

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = (((fy / s - 0.5) * gy + (fx / s - 0.5) * gx) + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            let mut surface = surfaces.first().map_or(0.0, |f| f[y * size + x]);
            for (k, (shape, col)) in shapes.iter().enumerate() {
                // one-pixel anti-aliased edge
                let cover = (0.5 - shape.distance(fy, fx)).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] += cover * (col[c] - px[c]);
                }
                if let Some(f) = surfaces.get(k + 1) {
                    surface += cover * (f[y * size + x] - surface);
                }
            }
            let texture = tex_amp * (fy * ty + fx * tx + phase).sin() + surface;
            for v in px {
                data.push(v + texture);
            }
        }
    }
    ImageBuffer::from_clamped(size, size, data)
}

/// Sum of value-noise octaves with cell sizes from size/4 down to 1 pixel,
/// amplitude shrinking by a fixed ratio per octave.
fn surface_texture(rng: &mut seed::Rng, size: usize) -> Vec<f64> {
    let amp0 = 0.06 + 0.12 * rng.random::<f64>();
    let ratio = 0.65 + 0.25 * rng.random::<f64>();
    let mut field = vec![0.0; size * size];
    let mut cell = (size / 4).max(1);
    let mut amp = amp0;
    loop {
        let n = size / cell + 2;
        let lattice: Vec<f64> = (0..n * n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        for y in 0..size {
            let gy = y as f64 / cell as f64;
            let (iy, ty) = (gy as usize, smooth(gy.fract()));
            for x in 0..size {
                let gx = x as f64 / cell as f64;
                let (ix, tx) = (gx as usize, smooth(gx.fract()));
                let top = lattice[iy * n + ix] * (1.0 - tx) + lattice[iy * n + ix + 1] * tx;
                let bottom = lattice[(iy + 1) * n + ix] * (1.0 - tx) + lattice[(iy + 1) * n + ix + 1] * tx;
                field[y * size + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        if cell == 1 {
            break;
        }
        cell /= 2;
        amp *= ratio;
    }
    field
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn scene_seed(seed: u64, prefix: &str, index: usize) -> u64 {
    seed::SeedHasher::new(seed).str(prefix).u64(index as u64).finish()
}

/// Writes `count` scenes as `{prefix}_{index:05}.png` and returns their ids.
pub fn write_dataset(dir: &Path, prefix: &str, count: usize, size: usize, seed: u64, style: SceneStyle) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{prefix}_{i:05}");
        let img = generate(scene_seed(seed, prefix, i), size, style)?;
        img.save_png(&dir.join(format!("{id}.png")))?;
        ids.push(id);
    }
    Ok(ids)
}

/// The images `write_dataset` would write, already quantized to 8 bits and
/// kept in memory.
pub fn image_set(prefix: &str, count: usize, size: usize, seed: u64, style: SceneStyle) -> Result<ImageSet> {
    let mut set = ImageSet::default();
    for i in 0..count {
        set.ids.push(format!("{prefix}_{i:05}"));
        set.images.push(generate(scene_seed(seed, prefix, i), size, style)?.quantized());
    }
    Ok(set)
}
