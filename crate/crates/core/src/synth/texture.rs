//! Procedural textures and simple calibration pairs.
//!
//! Matching needs textured input; these generators produce smooth value-noise
//! images (band-limited, so bilinear resampling degrades them gracefully) and
//! exactly-parameterized frame pairs — pure translations and centered zooms —
//! whose ground truth is known in closed form.

use crate::field::{GridCoord, Image, VectorField2D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Multi-octave value noise in [0, 1]: random coarse grids bilinearly
/// upsampled and summed with halving amplitudes.  Smooth at pixel scale but
/// contrasty at patch scale, which is what descriptor matching wants.
pub fn smooth_noise(width: usize, height: usize, channels: usize, rng: &mut ChaCha8Rng) -> Image {
    assert!(channels == 1 || channels == 3);
    let mut data = vec![0.0f32; width * height * channels];
    let mut amplitude = 1.0f32;
    let mut total = 0.0f32;
    // Octave grids from 4 cells up to quarter-resolution.
    let mut grid = 4usize;
    while grid <= (width.max(height) / 4).max(4) {
        let gw = grid.min(width.max(2));
        let gh = grid.min(height.max(2));
        let nodes: Vec<f32> = (0..gw * gh * channels).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sx = (gw - 1) as f32 / width as f32;
        let sy = (gh - 1) as f32 / height as f32;
        for y in 0..height {
            let fy = (y as f32 + 0.5) * sy - 0.5 * sy;
            let y0 = (fy.floor() as usize).min(gh.saturating_sub(2));
            let ty = (fy - y0 as f32).clamp(0.0, 1.0);
            for x in 0..width {
                let fx = (x as f32 + 0.5) * sx - 0.5 * sx;
                let x0 = (fx.floor() as usize).min(gw.saturating_sub(2));
                let tx = (fx - x0 as f32).clamp(0.0, 1.0);
                for c in 0..channels {
                    let n = |xx: usize, yy: usize| nodes[(yy * gw + xx) * channels + c];
                    let v = n(x0, y0) * (1.0 - tx) * (1.0 - ty)
                        + n(x0 + 1, y0) * tx * (1.0 - ty)
                        + n(x0, y0 + 1) * (1.0 - tx) * ty
                        + n(x0 + 1, y0 + 1) * tx * ty;
                    data[(y * width + x) * channels + c] += amplitude * v;
                }
            }
        }
        total += amplitude;
        amplitude *= 0.55;
        grid *= 2;
    }
    // Normalize the octave sum and stretch mildly around mid-gray.
    for v in &mut data {
        *v = 0.5 + (*v / total - 0.5) * 1.6;
    }
    Image::from_data(width, height, channels, data).expect("noise dims are valid")
}

/// Frame pair where frame 2 shows the same content displaced by `(dx, dy)`
/// pixels: `I₂(p) = I₁(p − t)`, so the true flow is uniformly `(dx, dy)`.
/// Border pixels reuse clamped content.
pub fn translate_pair(img: &Image, dx: f32, dy: f32) -> (Image, Image) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut second = Image::new(w, h, c, 0.0).expect("image dims are valid");
    for y in 0..h {
        for x in 0..w {
            let at = GridCoord::new(x as f32 - dx, y as f32 - dy);
            for ch in 0..c {
                second.set(x, y, ch, img.sample_channel(at, ch));
            }
        }
    }
    (img.clone(), second)
}

/// Frame pair where frame 2 magnifies frame 1 by `m` about the image center:
/// `I₂(p) = I₁(c + (p − c)/m)`.
///
/// Ground truth: flow at pixel `q` is `(m − 1)·(q − c)` (see
/// [`zoom_flow_gt`]) and the scale-change field is uniformly `1/m` — frame-2
/// content must be shrunk by `m` to match frame 1, and for an object whose
/// image grows by `m` the depth ratio is `Z'/Z = 1/m`.
pub fn zoom_pair(img: &Image, magnification: f32) -> (Image, Image) {
    assert!(magnification > 0.0);
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let mut second = Image::new(w, h, c, 0.0).expect("image dims are valid");
    for y in 0..h {
        for x in 0..w {
            let sx = cx + (x as f32 - cx) / magnification;
            let sy = cy + (y as f32 - cy) / magnification;
            let at = GridCoord::new(sx, sy);
            for ch in 0..c {
                second.set(x, y, ch, img.sample_channel(at, ch));
            }
        }
    }
    (img.clone(), second)
}

/// Full-resolution ground-truth flow of [`zoom_pair`].
pub fn zoom_flow_gt(width: usize, height: usize, magnification: f32) -> VectorField2D {
    let (cx, cy) = ((width as f32 - 1.0) / 2.0, (height as f32 - 1.0) / 2.0);
    let mut flow = VectorField2D::new(width, height, [0.0, 0.0]).expect("dims are valid");
    for y in 0..height {
        for x in 0..width {
            flow.set(
                x,
                y,
                [
                    (magnification - 1.0) * (x as f32 - cx),
                    (magnification - 1.0) * (y as f32 - cy),
                ],
            );
        }
    }
    flow
}
