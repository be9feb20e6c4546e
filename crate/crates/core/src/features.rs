//! Deterministic dense descriptors on a stride-8 or stride-16 grid.
//!
//! Each grid cell gets a descriptor of its surrounding `(4·stride)²` patch:
//! grayscale plus x/y gradients, pooled into a 4×4 spatial binning
//! (48 raw values), mean-subtracted and contrast-normalized on the intensity
//! part, gradient part normalized as a block, projected to the requested
//! depth with a fixed random Gaussian matrix, and L2-normalized.
//! Correlating two descriptors by dot product then directly measures
//! photometric similarity, which is what the correlation volumes need.
//!
//! [`extract_features_scaled`] produces the descriptor grid of a virtually
//! rescaled image without resampling it: patch support, bin size, and
//! gradient baselines scale instead.  Descriptors from different scales then
//! differ only in content geometry, not in interpolation detail loss, which
//! keeps the scale axis of the correlation volumes honest.  It also accepts
//! a denser stride-4 node grid so correlation lookups between nodes stay
//! close to a real descriptor position.
//!
//! There are no learned weights; identical inputs always produce bit-identical
//! output.

use crate::error::{Error, Result};
use crate::field::{GridCoord, Image, ScalarField2D};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Spatial bins per axis; raw descriptor length is `BINS² · 3` channels.
const BINS: usize = 4;
const RAW_LEN: usize = BINS * BINS * 3;

/// Seed of the fixed Gaussian projection.  Changing it changes every
/// descriptor, so it is part of the format of anything that caches features.
const PROJECTION_SEED: u64 = 0x5ca1e_c0de;

/// Descriptors below this norm are considered zero-variance and mapped to a
/// canonical unit vector instead of being normalized.
const MIN_NORM: f32 = 1e-12;

/// Dense grid of unit-norm descriptors at 1/stride of image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    depth: usize,
    stride: usize,
    /// Row-major cells, `depth` contiguous values per cell.
    data: Vec<f32>,
}

impl FeatureMap {
    /// Builds a map from raw cell-major descriptor data.  Every descriptor
    /// must already be unit-norm (the type invariant the correlation math
    /// relies on); `stride` records which pixel grid the cells refer to.
    pub fn from_raw(
        width: usize,
        height: usize,
        depth: usize,
        stride: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(Error::Dimension(format!(
                "feature map must be non-empty, got {width}x{height}x{depth}"
            )));
        }
        if data.len() != width * height * depth {
            return Err(Error::Dimension(format!(
                "feature data length {} does not match {width}x{height}x{depth}",
                data.len()
            )));
        }
        for (cell, d) in data.chunks_exact(depth).enumerate() {
            let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(Error::Parameter(format!(
                    "descriptor {cell} has norm {norm}, expected unit length"
                )));
            }
        }
        Ok(FeatureMap {
            width,
            height,
            depth,
            stride,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Descriptor of cell (x, y).
    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> &[f32] {
        let at = (y * self.width + x) * self.depth;
        &self.data[at..at + self.depth]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Extracts the descriptor grid of `img` at the given stride (8 or 16).
///
/// Output cells cover `floor(dims / stride)` per axis.  Patches reaching past
/// the image border read clamped pixels, so cells within two cells of the
/// border are not exactly shift-equivariant; interior cells are.
///
/// Errors: stride not 8/16, depth 0, or image smaller than one stride.
pub fn extract_features(img: &Image, stride: usize, depth: usize) -> Result<FeatureMap> {
    if stride != 8 && stride != 16 {
        return Err(Error::Parameter(format!(
            "feature stride must be 8 or 16, got {stride}"
        )));
    }
    if depth == 0 {
        return Err(Error::Parameter("feature depth must be >= 1".into()));
    }
    if img.width() < stride || img.height() < stride {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than one {stride}px cell",
            img.width(),
            img.height()
        )));
    }
    let cells_w = img.width() / stride;
    let cells_h = img.height() / stride;
    let gray = img.to_gray();
    let proj = projection_matrix(depth);

    let mut data = vec![0.0f32; cells_w * cells_h * depth];
    data.par_chunks_mut(cells_w * depth)
        .enumerate()
        .for_each(|(cy, row)| {
            let mut raw = [0.0f32; RAW_LEN];
            for cx in 0..cells_w {
                patch_descriptor(&gray, cx, cy, stride, &mut raw);
                let out = &mut row[cx * depth..(cx + 1) * depth];
                project_normalize(&raw, &proj, out);
            }
        });

    Ok(FeatureMap {
        width: cells_w,
        height: cells_h,
        depth,
        stride,
        data,
    })
}

/// Descriptor grid of the image as if it had been resized by `scale`,
/// computed on the original pixels: node (cx, cy) describes the patch
/// centered at `stride·cx + 3.5` virtual pixels, and the 4×4-bin patch
/// covers `32/scale` source pixels, sampled on a 32×32 lattice with gradient
/// baselines of `1/scale` pixels.  Bin statistics therefore average over
/// scale-proportional areas and descriptors from different scales differ
/// only in content geometry.
///
/// `stride` is the node spacing in *virtual* (resized) pixels and may be 4
/// or 8.  The constant `+3.5` center offset means stride-4 grids contain the
/// stride-8 node positions as their even nodes, so a denser grid refines the
/// coarser one instead of shifting it.
///
/// At `scale = 1.0, stride = 8` the output is bit-identical to
/// [`extract_features`]`(img, 8, depth)`.
///
/// Errors: scale outside (0, 8], stride not 4/8, depth 0, or a virtual size
/// below one cell.
pub fn extract_features_scaled(
    img: &Image,
    scale: f32,
    stride: usize,
    depth: usize,
) -> Result<FeatureMap> {
    if !(scale > 0.0 && scale <= 8.0) {
        return Err(Error::Parameter(format!(
            "feature scale must be in (0, 8], got {scale}"
        )));
    }
    if stride != 4 && stride != 8 {
        return Err(Error::Parameter(format!(
            "scaled feature stride must be 4 or 8, got {stride}"
        )));
    }
    if depth == 0 {
        return Err(Error::Parameter("feature depth must be >= 1".into()));
    }
    let out_w = ((img.width() as f32 * scale).round() as usize).max(1);
    let out_h = ((img.height() as f32 * scale).round() as usize).max(1);
    let cells_w = out_w / stride;
    let cells_h = out_h / stride;
    if cells_w == 0 || cells_h == 0 {
        return Err(Error::Dimension(format!(
            "image {}x{} at scale {scale} is smaller than one {stride}px cell",
            img.width(),
            img.height()
        )));
    }
    let gray = img.to_gray();
    let proj = projection_matrix(depth);
    let inv_s = 1.0 / scale;

    let mut data = vec![0.0f32; cells_w * cells_h * depth];
    data.par_chunks_mut(cells_w * depth)
        .enumerate()
        .for_each(|(cy, row)| {
            let mut raw = [0.0f32; RAW_LEN];
            for cx in 0..cells_w {
                scaled_patch_descriptor(&gray, cx, cy, stride, inv_s, &mut raw);
                let out = &mut row[cx * depth..(cx + 1) * depth];
                project_normalize(&raw, &proj, out);
            }
        });

    Ok(FeatureMap {
        width: cells_w,
        height: cells_h,
        depth,
        stride,
        data,
    })
}

/// Pooled gray/gradient statistics of the `(4·stride)²` patch around cell
/// (cx, cy), written into `raw` as 16 gray + 16 gx + 16 gy bin means with the
/// gray part mean-subtracted.
fn patch_descriptor(gray: &ScalarField2D, cx: usize, cy: usize, stride: usize, raw: &mut [f32; RAW_LEN]) {
    let (w, h) = (gray.width() as isize, gray.height() as isize);
    let patch = (BINS * stride) as isize;
    // Patch is centered on the cell: it starts 1.5 cells before the cell's
    // left/top edge (integer because the stride is even).
    let x0 = (cx * stride) as isize - (3 * stride / 2) as isize;
    let y0 = (cy * stride) as isize - (3 * stride / 2) as isize;

    raw.fill(0.0);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let at = |x: isize, y: isize| gray.get(clamp(x, w), clamp(y, h));
    for ly in 0..patch {
        let by = ly as usize / stride;
        let y = y0 + ly;
        for lx in 0..patch {
            let bx = lx as usize / stride;
            let x = x0 + lx;
            let g = at(x, y);
            let gx = (at(x + 1, y) - at(x - 1, y)) * 0.5;
            let gy = (at(x, y + 1) - at(x, y - 1)) * 0.5;
            let bin = by * BINS + bx;
            raw[bin] += g;
            raw[BINS * BINS + bin] += gx;
            raw[2 * BINS * BINS + bin] += gy;
        }
    }
    finish_raw(raw, 1.0 / (stride * stride) as f32);
}

/// Same statistics as [`patch_descriptor`] for a *virtually rescaled* image:
/// the patch spans `32·inv_s` source pixels around the mapped cell center,
/// sampled on a 32×32 lattice with `inv_s`-pixel gradient baselines, so bins
/// average scale-proportional areas.  At `inv_s = 1` every lattice point
/// lands on an integer pixel and the result matches [`patch_descriptor`]
/// with stride 8 exactly.
fn scaled_patch_descriptor(
    gray: &ScalarField2D,
    cx: usize,
    cy: usize,
    stride: usize,
    inv_s: f32,
    raw: &mut [f32; RAW_LEN],
) {
    let (w, h) = (gray.width(), gray.height());
    let (wm, hm) = ((w - 1) as f32, (h - 1) as f32);
    // Node centers sit at `stride·c + 3.5` virtual pixels; the virtual
    // resize maps them back with half-pixel-center alignment.
    let cx_px = (stride * cx + 4) as f32 * inv_s - 0.5;
    let cy_px = (stride * cy + 4) as f32 * inv_s - 0.5;
    let x0 = cx_px - 16.0 * inv_s;
    let y0 = cy_px - 16.0 * inv_s;
    let samp = |x: f32, y: f32| {
        gray.bilinear_sample(GridCoord::new(x.clamp(0.0, wm), y.clamp(0.0, hm)))
    };

    raw.fill(0.0);
    for ly in 0..4 * 8 {
        let by = ly / 8;
        let y = y0 + (ly as f32 + 0.5) * inv_s;
        for lx in 0..4 * 8 {
            let bx = lx / 8;
            let x = x0 + (lx as f32 + 0.5) * inv_s;
            let g = samp(x, y);
            let gx = (samp(x + inv_s, y) - samp(x - inv_s, y)) * 0.5;
            let gy = (samp(x, y + inv_s) - samp(x, y - inv_s)) * 0.5;
            let bin = by * BINS + bx;
            raw[bin] += g;
            raw[BINS * BINS + bin] += gx;
            raw[2 * BINS * BINS + bin] += gy;
        }
    }
    finish_raw(raw, 1.0 / 64.0);
}

/// Shared descriptor post-processing: bin-count normalization, intensity
/// mean subtraction, then per-modality block normalization.  The brightness
/// and gradient blocks are normalized separately because any uniform
/// amplitude factor between scales (gradient magnitudes shrink with patch
/// support) must cancel before the blocks are mixed by the projection.
fn finish_raw(raw: &mut [f32; RAW_LEN], inv_count: f32) {
    for v in raw.iter_mut() {
        *v *= inv_count;
    }
    let gray_mean = raw[..BINS * BINS].iter().sum::<f32>() / (BINS * BINS) as f32;
    for v in raw[..BINS * BINS].iter_mut() {
        *v -= gray_mean;
    }
    normalize_block(&mut raw[..BINS * BINS]);
    normalize_block(&mut raw[BINS * BINS..]);
}

/// Scales a slice to unit L2 norm; leaves near-zero slices untouched.
fn normalize_block(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm >= MIN_NORM {
        let inv = 1.0 / norm;
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
}

/// Fixed `depth`×48 Gaussian projection, entries N(0, 1/48).
fn projection_matrix(depth: usize) -> Vec<f32> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (RAW_LEN as f32).sqrt();
    (0..depth * RAW_LEN)
        .map(|_| {
            let n: f32 = StandardNormal.sample(&mut rng);
            n * scale
        })
        .collect()
}

fn project_normalize(raw: &[f32; RAW_LEN], proj: &[f32], out: &mut [f32]) {
    let depth = out.len();
    let mut norm_sq = 0.0f32;
    for d in 0..depth {
        let row = &proj[d * RAW_LEN..(d + 1) * RAW_LEN];
        let mut acc = 0.0f32;
        for k in 0..RAW_LEN {
            acc += row[k] * raw[k];
        }
        out[d] = acc;
        norm_sq += acc * acc;
    }
    let norm = norm_sq.sqrt();
    if norm < MIN_NORM {
        // Zero-variance patch: canonical unit vector, never NaN.
        out.fill(0.0);
        out[0] = 1.0;
    } else {
        let inv = 1.0 / norm;
        for v in out.iter_mut() {
            *v *= inv;
        }
    }
}
