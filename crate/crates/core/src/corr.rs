//! Correlation volumes and the lookups that sample them.
//!
//! For a frame pair, an all-pairs volume holds the dot product of every
//! frame-1 descriptor with every frame-2 descriptor.  Building one volume per
//! entry of the scale set yields the multi-scale family `C_m`; sampling it
//! jointly in position (at the current flow) and along the scale axis (at the
//! current scale change `f3`) is what lets the solver refine both fields from
//! the same evidence.
//!
//! Conventions fixed here:
//!
//! - A frame-1 cell `(x, y)` with flow `(u, v)` looks up the scale-`s` volume
//!   at the center-preserving target `a·(s·(x+u+½) − ½) + (d_u, d_v)`, where
//!   `a` is the volume's [axis scale](CorrVolume4D::axis_scale) (frame-2
//!   nodes per frame-1 cell) and the window offset counts frame-2 nodes.
//! - Between nodes, [`CorrVolume4D::sample`] returns the cosine against the
//!   *bilinearly interpolated, renormalized* frame-2 descriptor — computed
//!   from the stored dot products plus per-map adjacent-node Gram planes.
//!   Plain correlation interpolation would under-report every off-node
//!   position (descriptor autocorrelation falls off within a node spacing)
//!   and bias any comparison across grids of different spacing.
//! - Out-of-bounds targets return correlation 0 with a cleared validity flag —
//!   never a clamped border value, which would fabricate matches at edges.
//! - The scale axis is piecewise-linear between the grid scales; positions
//!   outside `[0.5, 1.5]` clamp to the boundary sample.
//! - Entries are raw dot products (no `1/√D`); with unit-norm descriptors
//!   both entries and samples lie in `[-1, 1]`.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::field::{ScalarField2D, VectorField2D};
use crate::pyramid::{build_scale_set, FeaturePyramid, ScaleSet};
use rayon::prelude::*;
use std::io::{Read, Write};

/// Number of pooled levels in [`PooledCorrPyramid`] (the base volume plus
/// three successive 2×2 average-poolings).
pub const POOLED_LEVELS: usize = 4;

/// Bilinear sample of a row-major `w`×`h` plane where any position outside
/// `[0, w-1]×[0, h-1]` yields `(0.0, false)` instead of a clamped value.
#[inline]
fn sample_plane_zero(data: &[f32], w: usize, h: usize, x: f32, y: f32) -> (f32, bool) {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32) {
        return (0.0, false);
    }
    let x0 = (x as usize).min(w.saturating_sub(2));
    let y0 = (y as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let dx = x - x0 as f32;
    let dy = y - y0 as f32;
    let top = data[y0 * w + x0] * (1.0 - dx) + data[y0 * w + x1] * dx;
    let bot = data[y1 * w + x0] * (1.0 - dx) + data[y1 * w + x1] * dx;
    (top * (1.0 - dy) + bot * dy, true)
}

/// Self-correlations between adjacent frame-2 nodes, anchored at the
/// top-left node of each 2×2 quad: `h` pairs a node with its right
/// neighbor, `v` with the one below, `d` the quad diagonal, `a` the quad
/// anti-diagonal.  These four planes are what lets [`CorrVolume4D::sample`]
/// renormalize an interpolated descriptor without storing the descriptors.
#[derive(Debug, Clone, PartialEq)]
struct GramPlanes {
    h: Vec<f32>,
    v: Vec<f32>,
    d: Vec<f32>,
    a: Vec<f32>,
}

fn build_gram(f2s: &FeatureMap) -> GramPlanes {
    let (w, h) = (f2s.width(), f2s.height());
    let dot = |a: &[f32], b: &[f32]| -> f32 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut g = GramPlanes {
        h: vec![0.0; w * h],
        v: vec![0.0; w * h],
        d: vec![0.0; w * h],
        a: vec![0.0; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d0 = f2s.descriptor(x, y);
            if x + 1 < w {
                g.h[i] = dot(d0, f2s.descriptor(x + 1, y));
            }
            if y + 1 < h {
                g.v[i] = dot(d0, f2s.descriptor(x, y + 1));
            }
            if x + 1 < w && y + 1 < h {
                g.d[i] = dot(d0, f2s.descriptor(x + 1, y + 1));
                g.a[i] = dot(f2s.descriptor(x + 1, y), f2s.descriptor(x, y + 1));
            }
        }
    }
    g
}

/// All-pairs correlation of one frame pair at one scale.
///
/// Axes: frame-1 cell `(x1, y1)` first, then frame-2 node `(x2, y2)`; the
/// per-frame-1-cell plane over frame 2 is contiguous, which is the access
/// pattern of every lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrVolume4D {
    w1: usize,
    h1: usize,
    w2: usize,
    h2: usize,
    scale: f32,
    /// Frame-2 nodes per frame-1 cell unit: the frame-1 stride divided by
    /// the frame-2 node stride (2 for the stride-4 scale grids, 1 for the
    /// stride-16 initialization volume).
    axis_scale: f32,
    data: Vec<f32>,
    /// Present when built from descriptors; pooled or deserialized volumes
    /// fall back to plain bilinear samples.
    gram: Option<GramPlanes>,
}

impl CorrVolume4D {
    /// Frame-1 cell dims (width, height).
    pub fn dims1(&self) -> (usize, usize) {
        (self.w1, self.h1)
    }

    /// Frame-2 (scaled) node dims (width, height).
    pub fn dims2(&self) -> (usize, usize) {
        (self.w2, self.h2)
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// Frame-2 nodes per frame-1 cell unit along axes 2/3.
    pub fn axis_scale(&self) -> f32 {
        self.axis_scale
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn entry(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> f32 {
        self.data[((y1 * self.w1 + x1) * self.h2 + y2) * self.w2 + x2]
    }

    /// The contiguous frame-2 correlation plane of frame-1 cell `(x1, y1)`.
    #[inline]
    pub fn plane(&self, x1: usize, y1: usize) -> &[f32] {
        let len = self.w2 * self.h2;
        let at = (y1 * self.w1 + x1) * len;
        &self.data[at..at + len]
    }

    /// Correlation of frame-1 cell `(x1, y1)` against the frame-2 descriptor
    /// field at continuous node coordinate `(x, y)`; out-of-bounds →
    /// `(0.0, false)`.
    ///
    /// With Gram planes present this is the exact cosine between the frame-1
    /// descriptor and the unit-normalized bilinear blend of the four
    /// surrounding frame-2 descriptors: the numerator interpolates the
    /// stored dot products and the denominator is the blend's norm,
    /// recovered from the quad's pairwise self-correlations.  On-node
    /// positions reproduce the stored entry exactly.  Without Gram planes
    /// the sample is plain bilinear.
    #[inline]
    pub fn sample(&self, x1: usize, y1: usize, x: f32, y: f32) -> (f32, bool) {
        let (w, h) = (self.w2, self.h2);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32) {
            return (0.0, false);
        }
        let gram = match &self.gram {
            Some(g) => g,
            None => return sample_plane_zero(self.plane(x1, y1), w, h, x, y),
        };
        let x0 = (x as usize).min(w.saturating_sub(2));
        let y0 = (y as usize).min(h.saturating_sub(2));
        let xn = (x0 + 1).min(w - 1);
        let yn = (y0 + 1).min(h - 1);
        let dx = x - x0 as f32;
        let dy = y - y0 as f32;
        let (wa, wb) = ((1.0 - dx) * (1.0 - dy), dx * (1.0 - dy));
        let (wc, wd) = ((1.0 - dx) * dy, dx * dy);
        let plane = self.plane(x1, y1);
        let num = wa * plane[y0 * w + x0]
            + wb * plane[y0 * w + xn]
            + wc * plane[yn * w + x0]
            + wd * plane[yn * w + xn];
        let den2 = wa * wa
            + wb * wb
            + wc * wc
            + wd * wd
            + 2.0
                * (wa * wb * gram.h[y0 * w + x0]
                    + wc * wd * gram.h[yn * w + x0]
                    + wa * wc * gram.v[y0 * w + x0]
                    + wb * wd * gram.v[y0 * w + xn]
                    + wa * wd * gram.d[y0 * w + x0]
                    + wb * wc * gram.a[y0 * w + x0]);
        (num / den2.max(1e-12).sqrt(), true)
    }

    /// 2×2 average-pooling of the frame-2 axes with ceiling semantics:
    /// partial border blocks average whatever cells exist.  Pooled entries
    /// no longer correspond to single descriptors, so the result carries no
    /// Gram planes and samples plain-bilinearly.
    fn pooled_half(&self) -> CorrVolume4D {
        let pw = self.w2.div_ceil(2);
        let ph = self.h2.div_ceil(2);
        let out_plane = pw * ph;
        let mut data = vec![0.0f32; self.w1 * self.h1 * out_plane];
        data.par_chunks_mut(out_plane)
            .enumerate()
            .for_each(|(cell, out)| {
                let src = &self.data[cell * self.w2 * self.h2..(cell + 1) * self.w2 * self.h2];
                for py in 0..ph {
                    for px in 0..pw {
                        let mut acc = 0.0f32;
                        let mut n = 0u32;
                        for sy in (2 * py)..(2 * py + 2).min(self.h2) {
                            for sx in (2 * px)..(2 * px + 2).min(self.w2) {
                                acc += src[sy * self.w2 + sx];
                                n += 1;
                            }
                        }
                        out[py * pw + px] = acc / n as f32;
                    }
                }
            });
        CorrVolume4D {
            w1: self.w1,
            h1: self.h1,
            w2: pw,
            h2: ph,
            scale: self.scale,
            axis_scale: self.axis_scale,
            data,
            gram: None,
        }
    }
}

/// Dense all-pairs dot products between `f2s` (a scaled frame 2) and `f1`
/// (frame 1): `entry(x1, y1, x2, y2) = Σ_h f2s[x2, y2, h] · f1[x1, y1, h]`,
/// plus the frame-2 Gram planes used by norm-corrected sampling.  The axis
/// scale is the stride ratio of the two maps.
///
/// Errors: descriptor depth mismatch.
pub fn build_corr_volume(f2s: &FeatureMap, f1: &FeatureMap, scale: f32) -> Result<CorrVolume4D> {
    if f2s.depth() != f1.depth() {
        return Err(Error::Dimension(format!(
            "feature depth mismatch: frame-2 {} vs frame-1 {}",
            f2s.depth(),
            f1.depth()
        )));
    }
    let (w1, h1) = (f1.width(), f1.height());
    let (w2, h2) = (f2s.width(), f2s.height());
    let depth = f1.depth();
    let plane = w2 * h2;
    let mut data = vec![0.0f32; w1 * h1 * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(cell, out)| {
        let d1 = f1.descriptor(cell % w1, cell / w1);
        for y2 in 0..h2 {
            for x2 in 0..w2 {
                let d2 = f2s.descriptor(x2, y2);
                let mut acc = 0.0f32;
                for h in 0..depth {
                    acc += d2[h] * d1[h];
                }
                out[y2 * w2 + x2] = acc;
            }
        }
    });
    Ok(CorrVolume4D {
        w1,
        h1,
        w2,
        h2,
        scale,
        axis_scale: f1.stride() as f32 / f2s.stride() as f32,
        data,
        gram: Some(build_gram(f2s)),
    })
}

/// Correlation between the descriptor of `f1` cell `(x1, y1)` and the
/// unit-normalized bilinear blend of `f2s` descriptors at continuous node
/// coordinate `(tx, ty)`, computed directly in descriptor space.  Returns
/// the same value a stored volume with Gram planes yields through
/// [`CorrVolume4D::sample`]; out-of-bounds → `(0.0, false)`.
pub fn descriptor_corr_at(
    f1: &FeatureMap,
    f2s: &FeatureMap,
    x1: usize,
    y1: usize,
    tx: f32,
    ty: f32,
) -> (f32, bool) {
    let (w, h) = (f2s.width(), f2s.height());
    if !(tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f32 && ty <= (h - 1) as f32) {
        return (0.0, false);
    }
    let x0 = (tx as usize).min(w.saturating_sub(2));
    let y0 = (ty as usize).min(h.saturating_sub(2));
    let xn = (x0 + 1).min(w - 1);
    let yn = (y0 + 1).min(h - 1);
    let dx = tx - x0 as f32;
    let dy = ty - y0 as f32;
    let weights = [
        (1.0 - dx) * (1.0 - dy),
        dx * (1.0 - dy),
        (1.0 - dx) * dy,
        dx * dy,
    ];
    let corners = [(x0, y0), (xn, y0), (x0, yn), (xn, yn)];
    let depth = f2s.depth();
    let mut blend = vec![0.0f32; depth];
    for (wgt, (cx, cy)) in weights.into_iter().zip(corners) {
        for (b, d) in blend.iter_mut().zip(f2s.descriptor(cx, cy)) {
            *b += wgt * d;
        }
    }
    let norm = blend.iter().map(|v| v * v).sum::<f32>().sqrt();
    let q = f1.descriptor(x1, y1);
    let dot: f32 = blend.iter().zip(q).map(|(b, d)| b * d).sum();
    (dot / norm.max(1e-6), true)
}

/// The multi-scale correlation family: one all-pairs volume per entry of the
/// scale set, all sharing the frame-1 cell grid.
#[derive(Debug, Clone)]
pub struct MultiScaleCorrVolume {
    scale_set: ScaleSet,
    volumes: Vec<CorrVolume4D>,
}

impl MultiScaleCorrVolume {
    pub fn scale_set(&self) -> &ScaleSet {
        &self.scale_set
    }

    pub fn volumes(&self) -> &[CorrVolume4D] {
        &self.volumes
    }

    pub fn volume(&self, m: usize) -> &CorrVolume4D {
        &self.volumes[m]
    }

    /// The identity-scale member (the plain single-scale volume).
    pub fn unity_volume(&self) -> &CorrVolume4D {
        &self.volumes[self.scale_set.unity_index()]
    }

    /// Frame-1 cell dims (width, height).
    pub fn cell_dims(&self) -> (usize, usize) {
        (self.volumes[0].w1, self.volumes[0].h1)
    }

    pub fn entry_count(&self) -> u64 {
        self.volumes.iter().map(|v| v.len() as u64).sum()
    }

    /// Correlation of cell `(x, y)` displaced by flow `(u, v)` cells in the
    /// scale-`m` grid, at an extra offset of `(du, dv)` cells: the single-
    /// point norm-corrected volume sample at the center-preserving target.
    /// Offsets here are in *frame-1 cell units*, so a window built from them
    /// covers the same image area at every scale.
    pub fn sample_at_flow(
        &self,
        m: usize,
        x: usize,
        y: usize,
        u: f32,
        v: f32,
        du: f32,
        dv: f32,
    ) -> (f32, bool) {
        let vol = &self.volumes[m];
        let a = vol.axis_scale;
        let s = vol.scale;
        let tx = a * (s * (x as f32 + u + du + 0.5) - 0.5);
        let ty = a * (s * (y as f32 + v + dv + 0.5) - 0.5);
        vol.sample(x, y, tx, ty)
    }
}

/// Total entries the volumes of `pyr` would occupy:
/// `Σ_s H·W·H_s·W_s` over the scale set.
pub fn required_volume_entries(pyr: &FeaturePyramid) -> u64 {
    let (w1, h1) = pyr.cell_dims();
    pyr.f2_scaled()
        .iter()
        .map(|f| (w1 * h1 * f.width() * f.height()) as u64)
        .sum()
}

/// Bytes [`build_multi_scale`] would allocate for `pyr` (4 bytes per entry).
pub fn required_volume_bytes(pyr: &FeaturePyramid) -> u64 {
    required_volume_entries(pyr) * std::mem::size_of::<f32>() as u64
}

/// Builds every per-scale volume of the pyramid.
///
/// Errors: [`Error::MemoryBudget`] *before any allocation* if the volumes
/// would exceed `max_bytes`; depth mismatches propagate.
pub fn build_multi_scale(pyr: &FeaturePyramid, max_bytes: u64) -> Result<MultiScaleCorrVolume> {
    let required = required_volume_bytes(pyr);
    if required > max_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: max_bytes,
        });
    }
    let scales = pyr.scale_set().scales();
    let volumes = pyr
        .f2_scaled()
        .iter()
        .zip(scales)
        .map(|(f2s, &s)| build_corr_volume(f2s, pyr.f1_stride8(), s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiScaleCorrVolume {
        scale_set: pyr.scale_set().clone(),
        volumes,
    })
}

/// The identity-scale volume average-pooled 2×2 over its frame-2 axes three
/// times: four levels of progressively longer-range, lower-resolution
/// correlation.
#[derive(Debug, Clone)]
pub struct PooledCorrPyramid {
    levels: Vec<CorrVolume4D>,
}

impl PooledCorrPyramid {
    pub fn levels(&self) -> &[CorrVolume4D] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &CorrVolume4D {
        &self.levels[l]
    }
}

/// Builds the 4-level pooled pyramid from a single-scale volume.
pub fn build_pooled(c1: &CorrVolume4D) -> PooledCorrPyramid {
    let mut levels = Vec::with_capacity(POOLED_LEVELS);
    levels.push(c1.clone());
    for _ in 1..POOLED_LEVELS {
        let next = levels.last().unwrap().pooled_half();
        levels.push(next);
    }
    PooledCorrPyramid { levels }
}

/// Correlation window per cell with a scale axis: for each frame-1 cell, each
/// window offset, the correlation at every scale of the grid, sampled at the
/// cell's current flow.
#[derive(Debug, Clone)]
pub struct CorrFeatureMulti {
    width: usize,
    height: usize,
    radius: usize,
    n_scales: usize,
    /// `[((y·w + x)·win² + t)·n_scales + m]` with `t = (d_v+r)·(2r+1) + (d_u+r)`.
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl CorrFeatureMulti {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Window side length `2r+1`.
    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    /// Flat window-tap index of offset `(d_u, d_v)` (each in `[-r, r]`).
    #[inline]
    pub fn tap_index(&self, du: isize, dv: isize) -> usize {
        let side = self.window() as isize;
        let r = self.radius as isize;
        ((dv + r) * side + (du + r)) as usize
    }

    /// The contiguous scale curve of cell `(x, y)` at window tap `t`.
    #[inline]
    pub fn scale_curve(&self, x: usize, y: usize, t: usize) -> &[f32] {
        let win2 = self.window() * self.window();
        let at = ((y * self.width + x) * win2 + t) * self.n_scales;
        &self.data[at..at + self.n_scales]
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, t: usize, m: usize) -> f32 {
        self.scale_curve(x, y, t)[m]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, t: usize, m: usize) -> bool {
        let win2 = self.window() * self.window();
        self.valid[((y * self.width + x) * win2 + t) * self.n_scales + m]
    }
}

/// Samples every scale's volume in a `(2r_f+1)²` window around each cell's
/// flow target, producing the joint position/scale correlation feature.  The
/// target in the scale-`s` grid is `a·(s·(cell + flow + ½) − ½)` — the
/// center-preserving scaling of the flow target with `a` the grid's axis
/// scale, so every scale probes the same frame-2 content position — with
/// window offsets applied in that grid's node units.
///
/// Errors: flow dims must equal the volumes' frame-1 cell dims.
pub fn lookup_flow(
    cm: &MultiScaleCorrVolume,
    flow: &VectorField2D,
    r_f: usize,
) -> Result<CorrFeatureMulti> {
    let (w1, h1) = cm.cell_dims();
    if flow.width() != w1 || flow.height() != h1 {
        return Err(Error::Dimension(format!(
            "flow field {}x{} does not match volume cell grid {}x{}",
            flow.width(),
            flow.height(),
            w1,
            h1
        )));
    }
    let n_scales = cm.scale_set().len();
    let side = 2 * r_f + 1;
    let win2 = side * side;
    let cell_len = win2 * n_scales;
    let mut data = vec![0.0f32; w1 * h1 * cell_len];
    let mut valid = vec![false; w1 * h1 * cell_len];
    let scales = cm.scale_set().scales().to_vec();
    let r = r_f as isize;

    data.par_chunks_mut(w1 * cell_len)
        .zip(valid.par_chunks_mut(w1 * cell_len))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            for x in 0..w1 {
                let [u, v] = flow.get(x, y);
                let out = &mut drow[x * cell_len..(x + 1) * cell_len];
                let ok = &mut vrow[x * cell_len..(x + 1) * cell_len];
                for (m, &s) in scales.iter().enumerate() {
                    let vol = cm.volume(m);
                    // Cell centers sit half a cell past the index (stride-8
                    // blocks resampled about pixel centers), so scaling maps
                    // index i to s·(i + 1/2) − 1/2.  This keeps the probed
                    // frame-2 content position identical across scales; the
                    // uncentered form s·i would shift it by 4·(1/s − 1) px
                    // per scale and tilt every scale curve.  The axis scale
                    // converts cell units to the grid's node units.
                    let a = vol.axis_scale;
                    let tx = a * (s * (x as f32 + u + 0.5) - 0.5);
                    let ty = a * (s * (y as f32 + v + 0.5) - 0.5);
                    let mut t = 0usize;
                    for dv in -r..=r {
                        for du in -r..=r {
                            let (val, inb) =
                                vol.sample(x, y, tx + du as f32, ty + dv as f32);
                            out[t * n_scales + m] = val;
                            ok[t * n_scales + m] = inb;
                            t += 1;
                        }
                    }
                }
            }
        });

    Ok(CorrFeatureMulti {
        width: w1,
        height: h1,
        radius: r_f,
        n_scales,
        data,
        valid,
    })
}

/// Correlation window per cell with a *relative* scale axis: taps at
/// `f3 + j/S` around each cell's current scale change.
#[derive(Debug, Clone)]
pub struct CorrFeatureScale {
    width: usize,
    height: usize,
    radius: usize,
    n_taps: usize,
    /// Scale positions actually sampled per cell per tap (after clamping to
    /// `[0.5, 1.5]`), needed by extremum fitting near the range ends.
    positions: Vec<f32>,
    /// `[((y·w + x)·win² + t)·n_taps + j]`, same tap order as the source.
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl CorrFeatureScale {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    /// Clamped scale position of tap `j` at cell `(x, y)`.
    #[inline]
    pub fn position(&self, x: usize, y: usize, j: usize) -> f32 {
        self.positions[(y * self.width + x) * self.n_taps + j]
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, t: usize, j: usize) -> f32 {
        let win2 = self.window() * self.window();
        self.data[((y * self.width + x) * win2 + t) * self.n_taps + j]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, t: usize, j: usize) -> bool {
        let win2 = self.window() * self.window();
        self.valid[((y * self.width + x) * win2 + t) * self.n_taps + j]
    }
}

/// Interpolates the scale axis of `fm` at `2·r_s·S + 1` positions spaced
/// `1/S` around each cell's `f3`.  Positions outside `[0.5, 1.5]` clamp to
/// the boundary sample; on-grid positions reproduce the source slice exactly.
///
/// Errors: dims mismatch; `r_s ≤ 0` or `r_s·S` not an integer (the tap grid
/// must align with the scale grid); `fm` scale count must equal `S+1`.
pub fn lookup_scale(
    fm: &CorrFeatureMulti,
    f3: &ScalarField2D,
    r_s: f32,
    s_degree: usize,
) -> Result<CorrFeatureScale> {
    let scale_set = build_scale_set(s_degree)?;
    if fm.n_scales() != scale_set.len() {
        return Err(Error::Dimension(format!(
            "correlation feature has {} scales but degree {} implies {}",
            fm.n_scales(),
            s_degree,
            scale_set.len()
        )));
    }
    if f3.width() != fm.width() || f3.height() != fm.height() {
        return Err(Error::Dimension(format!(
            "f3 field {}x{} does not match correlation feature {}x{}",
            f3.width(),
            f3.height(),
            fm.width(),
            fm.height()
        )));
    }
    let steps = r_s * s_degree as f32;
    let half_taps = steps.round();
    if !(r_s > 0.0) || (steps - half_taps).abs() > 1e-6 || half_taps < 1.0 {
        return Err(Error::Parameter(format!(
            "scale lookup radius {r_s} must be a positive multiple of 1/{s_degree}"
        )));
    }
    let half_taps = half_taps as isize;
    let n_taps = (2 * half_taps + 1) as usize;
    let s_f = s_degree as f32;
    let (w, h) = (fm.width(), fm.height());
    let win2 = fm.window() * fm.window();

    let mut positions = vec![0.0f32; w * h * n_taps];
    let mut data = vec![0.0f32; w * h * win2 * n_taps];
    let mut valid = vec![false; w * h * win2 * n_taps];
    for y in 0..h {
        for x in 0..w {
            let base = f3.get(x, y);
            let cell = y * w + x;
            for j in -half_taps..=half_taps {
                let jj = (j + half_taps) as usize;
                let p = (base + j as f32 / s_f).clamp(0.5, 1.5);
                positions[cell * n_taps + jj] = p;
                // Continuous index on the scale grid; exact at grid points.
                let u = (p - 0.5) * s_f;
                let m0 = (u as usize).min(s_degree - 1);
                let wfrac = u - m0 as f32;
                for t in 0..win2 {
                    let curve = fm.scale_curve(x, y, t);
                    let val = curve[m0] * (1.0 - wfrac) + curve[m0 + 1] * wfrac;
                    let ok = if wfrac <= 0.0 {
                        fm.is_valid(x, y, t, m0)
                    } else if wfrac >= 1.0 {
                        fm.is_valid(x, y, t, m0 + 1)
                    } else {
                        fm.is_valid(x, y, t, m0) && fm.is_valid(x, y, t, m0 + 1)
                    };
                    let at = (cell * win2 + t) * n_taps + jj;
                    data[at] = val;
                    valid[at] = ok;
                }
            }
        }
    }

    Ok(CorrFeatureScale {
        width: w,
        height: h,
        radius: fm.radius(),
        n_taps,
        positions,
        data,
        valid,
    })
}

/// Multi-level correlation window per cell: the pooled-pyramid (or coarse
/// initialization) lookup result.
#[derive(Debug, Clone)]
pub struct CorrFeatureOf {
    width: usize,
    height: usize,
    radius: usize,
    n_levels: usize,
    /// `[((y·w + x)·n_levels + L)·win² + t]`.
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl CorrFeatureOf {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    #[inline]
    pub fn tap_index(&self, du: isize, dv: isize) -> usize {
        let side = self.window() as isize;
        let r = self.radius as isize;
        ((dv + r) * side + (du + r)) as usize
    }

    /// The contiguous window of cell `(x, y)` at pyramid level `l`.
    #[inline]
    pub fn window_slice(&self, x: usize, y: usize, l: usize) -> &[f32] {
        let win2 = self.window() * self.window();
        let at = ((y * self.width + x) * self.n_levels + l) * win2;
        &self.data[at..at + win2]
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, l: usize, t: usize) -> f32 {
        self.window_slice(x, y, l)[t]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, l: usize, t: usize) -> bool {
        let win2 = self.window() * self.window();
        self.valid[((y * self.width + x) * self.n_levels + l) * win2 + t]
    }
}

/// Samples each pooled level in a `(2r_f+1)²` window around the flow target;
/// with base axis scale `a`, the level-`L` target is
/// `(a·(cell + flow) + ½)/2^L − ½` (the center-preserving reduction of the
/// fine node target) and offsets apply in level-`L` units, so an offset
/// there stands for a fine displacement of exactly `2^L` nodes, i.e.
/// `2^L / a` cells.
///
/// Errors: flow dims must match the pyramid's frame-1 cell grid.
pub fn lookup_pooled(
    pyr: &PooledCorrPyramid,
    flow: &VectorField2D,
    r_f: usize,
) -> Result<CorrFeatureOf> {
    let base = pyr.level(0);
    if flow.width() != base.w1 || flow.height() != base.h1 {
        return Err(Error::Dimension(format!(
            "flow field {}x{} does not match volume cell grid {}x{}",
            flow.width(),
            flow.height(),
            base.w1,
            base.h1
        )));
    }
    let n_levels = pyr.levels().len();
    let side = 2 * r_f + 1;
    let win2 = side * side;
    let cell_len = n_levels * win2;
    let (w1, h1) = (base.w1, base.h1);
    let mut data = vec![0.0f32; w1 * h1 * cell_len];
    let mut valid = vec![false; w1 * h1 * cell_len];
    let r = r_f as isize;

    data.par_chunks_mut(w1 * cell_len)
        .zip(valid.par_chunks_mut(w1 * cell_len))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            for x in 0..w1 {
                let [u, v] = flow.get(x, y);
                let out = &mut drow[x * cell_len..(x + 1) * cell_len];
                let ok = &mut vrow[x * cell_len..(x + 1) * cell_len];
                let a = pyr.level(0).axis_scale;
                for (l, vol) in pyr.levels().iter().enumerate() {
                    let inv = 1.0 / (1u32 << l) as f32;
                    // Same center-preserving index map as the scale lookup:
                    // the fine node target is a·(i + flow) (cell center and
                    // node center coincide there), and a level-L block of
                    // 2^L nodes has its center at (j + 1/2)·2^L − 1/2 in
                    // fine node units, so the target maps down with the
                    // half-node terms.  An offset (d_u, d_v) at level L then
                    // represents a fine displacement of exactly
                    // 2^L·(d_u, d_v) nodes.
                    let tx = (a * (x as f32 + u) + 0.5) * inv - 0.5;
                    let ty = (a * (y as f32 + v) + 0.5) * inv - 0.5;
                    let mut t = 0usize;
                    for dv in -r..=r {
                        for du in -r..=r {
                            let (val, inb) =
                                vol.sample(x, y, tx + du as f32, ty + dv as f32);
                            out[l * win2 + t] = val;
                            ok[l * win2 + t] = inb;
                            t += 1;
                        }
                    }
                }
            }
        });

    Ok(CorrFeatureOf {
        width: w1,
        height: h1,
        radius: r_f,
        n_levels,
        data,
        valid,
    })
}

/// Coarse-grid matching feature: builds the stride-16 all-pairs volume and
/// samples a `(2r+1)²` window per cell at zero flow.  The result is a
/// single-level [`CorrFeatureOf`] on the 1/16 grid.
///
/// Errors: maps must both be stride 16 and share dims and depth.
pub fn init_corr_16(f1_16: &FeatureMap, f2_16: &FeatureMap, r: usize) -> Result<CorrFeatureOf> {
    if f1_16.stride() != 16 || f2_16.stride() != 16 {
        return Err(Error::Parameter(format!(
            "coarse matching needs stride-16 maps, got {} and {}",
            f1_16.stride(),
            f2_16.stride()
        )));
    }
    if f1_16.width() != f2_16.width() || f1_16.height() != f2_16.height() {
        return Err(Error::Dimension(format!(
            "coarse maps differ: {}x{} vs {}x{}",
            f1_16.width(),
            f1_16.height(),
            f2_16.width(),
            f2_16.height()
        )));
    }
    let vol = build_corr_volume(f2_16, f1_16, 1.0)?;
    let zero = VectorField2D::new(vol.w1, vol.h1, [0.0, 0.0])?;
    let pyr = PooledCorrPyramid {
        levels: vec![vol],
    };
    lookup_pooled(&pyr, &zero, r)
}

/// Writes `C_m` as a little-endian binary debug dump: `u32` header
/// `[H, W, S, A]` (`A` the shared axis scale as f32 bits) + per-scale
/// `[H_s, W_s]` pairs, then each volume's `f32` data in storage order.
/// Gram planes are not serialized: lookups on a re-read dump sample plain
/// bilinearly.
pub fn write_volume_dump<W: Write>(cm: &MultiScaleCorrVolume, out: &mut W) -> Result<()> {
    let (w1, h1) = cm.cell_dims();
    let mut header: Vec<u32> = vec![
        h1 as u32,
        w1 as u32,
        cm.scale_set().refinement() as u32,
        cm.volumes()[0].axis_scale.to_bits(),
    ];
    for vol in cm.volumes() {
        header.push(vol.h2 as u32);
        header.push(vol.w2 as u32);
    }
    for v in header {
        out.write_all(&v.to_le_bytes())?;
    }
    for vol in cm.volumes() {
        for v in &vol.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a dump produced by [`write_volume_dump`].
pub fn read_volume_dump<R: Read>(input: &mut R) -> Result<MultiScaleCorrVolume> {
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |input: &mut R| -> Result<u32> {
        input.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let h1 = read_u32(input)? as usize;
    let w1 = read_u32(input)? as usize;
    let s = read_u32(input)? as usize;
    let axis_scale = f32::from_bits(read_u32(input)?);
    let scale_set = build_scale_set(s)?;
    let mut dims = Vec::with_capacity(scale_set.len());
    for _ in 0..scale_set.len() {
        let h2 = read_u32(input)? as usize;
        let w2 = read_u32(input)? as usize;
        dims.push((w2, h2));
    }
    let mut volumes = Vec::with_capacity(dims.len());
    for (m, (w2, h2)) in dims.into_iter().enumerate() {
        let len = w1 * h1 * w2 * h2;
        let mut bytes = vec![0u8; len * 4];
        input.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        volumes.push(CorrVolume4D {
            w1,
            h1,
            w2,
            h2,
            scale: scale_set.scales()[m],
            axis_scale,
            data,
            gram: None,
        });
    }
    Ok(MultiScaleCorrVolume { scale_set, volumes })
}
