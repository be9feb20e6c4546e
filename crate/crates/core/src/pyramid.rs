//! The scale set and the per-scale feature pyramid of a frame pair.
//!
//! Scale-change estimation works by correlating frame 1 against several
//! resized copies of frame 2, `s ∈ {0.5, 0.5+1/S, …, 1.0, …, 1.5}`.  This
//! module owns that scale grid and the bundle of feature maps the correlation
//! volumes are built from: stride-4 descriptor grids of every virtually
//! resized frame 2 (dense enough that lookups between nodes stay close to a
//! real descriptor), stride-8 descriptors of frame 1, and stride-16
//! descriptors of both frames for coarse initialization.

use crate::error::{Error, Result};
use crate::features::{extract_features, extract_features_scaled, FeatureMap};
use crate::field::Image;
use rayon::prelude::*;

/// The ordered scale grid `{0.5, 0.5+1/S, …, 1.5}` with `S+1` entries.
///
/// `S` must be even so that `1.0` is always a grid point: the identity scale
/// has to be representable or a static scene could not score a correlation
/// peak anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    refinement: usize,
    scales: Vec<f32>,
}

impl ScaleSet {
    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the identity scale (`scales[S/2] == 1.0`).
    pub fn unity_index(&self) -> usize {
        self.refinement / 2
    }

    /// Continuous grid index of scale position `s`: 0 at scale 0.5, `S` at
    /// scale 1.5.  Used for linear interpolation along the scale axis.
    pub fn grid_position(&self, s: f32) -> f32 {
        (s - 0.5) * self.refinement as f32
    }
}

/// Builds the scale grid for refinement degree `S` (even, ≥ 2).
pub fn build_scale_set(s: usize) -> Result<ScaleSet> {
    if s < 2 || s % 2 != 0 {
        return Err(Error::Parameter(format!(
            "scale refinement degree must be even and >= 2 so that 1.0 is on the grid, got {s}"
        )));
    }
    let scales = (0..=s).map(|i| 0.5 + i as f32 / s as f32).collect();
    Ok(ScaleSet {
        refinement: s,
        scales,
    })
}

/// Feature maps of a frame pair at every scale needed by the matcher.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    scale_set: ScaleSet,
    /// Stride-8 features of frame 1.
    f1_stride8: FeatureMap,
    /// Stride-4 features of each virtually resized frame 2, ordered as
    /// `scale_set`.
    f2_scaled: Vec<FeatureMap>,
    /// Stride-16 features of both frames, for coarse initialization.
    f1_stride16: FeatureMap,
    f2_stride16: FeatureMap,
}

impl FeaturePyramid {
    pub fn scale_set(&self) -> &ScaleSet {
        &self.scale_set
    }

    pub fn f1_stride8(&self) -> &FeatureMap {
        &self.f1_stride8
    }

    /// Frame-2 features at scale index `m` of the scale set.
    pub fn f2_at_scale(&self, m: usize) -> &FeatureMap {
        &self.f2_scaled[m]
    }

    pub fn f2_scaled(&self) -> &[FeatureMap] {
        &self.f2_scaled
    }

    pub fn f1_stride16(&self) -> &FeatureMap {
        &self.f1_stride16
    }

    pub fn f2_stride16(&self) -> &FeatureMap {
        &self.f2_stride16
    }

    /// Cell dimensions (width, height) of the frame-1 stride-8 grid.
    pub fn cell_dims(&self) -> (usize, usize) {
        (self.f1_stride8.width(), self.f1_stride8.height())
    }
}

/// Builds stride-4 frame-2 descriptor grids at every scale of the grid
/// (patch support scales on the original pixels, no image resampling), plus
/// stride-8/16 descriptors of the originals.  Per-scale jobs run in
/// parallel; the result is immutable.
///
/// Errors: images smaller than 16×16, or invalid `s`/`depth`.
pub fn build_pyramid(i1: &Image, i2: &Image, s: usize, depth: usize) -> Result<FeaturePyramid> {
    let scale_set = build_scale_set(s)?;
    for (name, img) in [("frame 1", i1), ("frame 2", i2)] {
        if img.width() < 16 || img.height() < 16 {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, need at least 16x16",
                img.width(),
                img.height()
            )));
        }
    }

    let f2_scaled: Vec<FeatureMap> = scale_set
        .scales()
        .par_iter()
        .map(|&scale| extract_features_scaled(i2, scale, 4, depth))
        .collect::<Result<_>>()?;

    let (f1_stride8, (f1_stride16, f2_stride16)) = rayon::join(
        || extract_features(i1, 8, depth),
        || {
            rayon::join(
                || extract_features(i1, 16, depth),
                || extract_features(i2, 16, depth),
            )
        },
    );

    Ok(FeaturePyramid {
        scale_set,
        f1_stride8: f1_stride8?,
        f2_scaled,
        f1_stride16: f1_stride16?,
        f2_stride16: f2_stride16?,
    })
}
