//! Randomly shaped textured regions used as flying foregrounds.
//!
//! A region is a closed Catmull-Rom spline through 5–9 control points placed
//! at jittered angles around a center, rasterized by even-odd scanline fill
//! into a boolean mask, paired with a texture patch resampled from a source
//! image.  The placement `origin` locates the patch on the motion plane.

use crate::error::{Error, Result};
use crate::field::{GridCoord, Image, MaskField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum accepted region area, in mask pixels.
pub const MIN_REGION_AREA: usize = 16;
/// Spline flattening: line segments per spline span.
const SUBDIVISIONS: usize = 24;
/// Redraw budget before shape sampling gives up.
const MAX_SHAPE_DRAWS: usize = 100;

/// A closed textured region: `mask` selects which patch pixels belong to the
/// region, `patch` carries their colors, and `origin` places patch pixel
/// (0, 0) on the motion plane, so plane coordinates of patch pixel `(i, j)`
/// are `origin + (i, j)`.
#[derive(Debug, Clone)]
pub struct RegionPatch {
    pub mask: MaskField,
    pub patch: Image,
    pub origin: (f64, f64),
}

impl RegionPatch {
    /// Mask side length (the patch is square).
    pub fn extent(&self) -> usize {
        self.mask.width()
    }

    /// Number of mask pixels inside the region.
    pub fn area(&self) -> usize {
        self.mask.count()
    }
}

/// Flattens a closed Catmull-Rom spline through `points` (implicitly wrapped)
/// into a polygon and rasterizes it with even-odd scanline fill onto a
/// `width`×`height` grid whose pixel centers sit at integer coordinates.
pub(crate) fn rasterize_closed_loop(
    points: &[(f64, f64)],
    width: usize,
    height: usize,
) -> MaskField {
    let n = points.len();
    assert!(n >= 3, "a closed loop needs at least 3 control points");
    let mut polygon: Vec<(f64, f64)> = Vec::with_capacity(n * SUBDIVISIONS);
    for i in 0..n {
        let p0 = points[(i + n - 1) % n];
        let p1 = points[i];
        let p2 = points[(i + 1) % n];
        let p3 = points[(i + 2) % n];
        // Catmull-Rom span (p1 → p2) as a cubic Bézier.
        let b1 = (p1.0 + (p2.0 - p0.0) / 6.0, p1.1 + (p2.1 - p0.1) / 6.0);
        let b2 = (p2.0 - (p3.0 - p1.0) / 6.0, p2.1 - (p3.1 - p1.1) / 6.0);
        for k in 0..SUBDIVISIONS {
            let t = k as f64 / SUBDIVISIONS as f64;
            let u = 1.0 - t;
            let x = u * u * u * p1.0 + 3.0 * u * u * t * b1.0 + 3.0 * u * t * t * b2.0 + t * t * t * p2.0;
            let y = u * u * u * p1.1 + 3.0 * u * u * t * b1.1 + 3.0 * u * t * t * b2.1 + t * t * t * p2.1;
            polygon.push((x, y));
        }
    }

    let mut mask = MaskField::new(width, height, false).expect("mask dims are valid");
    let m = polygon.len();
    let mut crossings: Vec<f64> = Vec::new();
    for row in 0..height {
        let yl = row as f64;
        crossings.clear();
        for i in 0..m {
            let (x0, y0) = polygon[i];
            let (x1, y1) = polygon[(i + 1) % m];
            // Half-open span rule so shared vertices count once.
            if (y0 <= yl && yl < y1) || (y1 <= yl && yl < y0) {
                crossings.push(x0 + (yl - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        for pair in crossings.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0) as usize;
            let hi = pair[1].floor().min(width as f64 - 1.0);
            if hi < 0.0 {
                continue;
            }
            for x in lo..=hi as usize {
                mask.set(x, row, true);
            }
        }
    }
    mask
}

/// Draws a random closed region of side `extent` textured from `source`.
///
/// The control polygon has 5–9 points at radii in `[0.33, 0.47]·extent`
/// around the patch center, with jittered angular spacing.  Texture comes
/// from a randomly placed, randomly scaled window of `source` resampled
/// bilinearly to the patch.  Shapes with fewer than [`MIN_REGION_AREA`]
/// pixels are redrawn; the returned `origin` is (0, 0) until the caller
/// places the region.
pub fn random_closed_region(
    rng: &mut ChaCha8Rng,
    extent: usize,
    source: &Image,
) -> Result<RegionPatch> {
    if extent < 8 {
        return Err(Error::parameter(format!(
            "region extent must be at least 8, got {extent}"
        )));
    }
    if source.width() < 2 * extent || source.height() < 2 * extent {
        return Err(Error::parameter(format!(
            "texture source {}x{} must be at least twice the region extent {extent}",
            source.width(),
            source.height()
        )));
    }

    let center = (extent as f64 - 1.0) / 2.0;
    let mut mask = None;
    for _ in 0..MAX_SHAPE_DRAWS {
        let n_pts = rng.gen_range(5..=9usize);
        let mut points = Vec::with_capacity(n_pts);
        for i in 0..n_pts {
            let jitter: f64 = rng.gen_range(-0.3..0.3);
            let angle = 2.0 * std::f64::consts::PI * (i as f64 + jitter) / n_pts as f64;
            let radius = rng.gen_range(0.33..0.47) * extent as f64;
            points.push((center + radius * angle.cos(), center + radius * angle.sin()));
        }
        let m = rasterize_closed_loop(&points, extent, extent);
        if m.count() >= MIN_REGION_AREA {
            mask = Some(m);
            break;
        }
    }
    let mask = mask.ok_or_else(|| {
        Error::synthesis(format!(
            "no region of area >= {MIN_REGION_AREA} in {MAX_SHAPE_DRAWS} shape draws"
        ))
    })?;

    // Resample a random window of the source so any source at least twice the
    // extent works and repeated draws get varied texture.
    let max_scale_x = (source.width() - 1) as f64 / extent as f64;
    let max_scale_y = (source.height() - 1) as f64 / extent as f64;
    let scale = rng.gen_range(1.0..max_scale_x.min(max_scale_y).max(1.0 + 1e-9));
    let span = scale * (extent - 1) as f64;
    let ox = rng.gen_range(0.0..(source.width() as f64 - 1.0 - span).max(1e-9));
    let oy = rng.gen_range(0.0..(source.height() as f64 - 1.0 - span).max(1e-9));
    let channels = source.channels();
    let mut data = vec![0.0f32; extent * extent * channels];
    for j in 0..extent {
        for i in 0..extent {
            let at = GridCoord::new(
                (ox + scale * i as f64) as f32,
                (oy + scale * j as f64) as f32,
            );
            for c in 0..channels {
                data[(j * extent + i) * channels + c] = source.sample_channel(at, c);
            }
        }
    }
    let patch = Image::from_data(extent, extent, channels, data)?;

    Ok(RegionPatch { mask, patch, origin: (0.0, 0.0) })
}
