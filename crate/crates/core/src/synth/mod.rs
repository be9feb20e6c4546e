//! Synthetic frame-pair generation with exact flow and scale-change labels.
//!
//! A textured region is treated as a rigid plane at unit depth, pushed
//! through two rigid camera-space motions, and projected pinhole-style into
//! the two frames.  Because plane-to-image maps are homographies, every label
//! (optical flow, depth ratio `τ = Z₂/Z₁`) follows in closed form and frames
//! are rendered by exact inverse mapping — no splatting holes, no label
//! approximation.
//!
//! Pipeline: [`random_closed_region`] draws a spline-bounded textured blob,
//! [`fly_foreground`] projects it through a transform pair and labels it,
//! [`accept_sample`] filters samples whose two footprints differ too much
//! (the fly-out / degenerate-motion guard), and [`composite`] layers accepted
//! samples over a static background, deriving per-pixel occlusion from layer
//! ownership.  [`generate_pair`] runs the whole loop from a seed.

mod region;
mod texture;

pub use region::{random_closed_region, RegionPatch, MIN_REGION_AREA};
pub use texture::{smooth_noise, translate_pair, zoom_flow_gt, zoom_pair};

use crate::error::{Error, Result};
use crate::field::{GridCoord, Image, MaskField, ScalarField2D, VectorField2D};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Points closer to the camera than this depth invalidate a transform draw.
pub const MIN_DEPTH: f64 = 0.1;
/// Footprint-difference threshold: samples with `Df >= 0.5` are rejected.
pub const DF_THRESHOLD: f64 = 0.5;
/// Depth-ratio band that keeps labels inside the matcher's scale range.
pub const TAU_RANGE: (f64, f64) = (0.5, 1.5);

/// Pinhole camera: focal lengths in pixels and principal point in pixel
/// coordinates (origin at the center of pixel (0, 0)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// A medium-field camera for a `width`×`height` frame: focal length
    /// `0.8·max(width, height)`, principal point at the frame center.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = 0.8 * width.max(height) as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Checks focal lengths are positive and the principal point is inside
    /// the frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::parameter(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < width as f64 && self.cy >= 0.0 && self.cy < height as f64)
        {
            return Err(Error::parameter(format!(
                "principal point ({}, {}) outside {width}x{height} frame",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Calibration matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form `K⁻¹`.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Serialized form of [`RigidTransform`]: row-major rotation plus translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidTransformRepr {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// A proper rigid motion `P ↦ R·P + T` in camera space.  Construction
/// validates that `R` is a rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RigidTransformRepr", try_from = "RigidTransformRepr")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Builds a transform, rejecting matrices farther than `1e-6` from a
    /// proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let drift = (gram - Matrix3::identity()).norm();
        if drift > 1e-6 {
            return Err(Error::parameter(format!(
                "rotation is not orthonormal (deviation {drift:.2e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::parameter(
                "rotation has negative determinant (reflection)",
            ));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation from Euler angles in degrees (applied as
    /// `Rz(z)·Ry(y)·Rx(x)`) plus a translation.
    pub fn from_euler_deg(x_deg: f64, y_deg: f64, z_deg: f64, translation: [f64; 3]) -> Self {
        let rot = Rotation3::from_euler_angles(
            x_deg.to_radians(),
            y_deg.to_radians(),
            z_deg.to_radians(),
        );
        RigidTransform {
            rotation: rot.into_inner(),
            translation: Vector3::from(translation),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Row-major rotation entries and translation, for serialization and
    /// for oracles that recompute projections with scalar arithmetic.
    pub fn to_arrays(&self) -> ([[f64; 3]; 3], [f64; 3]) {
        let r = &self.rotation;
        (
            [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            [self.translation.x, self.translation.y, self.translation.z],
        )
    }

    /// The transform applying `first`, then `self`.
    pub fn after(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// The inverse motion.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

impl From<RigidTransform> for RigidTransformRepr {
    fn from(t: RigidTransform) -> Self {
        let (rotation, translation) = t.to_arrays();
        RigidTransformRepr { rotation, translation }
    }
}

impl TryFrom<RigidTransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(repr: RigidTransformRepr) -> Result<Self> {
        let r = repr.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(repr.translation),
        )
    }
}

/// Maps unit-depth plane coordinates `(X, Y, 1)` to camera-space points under
/// `x`: the linear part is `R` with the translation folded into the third
/// column.
fn plane_matrix(x: &RigidTransform) -> Matrix3<f64> {
    let mut m = x.rotation;
    let third = m.column(2).into_owned() + x.translation;
    m.set_column(2, &third);
    m
}

/// Where a motion-plane point lands in the two frames.
#[derive(Debug, Clone, Copy)]
pub struct SourceProjection {
    /// Pixel position in frame 1.
    pub p_q: (f64, f64),
    /// Pixel position in frame 2.
    pub p_r: (f64, f64),
    /// Depth in frame 1's camera.
    pub z_q: f64,
    /// Depth in frame 2's camera.
    pub z_r: f64,
}

/// A region flown through a transform pair: rendered footprints and colors in
/// both frames plus exact labels on the frame-1 footprint.
#[derive(Debug, Clone)]
pub struct ForegroundSample {
    mask_q: MaskField,
    mask_r: MaskField,
    colors_q: Image,
    colors_r: Image,
    flow: VectorField2D,
    tau: ScalarField2D,
    df: f64,
    tau_range: (f64, f64),
    intrinsics: CameraIntrinsics,
    x0: RigidTransform,
    x1: RigidTransform,
    k_inv: Matrix3<f64>,
    m0: Matrix3<f64>,
    m10: Matrix3<f64>,
}

impl ForegroundSample {
    /// Frame-1 footprint.
    pub fn mask_q(&self) -> &MaskField {
        &self.mask_q
    }

    /// Frame-2 footprint.
    pub fn mask_r(&self) -> &MaskField {
        &self.mask_r
    }

    /// Rendered colors in frame 1 (meaningful under [`Self::mask_q`]).
    pub fn colors_q(&self) -> &Image {
        &self.colors_q
    }

    /// Rendered colors in frame 2 (meaningful under [`Self::mask_r`]).
    pub fn colors_r(&self) -> &Image {
        &self.colors_r
    }

    /// Exact flow labels, valid exactly on the frame-1 footprint.
    pub fn flow(&self) -> &VectorField2D {
        &self.flow
    }

    /// Exact depth-ratio labels `τ = Z₂/Z₁`, valid on the frame-1 footprint.
    pub fn tau(&self) -> &ScalarField2D {
        &self.tau
    }

    /// Footprint difference rate `|N₂ − N₁| / (N₂ + N₁)`.
    pub fn df(&self) -> f64 {
        self.df
    }

    /// Extremes of `τ` over the region's source pixels.
    pub fn tau_range(&self) -> (f64, f64) {
        self.tau_range
    }

    pub fn footprint_q(&self) -> usize {
        self.mask_q.count()
    }

    pub fn footprint_r(&self) -> usize {
        self.mask_r.count()
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn x0(&self) -> &RigidTransform {
        &self.x0
    }

    pub fn x1(&self) -> &RigidTransform {
        &self.x1
    }

    /// Projects a motion-plane point (in source pixel coordinates) into both
    /// frames; `None` if it comes closer than [`MIN_DEPTH`] to either camera.
    pub fn project_source(&self, sx: f64, sy: f64) -> Option<SourceProjection> {
        let sk = self.k_inv * Vector3::new(sx, sy, 1.0);
        let q = self.m0 * sk;
        let r = self.m10 * sk;
        if q.z <= MIN_DEPTH || r.z <= MIN_DEPTH {
            return None;
        }
        let k = &self.intrinsics;
        Some(SourceProjection {
            p_q: (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy),
            p_r: (k.fx * r.x / r.z + k.cx, k.fy * r.y / r.z + k.cy),
            z_q: q.z,
            z_r: r.z,
        })
    }
}

/// Footprint difference rate `|a − b| / (a + b)`; degenerate empty pairs rate
/// as 1 (always rejected).
pub fn difference_rate(a: usize, b: usize) -> f64 {
    if a + b == 0 {
        return 1.0;
    }
    (a as f64 - b as f64).abs() / (a + b) as f64
}

/// Accepts a sample whose footprint difference is strictly below
/// `df_threshold` (use [`DF_THRESHOLD`] for the standard gate).
pub fn accept_sample(sample: &ForegroundSample, df_threshold: f64) -> bool {
    sample.df < df_threshold
}

/// Pixel bounding box of the patch rectangle pushed through homography `h`,
/// expanded by one pixel and clamped to the frame; falls back to the full
/// frame when a corner projects near the camera plane.
fn projected_bbox(
    h: &Matrix3<f64>,
    origin: (f64, f64),
    extent: usize,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let e = extent as f64 - 1.0;
    let corners = [
        (origin.0, origin.1),
        (origin.0 + e, origin.1),
        (origin.0, origin.1 + e),
        (origin.0 + e, origin.1 + e),
    ];
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (cx, cy) in corners {
        let p = h * Vector3::new(cx, cy, 1.0);
        if p.z <= 1e-9 {
            return (0, 0, width - 1, height - 1);
        }
        let (px, py) = (p.x / p.z, p.y / p.z);
        x0 = x0.min(px);
        y0 = y0.min(py);
        x1 = x1.max(px);
        y1 = y1.max(py);
    }
    let xa = (x0.floor() - 1.0).max(0.0) as usize;
    let ya = (y0.floor() - 1.0).max(0.0) as usize;
    let xb = (x1.ceil() + 1.0).min(width as f64 - 1.0).max(0.0) as usize;
    let yb = (y1.ceil() + 1.0).min(height as f64 - 1.0).max(0.0) as usize;
    (xa, ya, xb, yb)
}

/// Renders the region into one frame by inverse-mapping each candidate frame
/// pixel through `h_inv` back to the patch: footprint from the nearest mask
/// pixel, colors bilinear in the patch.
fn render_footprint(
    region: &RegionPatch,
    h: &Matrix3<f64>,
    h_inv: &Matrix3<f64>,
    m: &Matrix3<f64>,
    k_inv: &Matrix3<f64>,
    width: usize,
    height: usize,
) -> Result<(MaskField, Image)> {
    let extent = region.extent();
    let channels = region.patch.channels();
    let mut mask = MaskField::new(width, height, false)?;
    let mut colors = Image::new(width, height, channels, 0.0)?;
    let (xa, ya, xb, yb) = projected_bbox(h, region.origin, extent, width, height);
    for y in ya..=yb {
        for x in xa..=xb {
            let s = h_inv * Vector3::new(x as f64, y as f64, 1.0);
            if s.z.abs() < 1e-12 {
                continue;
            }
            let (sx, sy) = (s.x / s.z, s.y / s.z);
            let (px, py) = (sx - region.origin.0, sy - region.origin.1);
            if px < -0.5 || py < -0.5 || px >= extent as f64 - 0.5 || py >= extent as f64 - 0.5 {
                continue;
            }
            let nx = (px.round().max(0.0) as usize).min(extent - 1);
            let ny = (py.round().max(0.0) as usize).min(extent - 1);
            if !region.mask.get(nx, ny) {
                continue;
            }
            // Guard against wrap-around through the camera plane.
            let depth = (m * k_inv * Vector3::new(sx, sy, 1.0)).z;
            if depth <= MIN_DEPTH {
                continue;
            }
            mask.set(x, y, true);
            let at = GridCoord::new(px as f32, py as f32);
            for c in 0..channels {
                colors.set(x, y, c, region.patch.sample_channel(at, c));
            }
        }
    }
    Ok((mask, colors))
}

/// Flies `region` (a plane at unit depth) through placement transform `x0`
/// and motion `x1`, rendering its footprint and exact labels in a
/// `width`×`height` frame pair.
///
/// Frame 1 sees the plane under `x0`, frame 2 under `x1∘x0`.  Labels at each
/// footprint pixel: flow to the frame-2 position and depth ratio
/// `τ = Z₂/Z₁`.  Fails if any region point comes closer than [`MIN_DEPTH`]
/// to a camera (an invalid transform draw) or the projection degenerates.
pub fn fly_foreground(
    region: &RegionPatch,
    intrinsics: &CameraIntrinsics,
    x0: &RigidTransform,
    x1: &RigidTransform,
    width: usize,
    height: usize,
) -> Result<ForegroundSample> {
    intrinsics.validate(width, height)?;
    if region.area() == 0 {
        return Err(Error::parameter("region mask is empty"));
    }

    let k = intrinsics.matrix();
    let k_inv = intrinsics.inverse_matrix();
    let m0 = plane_matrix(x0);
    let m10 = plane_matrix(&x1.after(x0));
    let h_q = k * m0 * k_inv;
    let h_r = k * m10 * k_inv;
    let h_q_inv = h_q
        .try_inverse()
        .ok_or_else(|| Error::synthesis("frame-1 plane homography is singular"))?;
    let h_r_inv = h_r
        .try_inverse()
        .ok_or_else(|| Error::synthesis("frame-2 plane homography is singular"))?;

    // Depth validation over the region's own source pixels: a draw that
    // brings any region point below MIN_DEPTH is invalid, independent of
    // what ends up visible.  Also records the tau extremes.
    let extent = region.extent();
    let mut tau_lo = f64::INFINITY;
    let mut tau_hi = f64::NEG_INFINITY;
    for j in 0..extent {
        for i in 0..extent {
            if !region.mask.get(i, j) {
                continue;
            }
            let sk = k_inv
                * Vector3::new(region.origin.0 + i as f64, region.origin.1 + j as f64, 1.0);
            let zq = (m0 * sk).z;
            let zr = (m10 * sk).z;
            if zq <= MIN_DEPTH || zr <= MIN_DEPTH {
                return Err(Error::synthesis(format!(
                    "region point fell to depth ({zq:.3}, {zr:.3}), below {MIN_DEPTH}"
                )));
            }
            let tau = zr / zq;
            tau_lo = tau_lo.min(tau);
            tau_hi = tau_hi.max(tau);
        }
    }

    let (mut mask_q, colors_q) =
        render_footprint(region, &h_q, &h_q_inv, &m0, &k_inv, width, height)?;
    let (mask_r, colors_r) = render_footprint(region, &h_r, &h_r_inv, &m10, &k_inv, width, height)?;

    let mut sample = ForegroundSample {
        mask_q: MaskField::new(width, height, false)?,
        mask_r,
        colors_q,
        colors_r,
        flow: VectorField2D::new(width, height, [0.0, 0.0])?,
        tau: ScalarField2D::new(width, height, 1.0)?,
        df: 0.0,
        tau_range: (tau_lo, tau_hi),
        intrinsics: *intrinsics,
        x0: x0.clone(),
        x1: x1.clone(),
        k_inv,
        m0,
        m10,
    };
    for y in 0..height {
        for x in 0..width {
            sample.flow.set_valid(x, y, false);
            sample.tau.set_valid(x, y, false);
        }
    }

    // Label pass: invert frame-1 pixels back to the plane and project
    // forward into frame 2.
    for y in 0..height {
        for x in 0..width {
            if !mask_q.get(x, y) {
                continue;
            }
            let s = h_q_inv * Vector3::new(x as f64, y as f64, 1.0);
            if s.z.abs() < 1e-12 {
                mask_q.set(x, y, false);
                continue;
            }
            match sample.project_source(s.x / s.z, s.y / s.z) {
                Some(p) => {
                    sample.flow.set(
                        x,
                        y,
                        [(p.p_r.0 - x as f64) as f32, (p.p_r.1 - y as f64) as f32],
                    );
                    sample.flow.set_valid(x, y, true);
                    sample.tau.set(x, y, (p.z_r / p.z_q) as f32);
                    sample.tau.set_valid(x, y, true);
                }
                None => mask_q.set(x, y, false),
            }
        }
    }
    sample.mask_q = mask_q;
    sample.df = difference_rate(sample.mask_q.count(), sample.mask_r.count());
    Ok(sample)
}

/// A layered synthetic frame pair with dense labels.
///
/// `flow` and `tau` are full-resolution and valid everywhere (static
/// background contributes zero flow and unit `τ`); `occluded` marks pixels
/// whose frame-2 landing spot is covered by a different layer or leaves the
/// frame — their labels are retained.  `fg_mask` marks foreground ownership
/// in frame 1.
#[derive(Debug, Clone)]
pub struct CompositePair {
    pub frame_q: Image,
    pub frame_r: Image,
    pub flow: VectorField2D,
    pub tau: ScalarField2D,
    pub occluded: MaskField,
    pub fg_mask: MaskField,
}

/// Layers the first `count` foreground samples over a static background
/// pair, later samples in front.  Per-pixel occlusion comes from layer
/// ownership: a pixel is occluded when any bilinear support pixel of its
/// frame-2 landing spot belongs to a different layer.
pub fn composite(
    base_q: &Image,
    base_r: &Image,
    samples: &[ForegroundSample],
    count: usize,
) -> Result<CompositePair> {
    let (w, h) = (base_q.width(), base_q.height());
    if base_r.width() != w || base_r.height() != h || base_r.channels() != base_q.channels() {
        return Err(Error::Dimension(format!(
            "background frames {}x{}x{} vs {}x{}x{}",
            w,
            h,
            base_q.channels(),
            base_r.width(),
            base_r.height(),
            base_r.channels()
        )));
    }
    if count > samples.len() {
        return Err(Error::parameter(format!(
            "composite count {count} exceeds {} available samples",
            samples.len()
        )));
    }

    let mut frame_q = base_q.clone();
    let mut frame_r = base_r.clone();
    let mut flow = VectorField2D::new(w, h, [0.0, 0.0])?;
    let mut tau = ScalarField2D::new(w, h, 1.0)?;
    let mut owner_q = vec![0u32; w * h];
    let mut owner_r = vec![0u32; w * h];
    let channels = base_q.channels();

    for (layer, sample) in samples.iter().take(count).enumerate() {
        let sq = sample.mask_q();
        if sq.width() != w || sq.height() != h {
            return Err(Error::Dimension(format!(
                "sample {layer} footprint {}x{} vs frame {w}x{h}",
                sq.width(),
                sq.height()
            )));
        }
        if sample.colors_q().channels() != channels {
            return Err(Error::Dimension(format!(
                "sample {layer} has {} channels, background has {channels}",
                sample.colors_q().channels()
            )));
        }
        let id = layer as u32 + 1;
        for y in 0..h {
            for x in 0..w {
                if sample.mask_q.get(x, y) {
                    owner_q[y * w + x] = id;
                    for c in 0..channels {
                        frame_q.set(x, y, c, sample.colors_q.get(x, y, c));
                    }
                    flow.set(x, y, sample.flow.get(x, y));
                    tau.set(x, y, sample.tau.get(x, y));
                }
                if sample.mask_r.get(x, y) {
                    owner_r[y * w + x] = id;
                    for c in 0..channels {
                        frame_r.set(x, y, c, sample.colors_r.get(x, y, c));
                    }
                }
            }
        }
    }

    let mut occluded = MaskField::new(w, h, false)?;
    let mut fg_mask = MaskField::new(w, h, false)?;
    for y in 0..h {
        for x in 0..w {
            let own = owner_q[y * w + x];
            fg_mask.set(x, y, own > 0);
            let f = flow.get(x, y);
            let tx = x as f64 + f[0] as f64;
            let ty = y as f64 + f[1] as f64;
            if tx < 0.0 || ty < 0.0 || tx > w as f64 - 1.0 || ty > h as f64 - 1.0 {
                occluded.set(x, y, true);
                continue;
            }
            let x0 = tx.floor() as usize;
            let y0 = ty.floor() as usize;
            let fx = tx - x0 as f64;
            let fy = ty - y0 as f64;
            let mut covered = false;
            for (sx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                for (sy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                    if wx * wy > 1e-6 && owner_r[sy * w + sx] != own {
                        covered = true;
                    }
                }
            }
            occluded.set(x, y, covered);
        }
    }

    Ok(CompositePair {
        frame_q,
        frame_r,
        flow,
        tau,
        occluded,
        fg_mask,
    })
}

/// Reconstruction quality of a labeled pair in dB: warps frame 2 backward
/// along the flow and compares against frame 1 over non-occluded pixels.
/// `None` when every pixel is occluded; infinite for an exact match.
pub fn warp_psnr(pair: &CompositePair) -> Option<f64> {
    let (w, h) = (pair.frame_q.width(), pair.frame_q.height());
    let channels = pair.frame_q.channels();
    let mut err = 0.0f64;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if pair.occluded.get(x, y) {
                continue;
            }
            let f = pair.flow.get(x, y);
            let at = GridCoord::new(x as f32 + f[0], y as f32 + f[1]);
            for c in 0..channels {
                let d = (pair.frame_r.sample_channel(at, c) - pair.frame_q.get(x, y, c)) as f64;
                err += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let mse = err / n as f64;
    Some(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Sampling ranges and acceptance thresholds for [`generate_pair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Number of flying foregrounds per pair.
    pub foregrounds: usize,
    /// Region patch side in pixels; `None` picks `max(min(w, h)/3, 16)`.
    pub region_extent: Option<usize>,
    /// Per-axis rotation bound in degrees for each transform draw.
    pub rotation_max_deg: f64,
    /// Lateral translation bound (camera units; the plane sits at depth 1).
    pub translation_lateral: f64,
    /// Depth translation range.
    pub translation_z: (f64, f64),
    /// Footprint-difference acceptance threshold.
    pub df_threshold: f64,
    /// Transform redraws allowed per foreground before giving up.
    pub max_attempts: usize,
    /// Camera; `None` picks [`CameraIntrinsics::default_for`].
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 384,
            height: 256,
            foregrounds: 2,
            region_extent: None,
            rotation_max_deg: 5.0,
            translation_lateral: 0.2,
            translation_z: (-0.35, 0.5),
            df_threshold: DF_THRESHOLD,
            max_attempts: 100,
            intrinsics: None,
        }
    }
}

impl SynthConfig {
    pub fn new(width: usize, height: usize) -> Self {
        SynthConfig {
            width,
            height,
            ..SynthConfig::default()
        }
    }

    fn effective_extent(&self) -> usize {
        self.region_extent
            .unwrap_or_else(|| (self.width.min(self.height) / 3).max(16))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::parameter(format!(
                "frame {}x{} too small, need at least 32x32",
                self.width, self.height
            )));
        }
        if self.foregrounds == 0 {
            return Err(Error::parameter("need at least one foreground"));
        }
        if !(self.df_threshold > 0.0 && self.df_threshold <= 1.0) {
            return Err(Error::parameter(format!(
                "footprint-difference threshold {} outside (0, 1]",
                self.df_threshold
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::parameter("need at least one draw attempt"));
        }
        if self.rotation_max_deg < 0.0
            || self.translation_lateral < 0.0
            || self.translation_z.0 > self.translation_z.1
        {
            return Err(Error::parameter("malformed transform sampling ranges"));
        }
        let extent = self.effective_extent();
        if extent > self.width.min(self.height) / 2 {
            return Err(Error::parameter(format!(
                "region extent {extent} exceeds half of min frame dimension"
            )));
        }
        Ok(())
    }
}

/// Draw record for one accepted foreground.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForegroundMeta {
    pub x0: RigidTransform,
    pub x1: RigidTransform,
    pub df: f64,
    pub footprint_q: usize,
    pub footprint_r: usize,
    pub tau_min: f64,
    pub tau_max: f64,
}

/// Provenance of a generated pair: the seed, accepted draws, and rejection
/// counts (enough to regenerate or audit the pair).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMeta {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub foregrounds: Vec<ForegroundMeta>,
    pub footprint_rejections: usize,
    pub geometry_rejections: usize,
}

fn draw_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi - lo <= 0.0 {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn random_transform(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> RigidTransform {
    let r = cfg.rotation_max_deg;
    let rx = draw_range(rng, -r, r);
    let ry = draw_range(rng, -r, r);
    let rz = draw_range(rng, -r, r);
    let l = cfg.translation_lateral;
    let tx = draw_range(rng, -l, l);
    let ty = draw_range(rng, -l, l);
    let tz = draw_range(rng, cfg.translation_z.0, cfg.translation_z.1);
    RigidTransform::from_euler_deg(rx, ry, rz, [tx, ty, tz])
}

/// Generates one labeled pair from a seed: flies `cfg.foregrounds` accepted
/// regions over a static copy of `background` and composites them.
///
/// Textures come from `textures` when non-empty, otherwise from procedural
/// noise.  Draws violating the depth floor, the `τ` band ([`TAU_RANGE`]), or
/// the footprint gate are redrawn up to `cfg.max_attempts` times each.  The
/// same seed always reproduces the same pair bit for bit.
pub fn generate_pair(
    background: &Image,
    textures: &[Image],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(CompositePair, PairMeta)> {
    cfg.validate()?;
    if background.width() != cfg.width || background.height() != cfg.height {
        return Err(Error::Dimension(format!(
            "background {}x{} vs configured {}x{}",
            background.width(),
            background.height(),
            cfg.width,
            cfg.height
        )));
    }
    let intrinsics = cfg
        .intrinsics
        .unwrap_or_else(|| CameraIntrinsics::default_for(cfg.width, cfg.height));
    intrinsics.validate(cfg.width, cfg.height)?;
    let extent = cfg.effective_extent();
    for (i, t) in textures.iter().enumerate() {
        if t.width() < 2 * extent || t.height() < 2 * extent {
            return Err(Error::parameter(format!(
                "texture {i} is {}x{}, need at least twice the region extent {extent}",
                t.width(),
                t.height()
            )));
        }
        if t.channels() != background.channels() {
            return Err(Error::Dimension(format!(
                "texture {i} has {} channels, background has {}",
                t.channels(),
                background.channels()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(cfg.foregrounds);
    let mut meta = PairMeta {
        seed,
        width: cfg.width,
        height: cfg.height,
        intrinsics,
        foregrounds: Vec::new(),
        footprint_rejections: 0,
        geometry_rejections: 0,
    };

    for _ in 0..cfg.foregrounds {
        let mut accepted = false;
        for _ in 0..cfg.max_attempts {
            let owned_texture;
            let source = if textures.is_empty() {
                owned_texture = smooth_noise(
                    2 * extent,
                    2 * extent,
                    background.channels(),
                    &mut rng,
                );
                &owned_texture
            } else {
                &textures[rng.gen_range(0..textures.len())]
            };
            let mut region = random_closed_region(&mut rng, extent, source)?;
            let cx = rng.gen_range(0.2..0.8) * (cfg.width as f64 - 1.0);
            let cy = rng.gen_range(0.2..0.8) * (cfg.height as f64 - 1.0);
            region.origin = (
                cx - (extent as f64 - 1.0) / 2.0,
                cy - (extent as f64 - 1.0) / 2.0,
            );
            let x0 = random_transform(&mut rng, cfg);
            let x1 = random_transform(&mut rng, cfg);
            let sample = match fly_foreground(&region, &intrinsics, &x0, &x1, cfg.width, cfg.height)
            {
                Ok(s) => s,
                Err(Error::Synthesis(_)) => {
                    meta.geometry_rejections += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (tau_lo, tau_hi) = sample.tau_range();
            if tau_lo < TAU_RANGE.0 || tau_hi > TAU_RANGE.1 {
                meta.geometry_rejections += 1;
                continue;
            }
            if !accept_sample(&sample, cfg.df_threshold) {
                meta.footprint_rejections += 1;
                continue;
            }
            meta.foregrounds.push(ForegroundMeta {
                x0: sample.x0().clone(),
                x1: sample.x1().clone(),
                df: sample.df(),
                footprint_q: sample.footprint_q(),
                footprint_r: sample.footprint_r(),
                tau_min: tau_lo,
                tau_max: tau_hi,
            });
            samples.push(sample);
            accepted = true;
            break;
        }
        if !accepted {
            return Err(Error::synthesis(format!(
                "no acceptable foreground in {} attempts (footprint rejections {}, geometry {})",
                cfg.max_attempts, meta.footprint_rejections, meta.geometry_rejections
            )));
        }
    }

    let pair = composite(background, background, &samples, samples.len())?;
    Ok((pair, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_region(seed: u64, extent: usize) -> RegionPatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = smooth_noise(2 * extent, 2 * extent, 3, &mut rng);
        random_closed_region(&mut rng, extent, &source).unwrap()
    }

    #[test]
    fn intrinsics_matrix_inverse_roundtrip() {
        let k = CameraIntrinsics::default_for(384, 256);
        let prod = k.matrix() * k.inverse_matrix();
        assert!((prod - Matrix3::identity()).norm() < 1e-12);
        assert!(k.validate(384, 256).is_ok());
        assert!(k.validate(100, 100).is_err());
    }

    #[test]
    fn rigid_transform_validates_rotation() {
        assert!(RigidTransform::new(Matrix3::identity() * 1.1, Vector3::zeros()).is_err());
        let mut reflect = Matrix3::identity();
        reflect[(0, 0)] = -1.0;
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
        let ok = RigidTransform::from_euler_deg(3.0, -2.0, 5.0, [0.1, 0.0, 0.2]);
        let rt = RigidTransform::new(*ok.rotation(), *ok.translation()).unwrap();
        assert_eq!(&rt, &ok);
        // Compose with inverse gives identity.
        let round = ok.after(&ok.inverse());
        assert!((round.rotation() - Matrix3::identity()).norm() < 1e-12);
        assert!(round.translation().norm() < 1e-12);
    }

    #[test]
    fn rigid_transform_serde_roundtrip() {
        let t = RigidTransform::from_euler_deg(2.0, 1.0, -4.0, [0.05, -0.1, 0.3]);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert!((back.rotation() - t.rotation()).norm() < 1e-12);
        assert!((back.translation() - t.translation()).norm() < 1e-12);
        // A scaled matrix must fail validation on the way in.
        let bad = r#"{"rotation":[[1.1,0.0,0.0],[0.0,1.1,0.0],[0.0,0.0,1.1]],"translation":[0.0,0.0,0.0]}"#;
        assert!(serde_json::from_str::<RigidTransform>(bad).is_err());
    }

    #[test]
    fn identity_motion_gives_zero_labels() {
        let region = test_region(1, 48);
        let mut region = region;
        region.origin = (100.0, 80.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let id = RigidTransform::identity();
        let s = fly_foreground(&region, &k, &id, &id, 256, 192).unwrap();
        assert_eq!(s.df(), 0.0);
        assert_eq!(s.footprint_q(), s.footprint_r());
        assert!(s.footprint_q() > 100);
        for y in 0..192 {
            for x in 0..256 {
                if s.mask_q().get(x, y) {
                    let f = s.flow().get(x, y);
                    assert!(f[0].abs() < 1e-6 && f[1].abs() < 1e-6);
                    assert!((s.tau().get(x, y) - 1.0).abs() < 1e-9);
                    assert!(s.flow().is_valid(x, y));
                } else {
                    assert!(!s.flow().is_valid(x, y));
                }
            }
        }
    }

    #[test]
    fn forward_depth_translation_shrinks_toward_center() {
        // Pushing the plane from depth 1 to 1.5 must give tau = 1.5
        // everywhere and flow = -(p - pp)/3 exactly.
        let mut region = test_region(2, 48);
        region.origin = (60.0, 40.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let x0 = RigidTransform::identity();
        let x1 = RigidTransform::from_euler_deg(0.0, 0.0, 0.0, [0.0, 0.0, 0.5]);
        let s = fly_foreground(&region, &k, &x0, &x1, 256, 192).unwrap();
        assert!(s.footprint_q() > 100);
        let (lo, hi) = s.tau_range();
        assert!((lo - 1.5).abs() < 1e-12 && (hi - 1.5).abs() < 1e-12);
        for y in 0..192 {
            for x in 0..256 {
                if !s.mask_q().get(x, y) {
                    continue;
                }
                assert!((s.tau().get(x, y) - 1.5).abs() < 1e-6);
                let f = s.flow().get(x, y);
                let expect = [
                    -((x as f64 - k.cx) / 3.0) as f32,
                    -((y as f64 - k.cy) / 3.0) as f32,
                ];
                assert!(
                    (f[0] - expect[0]).abs() < 1e-4 && (f[1] - expect[1]).abs() < 1e-4,
                    "flow {f:?} vs {expect:?} at ({x}, {y})"
                );
            }
        }
    }

    /// Scalar 3x3 inverse via the adjugate — deliberately independent of the
    /// linear-algebra crate used by the implementation.
    fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        [
            [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
            [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
            [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
        ]
    }

    fn mat_vec(m: [[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, row) in b.iter().enumerate() {
                    out[i][j] += a[i][k] * row[j];
                }
            }
        }
        out
    }

    #[test]
    fn labels_match_scalar_projection_oracle() {
        // Recompute every stored label with plain f64 arithmetic from the
        // raw rotation/translation entries: K-normalize, apply the two
        // motions, pinhole-project, difference.
        let k = CameraIntrinsics::default_for(320, 240);
        for seed in [3u64, 4, 5] {
            let mut region = test_region(seed, 56);
            region.origin = (90.0 + seed as f64 * 15.0, 60.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7 + 1);
            let cfg = SynthConfig::new(320, 240);
            let x0 = random_transform(&mut rng, &cfg);
            let x1 = random_transform(&mut rng, &cfg);
            let s = match fly_foreground(&region, &k, &x0, &x1, 320, 240) {
                Ok(s) => s,
                Err(Error::Synthesis(_)) => continue,
                Err(e) => panic!("{e}"),
            };

            let (r0, t0) = x0.to_arrays();
            let (r1, t1) = x1.to_arrays();
            let kk = [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
            let ki = [
                [1.0 / k.fx, 0.0, -k.cx / k.fx],
                [0.0, 1.0 / k.fy, -k.cy / k.fy],
                [0.0, 0.0, 1.0],
            ];
            let m0 = [
                [r0[0][0], r0[0][1], r0[0][2] + t0[0]],
                [r0[1][0], r0[1][1], r0[1][2] + t0[1]],
                [r0[2][0], r0[2][1], r0[2][2] + t0[2]],
            ];
            // Second-frame plane map from scratch: rows of R1*M0 plus T1 in
            // the third column.
            let r1m0 = mat_mul(r1, m0);
            let m10 = [
                [r1m0[0][0], r1m0[0][1], r1m0[0][2] + t1[0]],
                [r1m0[1][0], r1m0[1][1], r1m0[1][2] + t1[1]],
                [r1m0[2][0], r1m0[2][1], r1m0[2][2] + t1[2]],
            ];
            let hq_inv = inv3(mat_mul(mat_mul(kk, m0), ki));

            let mut checked = 0usize;
            for y in 0..240 {
                for x in 0..320 {
                    if !s.mask_q().get(x, y) {
                        continue;
                    }
                    let sh = mat_vec(hq_inv, [x as f64, y as f64, 1.0]);
                    let src = [sh[0] / sh[2], sh[1] / sh[2], 1.0];
                    let plane = mat_vec(ki, src);
                    let q = mat_vec(m0, plane);
                    let r = mat_vec(m10, plane);
                    let pr = [
                        k.fx * r[0] / r[2] + k.cx,
                        k.fy * r[1] / r[2] + k.cy,
                    ];
                    let f = s.flow().get(x, y);
                    let tau = s.tau().get(x, y) as f64;
                    assert!(
                        ((pr[0] - x as f64) - f[0] as f64).abs() < 1e-4
                            && ((pr[1] - y as f64) - f[1] as f64).abs() < 1e-4,
                        "flow mismatch at ({x}, {y}): {f:?} vs {:?}",
                        (pr[0] - x as f64, pr[1] - y as f64)
                    );
                    assert!(
                        (tau - r[2] / q[2]).abs() / (r[2] / q[2]) < 1e-6,
                        "tau mismatch at ({x}, {y}): {tau} vs {}",
                        r[2] / q[2]
                    );
                    checked += 1;
                }
            }
            assert!(checked > 100, "oracle touched only {checked} pixels");
        }
    }

    #[test]
    fn footprint_difference_rate_cases() {
        assert_eq!(difference_rate(100, 100), 0.0);
        assert!((difference_rate(100, 300) - 0.5).abs() < 1e-12);
        assert!((difference_rate(100, 150) - 0.2).abs() < 1e-12);
        assert_eq!(difference_rate(0, 0), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a = rng.gen_range(0..10_000usize);
            let b = rng.gen_range(0..10_000usize);
            assert_eq!(difference_rate(a, b), difference_rate(b, a));
        }
    }

    #[test]
    fn acceptance_is_strict_at_threshold() {
        let mut region = test_region(6, 40);
        region.origin = (100.0, 70.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let id = RigidTransform::identity();
        let s = fly_foreground(&region, &k, &id, &id, 256, 192).unwrap();
        assert!(accept_sample(&s, DF_THRESHOLD));
        // df == 0 here; a zero threshold makes even this fail (strict <).
        assert!(!accept_sample(&s, 0.0));
    }

    #[test]
    fn fly_out_is_rejected_by_footprint_gate() {
        let mut region = test_region(7, 40);
        region.origin = (100.0, 70.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let x0 = RigidTransform::identity();
        // Huge lateral jump: the second footprint leaves the frame.
        let x1 = RigidTransform::from_euler_deg(0.0, 0.0, 0.0, [2.0, 0.0, 0.0]);
        let s = fly_foreground(&region, &k, &x0, &x1, 256, 192).unwrap();
        assert!(s.footprint_r() < s.footprint_q() / 3);
        assert!(s.df() >= DF_THRESHOLD);
        assert!(!accept_sample(&s, DF_THRESHOLD));
    }

    #[test]
    fn footprint_rate_invariant_under_frame_swap() {
        let mut region = test_region(8, 48);
        region.origin = (110.0, 75.0);
        let k = CameraIntrinsics::default_for(288, 224);
        let x0 = RigidTransform::from_euler_deg(2.0, -1.5, 3.0, [0.08, -0.05, 0.2]);
        let x1 = RigidTransform::from_euler_deg(-1.0, 2.5, -2.0, [-0.1, 0.06, 0.15]);
        let a = fly_foreground(&region, &k, &x0, &x1, 288, 224).unwrap();
        // Swapping frame roles: the first frame now sees x1∘x0 and the
        // motion back to the old first frame is x1⁻¹.
        let b = fly_foreground(&region, &k, &x1.after(&x0), &x1.inverse(), 288, 224).unwrap();
        let slack = (0.01 * a.footprint_q() as f64) as usize + 3;
        assert!(a.footprint_q().abs_diff(b.footprint_r()) <= slack);
        assert!(a.footprint_r().abs_diff(b.footprint_q()) <= slack);
        assert!((a.df() - b.df()).abs() < 0.01);
    }

    #[test]
    fn in_plane_motion_keeps_unit_depth_ratio() {
        let mut region = test_region(9, 48);
        region.origin = (90.0, 60.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let x0 = RigidTransform::from_euler_deg(0.0, 0.0, 3.0, [0.1, -0.05, 0.0]);
        let x1 = RigidTransform::from_euler_deg(0.0, 0.0, -2.0, [-0.06, 0.08, 0.0]);
        let s = fly_foreground(&region, &k, &x0, &x1, 256, 192).unwrap();
        let (lo, hi) = s.tau_range();
        assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn composite_without_layers_is_static_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bg = smooth_noise(128, 96, 3, &mut rng);
        let pair = composite(&bg, &bg, &[], 0).unwrap();
        assert_eq!(pair.frame_q.data(), bg.data());
        assert_eq!(pair.frame_r.data(), bg.data());
        assert_eq!(pair.occluded.count(), 0);
        assert_eq!(pair.fg_mask.count(), 0);
        for y in 0..96 {
            for x in 0..128 {
                assert_eq!(pair.flow.get(x, y), [0.0, 0.0]);
                assert!((pair.tau.get(x, y) - 1.0).abs() < 1e-12);
                assert!(pair.flow.is_valid(x, y) && pair.tau.is_valid(x, y));
            }
        }
    }

    #[test]
    fn composite_rejects_excess_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bg = smooth_noise(128, 96, 3, &mut rng);
        assert!(matches!(
            composite(&bg, &bg, &[], 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn composite_identity_layer_has_no_occlusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bg = smooth_noise(256, 192, 3, &mut rng);
        let mut region = test_region(13, 48);
        region.origin = (100.0, 70.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let id = RigidTransform::identity();
        let s = fly_foreground(&region, &k, &id, &id, 256, 192).unwrap();
        let pair = composite(&bg, &bg, &[s.clone()], 1).unwrap();
        assert_eq!(pair.fg_mask.count(), s.footprint_q());
        assert_eq!(pair.occluded.count(), 0);
        for y in 0..192 {
            for x in 0..256 {
                if pair.fg_mask.get(x, y) {
                    assert_eq!(pair.frame_q.get(x, y, 0), pair.frame_r.get(x, y, 0));
                }
            }
        }
    }

    #[test]
    fn composite_flags_covered_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let bg = smooth_noise(256, 192, 3, &mut rng);
        let mut region = test_region(15, 48);
        region.origin = (80.0, 70.0);
        let k = CameraIntrinsics::default_for(256, 192);
        let x0 = RigidTransform::identity();
        // Strong lateral move: the layer lands on fresh background in
        // frame 2.
        let x1 = RigidTransform::from_euler_deg(0.0, 0.0, 0.0, [0.15, 0.0, 0.0]);
        let s = fly_foreground(&region, &k, &x0, &x1, 256, 192).unwrap();
        assert!(accept_sample(&s, DF_THRESHOLD));
        let pair = composite(&bg, &bg, &[s.clone()], 1).unwrap();
        // Background pixels under the frame-2 footprint but outside the
        // frame-1 footprint stay still and get covered.
        let mut expected = 0usize;
        let mut flagged = 0usize;
        for y in 0..192 {
            for x in 0..256 {
                if s.mask_r().get(x, y) && !s.mask_q().get(x, y) {
                    expected += 1;
                    if pair.occluded.get(x, y) {
                        flagged += 1;
                    }
                }
            }
        }
        assert!(expected > 200, "test setup produced only {expected} covered pixels");
        assert!(
            flagged as f64 >= 0.95 * expected as f64,
            "only {flagged} of {expected} covered pixels flagged"
        );
        // A far corner stays visible.
        assert!(!pair.occluded.get(5, 5));
    }

    #[test]
    fn generated_pairs_are_deterministic_and_warp_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let cfg = SynthConfig::new(256, 192);
        let bg = smooth_noise(256, 192, 3, &mut rng);
        let (a, meta_a) = generate_pair(&bg, &[], &cfg, 42).unwrap();
        let (b, _) = generate_pair(&bg, &[], &cfg, 42).unwrap();
        assert_eq!(a.frame_q.data(), b.frame_q.data());
        assert_eq!(a.frame_r.data(), b.frame_r.data());
        assert_eq!(a.flow.data(), b.flow.data());
        assert_eq!(meta_a.foregrounds.len(), 2);
        assert!(a.fg_mask.count() > 500);

        let psnr = warp_psnr(&a).unwrap();
        assert!(psnr >= 30.0, "warp consistency only {psnr:.2} dB");

        // Labels live in the documented bands.
        for y in 0..192 {
            for x in 0..256 {
                assert!(a.flow.is_valid(x, y) && a.tau.is_valid(x, y));
                let t = a.tau.get(x, y) as f64;
                assert!(t > 0.45 && t < 1.55, "tau {t} out of band at ({x}, {y})");
            }
        }

        // A different seed changes the content.
        let (c, _) = generate_pair(&bg, &[], &cfg, 43).unwrap();
        assert_ne!(a.frame_q.data(), c.frame_q.data());
    }

    #[test]
    fn generate_rejects_mismatched_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bg = smooth_noise(100, 100, 3, &mut rng);
        let cfg = SynthConfig::new(256, 192);
        assert!(generate_pair(&bg, &[], &cfg, 1).is_err());
    }

    #[test]
    fn synth_config_validation() {
        assert!(SynthConfig::new(256, 192).validate().is_ok());
        assert!(SynthConfig::new(16, 16).validate().is_err());
        let mut c = SynthConfig::new(256, 192);
        c.foregrounds = 0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::new(256, 192);
        c.region_extent = Some(200);
        assert!(c.validate().is_err());
        let mut c = SynthConfig::new(256, 192);
        c.translation_z = (0.5, -0.5);
        assert!(c.validate().is_err());
    }
}
