//! Conversions from flow and scale change to 3D motion quantities, plus the
//! scoring metrics used to evaluate them.
//!
//! The per-pixel scale change `f3` doubles as the motion-in-depth ratio
//! `τ = Z₂/Z₁` (exact when the frame-to-frame image map is locally a
//! similarity; see [`f3_to_mid`]).  From `(flow, f3)` and intrinsics, the
//! normalized scene flow `t̄ = (P₂ − P₁)/Z₁` follows in closed form
//! ([`to_scene_flow`]), and `τ` alone gives time-to-collision
//! ([`mid_to_ttc`]).  Metrics: endpoint error and outlier rate for flow,
//! log-ratio error (×10⁴) for motion-in-depth, depth-error growth, and a
//! discounted multi-iterate loss.

use crate::error::{Error, Result};
use crate::field::{MaskField, ScalarField2D, VectorField2D};
use crate::synth::CameraIntrinsics;
use serde::{Deserialize, Serialize};

/// Normalized scene flow `t̄` per pixel, in depth-relative units; when a
/// depth field is supplied, the metric scene flow `t = Z·t̄` as well.
#[derive(Debug, Clone)]
pub struct SceneFlowField {
    width: usize,
    height: usize,
    t_bar: Vec<[f32; 3]>,
    t: Option<Vec<[f32; 3]>>,
    valid: Vec<bool>,
}

impl SceneFlowField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Normalized scene flow at a pixel.
    pub fn t_bar(&self, x: usize, y: usize) -> [f32; 3] {
        self.t_bar[y * self.width + x]
    }

    /// Metric scene flow `Z·t̄`, if depth was supplied.
    pub fn t(&self, x: usize, y: usize) -> Option<[f32; 3]> {
        self.t.as_ref().map(|t| t[y * self.width + x])
    }

    pub fn has_metric(&self) -> bool {
        self.t.is_some()
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Normalized scene flow of one pixel, in `f64` for exactness:
/// `t̄ = K⁻¹·[(f3 − 1)·(x, y, 1) + f3·(f1, f2, 0)]`.
///
/// With `f3 = Z₂/Z₁` this satisfies `Z₁·t̄ = P₂ − P₁` exactly, which pins
/// the convention: the pixel's homogeneous coordinate enters the first term
/// and the flow vector is zero-padded in the third slot.
pub fn scene_flow_point(
    k: &CameraIntrinsics,
    x: f64,
    y: f64,
    f1: f64,
    f2: f64,
    f3: f64,
) -> [f64; 3] {
    let bx = (f3 - 1.0) * x + f3 * f1;
    let by = (f3 - 1.0) * y + f3 * f2;
    let bz = f3 - 1.0;
    // K⁻¹ applied in closed form.
    [
        (bx - k.cx * bz) / k.fx,
        (by - k.cy * bz) / k.fy,
        bz,
    ]
}

/// Interprets the scale-change field as motion-in-depth `τ = Z₂/Z₁`.
///
/// The mapping is the identity on values; it exists to make the modeling
/// step explicit (exact only when the local image map is a similarity —
/// small rotations out of plane perturb it slightly) and to invalidate
/// nonpositive entries, which have no depth-ratio reading.
pub fn f3_to_mid(f3: &ScalarField2D) -> ScalarField2D {
    let (w, h) = (f3.width(), f3.height());
    let mut out = f3.clone();
    for y in 0..h {
        for x in 0..w {
            if f3.get(x, y) <= 0.0 {
                out.set_valid(x, y, false);
            }
        }
    }
    out
}

/// Converts flow and scale change into a scene-flow field; cells are valid
/// where all inputs are.  Depth, when given, adds the metric field `Z·t̄`.
pub fn to_scene_flow(
    flow: &VectorField2D,
    f3: &ScalarField2D,
    k: &CameraIntrinsics,
    z: Option<&ScalarField2D>,
) -> Result<SceneFlowField> {
    let (w, h) = (flow.width(), flow.height());
    if f3.width() != w || f3.height() != h {
        return Err(Error::Dimension(format!(
            "flow {w}x{h} vs scale field {}x{}",
            f3.width(),
            f3.height()
        )));
    }
    if let Some(z) = z {
        if z.width() != w || z.height() != h {
            return Err(Error::Dimension(format!(
                "flow {w}x{h} vs depth {}x{}",
                z.width(),
                z.height()
            )));
        }
    }
    if k.fx <= 0.0 || k.fy <= 0.0 {
        return Err(Error::parameter("intrinsics need positive focal lengths"));
    }

    let mut t_bar = vec![[0.0f32; 3]; w * h];
    let mut t = z.map(|_| vec![[0.0f32; 3]; w * h]);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut ok = flow.is_valid(x, y) && f3.is_valid(x, y);
            if let Some(z) = z {
                ok = ok && z.is_valid(x, y);
            }
            if !ok {
                continue;
            }
            let f = flow.get(x, y);
            let tb = scene_flow_point(
                k,
                x as f64,
                y as f64,
                f[0] as f64,
                f[1] as f64,
                f3.get(x, y) as f64,
            );
            t_bar[i] = [tb[0] as f32, tb[1] as f32, tb[2] as f32];
            if let (Some(t), Some(z)) = (t.as_mut(), z) {
                let zv = z.get(x, y) as f64;
                t[i] = [
                    (zv * tb[0]) as f32,
                    (zv * tb[1]) as f32,
                    (zv * tb[2]) as f32,
                ];
            }
            valid[i] = true;
        }
    }
    Ok(SceneFlowField {
        width: w,
        height: h,
        t_bar,
        t,
        valid,
    })
}

/// Time-to-collision per pixel: `TTC = T/(1 − τ)` seconds, where `T` is the
/// frame interval.  Cells with `τ ≥ 1` (static or receding — no collision)
/// or invalid input are marked invalid.
pub fn mid_to_ttc(tau: &ScalarField2D, frame_time: f64) -> Result<ScalarField2D> {
    if !(frame_time > 0.0) {
        return Err(Error::parameter(format!(
            "frame interval must be positive, got {frame_time}"
        )));
    }
    let (w, h) = (tau.width(), tau.height());
    let mut out = ScalarField2D::new(w, h, 0.0)?;
    for y in 0..h {
        for x in 0..w {
            let t = tau.get(x, y) as f64;
            if tau.is_valid(x, y) && t < 1.0 {
                out.set(x, y, (frame_time / (1.0 - t)) as f32);
            } else {
                out.set_valid(x, y, false);
            }
        }
    }
    Ok(out)
}

/// Motion-in-depth error: mean `|ln pred − ln gt|·10⁴` plus the cell count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidMetrics {
    pub mid: f64,
    pub n_valid: usize,
}

/// Flow error: mean endpoint error in pixels and the outlier percentage
/// (error > 3 px and > 5% of the true magnitude), plus the cell count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    pub epe: f64,
    pub fl_outlier: f64,
    pub n_valid: usize,
}

fn check_same_dims(aw: usize, ah: usize, bw: usize, bh: usize, what: &str) -> Result<()> {
    if aw != bw || ah != bh {
        return Err(Error::Dimension(format!(
            "{what}: {aw}x{ah} vs {bw}x{bh}"
        )));
    }
    Ok(())
}

fn mask_allows(mask: Option<&MaskField>, x: usize, y: usize) -> bool {
    mask.map_or(true, |m| m.get(x, y))
}

/// Mean absolute log-ratio between predicted scale change and true
/// motion-in-depth, scaled by 10⁴, over cells valid in both fields (and in
/// `mask`, when given).  Cells with a nonpositive value on either side are
/// skipped.  Symmetric in its arguments and invariant to scaling both by
/// the same positive constant.
pub fn metric_mid(
    pred: &ScalarField2D,
    gt: &ScalarField2D,
    mask: Option<&MaskField>,
) -> Result<MidMetrics> {
    check_same_dims(pred.width(), pred.height(), gt.width(), gt.height(), "scale fields")?;
    if let Some(m) = mask {
        check_same_dims(pred.width(), pred.height(), m.width(), m.height(), "scale vs mask")?;
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !pred.is_valid(x, y) || !gt.is_valid(x, y) || !mask_allows(mask, x, y) {
                continue;
            }
            let (p, g) = (pred.get(x, y) as f64, gt.get(x, y) as f64);
            if p <= 0.0 || g <= 0.0 {
                continue;
            }
            sum += (p.ln() - g.ln()).abs();
            n += 1;
        }
    }
    Ok(MidMetrics {
        mid: if n == 0 { 0.0 } else { sum / n as f64 * 1e4 },
        n_valid: n,
    })
}

/// Endpoint error and outlier rate of a flow field against ground truth,
/// over cells valid in both (and in `mask`, when given).
pub fn metric_flow(
    pred: &VectorField2D,
    gt: &VectorField2D,
    mask: Option<&MaskField>,
) -> Result<FlowMetrics> {
    check_same_dims(pred.width(), pred.height(), gt.width(), gt.height(), "flow fields")?;
    if let Some(m) = mask {
        check_same_dims(pred.width(), pred.height(), m.width(), m.height(), "flow vs mask")?;
    }
    let mut sum = 0.0f64;
    let mut outliers = 0usize;
    let mut n = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !pred.is_valid(x, y) || !gt.is_valid(x, y) || !mask_allows(mask, x, y) {
                continue;
            }
            let p = pred.get(x, y);
            let g = gt.get(x, y);
            let du = (p[0] - g[0]) as f64;
            let dv = (p[1] - g[1]) as f64;
            let err = (du * du + dv * dv).sqrt();
            let mag = ((g[0] as f64).powi(2) + (g[1] as f64).powi(2)).sqrt();
            sum += err;
            if err > 3.0 && err > 0.05 * mag {
                outliers += 1;
            }
            n += 1;
        }
    }
    Ok(FlowMetrics {
        epe: if n == 0 { 0.0 } else { sum / n as f64 },
        fl_outlier: if n == 0 {
            0.0
        } else {
            outliers as f64 / n as f64 * 100.0
        },
        n_valid: n,
    })
}

/// Depth-error growth rate between the two frames' depth outlier
/// percentages: `(d2 − d1)/d1`.  Undefined (an error) when `d1 = 0`.
pub fn metric_deg(d1_err: f64, d2_err: f64) -> Result<f64> {
    if d1_err == 0.0 {
        return Err(Error::parameter(
            "depth-error growth is undefined for a zero first-frame error",
        ));
    }
    Ok((d2_err - d1_err) / d1_err)
}

/// Depth outlier percentage: cells where the absolute depth error exceeds
/// 3 units and 5% of the true depth, over cells valid in both fields (and
/// in `mask`, when given).  Returns the percentage and the cell count.
pub fn depth_outlier_percent(
    pred: &ScalarField2D,
    gt: &ScalarField2D,
    mask: Option<&MaskField>,
) -> Result<(f64, usize)> {
    check_same_dims(pred.width(), pred.height(), gt.width(), gt.height(), "depth fields")?;
    if let Some(m) = mask {
        check_same_dims(pred.width(), pred.height(), m.width(), m.height(), "depth vs mask")?;
    }
    let mut outliers = 0usize;
    let mut n = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !pred.is_valid(x, y) || !gt.is_valid(x, y) || !mask_allows(mask, x, y) {
                continue;
            }
            let err = (pred.get(x, y) as f64 - gt.get(x, y) as f64).abs();
            if err > 3.0 && err > 0.05 * (gt.get(x, y) as f64).abs() {
                outliers += 1;
            }
            n += 1;
        }
    }
    Ok((
        if n == 0 {
            0.0
        } else {
            outliers as f64 / n as f64 * 100.0
        },
        n,
    ))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::parameter(format!(
            "discount factor {gamma} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Discounted multi-iterate flow loss `Σ_k γ^{N−k}·L1(pred_k, gt)`, where
/// `L1` is the mean per-cell `|Δu| + |Δv|` over cells valid in both fields.
/// Later iterates weigh more; the final one has weight 1.
pub fn metric_loss_flow(preds: &[VectorField2D], gt: &VectorField2D, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let n = preds.len();
    let mut total = 0.0f64;
    for (k, pred) in preds.iter().enumerate() {
        check_same_dims(pred.width(), pred.height(), gt.width(), gt.height(), "flow iterate")?;
        let mut sum = 0.0f64;
        let mut cells = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if !pred.is_valid(x, y) || !gt.is_valid(x, y) {
                    continue;
                }
                let p = pred.get(x, y);
                let g = gt.get(x, y);
                sum += ((p[0] - g[0]).abs() + (p[1] - g[1]).abs()) as f64;
                cells += 1;
            }
        }
        let l1 = if cells == 0 { 0.0 } else { sum / cells as f64 };
        total += gamma.powi((n - 1 - k) as i32) * l1;
    }
    Ok(total)
}

/// Discounted multi-iterate scale loss: as [`metric_loss_flow`] with
/// per-cell `|Δf3|`.
pub fn metric_loss_scale(preds: &[ScalarField2D], gt: &ScalarField2D, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let n = preds.len();
    let mut total = 0.0f64;
    for (k, pred) in preds.iter().enumerate() {
        check_same_dims(pred.width(), pred.height(), gt.width(), gt.height(), "scale iterate")?;
        let mut sum = 0.0f64;
        let mut cells = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if !pred.is_valid(x, y) || !gt.is_valid(x, y) {
                    continue;
                }
                sum += (pred.get(x, y) - gt.get(x, y)).abs() as f64;
                cells += 1;
            }
        }
        let l1 = if cells == 0 { 0.0 } else { sum / cells as f64 };
        total += gamma.powi((n - 1 - k) as i32) * l1;
    }
    Ok(total)
}

/// Bundle of evaluation results with fixed JSON field names; absent
/// quantities serialize as `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe: Option<f64>,
    pub fl_all: Option<f64>,
    pub mid: Option<f64>,
    pub deg_bg: Option<f64>,
    pub deg_fg: Option<f64>,
    pub deg_all: Option<f64>,
    pub n_valid: usize,
}
