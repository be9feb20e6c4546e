//! Iterative dense matcher: estimates per-cell optical flow and scale change
//! from the precomputed correlation volumes.
//!
//! The estimate lives on the 1/8-resolution cell grid as a [`MotionState`]
//! (flow in cell units plus a scale-change field `f3`).  A solve is:
//!
//! 1. **Initialize** — coarse integer matching on the 1/16 grid within a
//!    fixed search radius, upsampled to the 1/8 grid; `f3` starts at 1.
//! 2. **Refine** (fixed iteration count) — each step looks up correlation
//!    windows at the current estimate and applies three updates: a damped
//!    flow step toward the strongest correlation across the pooled pyramid
//!    (with sub-cell parabola refinement), a scale step toward the extremum
//!    of a 3-tap parabola along the scale axis (at most `1/S` per step), and
//!    an edge-aware smoothing pass guided by frame-1 brightness.
//! 3. **Finish** — one extra scale-only refinement, then bilinear upsample to
//!    pixel resolution (flow values ×8; `f3` is resolution-independent).
//!
//! Every step reads the previous state and writes a fresh one, so cells are
//! independent and the whole pipeline is deterministic for fixed inputs.

use crate::corr::{
    build_multi_scale, build_pooled, descriptor_corr_at, init_corr_16, lookup_pooled,
    CorrFeatureOf, MultiScaleCorrVolume, PooledCorrPyramid,
};
use crate::features::extract_features_scaled;
use crate::error::{Error, Result};
use crate::field::{Image, ScalarField2D, VectorField2D};
use crate::pyramid::{build_pyramid, FeaturePyramid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Correlation of a unit-norm descriptor with itself; at or above this the
/// cell is treated as already matched and residuals are skipped, which keeps
/// exact matches (static content) bit-stable across iterations.
const PERFECT_CORR: f32 = 0.999;

/// Valid range of the scale-change field.
pub const F3_MIN: f32 = 0.4;
/// Valid range of the scale-change field.
pub const F3_MAX: f32 = 1.6;

/// Smallest image side the solver accepts, in pixels.
pub const MIN_IMAGE_SIDE: usize = 64;

/// Curvature below this magnitude is treated as degenerate (no parabola).
const EPS_CURV: f32 = 1e-6;
/// Margin for calling a 3-tap curve strictly monotone.
const EPS_MONO: f32 = 1e-5;

/// Spacing of the spatial taps the scale update averages over, in cell
/// units.  Using cell units (not per-scale node units) means every scale is
/// averaged over the *same* image area, so coarser-grid scales are not
/// diluted more than finer ones.
const SCALE_WINDOW_STEP: f32 = 0.25;

/// Minimum excess of the cross-frame scale curve over the frame-1
/// self-response, at its best scale node, before the scale estimate moves.
/// Below this the curve is explained by the descriptor's intrinsic
/// cross-scale falloff (static or purely translating content), and chasing
/// it would only track sampling noise.
const SCALE_SIGNAL_MIN: f32 = 0.02;

/// Tuning knobs of the solver.  [`Default`] values were tuned once on a
/// synthetic suite and frozen; every field can be overridden (for example
/// from a run-configuration file — unknown keys are rejected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of full refinement iterations (a final scale-only pass is
    /// always appended).
    pub iterations: usize,
    /// Scale-grid refinement degree `S`: correlation is built at `S + 1`
    /// scales spanning [0.5, 1.5]; must be even so 1.0 is on the grid.
    pub scale_degree: usize,
    /// Half-width of the spatial correlation window used for flow updates,
    /// in cells per pooled level.
    pub flow_radius: usize,
    /// Half-width, in taps of 1/4 cell, of the spatial box over which each
    /// scale's correlation is averaged before fitting (0 disables the
    /// averaging).
    pub scale_window_radius: usize,
    /// Offset of the outer scale taps around the current `f3`; must be a
    /// positive multiple of `1/S`.  `None` uses `1/S`.
    pub scale_radius: Option<f32>,
    /// Search radius of the coarse 1/16-grid initializer, in 1/16 cells
    /// (radius 6 covers ±96 px).
    pub init_radius: usize,
    /// Step damping for flow updates, in (0, 1].
    pub damping: f32,
    /// Blend weight of the edge-aware neighborhood average, in [0, 1].
    pub smooth_weight: f32,
    /// Brightness sigma of the smoothing guide: neighbors whose frame-1
    /// cell brightness differs by much more than this contribute little.
    pub guide_sigma: f32,
    /// Descriptor dimensionality.
    pub feature_depth: usize,
    /// Upper bound on correlation-volume storage, in bytes.
    pub memory_budget: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 6,
            scale_degree: 4,
            flow_radius: 3,
            scale_window_radius: 1,
            scale_radius: None,
            init_radius: 6,
            damping: 0.7,
            smooth_weight: 0.1,
            guide_sigma: 0.1,
            feature_depth: 32,
            memory_budget: 2 * 1024 * 1024 * 1024,
        }
    }
}

impl SolverConfig {
    /// Scale-tap offset actually used: the explicit radius, or `1/S`.
    pub fn effective_scale_radius(&self) -> f32 {
        self.scale_radius
            .unwrap_or(1.0 / self.scale_degree as f32)
    }

    /// Checks every field; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::parameter("iteration count must be >= 1"));
        }
        if self.scale_degree < 2 || self.scale_degree % 2 != 0 {
            return Err(Error::parameter(format!(
                "scale degree must be even and >= 2, got {}",
                self.scale_degree
            )));
        }
        if self.flow_radius == 0 {
            return Err(Error::parameter("flow window radius must be >= 1"));
        }
        if self.init_radius == 0 {
            return Err(Error::parameter("init search radius must be >= 1"));
        }
        let r_s = self.effective_scale_radius();
        let steps = r_s * self.scale_degree as f32;
        if !(r_s > 0.0) || (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
            return Err(Error::parameter(format!(
                "scale tap radius {r_s} must be a positive multiple of 1/{}",
                self.scale_degree
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::parameter(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        if !(0.0..=1.0).contains(&self.smooth_weight) {
            return Err(Error::parameter(format!(
                "smoothing weight must be in [0, 1], got {}",
                self.smooth_weight
            )));
        }
        if !(self.guide_sigma > 0.0) {
            return Err(Error::parameter(format!(
                "guide sigma must be positive, got {}",
                self.guide_sigma
            )));
        }
        if self.feature_depth == 0 {
            return Err(Error::parameter("feature depth must be >= 1"));
        }
        if self.memory_budget == 0 {
            return Err(Error::parameter("memory budget must be positive"));
        }
        Ok(())
    }
}

/// Estimate on the 1/8 cell grid at one iteration.  Flow is stored in cell
/// units (multiply by 8 for pixels); `f3` is the per-cell scale change
/// (ratio of apparent size frame 1 → frame 2 reciprocal, i.e. `Z'/Z`),
/// clamped to [`F3_MIN`], [`F3_MAX`].
#[derive(Debug, Clone)]
pub struct MotionState {
    /// Flow in cell units on the 1/8 grid.
    pub flow: VectorField2D,
    /// Scale change per cell.
    pub f3: ScalarField2D,
    /// How many refinement steps produced this state (0 = initialization).
    pub iteration: usize,
}

/// Full-resolution result of [`solve`]: flow in pixels, `f3` per pixel, and
/// the per-iteration cell-grid trace (initialization first, final state
/// last).
#[derive(Debug, Clone)]
pub struct MotionEstimate {
    /// Flow in pixel units, image resolution.
    pub flow: VectorField2D,
    /// Scale change per pixel, image resolution.
    pub f3: ScalarField2D,
    /// Cell-grid states: `iterations + 2` entries (init, each refinement,
    /// final scale-only pass).
    pub trace: Vec<MotionState>,
}

/// Immutable per-pair matching state: features, correlation volumes, pooled
/// pyramid, and the brightness guide for smoothing.  Build once per frame
/// pair with [`SolverContext::prepare`], then run any number of solves.
pub struct SolverContext {
    cfg: SolverConfig,
    pyramid: FeaturePyramid,
    volumes: MultiScaleCorrVolume,
    pooled: PooledCorrPyramid,
    /// Per scale, per cell: the best windowed correlation between the
    /// frame-1 descriptor and *frame 1 itself* resampled at that scale.
    /// This is the response a scale produces with no motion at all, so a
    /// cross-frame curve only carries scale evidence where it beats this
    /// baseline.
    self_response: Vec<Vec<(f32, bool)>>,
    guide: ScalarField2D,
    width: usize,
    height: usize,
}

impl SolverContext {
    /// Extracts features, builds the multi-scale and pooled correlation
    /// volumes, and the smoothing guide.
    ///
    /// Errors: config invalid, frames differ in size or are smaller than
    /// 64×64, or the correlation volumes would exceed the memory budget.
    pub fn prepare(i1: &Image, i2: &Image, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if i1.width() != i2.width() || i1.height() != i2.height() {
            return Err(Error::Dimension(format!(
                "frame sizes differ: {}x{} vs {}x{}",
                i1.width(),
                i1.height(),
                i2.width(),
                i2.height()
            )));
        }
        if i1.width() < MIN_IMAGE_SIDE || i1.height() < MIN_IMAGE_SIDE {
            return Err(Error::Dimension(format!(
                "frames must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {}x{}",
                i1.width(),
                i1.height()
            )));
        }
        let pyramid = build_pyramid(i1, i2, cfg.scale_degree, cfg.feature_depth)?;
        let volumes = build_multi_scale(&pyramid, cfg.memory_budget)?;
        let pooled = build_pooled(volumes.unity_volume());
        let self_response = self_scale_response(i1, &pyramid, cfg)?;
        let guide = cell_brightness(i1);
        Ok(SolverContext {
            cfg: cfg.clone(),
            pyramid,
            volumes,
            pooled,
            self_response,
            guide,
            width: i1.width(),
            height: i1.height(),
        })
    }

    /// Cell-grid dimensions of the estimate.
    pub fn cell_dims(&self) -> (usize, usize) {
        self.pyramid.cell_dims()
    }

    /// The configuration this context was built with.
    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// All-zero flow with `f3 = 1` (the "nothing moved" estimate).
    pub fn zero_state(&self) -> MotionState {
        let (w, h) = self.cell_dims();
        MotionState {
            flow: VectorField2D::new(w, h, [0.0, 0.0]).expect("cell dims are valid"),
            f3: ScalarField2D::new(w, h, 1.0).expect("cell dims are valid"),
            iteration: 0,
        }
    }

    /// Coarse initial estimate: per-1/16-cell integer argmax of the
    /// stride-16 correlation within the init radius (ties prefer the
    /// smallest displacement, then scan order), bilinearly upsampled to the
    /// 1/8 grid with values doubled.  `f3` starts at 1 everywhere.
    pub fn initialize(&self) -> Result<MotionState> {
        let feat = init_corr_16(
            self.pyramid.f1_stride16(),
            self.pyramid.f2_stride16(),
            self.cfg.init_radius,
        )?;
        let (w16, h16) = (feat.width(), feat.height());
        let mut coarse = VectorField2D::new(w16, h16, [0.0, 0.0])?;
        let r = feat.radius() as isize;
        let side = feat.window();
        for y in 0..h16 {
            for x in 0..w16 {
                if let Some((du, dv)) = window_argmax(&feat, x, y, 0, r, side) {
                    coarse.set(x, y, [du as f32, dv as f32]);
                }
            }
        }
        let (w8, h8) = self.cell_dims();
        let mut flow = coarse.resized(w8, h8)?;
        for y in 0..h8 {
            for x in 0..w8 {
                let [u, v] = flow.get(x, y);
                flow.set(x, y, [2.0 * u, 2.0 * v]);
            }
        }
        Ok(MotionState {
            flow,
            f3: ScalarField2D::new(w8, h8, 1.0)?,
            iteration: 0,
        })
    }

    /// One full refinement: damped flow update from the pooled correlation
    /// pyramid, scale update from the 3-tap parabola, then edge-aware
    /// smoothing.  Reads only `prev`; returns a fresh state.
    pub fn refine_step(&self, prev: &MotionState) -> Result<MotionState> {
        let (flow, flow_valid) = self.flow_update(prev)?;
        let (f3, f3_valid) = self.scale_update(prev)?;
        let state = MotionState {
            flow: with_validity(flow, &flow_valid),
            f3: with_validity_scalar(f3, &f3_valid),
            iteration: prev.iteration + 1,
        };
        Ok(self.smoothed(state, true))
    }

    /// Refinement that only touches the scale field: used as the final pass
    /// so `f3` is fitted once more against the settled flow.
    pub fn refine_scale_only(&self, prev: &MotionState) -> Result<MotionState> {
        let (f3, f3_valid) = self.scale_update(prev)?;
        let state = MotionState {
            flow: prev.flow.clone(),
            f3: with_validity_scalar(f3, &f3_valid),
            iteration: prev.iteration + 1,
        };
        Ok(self.smoothed(state, false))
    }

    /// Runs the full schedule from the coarse initialization: `iterations`
    /// refinement steps plus one scale-only pass.  Returns every state,
    /// initialization first.
    pub fn run(&self) -> Result<Vec<MotionState>> {
        let mut trace = Vec::with_capacity(self.cfg.iterations + 2);
        trace.push(self.initialize()?);
        for _ in 0..self.cfg.iterations {
            let next = self.refine_step(trace.last().expect("trace is non-empty"))?;
            trace.push(next);
        }
        let last = self.refine_scale_only(trace.last().expect("trace is non-empty"))?;
        trace.push(last);
        Ok(trace)
    }

    /// Upsamples a cell-grid state to image resolution: bilinear in both
    /// fields, flow values ×8 (cells → pixels), `f3` values unchanged (scale
    /// change is resolution-independent).  Cell values are anchored at their
    /// 8×8 block centers and the resize maps those centers onto the pixel
    /// grid, so no further alignment term is needed.
    pub fn upsample_full(&self, state: &MotionState) -> Result<(VectorField2D, ScalarField2D)> {
        let f3 = state.f3.resized(self.width, self.height)?;
        let mut flow = state.flow.resized(self.width, self.height)?;
        for y in 0..self.height {
            for x in 0..self.width {
                let [u, v] = flow.get(x, y);
                flow.set(x, y, [8.0 * u, 8.0 * v]);
            }
        }
        Ok((flow, f3))
    }

    /// Flow residual pass: per cell, either keep the flow (already a perfect
    /// match) or move a damped step toward the strongest correlation across
    /// all pooled levels, refined to sub-cell accuracy with per-axis
    /// parabolas on the unpooled volume.
    fn flow_update(&self, prev: &MotionState) -> Result<(VectorField2D, Vec<bool>)> {
        let feat = lookup_pooled(&self.pooled, &prev.flow, self.cfg.flow_radius)?;
        let (w, h) = self.cell_dims();
        let r = self.cfg.flow_radius as isize;
        let side = feat.window();
        let center_tap = feat.tap_index(0, 0);
        let n_levels = feat.n_levels();
        let vol0 = self.pooled.level(0);
        // Frame-2 nodes per cell: window offsets and parabola shifts are in
        // node units and must be divided back down to cells.
        let a0 = vol0.axis_scale();
        let alpha = self.cfg.damping;
        let s_f = self.cfg.scale_degree as f32;
        let n_scales = self.volumes.scale_set().len();
        let mut out = vec![[0.0f32; 2]; w * h];
        let mut valid = vec![false; w * h];

        out.par_chunks_mut(w)
            .zip(valid.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (orow, vrow))| {
                for x in 0..w {
                    let [u, v] = prev.flow.get(x, y);
                    // Perfect match at the current target: hold position.
                    if feat.is_valid(x, y, 0, center_tap)
                        && feat.value(x, y, 0, center_tap) >= PERFECT_CORR
                    {
                        orow[x] = [u, v];
                        vrow[x] = true;
                        continue;
                    }
                    // Strongest correlation over every level and offset; ties
                    // prefer the smallest displacement, then scan order.
                    let mut best: Option<(f32, i64, f32, f32)> = None;
                    for l in 0..n_levels {
                        let scale = (1i64 << l) as f32 / a0;
                        for t in 0..side * side {
                            if !feat.is_valid(x, y, l, t) {
                                continue;
                            }
                            let (du, dv) = tap_offset(t, r, side);
                            let fx = scale * du as f32;
                            let fy = scale * dv as f32;
                            let val = feat.value(x, y, l, t);
                            let mag = (1i64 << (2 * l)) * ((du * du + dv * dv) as i64);
                            let better = match best {
                                None => true,
                                Some((bv, bm, _, _)) => val > bv || (val == bv && mag < bm),
                            };
                            if better {
                                best = Some((val, mag, fx, fy));
                            }
                        }
                    }
                    let Some((_, _, fx, fy)) = best else {
                        // Every sample out of bounds: leave the value for the
                        // smoothing pass to replace.
                        orow[x] = [u, v];
                        continue;
                    };
                    // Sub-node refinement around the chosen target, one
                    // axis at a time, on the unpooled volume whose scale is
                    // nearest the cell's current f3: under a scale change
                    // the identity-scale correlation peaks slightly off the
                    // true match, and refining against the matching scale
                    // removes that bias.  Each axis blends two node-centered
                    // parabolas over *stored* entries (exact descriptor
                    // correlations, no interpolation-phase error); the pair
                    // brackets the target, so their shape-model errors sit
                    // on opposite sides and largely cancel.
                    let f3 = prev.f3.get(x, y);
                    let m_near = (((f3 - 0.5) * s_f).round())
                        .clamp(0.0, (n_scales - 1) as f32) as usize;
                    let vol = self.volumes.volume(m_near);
                    let (w2, h2) = vol.dims2();
                    let (a, s) = (vol.axis_scale(), vol.scale());
                    // Nodes per cell on this scale's grid.
                    let unit = a * s;
                    let (uc, vc) = (u + fx, v + fy);
                    let t_x = a * (s * (x as f32 + uc + 0.5) - 0.5);
                    let t_y = a * (s * (y as f32 + vc + 0.5) - 0.5);
                    let row = (t_y.round() as isize).clamp(0, h2 as isize - 1) as usize;
                    let col = (t_x.round() as isize).clamp(0, w2 as isize - 1) as usize;
                    let dx = bracket_refine(t_x, w2, |n| vol.entry(x, y, n, row)) / unit;
                    let dy = bracket_refine(t_y, h2, |n| vol.entry(x, y, col, n)) / unit;
                    orow[x] = [u + alpha * (fx + dx), v + alpha * (fy + dy)];
                    vrow[x] = true;
                }
            });

        let mut field = VectorField2D::new(w, h, [0.0, 0.0])?;
        for y in 0..h {
            for x in 0..w {
                field.set(x, y, out[y * w + x]);
            }
        }
        Ok((field, valid))
    }

    /// Scale residual pass: per cell, take each grid scale's best
    /// norm-corrected correlation within a small window around the current
    /// flow target (window offsets in cell units, so every scale searches
    /// the same image area), and — when the peak carries real scale signal
    /// over the frame-1 self-response — move `f3` toward the extremum of a
    /// log-domain parabola through the three scales around the peak (at
    /// most `1/S` per pass), clamped to the valid range.
    fn scale_update(&self, prev: &MotionState) -> Result<(ScalarField2D, Vec<bool>)> {
        let (w, h) = self.cell_dims();
        let scales = self.volumes.scale_set().scales().to_vec();
        let n_scales = scales.len();
        let s_f = self.cfg.scale_degree as f32;
        let r = self.cfg.scale_window_radius as isize;
        let step_cap = 1.0 / s_f;
        let mut out = vec![1.0f32; w * h];
        let mut valid = vec![false; w * h];

        out.par_chunks_mut(w)
            .zip(valid.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (orow, vrow))| {
                let mut curve = vec![0.0f32; n_scales];
                let mut cvalid = vec![false; n_scales];
                let mut excess = vec![0.0f32; n_scales];
                let mut evalid = vec![false; n_scales];
                for x in 0..w {
                    let f3 = prev.f3.get(x, y);
                    let [u, v] = prev.flow.get(x, y);
                    orow[x] = f3;
                    for m in 0..n_scales {
                        // Best match over a small spatial window: the flow
                        // estimate is only accurate to a fraction of a cell,
                        // and its residual error is not the same for every
                        // scale (it settles where the identity-scale volume
                        // peaks).  Taking each scale's local maximum reads
                        // every scale near its own alignment instead of at
                        // one scale's optimum.
                        let mut best = f32::NEG_INFINITY;
                        let mut n = 0u32;
                        let rm = scale_window_radius(r, scales[m]);
                        for dv in -rm..=rm {
                            for du in -rm..=rm {
                                let (val, ok) = self.volumes.sample_at_flow(
                                    m,
                                    x,
                                    y,
                                    u,
                                    v,
                                    du as f32 * SCALE_WINDOW_STEP,
                                    dv as f32 * SCALE_WINDOW_STEP,
                                );
                                if ok {
                                    best = best.max(val);
                                    n += 1;
                                }
                            }
                        }
                        cvalid[m] = n > 0;
                        curve[m] = if n > 0 { best } else { 0.0 };
                    }
                    // Gate on the *excess* of the cross-frame response over
                    // the response frame 1 produces against itself rescaled
                    // to the same node (its no-motion baseline).  The raw
                    // curve cannot be gated: on self-similar texture it is
                    // peaked even with no motion, and at unity the baseline
                    // is a perfect self-match that genuine near-unity scale
                    // change never beats — the evidence for such change
                    // appears as positive excess at a *neighboring* node,
                    // so the gate takes the best excess anywhere.
                    for m in 0..n_scales {
                        let (base, base_ok) = self.self_response[m][y * w + x];
                        evalid[m] = cvalid[m] && base_ok;
                        excess[m] = if evalid[m] { curve[m] - base } else { 0.0 };
                    }
                    let Some(m_e) = (0..n_scales)
                        .filter(|&m| evalid[m])
                        .max_by(|&a, &b| excess[a].total_cmp(&excess[b]))
                    else {
                        // Flow target outside every scale's grid: leave the
                        // value for the smoothing pass to replace.
                        continue;
                    };
                    // No node beats its own baseline: the curve is the
                    // descriptor's intrinsic cross-scale falloff (plus
                    // sampling loss), not scale-change evidence, so hold
                    // the current estimate.  This keeps exact matches
                    // bit-stable across iterations and protects converged
                    // cells whose flow sits between frame-2 nodes.
                    if excess[m_e] < SCALE_SIGNAL_MIN {
                        vrow[x] = true;
                        continue;
                    }
                    // Once gated, fit the raw curve at its own peak node.
                    // The baseline is only a gate, not a correction: the
                    // difference of two correlation falloffs has no usable
                    // extremum, while the curve's vertex at its peak is a
                    // local interpolation.  Fitting at grid nodes (never at
                    // interpolated positions centered on f3) avoids making
                    // the current estimate an attractor.
                    let m_c = (0..n_scales)
                        .filter(|&m| cvalid[m])
                        .max_by(|&a, &b| curve[a].total_cmp(&curve[b]))
                        .expect("gate node is curve-valid");
                    let m0 = m_c.clamp(1, n_scales - 2);
                    if !(cvalid[m0 - 1] && cvalid[m0] && cvalid[m0 + 1]) {
                        continue;
                    }
                    let pos = [scales[m0 - 1], scales[m0], scales[m0 + 1]];
                    let cv = [curve[m0 - 1], curve[m0], curve[m0 + 1]];
                    let step = scale_parabola_step(pos, cv, f3, step_cap);
                    orow[x] = (f3 + step).clamp(F3_MIN, F3_MAX);
                    vrow[x] = true;
                }
            });

        let mut field = ScalarField2D::new(w, h, 1.0)?;
        for y in 0..h {
            for x in 0..w {
                field.set(x, y, out[y * w + x]);
            }
        }
        Ok((field, valid))
    }

    /// Edge-aware smoothing: valid cells blend toward a brightness-weighted
    /// 3×3 neighborhood mean; invalid cells take the median of their valid
    /// neighbors (and stay invalid if they have none).  Reads the passed
    /// state as an immutable snapshot.
    fn smoothed(&self, state: MotionState, include_flow: bool) -> MotionState {
        let lambda = self.cfg.smooth_weight;
        let sigma2 = 2.0 * self.cfg.guide_sigma * self.cfg.guide_sigma;
        let (w, h) = (state.f3.width(), state.f3.height());
        let cap = self.width.max(self.height) as f32 / 8.0;

        let mut flow = state.flow.clone();
        let mut f3 = state.f3.clone();
        for y in 0..h {
            for x in 0..w {
                if include_flow {
                    if state.flow.is_valid(x, y) {
                        let mean = weighted_flow_mean(&state.flow, &self.guide, x, y, sigma2);
                        let [u, v] = state.flow.get(x, y);
                        let nu = (1.0 - lambda) * u + lambda * mean[0];
                        let nv = (1.0 - lambda) * v + lambda * mean[1];
                        flow.set(x, y, clamp_magnitude([nu, nv], cap));
                    } else {
                        let nb = valid_neighbors(x, y, w, h, |nx, ny| {
                            state.flow.is_valid(nx, ny).then(|| state.flow.get(nx, ny))
                        });
                        if !nb.is_empty() {
                            let mu = median(nb.iter().map(|p| p[0]));
                            let mv = median(nb.iter().map(|p| p[1]));
                            flow.set(x, y, clamp_magnitude([mu, mv], cap));
                            flow.set_valid(x, y, true);
                        }
                    }
                }
                if state.f3.is_valid(x, y) {
                    let mean = weighted_scale_mean(&state.f3, &self.guide, x, y, sigma2);
                    let nv = (1.0 - lambda) * state.f3.get(x, y) + lambda * mean;
                    f3.set(x, y, nv.clamp(F3_MIN, F3_MAX));
                } else {
                    let nb = valid_neighbors(x, y, w, h, |nx, ny| {
                        state.f3.is_valid(nx, ny).then(|| [state.f3.get(nx, ny), 0.0])
                    });
                    if !nb.is_empty() {
                        let m = median(nb.iter().map(|p| p[0]));
                        f3.set(x, y, m.clamp(F3_MIN, F3_MAX));
                        f3.set_valid(x, y, true);
                    }
                }
            }
        }
        MotionState {
            flow,
            f3,
            iteration: state.iteration,
        }
    }
}

/// Per-scale, per-cell baseline response: the best windowed correlation of
/// each frame-1 descriptor against frame 1 itself resampled at every grid
/// scale.  Identical window geometry to the cross-frame scale curve, so the
/// two are directly comparable; cells whose window lies entirely outside a
/// scale's grid are flagged invalid.
fn self_scale_response(
    i1: &Image,
    pyramid: &FeaturePyramid,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<(f32, bool)>>> {
    let f1 = pyramid.f1_stride8();
    let (w, h) = pyramid.cell_dims();
    let r = cfg.scale_window_radius as isize;
    let mut out = Vec::with_capacity(pyramid.scale_set().len());
    for &s in pyramid.scale_set().scales() {
        let f1s = extract_features_scaled(i1, s, 4, cfg.feature_depth)?;
        let a = f1.stride() as f32 / f1s.stride() as f32;
        let rm = scale_window_radius(r, s);
        let mut plane = vec![(0.0f32, false); w * h];
        plane
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, slot) in row.iter_mut().enumerate() {
                    let mut best = f32::NEG_INFINITY;
                    let mut any = false;
                    for dv in -rm..=rm {
                        for du in -rm..=rm {
                            let tx = a
                                * (s * (x as f32 + du as f32 * SCALE_WINDOW_STEP + 0.5) - 0.5);
                            let ty = a
                                * (s * (y as f32 + dv as f32 * SCALE_WINDOW_STEP + 0.5) - 0.5);
                            let (val, ok) = descriptor_corr_at(f1, &f1s, x, y, tx, ty);
                            if ok {
                                best = best.max(val);
                                any = true;
                            }
                        }
                    }
                    *slot = if any { (best, true) } else { (0.0, false) };
                }
            });
        out.push(plane);
    }
    Ok(out)
}

/// Mean-brightness guide: average gray level of each full 8×8 pixel block,
/// matching the descriptor grid layout.
fn cell_brightness(img: &Image) -> ScalarField2D {
    let gray = img.to_gray();
    let w8 = img.width() / 8;
    let h8 = img.height() / 8;
    let mut out = ScalarField2D::new(w8, h8, 0.0).expect("cell dims are valid");
    for cy in 0..h8 {
        for cx in 0..w8 {
            let mut acc = 0.0f32;
            for y in 8 * cy..8 * cy + 8 {
                for x in 8 * cx..8 * cx + 8 {
                    acc += gray.get(x, y);
                }
            }
            out.set(cx, cy, acc / 64.0);
        }
    }
    out
}

/// Integer argmax over one level's window of a correlation feature; ties
/// prefer the smallest displacement magnitude, then scan order.  `None` when
/// every sample is out of bounds.
fn window_argmax(
    feat: &CorrFeatureOf,
    x: usize,
    y: usize,
    level: usize,
    r: isize,
    side: usize,
) -> Option<(isize, isize)> {
    let mut best: Option<(f32, i64, (isize, isize))> = None;
    for t in 0..side * side {
        if !feat.is_valid(x, y, level, t) {
            continue;
        }
        let (du, dv) = tap_offset(t, r, side);
        let val = feat.value(x, y, level, t);
        let mag = (du * du + dv * dv) as i64;
        let better = match best {
            None => true,
            Some((bv, bm, _)) => val > bv || (val == bv && mag < bm),
        };
        if better {
            best = Some((val, mag, (du, dv)));
        }
    }
    best.map(|(_, _, d)| d)
}

/// Window tap index → displacement offset.
#[inline]
fn tap_offset(t: usize, r: isize, side: usize) -> (isize, isize) {
    let du = (t % side) as isize - r;
    let dv = (t / side) as isize - r;
    (du, dv)
}

/// Offset, in node units, from continuous node coordinate `t` to the peak
/// of the correlation curve `value_at`, estimated by blending two 3-point
/// parabolas centered on the integer nodes bracketing `t` (weighted by
/// proximity).  Equal values straddling the truth pin each vertex to the
/// midpoint exactly, and the two fits' far taps sit on opposite sides, so
/// their shape-model errors largely cancel.  Zero when `t` is outside the
/// grid or no center has both neighbors in bounds.
fn bracket_refine(t: f32, n: usize, value_at: impl Fn(usize) -> f32) -> f32 {
    if !(t >= 0.0 && t <= (n - 1) as f32) {
        return 0.0;
    }
    let nlo = (t as usize).min(n - 1);
    let nhi = (nlo + 1).min(n - 1);
    let frac = t - nlo as f32;
    let fit = |c: usize| -> Option<f32> {
        (c >= 1 && c + 1 < n).then(|| {
            c as f32
                + axis_parabola(
                    (value_at(c - 1), true),
                    (value_at(c), true),
                    (value_at(c + 1), true),
                )
        })
    };
    let va = fit(nlo);
    let vb = if nhi != nlo { fit(nhi) } else { None };
    let vertex = match (va, vb) {
        (Some(a), Some(b)) => (1.0 - frac) * a + frac * b,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return 0.0,
    };
    vertex - t
}

/// Sub-cell offset from a 3-point parabola at unit spacing: the extremum of
/// the fit through `(−1, ym), (0, y0), (+1, yp)`, clamped to ±0.5.  Zero
/// when either neighbor is out of bounds or the fit is not concave.
fn axis_parabola(m: (f32, bool), c: (f32, bool), p: (f32, bool)) -> f32 {
    let ((ym, okm), (y0, ok0), (yp, okp)) = (m, c, p);
    if !(okm && ok0 && okp) {
        return 0.0;
    }
    let denom = ym - 2.0 * y0 + yp;
    if denom >= -EPS_CURV {
        return 0.0;
    }
    (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
}

/// Window radius for one scale node: the base radius grown in proportion to
/// the node's scale factor.  A flow residual of `δ` cells lands `s·δ` node
/// units from the lookup target at scale `s`, so upscale nodes need a wider
/// search to read their true maximum; the step stays fixed, the search only
/// grows outward.
fn scale_window_radius(base: isize, s: f32) -> isize {
    (base as f32 * s.max(1.0)).ceil() as isize
}

/// Scale step from three averaged taps at positions `pos` (ascending, taken
/// from the clamped tap grid): fit a parabola through them and move toward
/// its extremum, at most `cap` per step.
///
/// Degenerate layouts fall back to one-sided reasoning: duplicated positions
/// at a range end use the slope of the remaining pair, and a strictly
/// monotone non-concave curve steps `cap` uphill — the peak is outside the
/// tap span, and a flat answer here would stall the iteration.
fn scale_parabola_step(pos: [f32; 3], val: [f32; 3], f3: f32, cap: f32) -> f32 {
    let [p0, p1, p2] = pos;
    let [a0, a1, a2] = val;
    if (p1 - p0).abs() < 1e-6 {
        // Pinned at the bottom of the scale range; only an uphill slope to
        // the right can move the estimate.
        if (p2 - p1).abs() < 1e-6 {
            return 0.0;
        }
        let slope = (a2 - a1) / (p2 - p1);
        return if slope > EPS_MONO { cap } else { 0.0 };
    }
    if (p2 - p1).abs() < 1e-6 {
        let slope = (a1 - a0) / (p1 - p0);
        return if slope < -EPS_MONO { -cap } else { 0.0 };
    }
    // Scale is multiplicative: the correlation response is (locally)
    // symmetric in the log of the scale ratio, so fit the parabola in log
    // coordinates and map its vertex back.  A linear-domain fit overshoots
    // away from the nearest grid scale when the true value sits between
    // nodes.
    let (l0, l1, l2) = (p0.ln(), p1.ln(), p2.ln());
    let d1 = (a1 - a0) / (l1 - l0);
    let d2 = (a2 - a1) / (l2 - l1);
    let curv = (d2 - d1) / (l2 - l0);
    if curv < -EPS_CURV {
        let vertex = (0.5 * (l0 + l1) - d1 / (2.0 * curv)).exp();
        return (vertex - f3).clamp(-cap, cap);
    }
    if a2 > a1 + EPS_MONO && a1 > a0 + EPS_MONO {
        return cap;
    }
    if a0 > a1 + EPS_MONO && a1 > a2 + EPS_MONO {
        return -cap;
    }
    0.0
}

/// Brightness-weighted 3×3 mean of valid flow cells around `(x, y)`.
fn weighted_flow_mean(
    flow: &VectorField2D,
    guide: &ScalarField2D,
    x: usize,
    y: usize,
    sigma2: f32,
) -> [f32; 2] {
    let (w, h) = (flow.width(), flow.height());
    let gc = guide.get(x, y);
    let mut acc = [0.0f32; 2];
    let mut wsum = 0.0f32;
    for ny in y.saturating_sub(1)..(y + 2).min(h) {
        for nx in x.saturating_sub(1)..(x + 2).min(w) {
            if !flow.is_valid(nx, ny) {
                continue;
            }
            let d = guide.get(nx, ny) - gc;
            let wt = (-(d * d) / sigma2).exp();
            let [u, v] = flow.get(nx, ny);
            acc[0] += wt * u;
            acc[1] += wt * v;
            wsum += wt;
        }
    }
    if wsum > 0.0 {
        [acc[0] / wsum, acc[1] / wsum]
    } else {
        flow.get(x, y)
    }
}

/// Brightness-weighted 3×3 mean of valid scale cells around `(x, y)`.
fn weighted_scale_mean(
    f3: &ScalarField2D,
    guide: &ScalarField2D,
    x: usize,
    y: usize,
    sigma2: f32,
) -> f32 {
    let (w, h) = (f3.width(), f3.height());
    let gc = guide.get(x, y);
    let mut acc = 0.0f32;
    let mut wsum = 0.0f32;
    for ny in y.saturating_sub(1)..(y + 2).min(h) {
        for nx in x.saturating_sub(1)..(x + 2).min(w) {
            if !f3.is_valid(nx, ny) {
                continue;
            }
            let d = guide.get(nx, ny) - gc;
            let wt = (-(d * d) / sigma2).exp();
            acc += wt * f3.get(nx, ny);
            wsum += wt;
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        f3.get(x, y)
    }
}

/// Values of the valid 3×3 neighbors of `(x, y)`, center excluded, in scan
/// order.
fn valid_neighbors(
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    fetch: impl Fn(usize, usize) -> Option<[f32; 2]>,
) -> Vec<[f32; 2]> {
    let mut out = Vec::new();
    for ny in y.saturating_sub(1)..(y + 2).min(h) {
        for nx in x.saturating_sub(1)..(x + 2).min(w) {
            if nx == x && ny == y {
                continue;
            }
            if let Some(v) = fetch(nx, ny) {
                out.push(v);
            }
        }
    }
    out
}

/// Rescales a vector onto the magnitude cap when it exceeds it.
fn clamp_magnitude(v: [f32; 2], cap: f32) -> [f32; 2] {
    let mag = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if mag > cap {
        let s = cap / mag;
        [v[0] * s, v[1] * s]
    } else {
        v
    }
}

/// Median of an iterator of values (mean of the middle two for even counts).
fn median(values: impl Iterator<Item = f32>) -> f32 {
    let mut v: Vec<f32> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("field values are finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Replaces a vector field's validity flags wholesale.
fn with_validity(mut field: VectorField2D, valid: &[bool]) -> VectorField2D {
    let w = field.width();
    for (i, &ok) in valid.iter().enumerate() {
        field.set_valid(i % w, i / w, ok);
    }
    field
}

/// Replaces a scalar field's validity flags wholesale.
fn with_validity_scalar(mut field: ScalarField2D, valid: &[bool]) -> ScalarField2D {
    let w = field.width();
    for (i, &ok) in valid.iter().enumerate() {
        field.set_valid(i % w, i / w, ok);
    }
    field
}

/// Estimates dense flow (pixels) and scale change between two same-sized
/// frames: builds a [`SolverContext`], runs the refinement schedule, and
/// upsamples the final state to image resolution.
///
/// Errors: invalid config, frames that differ in size or are smaller than
/// 64×64, or correlation volumes beyond the memory budget.
pub fn solve(i1: &Image, i2: &Image, cfg: &SolverConfig) -> Result<MotionEstimate> {
    let ctx = SolverContext::prepare(i1, i2, cfg)?;
    let trace = ctx.run()?;
    let last = trace.last().expect("run always returns states");
    let (flow, f3) = ctx.upsample_full(last)?;
    Ok(MotionEstimate { flow, f3, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{smooth_noise, translate_pair, zoom_pair};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        smooth_noise(w, h, 3, &mut rng)
    }

    #[test]
    fn default_config_validates() {
        SolverConfig::default().validate().unwrap();
        assert!((SolverConfig::default().effective_scale_radius() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SolverConfig::default;
        for cfg in [
            SolverConfig { iterations: 0, ..base() },
            SolverConfig { scale_degree: 3, ..base() },
            SolverConfig { scale_degree: 0, ..base() },
            SolverConfig { flow_radius: 0, ..base() },
            SolverConfig { init_radius: 0, ..base() },
            SolverConfig { scale_radius: Some(0.3), ..base() },
            SolverConfig { scale_radius: Some(-0.25), ..base() },
            SolverConfig { damping: 0.0, ..base() },
            SolverConfig { damping: 1.5, ..base() },
            SolverConfig { smooth_weight: -0.1, ..base() },
            SolverConfig { guide_sigma: 0.0, ..base() },
            SolverConfig { feature_depth: 0, ..base() },
            SolverConfig { memory_budget: 0, ..base() },
        ] {
            assert!(cfg.validate().is_err(), "config should fail: {cfg:?}");
        }
    }

    #[test]
    fn scale_step_log_symmetric_taps_stay_put() {
        // Equal values at taps equidistant in log scale (0.8 and 1.25 are
        // both a factor 1.25 from 1.0): the multiplicative fit must leave
        // the estimate at the middle tap.
        let d = scale_parabola_step([0.8, 1.0, 1.25], [0.2, 0.9, 0.2], 1.0, 0.25);
        assert!(d.abs() < 1e-5, "log-symmetric curve must not move, got {d}");
    }

    #[test]
    fn scale_step_rising_concave_clamps_to_cap() {
        // Concave but still rising at the last tap: extremum beyond the
        // span, so the step saturates at +cap.
        let d = scale_parabola_step([0.75, 1.0, 1.25], [0.2, 0.6, 0.9], 1.0, 0.25);
        assert!((d - 0.25).abs() < 1e-6, "expected +0.25, got {d}");
    }

    #[test]
    fn scale_step_monotone_convex_still_moves() {
        // Convex and strictly decreasing: the peak is left of every tap.  A
        // parabola fit has no interior maximum; the fallback must still walk
        // downhill-to-uphill rather than freeze.
        let d = scale_parabola_step([0.75, 1.0, 1.25], [0.9, 0.5, 0.3], 1.0, 0.25);
        assert!((d + 0.25).abs() < 1e-6, "expected -0.25, got {d}");
    }

    #[test]
    fn scale_step_flat_curve_stays_put() {
        let d = scale_parabola_step([0.75, 1.0, 1.25], [0.5, 0.5, 0.5], 1.0, 0.25);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn scale_step_interior_peak_finds_vertex() {
        // Values drawn from a parabola in log scale peaked at 0.85: the fit
        // recovers the peak exactly, so the step from f3 = 1.0 is −0.15.
        let pos = [0.75f32, 1.0, 1.25];
        let val: Vec<f32> =
            pos.iter().map(|p| 1.0 - 4.0 * (p.ln() - 0.85f32.ln()).powi(2)).collect();
        let d = scale_parabola_step(pos, [val[0], val[1], val[2]], 1.0, 0.25);
        assert!((d + 0.15).abs() < 1e-3, "expected -0.15, got {d}");
    }

    #[test]
    fn scale_step_clamped_bottom_moves_up_only_on_uphill() {
        let up = scale_parabola_step([0.5, 0.5, 0.75], [0.4, 0.4, 0.7], 0.45, 0.25);
        assert!((up - 0.25).abs() < 1e-6, "uphill from the floor, got {up}");
        let down = scale_parabola_step([0.5, 0.5, 0.75], [0.7, 0.7, 0.3], 0.45, 0.25);
        assert_eq!(down, 0.0, "downhill from the floor must hold");
    }

    #[test]
    fn scale_step_clamped_top_moves_down_only_on_uphill() {
        let down = scale_parabola_step([1.25, 1.5, 1.5], [0.8, 0.4, 0.4], 1.55, 0.25);
        assert!((down + 0.25).abs() < 1e-6, "uphill toward lower scales, got {down}");
        let hold = scale_parabola_step([1.25, 1.5, 1.5], [0.3, 0.6, 0.6], 1.55, 0.25);
        assert_eq!(hold, 0.0);
    }

    #[test]
    fn axis_parabola_peaks_between_samples() {
        // Concave triple with the true peak right of center.
        let d = axis_parabola((0.2, true), (0.8, true), (0.6, true));
        assert!(d > 0.0 && d <= 0.5, "offset toward the higher side, got {d}");
        // Non-concave or incomplete data must not move.
        assert_eq!(axis_parabola((0.2, false), (0.8, true), (0.6, true)), 0.0);
        assert_eq!(axis_parabola((0.9, true), (0.5, true), (0.3, true)), 0.0);
    }

    #[test]
    fn identity_pair_initializes_to_zero() {
        let img = noise(128, 96, 11);
        let ctx = SolverContext::prepare(&img, &img, &SolverConfig::default()).unwrap();
        let s0 = ctx.initialize().unwrap();
        let (w, h) = ctx.cell_dims();
        for y in 0..h {
            for x in 0..w {
                let [u, v] = s0.flow.get(x, y);
                assert_eq!((u, v), (0.0, 0.0), "cell ({x},{y})");
                assert_eq!(s0.f3.get(x, y), 1.0);
            }
        }
    }

    #[test]
    fn translation_init_recovers_coarse_flow() {
        let img = noise(192, 128, 5);
        let (i1, i2) = translate_pair(&img, 32.0, 0.0);
        let ctx = SolverContext::prepare(&i1, &i2, &SolverConfig::default()).unwrap();
        let s0 = ctx.initialize().unwrap();
        let (w, h) = ctx.cell_dims();
        for y in 4..h - 4 {
            for x in 8..w - 8 {
                let [u, v] = s0.flow.get(x, y);
                assert!(
                    (u - 4.0).abs() < 1e-4 && v.abs() < 1e-4,
                    "cell ({x},{y}) expected (4, 0) cells, got ({u}, {v})"
                );
            }
        }
    }

    #[test]
    fn refinement_is_a_fixed_point_at_the_truth() {
        // Integer-pixel shift: interior descriptors match exactly, so the
        // previous estimate must survive a refinement step nearly unchanged.
        let img = noise(160, 128, 23);
        let (i1, i2) = translate_pair(&img, 10.0, 6.0);
        let ctx = SolverContext::prepare(&i1, &i2, &SolverConfig::default()).unwrap();
        let (w, h) = ctx.cell_dims();
        let mut state = ctx.zero_state();
        for y in 0..h {
            for x in 0..w {
                state.flow.set(x, y, [10.0 / 8.0, 6.0 / 8.0]);
            }
        }
        let next = ctx.refine_step(&state).unwrap();
        // Per-cell cap: the correlation surface's sub-node peak can sit a
        // few tenths of a node off the true shift for an individual texture
        // patch (the descriptors' resolution floor), so single cells may
        // move a little.  The mean cap is what rules out systematic drift.
        let mut du_sum = 0.0f64;
        let mut dv_sum = 0.0f64;
        let mut n = 0usize;
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                let [u, v] = next.flow.get(x, y);
                assert!(
                    (u - 1.25).abs() <= 0.2 && (v - 0.75).abs() <= 0.2,
                    "cell ({x},{y}) drifted to ({u}, {v})"
                );
                assert!(
                    (next.f3.get(x, y) - 1.0).abs() <= 0.01,
                    "scale drifted to {}",
                    next.f3.get(x, y)
                );
                du_sum += (u - 1.25) as f64;
                dv_sum += (v - 0.75) as f64;
                n += 1;
            }
        }
        let (du_mean, dv_mean) = (du_sum / n as f64, dv_sum / n as f64);
        assert!(
            du_mean.abs() <= 0.02 && dv_mean.abs() <= 0.02,
            "systematic drift ({du_mean}, {dv_mean}) cells"
        );
    }

    #[test]
    fn identity_solve_is_exact() {
        let img = noise(128, 128, 31);
        let est = solve(&img, &img, &SolverConfig::default()).unwrap();
        assert_eq!(est.trace.len(), SolverConfig::default().iterations + 2);
        for y in 0..128 {
            for x in 0..128 {
                let [u, v] = est.flow.get(x, y);
                assert!(u.abs() <= 0.01 && v.abs() <= 0.01, "px ({x},{y}): ({u}, {v})");
                assert!((est.f3.get(x, y) - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn translation_solve_reaches_subpixel_epe() {
        // Fractional-cell displacement forces the parabola refinement to do
        // real work (37/8 and -13/8 cells).
        let img = noise(256, 160, 41);
        let (i1, i2) = translate_pair(&img, 37.0, -13.0);
        let est = solve(&i1, &i2, &SolverConfig::default()).unwrap();
        let mut epe = 0.0f64;
        let mut n = 0usize;
        for y in 48..112 {
            for x in 64..192 {
                let [u, v] = est.flow.get(x, y);
                epe += (((u - 37.0).powi(2) + (v + 13.0).powi(2)) as f64).sqrt();
                n += 1;
            }
        }
        epe /= n as f64;
        assert!(epe <= 0.75, "interior EPE {epe} px too high");
    }

    #[test]
    fn zoom_solve_recovers_scale_change() {
        // Magnification 1.25 means frame-2 content must shrink by 0.8 to
        // match frame 1, i.e. the scale-change field should settle at 0.8.
        let img = noise(160, 160, 57);
        let (i1, i2) = zoom_pair(&img, 1.25);
        let est = solve(&i1, &i2, &SolverConfig::default()).unwrap();
        let mut vals: Vec<f32> = Vec::new();
        for y in 32..128 {
            for x in 32..128 {
                vals.push(est.f3.get(x, y));
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = vals[vals.len() / 2];
        assert!(
            (med - 0.8).abs() <= 0.03,
            "median interior scale change {med}, want 0.8 ± 0.03"
        );
        // Per-pixel flow under a zoom carries the estimator's per-cell
        // texture floor, but that floor is unbiased, so (a) the mean flow
        // vector over the center-symmetric patch must cancel to a small
        // fraction of a pixel (the zoom fixes the image center, and the
        // true radial field integrates to zero there too), and (b) the mean
        // error against the analytic zoom field stays bounded.
        let gt = crate::synth::zoom_flow_gt(160, 160, 1.25);
        let mut mean = [0.0f64; 2];
        let mut epe = 0.0f64;
        let mut n = 0usize;
        for y in 40..120 {
            for x in 40..120 {
                let [u, v] = est.flow.get(x, y);
                let [tu, tv] = gt.get(x, y);
                mean[0] += u as f64;
                mean[1] += v as f64;
                epe += (((u - tu).powi(2) + (v - tv).powi(2)) as f64).sqrt();
                n += 1;
            }
        }
        let bias = (mean[0] * mean[0] + mean[1] * mean[1]).sqrt() / n as f64;
        epe /= n as f64;
        assert!(bias <= 0.2, "center flow bias {bias} px, want <= 0.2");
        assert!(epe <= 1.5, "interior zoom EPE {epe} px, want <= 1.5");
    }

    #[test]
    fn trace_respects_scale_and_flow_bounds() {
        let img = noise(160, 160, 71);
        let (i1, i2) = zoom_pair(&img, 1.3);
        let est = solve(&i1, &i2, &SolverConfig::default()).unwrap();
        let cap = 160.0f32 / 8.0;
        for (k, state) in est.trace.iter().enumerate() {
            for y in 0..state.f3.height() {
                for x in 0..state.f3.width() {
                    let f3 = state.f3.get(x, y);
                    assert!((F3_MIN..=F3_MAX).contains(&f3), "state {k}: f3 {f3}");
                    let [u, v] = state.flow.get(x, y);
                    let mag = (u * u + v * v).sqrt();
                    assert!(mag <= cap + 1e-3, "state {k}: |flow| {mag} cells");
                }
            }
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let img = noise(128, 96, 83);
        let (i1, i2) = zoom_pair(&img, 1.2);
        let a = solve(&i1, &i2, &SolverConfig::default()).unwrap();
        let b = solve(&i1, &i2, &SolverConfig::default()).unwrap();
        assert_eq!(a.flow.data(), b.flow.data());
        assert_eq!(a.f3.data(), b.f3.data());
        for (sa, sb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(sa.flow.data(), sb.flow.data());
            assert_eq!(sa.f3.data(), sb.f3.data());
        }
    }

    #[test]
    fn undersized_frames_are_rejected() {
        let img = noise(48, 48, 1);
        let err = SolverContext::prepare(&img, &img, &SolverConfig::default());
        assert!(err.is_err());
        let a = noise(128, 96, 2);
        let b = noise(96, 128, 3);
        assert!(SolverContext::prepare(&a, &b, &SolverConfig::default()).is_err());
    }

    #[test]
    #[ignore]
    fn debug_scale_paths() {
        for alpha in [0.8f32, 0.925, 1.3] {
            let img = noise(256, 256, 57);
            let (i1, i2) = crate::synth::zoom_pair(&img, alpha);
            let cfg = SolverConfig::default();
            let ctx = SolverContext::prepare(&i1, &i2, &cfg).unwrap();
            let trace = ctx.run().unwrap();
            let state = trace.last().unwrap();
            let (w, h) = ctx.cell_dims();
            let scales = ctx.volumes.scale_set().scales().to_vec();
            let n_scales = scales.len();
            let r = cfg.scale_window_radius as isize;
            let (mut n_hold, mut n_slope, mut n_fallback, mut n_skip) = (0, 0, 0, 0);
            let mut a_vals: Vec<f32> = Vec::new();
            let mut mu_vals: Vec<f32> = Vec::new();
            let mut m0_hist = vec![0usize; n_scales];
            let mut med_curve = vec![Vec::new(); n_scales];
            let mut med_base = vec![Vec::new(); n_scales];
            for y in 8..h - 8 {
                for x in 8..w - 8 {
                    let f3 = state.f3.get(x, y);
                    let [u, v] = state.flow.get(x, y);
                    let mut curve = vec![0.0f32; n_scales];
                    let mut cvalid = vec![false; n_scales];
                    for m in 0..n_scales {
                        let mut best = f32::NEG_INFINITY;
                        let mut n = 0u32;
                        for dv in -r..=r {
                            for du in -r..=r {
                                let (val, ok) = ctx.volumes.sample_at_flow(
                                    m, x, y, u, v,
                                    du as f32 * SCALE_WINDOW_STEP,
                                    dv as f32 * SCALE_WINDOW_STEP,
                                );
                                if ok {
                                    best = best.max(val);
                                    n += 1;
                                }
                            }
                        }
                        cvalid[m] = n > 0;
                        curve[m] = if n > 0 { best } else { 0.0 };
                    }
                    let mut excess = vec![0.0f32; n_scales];
                    let mut evalid = vec![false; n_scales];
                    for m in 0..n_scales {
                        let (base, base_ok) = ctx.self_response[m][y * w + x];
                        evalid[m] = cvalid[m] && base_ok;
                        excess[m] = if evalid[m] { curve[m] - base } else { 0.0 };
                        if evalid[m] {
                            med_curve[m].push(curve[m]);
                            med_base[m].push(base);
                        }
                    }
                    let Some(m_e) = (0..n_scales)
                        .filter(|&m| evalid[m])
                        .max_by(|&a, &b| excess[a].total_cmp(&excess[b]))
                    else {
                        n_skip += 1;
                        continue;
                    };
                    if excess[m_e] < SCALE_SIGNAL_MIN {
                        n_hold += 1;
                        continue;
                    }
                    let m0 = m_e.clamp(1, n_scales - 2);
                    if !(evalid[m0 - 1] && evalid[m0] && evalid[m0 + 1]) {
                        n_skip += 1;
                        continue;
                    }
                    m0_hist[m0] += 1;
                    let pos = [scales[m0 - 1], scales[m0], scales[m0 + 1]];
                    let cv = [curve[m0 - 1], curve[m0], curve[m0 + 1]];
                    let bv = [
                        ctx.self_response[m0 - 1][y * w + x].0,
                        ctx.self_response[m0][y * w + x].0,
                        ctx.self_response[m0 + 1][y * w + x].0,
                    ];
                    let l = [pos[0].ln(), pos[1].ln(), pos[2].ln()];
                    let span = l[2] - l[0];
                    let d1 = (bv[1] - bv[0]) / (l[1] - l[0]);
                    let d2 = (bv[2] - bv[1]) / (l[2] - l[1]);
                    let a = -((d2 - d1) / span);
                    a_vals.push(a);
                    match scale_from_excess(pos, cv, bv) {
                        Some(t) => {
                            n_slope += 1;
                            mu_vals.push(t);
                        }
                        None => n_fallback += 1,
                    }
                    let _ = f3;
                }
            }
            a_vals.sort_by(f32::total_cmp);
            mu_vals.sort_by(f32::total_cmp);
            let dec = |v: &Vec<f32>, q: f64| -> f32 {
                if v.is_empty() { f32::NAN } else { v[((v.len() - 1) as f64 * q) as usize] }
            };
            println!("== alpha {alpha}  gt {:.4}", 1.0 / alpha);
            println!("   hold {n_hold}  slope {n_slope}  fallback {n_fallback}  skip {n_skip}");
            println!("   m0 hist {m0_hist:?}");
            println!(
                "   a deciles: 10% {:.3} 50% {:.3} 90% {:.3}",
                dec(&a_vals, 0.1), dec(&a_vals, 0.5), dec(&a_vals, 0.9)
            );
            println!(
                "   target deciles: 10% {:.4} 50% {:.4} 90% {:.4}",
                dec(&mu_vals, 0.1), dec(&mu_vals, 0.5), dec(&mu_vals, 0.9)
            );
            for m in 0..n_scales {
                med_curve[m].sort_by(f32::total_cmp);
                med_base[m].sort_by(f32::total_cmp);
                println!(
                    "   node {:.2}: curve {:.4}  base {:.4}  excess {:+.4}",
                    scales[m],
                    dec(&med_curve[m], 0.5),
                    dec(&med_base[m], 0.5),
                    dec(&med_curve[m], 0.5) - dec(&med_base[m], 0.5)
                );
            }
        }
    }
}

