//! Color renderings of flow, scale-change, and time-to-collision fields.
//!
//! Flow uses the standard optical-flow color wheel: hue encodes direction,
//! saturation encodes magnitude (white at zero motion).  Scale change gets a
//! diverging map around 1 (red approaching, blue receding), and
//! time-to-collision a heat ramp (red imminent, blue distant).  Invalid
//! cells render black in all three.

use crate::field::{Image, ScalarField2D, VectorField2D};

// Segment lengths of the flow color wheel (red→yellow→green→cyan→blue→
// magenta→red).
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const WHEEL_LEN: usize = RY + YG + GC + CB + BM + MR;

fn colorwheel() -> Vec<[f32; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_LEN);
    let ramp = |n: usize, i: usize| i as f32 / n as f32;
    for i in 0..RY {
        wheel.push([1.0, ramp(RY, i), 0.0]);
    }
    for i in 0..YG {
        wheel.push([1.0 - ramp(YG, i), 1.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 1.0, ramp(GC, i)]);
    }
    for i in 0..CB {
        wheel.push([0.0, 1.0 - ramp(CB, i), 1.0]);
    }
    for i in 0..BM {
        wheel.push([ramp(BM, i), 0.0, 1.0]);
    }
    for i in 0..MR {
        wheel.push([1.0, 0.0, 1.0 - ramp(MR, i)]);
    }
    wheel
}

/// Renders a flow field with the direction/magnitude color wheel.
///
/// Magnitudes are normalized by `max_magnitude` when given, otherwise by the
/// largest valid magnitude in the field; zero flow is white, stronger flow
/// more saturated, invalid cells black.
pub fn flow_to_color(flow: &VectorField2D, max_magnitude: Option<f32>) -> Image {
    let (w, h) = (flow.width(), flow.height());
    let wheel = colorwheel();
    let max_rad = max_magnitude.unwrap_or_else(|| {
        let mut m = 0.0f32;
        for y in 0..h {
            for x in 0..w {
                if flow.is_valid(x, y) {
                    let f = flow.get(x, y);
                    m = m.max((f[0] * f[0] + f[1] * f[1]).sqrt());
                }
            }
        }
        m
    });
    let norm = if max_rad > 1e-9 { max_rad } else { 1.0 };

    let mut out = Image::new(w, h, 3, 0.0).expect("field dims are valid image dims");
    for y in 0..h {
        for x in 0..w {
            if !flow.is_valid(x, y) {
                continue;
            }
            let f = flow.get(x, y);
            let (u, v) = (f[0] / norm, f[1] / norm);
            let rad = (u * u + v * v).sqrt();
            let angle = (-v).atan2(-u) / std::f32::consts::PI;
            let fk = (angle + 1.0) / 2.0 * (WHEEL_LEN as f32 - 1.0);
            let k0 = (fk.floor() as usize).min(WHEEL_LEN - 1);
            let k1 = (k0 + 1) % WHEEL_LEN;
            let frac = fk - k0 as f32;
            for c in 0..3 {
                let col = (1.0 - frac) * wheel[k0][c] + frac * wheel[k1][c];
                let shaded = if rad <= 1.0 {
                    1.0 - rad * (1.0 - col)
                } else {
                    col * 0.75
                };
                out.set(x, y, c, shaded);
            }
        }
    }
    out
}

/// Renders a scale-change field with a diverging map around 1: values below
/// 1 (approaching) blend white→red, above 1 (receding) white→blue, with
/// full strength at `1 ± span`.  Invalid cells are black.
pub fn tau_to_color(tau: &ScalarField2D, span: f32) -> Image {
    let (w, h) = (tau.width(), tau.height());
    let span = if span > 1e-6 { span } else { 0.5 };
    let mut out = Image::new(w, h, 3, 0.0).expect("field dims are valid image dims");
    for y in 0..h {
        for x in 0..w {
            if !tau.is_valid(x, y) {
                continue;
            }
            let d = ((tau.get(x, y) - 1.0) / span).clamp(-1.0, 1.0);
            let (r, g, b) = if d < 0.0 {
                (1.0, 1.0 + d, 1.0 + d)
            } else {
                (1.0 - d, 1.0 - d, 1.0)
            };
            out.set(x, y, 0, r);
            out.set(x, y, 1, g);
            out.set(x, y, 2, b);
        }
    }
    out
}

/// Renders time-to-collision with a heat ramp: imminent collisions
/// (`ttc → 0`) red, through yellow and green to blue at `horizon` seconds
/// and beyond.  Invalid cells (no collision) are black.
pub fn ttc_to_color(ttc: &ScalarField2D, horizon: f32) -> Image {
    let (w, h) = (ttc.width(), ttc.height());
    let horizon = if horizon > 1e-6 { horizon } else { 1.0 };
    let mut out = Image::new(w, h, 3, 0.0).expect("field dims are valid image dims");
    for y in 0..h {
        for x in 0..w {
            if !ttc.is_valid(x, y) {
                continue;
            }
            let t = (ttc.get(x, y) / horizon).clamp(0.0, 1.0);
            // Hue 0° (red) to 240° (blue) at full saturation.
            let hue = t * 240.0;
            let sector = (hue / 60.0).floor();
            let frac = hue / 60.0 - sector;
            let (r, g, b) = match sector as i32 {
                0 => (1.0, frac, 0.0),
                1 => (1.0 - frac, 1.0, 0.0),
                2 => (0.0, 1.0, frac),
                3 => (0.0, 1.0 - frac, 1.0),
                _ => (0.0, 0.0, 1.0),
            };
            out.set(x, y, 0, r);
            out.set(x, y, 1, g);
            out.set(x, y, 2, b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_is_bounded_and_closes() {
        let wheel = colorwheel();
        assert_eq!(wheel.len(), WHEEL_LEN);
        for c in &wheel {
            for &v in c {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        // First entry is pure red; the wheel returns near red at the end.
        assert_eq!(wheel[0], [1.0, 0.0, 0.0]);
        let last = wheel[WHEEL_LEN - 1];
        assert_eq!(last[0], 1.0);
        assert!(last[2] > 0.0 && last[2] < 0.4);
    }

    #[test]
    fn zero_flow_is_white_and_invalid_black() {
        let mut flow = VectorField2D::new(3, 1, [0.0, 0.0]).unwrap();
        flow.set(1, 0, [5.0, 0.0]);
        flow.set_valid(2, 0, false);
        let img = flow_to_color(&flow, None);
        for c in 0..3 {
            assert_eq!(img.get(0, 0, c), 1.0, "zero flow must be white");
            assert_eq!(img.get(2, 0, c), 0.0, "invalid must be black");
        }
        // Full-magnitude flow is saturated: some channel well below 1.
        let min: f32 = (0..3).map(|c| img.get(1, 0, c)).fold(1.0, f32::min);
        assert!(min < 0.3, "saturated color, got min channel {min}");
    }

    #[test]
    fn opposite_directions_get_different_hues() {
        let mut flow = VectorField2D::new(4, 1, [0.0, 0.0]).unwrap();
        flow.set(0, 0, [10.0, 0.0]);
        flow.set(1, 0, [-10.0, 0.0]);
        flow.set(2, 0, [0.0, 10.0]);
        flow.set(3, 0, [0.0, -10.0]);
        let img = flow_to_color(&flow, Some(10.0));
        let px = |x: usize| [img.get(x, 0, 0), img.get(x, 0, 1), img.get(x, 0, 2)];
        let dist = |a: [f32; 3], b: [f32; 3]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f32>()
        };
        assert!(dist(px(0), px(1)) > 0.5);
        assert!(dist(px(2), px(3)) > 0.5);
        assert!(dist(px(0), px(2)) > 0.5);
    }

    #[test]
    fn magnitude_override_fixes_normalization() {
        let flow = VectorField2D::new(2, 1, [5.0, 0.0]).unwrap();
        let auto = flow_to_color(&flow, None); // 5 is the max -> fully saturated
        let scaled = flow_to_color(&flow, Some(10.0)); // half saturation
        let sat_auto: f32 = 1.0 - (0..3).map(|c| auto.get(0, 0, c)).fold(1.0, f32::min);
        let sat_scaled: f32 = 1.0 - (0..3).map(|c| scaled.get(0, 0, c)).fold(1.0, f32::min);
        assert!(sat_auto > sat_scaled + 0.2);
    }

    #[test]
    fn tau_map_diverges_around_unity() {
        let mut tau = ScalarField2D::new(4, 1, 1.0).unwrap();
        tau.set(1, 0, 0.5);
        tau.set(2, 0, 1.5);
        tau.set_valid(3, 0, false);
        let img = tau_to_color(&tau, 0.5);
        for c in 0..3 {
            assert_eq!(img.get(0, 0, c), 1.0, "unit scale change is white");
            assert_eq!(img.get(3, 0, c), 0.0);
        }
        assert_eq!(img.get(1, 0, 0), 1.0); // approaching: red channel full
        assert_eq!(img.get(1, 0, 2), 0.0);
        assert_eq!(img.get(2, 0, 2), 1.0); // receding: blue channel full
        assert_eq!(img.get(2, 0, 0), 0.0);
    }

    #[test]
    fn ttc_heat_ramp_orders_urgency() {
        let mut ttc = ScalarField2D::new(3, 1, 0.0).unwrap();
        ttc.set(0, 0, 0.01);
        ttc.set(1, 0, 5.0);
        ttc.set_valid(2, 0, false);
        let img = ttc_to_color(&ttc, 5.0);
        assert!(img.get(0, 0, 0) > 0.9 && img.get(0, 0, 2) < 0.1, "imminent is red");
        assert!(img.get(1, 0, 2) > 0.9 && img.get(1, 0, 0) < 0.1, "distant is blue");
        assert_eq!(img.get(2, 0, 0), 0.0);
    }
}
