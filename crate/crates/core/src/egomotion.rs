//! Focus of expansion by linear least squares, and per-feature time to contact.
//!
//! Under pure forward translation every flow vector lies on a line through the
//! focus of expansion F, so `v_y (F_x - x) - v_x (F_y - y) = 0`. Each usable
//! vector contributes the row `[v_y, -v_x] . F = x v_y - y v_x`.

use crate::error::{Error, Result};
use crate::features::FeaturePoint;
use crate::flow::FlowField;

pub const MIN_CONSTRAINTS: usize = 8;
pub const MAX_CONDITION: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoeParams {
    /// Vectors slower than this (pixels/frame) carry no direction.
    pub min_speed: f64,
    pub exclusion_radius: f64,
    /// Upper clamp for time to contact, seconds.
    pub ttc_max: f64,
    /// Weight kept on the previous estimate when smoothing across frames.
    pub ema: f64,
}

impl Default for FoeParams {
    fn default() -> Self {
        FoeParams {
            min_speed: 0.5,
            exclusion_radius: 10.0,
            ttc_max: 100.0,
            ema: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoeEstimate {
    pub x_foe: f64,
    pub y_foe: f64,
    /// Ratio of the extreme eigenvalues of the 2x2 normal matrix.
    pub condition: f64,
    pub n_constraints: usize,
}

impl FoeEstimate {
    /// An estimate at a known location, e.g. the principal point before any flow.
    pub fn at(x_foe: f64, y_foe: f64) -> Self {
        FoeEstimate {
            x_foe,
            y_foe,
            condition: 1.0,
            n_constraints: 0,
        }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (x - self.x_foe).hypot(y - self.y_foe)
    }
}

/// Least-squares FOE from all valid vectors with `|v| >= min_speed`.
///
/// Each row is scaled to a unit direction so its residual is the distance from
/// the candidate FOE to the flow line. A second pass reweights rows by
/// `1 / (d^2 + r0^2)`, `d` being the point's distance to the first estimate:
/// angular flow noise displaces a flow line in proportion to that distance.
pub fn estimate_foe(flow: &FlowField, min_speed: f64) -> Result<FoeEstimate> {
    let rows: Vec<Row> = flow
        .valid()
        .filter(|v| v.magnitude() >= min_speed && v.magnitude() > 0.0)
        .map(|v| {
            let m = v.magnitude();
            let (a0, a1) = (v.vy / m, -v.vx / m);
            Row {
                a: [a0, a1],
                b: v.origin.x * a0 + v.origin.y * a1,
                at: (v.origin.x, v.origin.y),
            }
        })
        .collect();
    if rows.len() < MIN_CONSTRAINTS {
        return Err(Error::InsufficientFlow {
            usable: rows.len(),
            required: MIN_CONSTRAINTS,
        });
    }
    let first = solve_weighted(&rows, |_| 1.0)?;
    let r0_sq = REWEIGHT_RADIUS * REWEIGHT_RADIUS;
    let refined = solve_weighted(&rows, |(x, y)| {
        1.0 / ((x - first.x_foe).powi(2) + (y - first.y_foe).powi(2) + r0_sq)
    })?;
    Ok(FoeEstimate {
        condition: first.condition,
        n_constraints: rows.len(),
        ..refined
    })
}

/// Softening radius of the second-pass weights, pixels.
const REWEIGHT_RADIUS: f64 = 10.0;

/// One flow constraint `a . F = b`, with the feature position it came from.
struct Row {
    a: [f64; 2],
    b: f64,
    at: (f64, f64),
}

/// Solves the 2x2 weighted normal equations; `weight` sees each feature position.
fn solve_weighted(rows: &[Row], weight: impl Fn((f64, f64)) -> f64) -> Result<FoeEstimate> {
    let (mut n11, mut n12, mut n22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &Row { a: [a0, a1], b, at } in rows {
        let w = weight(at);
        n11 += w * a0 * a0;
        n12 += w * a0 * a1;
        n22 += w * a1 * a1;
        r1 += w * a0 * b;
        r2 += w * a1 * b;
    }
    let half_tr = 0.5 * (n11 + n22);
    let disc = (0.25 * (n11 - n22) * (n11 - n22) + n12 * n12).sqrt();
    let (hi, lo) = (half_tr + disc, half_tr - disc);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateGeometry { condition });
    }
    let det = n11 * n22 - n12 * n12;
    Ok(FoeEstimate {
        x_foe: (n22 * r1 - n12 * r2) / det,
        y_foe: (n11 * r2 - n12 * r1) / det,
        condition,
        n_constraints: rows.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtcEntry {
    pub point: FeaturePoint,
    /// Seconds, in `(0, ttc_max]`.
    pub ttc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TtcMap {
    pub entries: Vec<TtcEntry>,
}

impl TtcMap {
    /// Time to contact of the entry whose point sits exactly at `(x, y)`.
    pub fn at(&self, x: f64, y: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.point.x == x && e.point.y == y)
            .map(|e| e.ttc)
    }
}

/// Distance to the FOE over flow magnitude, in seconds via the frame interval.
///
/// Points within `exclusion_radius` of the FOE and zero-length vectors are
/// omitted; the remainder is clamped to `ttc_max`.
pub fn compute_ttc(flow: &FlowField, foe: &FoeEstimate, exclusion_radius: f64, ttc_max: f64) -> TtcMap {
    let entries = flow
        .valid()
        .filter_map(|v| {
            let dist = foe.distance_to(v.origin.x, v.origin.y);
            let speed = v.magnitude();
            if dist < exclusion_radius || !(speed > 0.0) {
                return None;
            }
            let ttc = (dist / speed * flow.frame_interval).min(ttc_max);
            (ttc.is_finite() && ttc > 0.0).then_some(TtcEntry { point: v.origin, ttc })
        })
        .collect();
    TtcMap { entries }
}

/// Exponential moving average over successive FOE positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoeSmoother {
    keep: f64,
    state: Option<FoeEstimate>,
}

impl FoeSmoother {
    /// `keep` is the weight on the previous smoothed value, in `[0, 1)`.
    pub fn new(keep: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&keep) {
            return Err(Error::invalid(format!("EMA weight {keep} outside [0, 1)")));
        }
        Ok(FoeSmoother { keep, state: None })
    }

    pub fn update(&mut self, raw: FoeEstimate) -> FoeEstimate {
        let next = match self.state {
            None => raw,
            Some(prev) => FoeEstimate {
                x_foe: self.keep * prev.x_foe + (1.0 - self.keep) * raw.x_foe,
                y_foe: self.keep * prev.y_foe + (1.0 - self.keep) * raw.y_foe,
                ..raw
            },
        };
        self.state = Some(next);
        next
    }

    pub fn current(&self) -> Option<FoeEstimate> {
        self.state
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::flow::FlowVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `v = k (p - F)` at `n` uniform points, with optional per-component noise
    /// of amplitude `noise * |v|`.
    pub(crate) fn radial_field(seed: u64, n: usize, k: f64, foe: (f64, f64), noise: f64) -> FlowField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..n)
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
                let (mut vx, mut vy) = (k * (x - foe.0), k * (y - foe.1));
                let mag = vx.hypot(vy);
                vx += noise * mag * rng.gen_range(-1.0..1.0);
                vy += noise * mag * rng.gen_range(-1.0..1.0);
                FlowVector {
                    origin: FeaturePoint::new(x, y),
                    vx,
                    vy,
                    valid: true,
                }
            })
            .collect();
        FlowField::new(vectors, 1.0)
    }

    fn vector(x: f64, y: f64, vx: f64, vy: f64) -> FlowVector {
        FlowVector {
            origin: FeaturePoint::new(x, y),
            vx,
            vy,
            valid: true,
        }
    }

    #[test]
    fn exact_radial_field() {
        let foe = estimate_foe(&radial_field(1, 100, 0.05, (160.0, 90.0), 0.0), 0.5).unwrap();
        assert!(
            (foe.x_foe - 160.0).abs() < 1e-6 && (foe.y_foe - 90.0).abs() < 1e-6,
            "{foe:?}"
        );
        assert!(foe.condition >= 1.0 && foe.condition.is_finite());
    }

    #[test]
    fn parallel_flow_is_degenerate() {
        let vectors = (0..20)
            .map(|i| vector(10.0 * i as f64, 5.0 * i as f64, 2.0, 0.0))
            .collect();
        let r = estimate_foe(&FlowField::new(vectors, 1.0), 0.5);
        assert!(matches!(r, Err(Error::DegenerateGeometry { .. })), "{r:?}");
    }

    #[test]
    fn too_few_vectors() {
        let mut field = radial_field(2, 100, 0.05, (160.0, 90.0), 0.0);
        field.vectors.truncate(7);
        assert!(matches!(
            estimate_foe(&field, 0.5),
            Err(Error::InsufficientFlow { usable: 7, required: 8 })
        ));
        // invalid and slow vectors do not count
        let mut field = radial_field(2, 20, 0.05, (160.0, 90.0), 0.0);
        for v in field.vectors.iter_mut().skip(5) {
            v.valid = false;
        }
        assert!(estimate_foe(&field, 0.5).is_err());
        assert!(estimate_foe(&radial_field(3, 50, 0.001, (160.0, 90.0), 0.0), 0.5).is_err());
    }

    #[test]
    fn scale_invariance() {
        let field = radial_field(4, 100, 0.05, (120.0, 150.0), 0.05);
        let mut scaled = field.clone();
        for v in &mut scaled.vectors {
            v.vx *= 7.3;
            v.vy *= 7.3;
        }
        let a = estimate_foe(&field, 0.0).unwrap();
        let b = estimate_foe(&scaled, 0.0).unwrap();
        assert!((a.x_foe - b.x_foe).abs() < 1e-9 && (a.y_foe - b.y_foe).abs() < 1e-9);
    }

    #[test]
    fn ttc_direct_evaluation() {
        let field = FlowField::new(vec![vector(100.0, 100.0, 5.0, 5.0)], 1.0);
        let ttc = compute_ttc(&field, &FoeEstimate::at(50.0, 50.0), 10.0, 100.0);
        assert_eq!(ttc.entries.len(), 1);
        let expected = 5000f64.sqrt() / 50f64.sqrt();
        assert!((ttc.entries[0].ttc - expected).abs() < 1e-12);
        assert!((expected - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ttc_omissions_and_clamp() {
        let field = FlowField::new(
            vec![
                vector(50.0, 50.0, 1.0, 1.0),
                vector(90.0, 50.0, 0.0, 0.0),
                vector(250.0, 50.0, 0.1, 0.0),
            ],
            0.5,
        );
        let ttc = compute_ttc(&field, &FoeEstimate::at(50.0, 50.0), 10.0, 100.0);
        assert_eq!(ttc.entries.len(), 1);
        assert_eq!(ttc.entries[0].ttc, 100.0);
    }

    #[test]
    fn ttc_uniform_for_expansion() {
        let k = 0.05;
        let field = radial_field(5, 100, k, (160.0, 90.0), 0.0);
        let ttc = compute_ttc(&field, &FoeEstimate::at(160.0, 90.0), 10.0, 100.0);
        assert!(ttc.entries.len() > 80);
        for e in &ttc.entries {
            assert!(((e.ttc - 1.0 / k) / (1.0 / k)).abs() < 1e-9, "{e:?}");
        }
    }

    #[test]
    fn smoother_blends_toward_new_values() {
        let mut s = FoeSmoother::new(0.7).unwrap();
        assert_eq!(s.update(FoeEstimate::at(100.0, 0.0)).x_foe, 100.0);
        let second = s.update(FoeEstimate::at(200.0, 10.0));
        assert!((second.x_foe - 130.0).abs() < 1e-12 && (second.y_foe - 3.0).abs() < 1e-12);
        assert!(FoeSmoother::new(1.0).is_err());
    }

    #[test]
    fn noisy_radial_within_three_pixels() {
        for seed in 0..100 {
            let foe = estimate_foe(&radial_field(seed, 100, 0.05, (160.0, 90.0), 0.1), 0.5).unwrap();
            let err = (foe.x_foe - 160.0).hypot(foe.y_foe - 90.0);
            assert!(err < 3.0, "seed {seed}: error {err}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]
        #[test]
        fn ttc_always_positive_finite(seed in 0u64..1_000_000, fx in -50.0f64..370.0, fy in -50.0f64..290.0) {
            let field = radial_field(seed, 60, 0.05, (160.0, 90.0), 0.3);
            let ttc = compute_ttc(&field, &FoeEstimate::at(fx, fy), 10.0, 100.0);
            for e in &ttc.entries {
                proptest::prop_assert!(e.ttc > 0.0 && e.ttc <= 100.0 && e.ttc.is_finite());
            }
        }
    }
}
