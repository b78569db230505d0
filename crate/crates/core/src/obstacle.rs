//! Obstacle segmentation from flow residuals, the obstacle plane, and the
//! repulsive force derived from its smoothed gradient.

use crate::egomotion::{FoeEstimate, TtcMap};
use crate::error::{Error, Result};
use crate::features::FeaturePoint;
use crate::flow::{FlowField, FlowVector};
use crate::imgproc::{
    gaussian_blur, gaussian_blur_columns, otsu_split, spatial_gradient, BinaryImage, Raster, DEFAULT_BINS,
};

/// Background ego-motion model whose residuals expose obstacle flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    /// `v = k (p - F)`: one expansion rate shared by every point.
    Radial,
    /// `v = (a + b (y - F_y)) (p - F) + (r, 0)`: expansion rate linear in the
    /// image row, as for a flat ground plane seen by a forward-moving camera,
    /// plus a uniform horizontal shift absorbing small yaw rotation.
    GroundPlane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub splat_radius: f64,
    pub model: MotionModel,
    /// Residuals at or below this (pixels/frame) are never obstacles.
    pub min_residual: f64,
    /// Vectors whose first-fit residual exceeds this are treated as tracking
    /// failures and ignored, so a single gross mismatch cannot dominate the split.
    pub max_residual: f64,
    /// A vector is only an obstacle if its residual also exceeds this multiple
    /// of the model flow magnitude. Tracking failures on texture-poor ground
    /// tend to lose about the whole model flow, while obstacle flow departs
    /// most where the ground model predicts little motion. Zero disables it.
    pub relative_residual: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            splat_radius: 12.0,
            model: MotionModel::Radial,
            min_residual: 0.15,
            max_residual: f64::INFINITY,
            relative_residual: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstaclePoint {
    pub point: FeaturePoint,
    /// Distance between measured and model flow, pixels/frame.
    pub residual: f64,
    /// Time to contact in seconds, when the point has one.
    pub ttc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMask {
    pub plane: BinaryImage,
    pub points: Vec<ObstaclePoint>,
}

impl ObstacleMask {
    pub fn empty(width: usize, height: usize) -> Self {
        ObstacleMask {
            plane: BinaryImage::new(width, height),
            points: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fitted background motion.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Fit {
    a: f64,
    b: f64,
    r: f64,
}

impl Fit {
    fn predict(&self, foe: &FoeEstimate, x: f64, y: f64) -> (f64, f64) {
        let k = self.a + self.b * (y - foe.y_foe);
        (k * (x - foe.x_foe) + self.r, k * (y - foe.y_foe))
    }

    fn predicted_speed(&self, foe: &FoeEstimate, v: &FlowVector) -> f64 {
        let (px, py) = self.predict(foe, v.origin.x, v.origin.y);
        px.hypot(py)
    }

    fn residual(&self, foe: &FoeEstimate, v: &FlowVector) -> f64 {
        let (px, py) = self.predict(foe, v.origin.x, v.origin.y);
        (v.vx - px).hypot(v.vy - py)
    }
}

fn fit_model(model: MotionModel, foe: &FoeEstimate, vectors: &[&FlowVector]) -> Fit {
    let radial = || {
        let (mut num, mut den) = (0.0, 0.0);
        for v in vectors {
            let (dx, dy) = (v.origin.x - foe.x_foe, v.origin.y - foe.y_foe);
            num += v.vx * dx + v.vy * dy;
            den += dx * dx + dy * dy;
        }
        Fit {
            a: if den > 0.0 { num / den } else { 0.0 },
            b: 0.0,
            r: 0.0,
        }
    };
    if model == MotionModel::Radial || vectors.len() < 3 {
        return radial();
    }
    // normal equations for theta = (a, b, r); each vector gives two rows
    let mut n = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    let mut accumulate = |row: [f64; 3], target: f64| {
        for i in 0..3 {
            for j in 0..3 {
                n[i][j] += row[i] * row[j];
            }
            rhs[i] += row[i] * target;
        }
    };
    for v in vectors {
        let (dx, dy) = (v.origin.x - foe.x_foe, v.origin.y - foe.y_foe);
        accumulate([dx, dy * dx, 1.0], v.vx);
        accumulate([dy, dy * dy, 0.0], v.vy);
    }
    match solve3(n, rhs) {
        Some([a, b, r]) => Fit { a, b, r },
        None => radial(),
    }
}

/// Gaussian elimination with partial pivoting; `None` when near-singular.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Flags valid vectors whose flow departs from the background motion model.
///
/// The model is fitted to all valid vectors, Otsu splits the residuals, the
/// model is refitted on the lower class, and a second Otsu split over the new
/// residuals decides. A degenerate residual distribution, or one whose upper
/// class never exceeds `min_residual`, yields an empty mask.
pub fn segment_obstacles(
    flow: &FlowField,
    foe: &FoeEstimate,
    ttc: &TtcMap,
    width: usize,
    height: usize,
    params: &SegmentParams,
) -> Result<ObstacleMask> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("obstacle plane needs positive dimensions"));
    }
    if !(params.splat_radius >= 0.0)
        || !(params.min_residual >= 0.0)
        || !(params.max_residual > params.min_residual)
        || !(params.relative_residual >= 0.0)
    {
        return Err(Error::invalid(
            "splat radius and residual floor must be non-negative, residual cap above the floor",
        ));
    }
    let mut valid: Vec<&FlowVector> = flow.valid().collect();
    if params.max_residual.is_finite() && valid.len() >= 2 {
        let first = fit_model(params.model, foe, &valid);
        valid.retain(|v| first.residual(foe, v) <= params.max_residual);
    }
    let mut mask = ObstacleMask::empty(width, height);
    if valid.len() < 2 {
        return Ok(mask);
    }
    let split_above = |fit: &Fit| -> Option<(Vec<f64>, Vec<bool>)> {
        let residuals: Vec<f64> = valid.iter().map(|v| fit.residual(foe, v)).collect();
        let split = otsu_split(&residuals, DEFAULT_BINS).ok()?;
        let above = residuals
            .iter()
            .zip(&valid)
            .map(|(&r, v)| {
                split.is_above(r)
                    && r > params.min_residual
                    && r > params.relative_residual * fit.predicted_speed(foe, v)
            })
            .collect();
        Some((residuals, above))
    };

    let first = fit_model(params.model, foe, &valid);
    let Some((_, above)) = split_above(&first) else {
        return Ok(mask);
    };
    let inliers: Vec<&FlowVector> = valid.iter().zip(&above).filter(|(_, &a)| !a).map(|(v, _)| *v).collect();
    let refit = if inliers.len() >= 2 && inliers.len() < valid.len() {
        fit_model(params.model, foe, &inliers)
    } else {
        first
    };
    let Some((residuals, above)) = split_above(&refit) else {
        return Ok(mask);
    };
    for ((v, r), a) in valid.iter().zip(residuals).zip(above) {
        if !a {
            continue;
        }
        mask.points.push(ObstaclePoint {
            point: v.origin,
            residual: r,
            ttc: ttc.at(v.origin.x, v.origin.y),
        });
        mask.plane.fill_disk(v.origin.x, v.origin.y, params.splat_radius);
    }
    Ok(mask)
}

/// Per-pixel gradient of the smoothed obstacle plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Raster,
    pub gy: Raster,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        GradientField {
            gx: Raster::zeros(width, height),
            gy: Raster::zeros(width, height),
        }
    }
}

/// Default smoothing scale: half the larger image dimension.
pub fn default_sigma(width: usize, height: usize) -> f64 {
    0.5 * width.max(height) as f64
}

/// `g = grad(G_sigma * O)`, the kernel truncated at `ceil(3 sigma)`.
pub fn obstacle_gradient(mask: &ObstacleMask, sigma: f64) -> Result<GradientField> {
    let plane = &mask.plane;
    let (w, h) = (plane.width(), plane.height());
    if plane.is_empty() {
        return Ok(GradientField::zeros(w, h));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let smooth = gaussian_blur(&plane.to_raster(), sigma, radius)?;
    if w < 3 || h < 3 {
        return Ok(GradientField::zeros(w, h));
    }
    let (gx, gy) = spatial_gradient(&smooth)?;
    Ok(GradientField { gx, gy })
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    /// Full-width band covering the lowest `fraction` of the frame.
    pub fn lower_fraction(width: usize, height: usize, fraction: f64) -> Self {
        let rows = (fraction.clamp(0.0, 1.0) * height as f64).round() as usize;
        Roi {
            x0: 0,
            y0: height - rows,
            x1: width,
            y1: height,
        }
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }
}

/// How obstacle time to contact enters the longitudinal term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtcWeighting {
    /// `sum 1 / max(ttc, ttc_min)`: imminent obstacles dominate.
    Inverse,
    /// `sum ttc`, the literal form.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepulsiveParams {
    pub gamma: f64,
    pub ttc_min: f64,
    pub weighting: TtcWeighting,
}

impl Default for RepulsiveParams {
    fn default() -> Self {
        RepulsiveParams {
            gamma: 1.0,
            ttc_min: 0.5,
            weighting: TtcWeighting::Inverse,
        }
    }
}

/// Image-frame obstacle force: positive `f_x` steers toward image +x.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RepulsiveForce {
    pub f_x: f64,
    /// Longitudinal urgency; positive values demand deceleration.
    pub f_y: f64,
}

/// Mean obstacle-plane slope over the ROI and summed contact urgency.
///
/// The smoothed plane rises toward obstacles, so the lateral push is the
/// negated mean slope: away from the obstacle mass.
pub fn repulsive_force(
    mask: &ObstacleMask,
    g: &GradientField,
    roi: &Roi,
    params: &RepulsiveParams,
) -> Result<RepulsiveForce> {
    check_force_inputs(roi, g.gx.width(), g.gx.height(), params)?;
    if mask.is_empty() {
        return Ok(RepulsiveForce::default());
    }
    let slope: f64 = (roi.y0..roi.y1)
        .map(|y| g.gx.row(y)[roi.x0..roi.x1].iter().sum::<f64>())
        .sum();
    Ok(assemble_force(mask, slope, roi, params))
}

/// Same value as `repulsive_force(mask, &obstacle_gradient(mask, sigma)?, roi, params)`
/// without materializing the gradient field.
///
/// With central differences inside and one-sided differences at the borders,
/// a row sum of the horizontal gradient telescopes to a few samples of the
/// smoothed plane, so only those columns are smoothed.
pub fn obstacle_force(mask: &ObstacleMask, sigma: f64, roi: &Roi, params: &RepulsiveParams) -> Result<RepulsiveForce> {
    let plane = &mask.plane;
    let (w, h) = (plane.width(), plane.height());
    check_force_inputs(roi, w, h, params)?;
    if mask.is_empty() {
        return Ok(RepulsiveForce::default());
    }
    if plane.is_empty() || w < 3 || h < 3 {
        return Ok(assemble_force(mask, 0.0, roi, params));
    }
    // border terms
    let mut columns = Vec::new();
    let left_border = roi.x0 == 0;
    let right_border = roi.x1 == w;
    let a = roi.x0.max(1);
    let b = roi.x1.min(w - 1) - 1;
    if left_border {
        columns.extend([0, 1]);
    }
    if right_border {
        columns.extend([w - 2, w - 1]);
    }
    let interior = a <= b;
    if interior {
        columns.extend([a - 1, a, b, b + 1]);
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let blurred = gaussian_blur_columns(&plane.to_raster(), sigma, radius, &columns)?;
    let col = |c: usize| &blurred[columns.iter().position(|&k| k == c).expect("requested column")];
    let mut slope = 0.0;
    for y in roi.y0..roi.y1 {
        if left_border {
            slope += col(1)[y] - col(0)[y];
        }
        if right_border {
            slope += col(w - 1)[y] - col(w - 2)[y];
        }
        if interior {
            slope += 0.5 * (col(b + 1)[y] + col(b)[y] - col(a)[y] - col(a - 1)[y]);
        }
    }
    Ok(assemble_force(mask, slope, roi, params))
}

fn check_force_inputs(roi: &Roi, width: usize, height: usize, params: &RepulsiveParams) -> Result<()> {
    if roi.area() == 0 || roi.x1 > width || roi.y1 > height {
        return Err(Error::invalid(format!("ROI {roi:?} is empty or outside the frame")));
    }
    if !(params.gamma > 0.0) || !(params.ttc_min > 0.0) {
        return Err(Error::invalid("gamma and ttc_min must be positive"));
    }
    Ok(())
}

fn assemble_force(mask: &ObstacleMask, slope: f64, roi: &Roi, params: &RepulsiveParams) -> RepulsiveForce {
    let scale = params.gamma / roi.area() as f64;
    let urgency: f64 = mask
        .points
        .iter()
        .filter(|p| roi.contains(p.point.x, p.point.y))
        .filter_map(|p| p.ttc)
        .map(|t| match params.weighting {
            TtcWeighting::Inverse => 1.0 / t.max(params.ttc_min),
            TtcWeighting::Raw => t,
        })
        .sum();
    RepulsiveForce {
        f_x: -scale * slope,
        f_y: scale * urgency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egomotion::{compute_ttc, tests::radial_field};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const W: usize = 320;
    const H: usize = 240;

    fn foe() -> FoeEstimate {
        FoeEstimate::at(160.0, 90.0)
    }

    fn params(model: MotionModel) -> SegmentParams {
        SegmentParams {
            model,
            ..SegmentParams::default()
        }
    }

    fn mask_with_disks(centers: &[(f64, f64)], radius: f64) -> ObstacleMask {
        let mut mask = ObstacleMask::empty(W, H);
        for &(x, y) in centers {
            mask.plane.fill_disk(x, y, radius);
            mask.points.push(ObstaclePoint {
                point: FeaturePoint::new(x, y),
                residual: 1.0,
                ttc: Some(2.0),
            });
        }
        mask
    }

    #[test]
    fn column_force_equals_full_gradient_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = RepulsiveParams {
            gamma: 1e6,
            ..RepulsiveParams::default()
        };
        for _ in 0..20 {
            let centers: Vec<(f64, f64)> = (0..rng.gen_range(1..6))
                .map(|_| (rng.gen_range(0.0..W as f64), rng.gen_range(0.0..H as f64)))
                .collect();
            let mask = mask_with_disks(&centers, 12.0);
            let x0 = rng.gen_range(0..W / 2);
            let roi = [
                Roi::lower_fraction(W, H, 0.6),
                Roi {
                    x0,
                    y0: rng.gen_range(0..H / 2),
                    x1: rng.gen_range(x0 + 1..=W),
                    y1: H,
                },
            ];
            for sigma in [8.0, default_sigma(W, H)] {
                let g = obstacle_gradient(&mask, sigma).unwrap();
                for r in &roi {
                    let full = repulsive_force(&mask, &g, r, &p).unwrap();
                    let fast = obstacle_force(&mask, sigma, r, &p).unwrap();
                    assert!(
                        (full.f_x - fast.f_x).abs() <= 1e-9 * full.f_x.abs().max(1.0),
                        "{full:?} {fast:?} {r:?}"
                    );
                    assert_eq!(full.f_y, fast.f_y);
                }
            }
        }
    }

    #[test]
    fn exact_radial_field_has_no_obstacles() {
        let field = radial_field(1, 100, 0.05, (160.0, 90.0), 0.0);
        for model in [MotionModel::Radial, MotionModel::GroundPlane] {
            let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &params(model)).unwrap();
            assert!(mask.is_empty() && mask.plane.is_empty(), "{model:?}");
        }
    }

    #[test]
    fn planted_lateral_outliers_are_exactly_flagged() {
        for model in [MotionModel::Radial, MotionModel::GroundPlane] {
            let mut field = radial_field(2, 100, 0.05, (160.0, 90.0), 0.0);
            for v in field.vectors.iter_mut().take(10) {
                v.vx += 3.0;
            }
            let ttc = compute_ttc(&field, &foe(), 10.0, 100.0);
            let mask = segment_obstacles(&field, &foe(), &ttc, W, H, &params(model)).unwrap();
            let flagged: Vec<_> = mask.points.iter().map(|p| (p.point.x, p.point.y)).collect();
            let planted: Vec<_> = field.vectors[..10].iter().map(|v| (v.origin.x, v.origin.y)).collect();
            assert_eq!(flagged, planted, "{model:?}");
        }
    }

    #[test]
    fn plane_is_union_of_splats() {
        let mut field = radial_field(3, 120, 0.05, (160.0, 90.0), 0.0);
        // two clusters of planted outliers
        let centers = [(60.0, 180.0), (250.0, 200.0)];
        for (i, v) in field.vectors.iter_mut().take(12).enumerate() {
            let (cx, cy) = centers[i % 2];
            let (x, y) = (cx + (i / 2) as f64 * 3.0, cy + (i / 2) as f64 * 2.0);
            v.origin = FeaturePoint::new(x, y);
            v.vx = 0.05 * (x - 160.0) + 4.0;
            v.vy = 0.05 * (y - 90.0);
        }
        let p = SegmentParams::default();
        let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &p).unwrap();
        assert_eq!(mask.points.len(), 12);
        for y in 0..H {
            for x in 0..W {
                let near = mask
                    .points
                    .iter()
                    .any(|o| (o.point.x - x as f64).hypot(o.point.y - y as f64) <= p.splat_radius);
                assert_eq!(mask.plane.get(x, y), near, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn residual_floor_suppresses_noise_only_splits() {
        let mut field = radial_field(4, 100, 0.05, (160.0, 90.0), 0.0);
        for v in field.vectors.iter_mut().take(10) {
            v.vx += 0.05;
        }
        let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &SegmentParams::default()).unwrap();
        assert!(mask.is_empty());
    }

    #[test]
    fn residual_cap_drops_wild_vectors_before_the_split() {
        let mut field = radial_field(5, 100, 0.05, (160.0, 90.0), 0.0);
        for v in field.vectors.iter_mut().take(10) {
            v.vx += 3.0;
        }
        for v in field.vectors.iter_mut().skip(10).take(3) {
            v.vx += 50.0;
        }
        let planted: Vec<_> = field.vectors[..10].iter().map(|v| (v.origin.x, v.origin.y)).collect();
        let wild: Vec<_> = field.vectors[10..13].iter().map(|v| (v.origin.x, v.origin.y)).collect();
        let flagged = |max_residual: f64| -> Vec<(f64, f64)> {
            let p = SegmentParams {
                max_residual,
                ..params(MotionModel::Radial)
            };
            let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &p).unwrap();
            mask.points.iter().map(|o| (o.point.x, o.point.y)).collect()
        };
        assert_eq!(flagged(12.0), planted);
        // without the cap the wild vectors dominate the split
        let uncapped = flagged(f64::INFINITY);
        assert!(wild.iter().all(|w| uncapped.contains(w)), "{uncapped:?}");
        let bad = SegmentParams {
            max_residual: 0.1,
            ..params(MotionModel::Radial)
        };
        assert!(segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &bad).is_err());
    }

    #[test]
    fn relative_test_ignores_outliers_small_against_their_own_flow() {
        let (fx, fy) = (160.0, 90.0);
        let mut field = radial_field(6, 100, 0.05, (fx, fy), 0.0);
        // a lateral error of 3 px against predicted speeds of 1 px (20 px
        // from the FOE) and 5 px (100 px from it)
        for (i, v) in field.vectors.iter_mut().take(10).enumerate() {
            let angle = i as f64 * 0.6;
            let dist = if i < 5 { 20.0 } else { 100.0 };
            let (x, y) = (fx + dist * angle.cos(), fy + dist * angle.sin());
            v.origin = FeaturePoint::new(x, y);
            v.vx = 0.05 * (x - fx) + 3.0;
            v.vy = 0.05 * (y - fy);
        }
        let near: Vec<_> = field.vectors[..5].iter().map(|v| (v.origin.x, v.origin.y)).collect();
        let all: Vec<_> = field.vectors[..10].iter().map(|v| (v.origin.x, v.origin.y)).collect();
        let flagged = |relative_residual: f64| -> Vec<(f64, f64)> {
            let p = SegmentParams {
                relative_residual,
                ..params(MotionModel::Radial)
            };
            let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &p).unwrap();
            mask.points.iter().map(|o| (o.point.x, o.point.y)).collect()
        };
        assert_eq!(flagged(0.0), all);
        // 3 > 1.5 * 1 near the FOE, but 3 < 1.5 * 5 further out
        assert_eq!(flagged(1.5), near);
    }

    #[test]
    fn ground_plane_model_absorbs_row_dependent_expansion() {
        // inverse depth of a flat ground grows linearly below the horizon row
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = foe();
        let mut vectors = Vec::new();
        for i in 0..150 {
            let (x, y) = (rng.gen_range(0.0..320.0), rng.gen_range(100.0..240.0));
            let k = 0.0004 * (y - f.y_foe);
            let (mut vx, mut vy) = (k * (x - f.x_foe), k * (y - f.y_foe));
            if i < 8 {
                // a fronto-parallel face, nearer than the ground at its rows
                vx *= 3.0;
                vy *= 3.0;
            }
            vectors.push(FlowVector {
                origin: FeaturePoint::new(x, y),
                vx,
                vy,
                valid: true,
            });
        }
        let field = FlowField::new(vectors, 1.0 / 60.0);
        let mask = segment_obstacles(&field, &f, &TtcMap::default(), W, H, &params(MotionModel::GroundPlane)).unwrap();
        let face = &field.vectors[..8];
        let on_face = |p: &ObstaclePoint| face.iter().any(|v| v.origin == p.point);
        assert!(
            mask.points.iter().all(on_face),
            "ground point flagged: {:?}",
            mask.points
        );
        assert!(mask.points.len() >= 6, "{:?}", mask.points);
    }

    #[test]
    fn empty_mask_gives_zero_gradient_and_force() {
        let mask = ObstacleMask::empty(W, H);
        let g = obstacle_gradient(&mask, default_sigma(W, H)).unwrap();
        assert!(g.gx.data().iter().chain(g.gy.data()).all(|&v| v == 0.0));
        let f = repulsive_force(&mask, &g, &Roi::lower_fraction(W, H, 0.6), &RepulsiveParams::default()).unwrap();
        assert_eq!(f, RepulsiveForce::default());
    }

    #[test]
    fn gradient_points_toward_blob_center() {
        let mask = mask_with_disks(&[(160.0, 120.0)], 12.0);
        let g = obstacle_gradient(&mask, 10.0).unwrap();
        // smoothed plane rises toward the blob, so the slope points inward
        assert!(g.gx.get(185, 120) < 0.0);
        assert!(g.gx.get(135, 120) > 0.0);
        assert!(g.gy.get(160, 145) < 0.0);
        assert!(g.gy.get(160, 95) > 0.0);
        assert!(g.gx.get(185, 120).abs() > 1e-4);
    }

    #[test]
    fn full_plane_has_flat_interior() {
        let mut mask = ObstacleMask::empty(64, 48);
        mask.plane = BinaryImage::from_mask(64, 48, vec![true; 64 * 48]).unwrap();
        let g = obstacle_gradient(&mask, 5.0).unwrap();
        assert!(g.gx.data().iter().chain(g.gy.data()).all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn left_obstacle_pushes_right_and_gamma_is_linear() {
        let mask = mask_with_disks(&[(80.0, 170.0), (90.0, 180.0)], 12.0);
        let g = obstacle_gradient(&mask, default_sigma(W, H)).unwrap();
        let roi = Roi::lower_fraction(W, H, 0.6);
        let p1 = RepulsiveParams::default();
        let f1 = repulsive_force(&mask, &g, &roi, &p1).unwrap();
        assert!(f1.f_x > 0.0, "{f1:?}");
        assert!(f1.f_y > 0.0);
        let p2 = RepulsiveParams { gamma: 2.0, ..p1 };
        let f2 = repulsive_force(&mask, &g, &roi, &p2).unwrap();
        assert_eq!(f2.f_x, 2.0 * f1.f_x);
        assert_eq!(f2.f_y, 2.0 * f1.f_y);
        let mirrored = mask_with_disks(&[(239.0, 170.0), (229.0, 180.0)], 12.0);
        let gm = obstacle_gradient(&mirrored, default_sigma(W, H)).unwrap();
        assert!(repulsive_force(&mirrored, &gm, &roi, &p1).unwrap().f_x < 0.0);
    }

    #[test]
    fn urgency_weighting_modes() {
        let mut mask = mask_with_disks(&[(100.0, 200.0), (200.0, 200.0)], 5.0);
        mask.points[0].ttc = Some(0.25);
        mask.points[1].ttc = Some(4.0);
        let g = GradientField::zeros(W, H);
        let roi = Roi::lower_fraction(W, H, 0.6);
        let area = roi.area() as f64;
        let inv = repulsive_force(&mask, &g, &roi, &RepulsiveParams::default()).unwrap();
        assert!((inv.f_y - (2.0 + 0.25) / area).abs() < 1e-15);
        let raw = RepulsiveParams {
            weighting: TtcWeighting::Raw,
            ..RepulsiveParams::default()
        };
        let raw = repulsive_force(&mask, &g, &roi, &raw).unwrap();
        assert!((raw.f_y - 4.25 / area).abs() < 1e-15);
    }

    #[test]
    fn roi_geometry() {
        let roi = Roi::lower_fraction(320, 240, 0.6);
        assert_eq!(
            roi,
            Roi {
                x0: 0,
                y0: 96,
                x1: 320,
                y1: 240
            }
        );
        assert_eq!(roi.area(), 320 * 144);
        let bad = Roi {
            x0: 0,
            y0: 0,
            x1: 400,
            y1: 10,
        };
        let mask = ObstacleMask::empty(W, H);
        assert!(repulsive_force(&mask, &GradientField::zeros(W, H), &bad, &RepulsiveParams::default()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn interior_gradient_sums_to_zero(cx in 60.0f64..260.0, cy in 60.0f64..180.0, r in 2.0f64..15.0) {
            let mask = mask_with_disks(&[(cx, cy)], r);
            let g = obstacle_gradient(&mask, 4.0).unwrap();
            proptest::prop_assert!(g.gx.sum().abs() < 1e-6);
            proptest::prop_assert!(g.gy.sum().abs() < 1e-6);
        }
    }

    #[test]
    fn planted_outlier_recall_and_false_positives() {
        // noise amplitude a, outliers displaced by at least 3a
        let (mut hits, mut planted, mut false_pos, mut clean) = (0, 0, 0, 0);
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let mut field = radial_field(seed, 100, 0.05, (160.0, 90.0), 0.0);
            let amp = 0.1;
            for v in &mut field.vectors {
                v.vx += amp * rng.gen_range(-1.0..1.0);
                v.vy += amp * rng.gen_range(-1.0..1.0);
            }
            let n_out = rng.gen_range(5..15);
            for v in field.vectors.iter_mut().take(n_out) {
                let mag = rng.gen_range(3.0..6.0) * amp * std::f64::consts::SQRT_2;
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                v.vx += mag * angle.cos();
                v.vy += mag * angle.sin();
            }
            let mask = segment_obstacles(&field, &foe(), &TtcMap::default(), W, H, &SegmentParams::default()).unwrap();
            let is_out = |x: f64, y: f64| {
                field.vectors[..n_out]
                    .iter()
                    .any(|v| v.origin.x == x && v.origin.y == y)
            };
            let flagged_out = mask.points.iter().filter(|p| is_out(p.point.x, p.point.y)).count();
            hits += flagged_out;
            planted += n_out;
            false_pos += mask.points.len() - flagged_out;
            clean += 100 - n_out;
        }
        let recall = hits as f64 / planted as f64;
        let fpr = false_pos as f64 / clean as f64;
        assert!(recall >= 0.9, "recall {recall}");
        assert!(fpr <= 0.05, "false-positive rate {fpr}");
    }
}
