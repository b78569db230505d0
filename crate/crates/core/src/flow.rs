//! Pyramidal Lucas-Kanade sparse optical flow.
//!
//! Coarse-to-fine iterative solve of the 2x2 normal equations over a square
//! window, following the Bouguet formulation: the spatial gradient matrix is
//! built once per level from the previous frame, and only the temporal
//! difference against the warped next frame is recomputed per iteration.

use crate::error::{Error, Result};
use crate::features::FeaturePoint;
use crate::imgproc::{convolve, gaussian_kernel, spatial_gradient, Axis, GrayImage, Raster};

const MIN_COARSE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    /// Odd side length of the integration window, in pixels.
    pub window: usize,
    /// Iteration stops once the update norm drops below this (pixels).
    pub epsilon: f64,
    pub max_iters: usize,
    pub levels: usize,
    /// Smallest admissible eigenvalue of the window-averaged gradient matrix.
    pub min_eigen: f64,
    /// Smallest admissible ratio of the small to the large eigenvalue at the
    /// finest level. Windows dominated by a single straight edge only
    /// constrain the flow normal to it; a positive ratio rejects them. Zero
    /// disables the check.
    pub min_isotropy: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        LkParams {
            window: 25,
            epsilon: 0.03,
            max_iters: 30,
            levels: 3,
            min_eigen: 1e-6,
            min_isotropy: 0.0,
        }
    }
}

impl LkParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "LK window must be odd and at least 3, got {}",
                self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.min_isotropy) {
            return Err(Error::invalid(format!(
                "LK min_isotropy must be in [0, 1], got {}",
                self.min_isotropy
            )));
        }
        if !(self.epsilon > 0.0) || self.max_iters == 0 || self.levels == 0 {
            return Err(Error::invalid("LK epsilon, max_iters and levels must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVector {
    pub origin: FeaturePoint,
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl FlowVector {
    pub fn magnitude(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Tracked position in the next frame.
    pub fn target(&self) -> (f64, f64) {
        (self.origin.x + self.vx, self.origin.y + self.vy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<FlowVector>,
    /// Seconds between the two frames.
    pub frame_interval: f64,
}

impl FlowField {
    pub fn new(vectors: Vec<FlowVector>, frame_interval: f64) -> Self {
        FlowField {
            vectors,
            frame_interval,
        }
    }

    pub fn valid(&self) -> impl Iterator<Item = &FlowVector> + '_ {
        self.vectors.iter().filter(|v| v.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }
}

/// Image pyramid with per-level spatial gradients.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
    gradients: Vec<(Raster, Raster)>,
}

impl Pyramid {
    pub fn new(img: &GrayImage, levels: usize) -> Result<Self> {
        let levels = build_pyramid(img, levels)?;
        let gradients = levels.iter().map(|l| spatial_gradient(l)).collect::<Result<Vec<_>>>()?;
        Ok(Pyramid { levels, gradients })
    }

    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn base(&self) -> &GrayImage {
        &self.levels[0]
    }
}

/// Gaussian-smoothed 2x downsampling; level 0 is the input itself.
pub fn build_pyramid(img: &GrayImage, levels: usize) -> Result<Vec<GrayImage>> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    let coarse_w = img.width() >> (levels - 1);
    let coarse_h = img.height() >> (levels - 1);
    if coarse_w < MIN_COARSE_SIZE || coarse_h < MIN_COARSE_SIZE {
        return Err(Error::invalid(format!(
            "{levels} levels reduce {}x{} to {coarse_w}x{coarse_h}, below {MIN_COARSE_SIZE}x{MIN_COARSE_SIZE}",
            img.width(),
            img.height()
        )));
    }
    let kernel = gaussian_kernel(1.0, 2)?;
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let smooth = convolve(prev, &kernel, Axis::Horizontal)?;
        let smooth = convolve(&smooth, &kernel, Axis::Vertical)?;
        let (w, h) = (prev.width() / 2, prev.height() / 2);
        let down = Raster::from_fn(w, h, |x, y| smooth.get(2 * x, 2 * y));
        out.push(GrayImage::from_raster_clamped(down));
    }
    Ok(out)
}

/// Samples a `(2r+1)^2` window centered on `(cx, cy)` with bilinear weights.
///
/// All samples share one fractional offset, so the interior case is a fixed
/// 4-tap stencil. Windows touching the border fall back to clamped sampling.
fn sample_window(img: &Raster, cx: f64, cy: f64, r: usize, out: &mut [f64]) {
    let n = 2 * r + 1;
    let x0f = (cx - r as f64).floor();
    let y0f = (cy - r as f64).floor();
    let ax = cx - r as f64 - x0f;
    let ay = cy - r as f64 - y0f;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x0f >= 0.0 && y0f >= 0.0 && x0f + n as f64 + 1.0 <= w && y0f + n as f64 + 1.0 <= h {
        let (x0, y0) = (x0f as usize, y0f as usize);
        let stride = img.width();
        let data = img.data();
        let (w00, w01, w10, w11) = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay);
        for j in 0..n {
            let top = &data[(y0 + j) * stride + x0..(y0 + j) * stride + x0 + n + 1];
            let bot = &data[(y0 + j + 1) * stride + x0..(y0 + j + 1) * stride + x0 + n + 1];
            let row = &mut out[j * n..(j + 1) * n];
            for ((o, t), b) in row.iter_mut().zip(top.windows(2)).zip(bot.windows(2)) {
                *o = w00 * t[0] + w01 * t[1] + w10 * b[0] + w11 * b[1];
            }
        }
    } else {
        // same arithmetic as `Raster::sample_bilinear`, with the clamped
        // indices and weights computed once per column and per row
        let taps = |start: f64, len: usize| -> Vec<(usize, usize, f64)> {
            let max = (len - 1) as f64;
            (0..n)
                .map(|i| {
                    let c = (start + i as f64).clamp(0.0, max);
                    let c0 = c.floor() as usize;
                    (c0, (c0 + 1).min(len - 1), c - c0 as f64)
                })
                .collect()
        };
        let cols = taps(cx - r as f64, img.width());
        let rows = taps(cy - r as f64, img.height());
        for (j, &(y0, y1, ay)) in rows.iter().enumerate() {
            let (top, bot) = (img.row(y0), img.row(y1));
            for (i, &(x0, x1, ax)) in cols.iter().enumerate() {
                let t = top[x0] * (1.0 - ax) + top[x1] * ax;
                let b = bot[x0] * (1.0 - ax) + bot[x1] * ax;
                out[j * n + i] = t * (1.0 - ay) + b * ay;
            }
        }
    }
}

struct Workspace {
    template: Vec<f64>,
    ix: Vec<f64>,
    iy: Vec<f64>,
    warped: Vec<f64>,
}

/// Tracks `points` from `prev` to `next`, building both pyramids.
pub fn track(
    prev: &GrayImage,
    next: &GrayImage,
    points: &[FeaturePoint],
    params: &LkParams,
    frame_interval: f64,
) -> Result<FlowField> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::invalid(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    params.validate()?;
    let p0 = Pyramid::new(prev, params.levels)?;
    let p1 = Pyramid::new(next, params.levels)?;
    track_pyramids(&p0, &p1, points, params, frame_interval)
}

/// Tracks with prebuilt pyramids; output order matches `points`.
pub fn track_pyramids(
    prev: &Pyramid,
    next: &Pyramid,
    points: &[FeaturePoint],
    params: &LkParams,
    frame_interval: f64,
) -> Result<FlowField> {
    params.validate()?;
    if prev.base().width() != next.base().width() || prev.base().height() != next.base().height() {
        return Err(Error::invalid("pyramid base sizes differ"));
    }
    let levels = params.levels.min(prev.levels.len()).min(next.levels.len());
    let n = params.window * params.window;
    let mut ws = Workspace {
        template: vec![0.0; n],
        ix: vec![0.0; n],
        iy: vec![0.0; n],
        warped: vec![0.0; n],
    };
    let vectors = points
        .iter()
        .map(|p| track_point(prev, next, *p, levels, params, &mut ws))
        .collect();
    Ok(FlowField::new(vectors, frame_interval))
}

fn track_point(
    prev: &Pyramid,
    next: &Pyramid,
    origin: FeaturePoint,
    levels: usize,
    params: &LkParams,
    ws: &mut Workspace,
) -> FlowVector {
    let r = params.window / 2;
    let n = params.window * params.window;
    let invalid = |vx: f64, vy: f64| FlowVector {
        origin,
        vx,
        vy,
        valid: false,
    };
    let (w0, h0) = (prev.base().width() as f64, prev.base().height() as f64);
    let inside = |x: f64, y: f64| {
        x - r as f64 >= 0.0 && y - r as f64 >= 0.0 && x + r as f64 <= w0 - 1.0 && y + r as f64 <= h0 - 1.0
    };
    if !inside(origin.x, origin.y) {
        return invalid(0.0, 0.0);
    }

    let (mut gx, mut gy) = (0.0f64, 0.0f64);
    let (mut dx, mut dy) = (0.0f64, 0.0f64);
    let mut converged = false;
    for level in (0..levels).rev() {
        let scale = (1u32 << level) as f64;
        let (ux, uy) = (origin.x / scale, origin.y / scale);
        let (gxr, gyr) = &prev.gradients[level];
        sample_window(&prev.levels[level], ux, uy, r, &mut ws.template);
        sample_window(gxr, ux, uy, r, &mut ws.ix);
        sample_window(gyr, ux, uy, r, &mut ws.iy);

        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for k in 0..n {
            a += ws.ix[k] * ws.ix[k];
            b += ws.ix[k] * ws.iy[k];
            c += ws.iy[k] * ws.iy[k];
        }
        let det = a * c - b * b;
        let min_eig = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let max_eig = a + c - min_eig;
        if min_eig / (n as f64) < params.min_eigen
            || det <= 0.0
            || (level == 0 && min_eig < params.min_isotropy * max_eig)
        {
            return invalid(gx + dx, gy + dy);
        }

        let (mut nx, mut ny) = (0.0f64, 0.0f64);
        converged = false;
        for _ in 0..params.max_iters {
            sample_window(&next.levels[level], ux + gx + nx, uy + gy + ny, r, &mut ws.warped);
            let (mut bx, mut by) = (0.0, 0.0);
            for k in 0..n {
                let diff = ws.template[k] - ws.warped[k];
                bx += diff * ws.ix[k];
                by += diff * ws.iy[k];
            }
            let ex = (c * bx - b * by) / det;
            let ey = (a * by - b * bx) / det;
            nx += ex;
            ny += ey;
            if !(nx.is_finite() && ny.is_finite()) {
                return invalid(0.0, 0.0);
            }
            if ex.hypot(ey) < params.epsilon {
                converged = true;
                break;
            }
        }
        dx = nx;
        dy = ny;
        if level > 0 {
            gx = 2.0 * (gx + dx);
            gy = 2.0 * (gy + dy);
        }
    }
    let (vx, vy) = (gx + dx, gy + dy);
    let bound = (params.window << levels) as f64;
    if !converged || vx.hypot(vy) > bound || !inside(origin.x + vx, origin.y + vy) {
        return invalid(vx, vy);
    }
    FlowVector {
        origin,
        vx,
        vy,
        valid: true,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::detect_corners;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Continuous value-noise texture, two octaves, smoothstep interpolation.
    pub(crate) fn texture(seed: u64) -> impl Fn(f64, f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lattice: Vec<f64> = (0..64 * 64).map(|_| rng.gen()).collect();
        move |x: f64, y: f64| {
            let octave = |x: f64, y: f64, cell: f64, salt: usize| {
                let (fx, fy) = (x / cell, y / cell);
                let (ix, iy) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - ix, fy - iy);
                let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
                let at = |i: f64, j: f64| {
                    let i = (i as i64).rem_euclid(64) as usize;
                    let j = (j as i64 + salt as i64).rem_euclid(64) as usize;
                    lattice[j * 64 + i]
                };
                let top = at(ix, iy) * (1.0 - sx) + at(ix + 1.0, iy) * sx;
                let bot = at(ix, iy + 1.0) * (1.0 - sx) + at(ix + 1.0, iy + 1.0) * sx;
                top * (1.0 - sy) + bot * sy
            };
            0.6 * octave(x, y, 9.0, 0) + 0.4 * octave(x, y, 4.0, 17)
        }
    }

    pub(crate) fn render(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| f(x as f64, y as f64))
    }

    #[test]
    fn pyramid_sizes() {
        let img = GrayImage::constant(320, 240, 0.3);
        let p = build_pyramid(&img, 3).unwrap();
        let dims: Vec<_> = p.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(320, 240), (160, 120), (80, 60)]);
        for level in &p {
            assert!(level.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
        let one = build_pyramid(&img, 1).unwrap();
        assert_eq!(one, vec![img.clone()]);
        assert!(build_pyramid(&img, 0).is_err());
        assert!(build_pyramid(&GrayImage::constant(64, 64, 0.0), 4).is_err());
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let tex = texture(1);
        let img = render(160, 120, &tex);
        let pts = detect_corners(&img, 100, 0.05, 7.0);
        let flow = track(&img, &img, &pts, &LkParams::default(), 1.0).unwrap();
        assert!(flow.valid_count() > 10);
        for v in flow.valid() {
            assert!(v.magnitude() < 0.03);
        }
    }

    #[test]
    fn rejects_mismatched_frames_and_even_windows() {
        let a = GrayImage::constant(64, 64, 0.5);
        let b = GrayImage::constant(64, 32, 0.5);
        assert!(track(&a, &b, &[], &LkParams::default(), 1.0).is_err());
        let even = LkParams {
            window: 24,
            ..LkParams::default()
        };
        assert!(track(&a, &a, &[], &even, 1.0).is_err());
    }

    #[test]
    fn flat_window_is_invalid() {
        let a = GrayImage::constant(96, 96, 0.5);
        let flow = track(&a, &a, &[FeaturePoint::new(48.0, 48.0)], &LkParams::default(), 1.0).unwrap();
        assert!(!flow.vectors[0].valid);
    }

    #[test]
    fn isotropy_gate_rejects_edge_like_windows() {
        // nearly one-dimensional texture: the gradient matrix eigenvalues
        // differ by about the squared amplitude ratio, (0.03 / 0.3)^2 = 0.01
        let stripes = |x: f64, y: f64| 0.5 + 0.3 * (0.4 * x).sin() + 0.03 * (0.4 * y).sin();
        let img = render(96, 96, stripes);
        let pt = [FeaturePoint::new(48.0, 48.0)];
        let gated = |min_isotropy: f64| {
            let params = LkParams {
                min_isotropy,
                ..LkParams::default()
            };
            track(&img, &img, &pt, &params, 1.0).unwrap().vectors[0].valid
        };
        assert!(gated(0.0));
        assert!(gated(0.002));
        assert!(!gated(0.05));
        let bad = LkParams {
            min_isotropy: 1.5,
            ..LkParams::default()
        };
        assert!(bad.validate().is_err());
    }

    pub(crate) fn mean_endpoint_error(seed: u64, sx: f64, sy: f64, levels: usize) -> (f64, usize) {
        let tex = texture(seed);
        let prev = render(160, 120, &tex);
        let next = render(160, 120, |x, y| tex(x - sx, y - sy));
        let pts = detect_corners(&prev, 200, 0.05, 5.0);
        let params = LkParams {
            levels,
            ..LkParams::default()
        };
        let flow = track(&prev, &next, &pts, &params, 1.0).unwrap();
        let errs: Vec<f64> = flow.valid().map(|v| (v.vx - sx).hypot(v.vy - sy)).collect();
        (errs.iter().sum::<f64>() / errs.len().max(1) as f64, errs.len())
    }

    #[test]
    fn recovers_two_pixel_shift() {
        let (mee, n) = mean_endpoint_error(2, 2.0, 0.0, 3);
        assert!(n >= 20, "only {n} valid vectors");
        assert!(mee < 0.25, "mean endpoint error {mee}");
    }

    #[test]
    fn expansion_flow_is_radial() {
        let tex = texture(3);
        let (w, h) = (160usize, 120usize);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let s = 1.02;
        let prev = render(w, h, &tex);
        let next = render(w, h, |x, y| tex(cx + (x - cx) / s, cy + (y - cy) / s));
        let pts = detect_corners(&prev, 200, 0.05, 5.0);
        let flow = track(&prev, &next, &pts, &LkParams::default(), 1.0).unwrap();
        let mut checked = 0;
        for v in flow.valid() {
            let (rx, ry) = (v.origin.x - cx, v.origin.y - cy);
            if rx.hypot(ry) < 20.0 {
                continue;
            }
            let cos = (rx * v.vx + ry * v.vy) / (rx.hypot(ry) * v.magnitude());
            assert!(cos.acos().to_degrees() < 10.0, "vector {v:?}");
            checked += 1;
        }
        assert!(checked >= 10);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn translation_recovered(seed in 0u64..500, sx in -4.0f64..4.0, sy in -4.0f64..4.0) {
            let (mee, n) = mean_endpoint_error(seed, sx, sy, 3);
            proptest::prop_assert!(n >= 10);
            proptest::prop_assert!(mee < 0.25, "mean endpoint error {}", mee);
        }
    }
}
