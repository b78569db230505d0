//! Shi-Tomasi corner detection.
//!
//! The response is the smaller eigenvalue of the 2x2 structure tensor
//! accumulated over a 5x5 Gaussian-weighted window (sigma 1.5).

use crate::imgproc::{convolve, gaussian_kernel, spatial_gradient, Axis, Raster};

const WINDOW_RADIUS: usize = 2;
const WINDOW_SIGMA: f64 = 1.5;
/// Pixels closer than this to the border never become corners.
const BORDER: usize = WINDOW_RADIUS + 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub x: f64,
    pub y: f64,
    /// Minimum eigenvalue of the structure tensor.
    pub score: f64,
}

impl FeaturePoint {
    pub fn new(x: f64, y: f64) -> Self {
        FeaturePoint { x, y, score: 0.0 }
    }

    pub fn distance(&self, other: &FeaturePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub max_corners: usize,
    pub quality_level: f64,
    pub min_distance: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            max_corners: 400,
            quality_level: 0.05,
            min_distance: 7.0,
        }
    }
}

/// Minimum-eigenvalue response for every pixel.
pub fn min_eigen_response(img: &Raster) -> Raster {
    let (w, h) = (img.width(), img.height());
    let Ok((gx, gy)) = spatial_gradient(img) else {
        return Raster::zeros(w, h);
    };
    let products = |f: &dyn Fn(f64, f64) -> f64| {
        let data = gx.data().iter().zip(gy.data()).map(|(&a, &b)| f(a, b)).collect();
        Raster::new(w, h, data).expect("same dimensions as the gradient")
    };
    let kernel = gaussian_kernel(WINDOW_SIGMA, WINDOW_RADIUS).expect("valid constant kernel");
    let window = |r: Raster| {
        let r = convolve(&r, &kernel, Axis::Horizontal).expect("odd kernel");
        convolve(&r, &kernel, Axis::Vertical).expect("odd kernel")
    };
    let sxx = window(products(&|a, _| a * a));
    let sxy = window(products(&|a, b| a * b));
    let syy = window(products(&|_, b| b * b));
    let data = sxx
        .data()
        .iter()
        .zip(sxy.data())
        .zip(syy.data())
        .map(|((&a, &b), &c)| {
            let half_tr = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (half_tr - disc).max(0.0)
        })
        .collect();
    Raster::new(w, h, data).expect("same dimensions")
}

/// Detects up to `max_corners` corners, strongest first.
///
/// Candidates must reach `quality_level * max_response` and be a 3x3 local
/// maximum; greedy suppression then enforces `min_distance` between any two
/// returned points. Images smaller than 7x7 yield no corners.
pub fn detect_corners(img: &Raster, max_corners: usize, quality_level: f64, min_distance: f64) -> Vec<FeaturePoint> {
    let (w, h) = (img.width(), img.height());
    if w < 7 || h < 7 || max_corners == 0 {
        return Vec::new();
    }
    let response = min_eigen_response(img);
    let mut max_score = 0.0f64;
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            max_score = max_score.max(response.get(x, y));
        }
    }
    // a flat image has a numerically zero tensor everywhere
    if max_score <= 1e-12 {
        return Vec::new();
    }
    let floor = quality_level.clamp(0.0, 1.0) * max_score;

    let mut candidates = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let s = response.get(x, y);
            if s < floor || s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nbhd: for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if response.get(nx, ny) > s {
                        is_max = false;
                        break 'nbhd;
                    }
                }
            }
            if is_max {
                candidates.push(FeaturePoint {
                    x: x as f64,
                    y: y as f64,
                    score: s,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    suppress(candidates, max_corners, min_distance)
}

/// Greedy min-distance suppression over score-sorted candidates.
fn suppress(sorted: Vec<FeaturePoint>, max_corners: usize, min_distance: f64) -> Vec<FeaturePoint> {
    if min_distance <= 0.0 {
        return sorted.into_iter().take(max_corners).collect();
    }
    let cell = min_distance;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    let mut kept: Vec<FeaturePoint> = Vec::new();
    for p in sorted {
        if kept.len() >= max_corners {
            break;
        }
        let cx = (p.x / cell).floor() as i64;
        let cy = (p.y / cell).floor() as i64;
        let crowded = (cy - 1..=cy + 1).any(|gy| {
            (cx - 1..=cx + 1).any(|gx| {
                grid.get(&(gx, gy))
                    .is_some_and(|ids| ids.iter().any(|&i| kept[i].distance(&p) < min_distance))
            })
        });
        if !crowded {
            grid.entry((cx, cy)).or_default().push(kept.len());
            kept.push(p);
        }
    }
    kept
}
