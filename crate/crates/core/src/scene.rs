//! Deterministic synthetic world: a textured road plane with box obstacles,
//! rendered through a pinhole camera riding on the vehicle.

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::vehicle::{wrap_angle, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub const LANE_WIDTH: f64 = 3.5;
pub const SKY: f64 = 0.8;
/// Straight run rendered before the start and after the end of the course,
/// so the camera never sees the road stop.
const ROAD_PADDING: f64 = 400.0;

/// One piece of the road centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Circular arc of the given radius and length; `left` turns counterclockwise.
    Arc {
        radius: f64,
        length: f64,
        left: bool,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } | Segment::Arc { length, .. } => length,
        }
    }

    /// Signed curvature, positive for left turns.
    pub fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, left, .. } => {
                if left {
                    1.0 / radius
                } else {
                    -1.0 / radius
                }
            }
        }
    }
}

/// A segment anchored in the world, with the trigonometry its queries need.
#[derive(Debug, Clone, Copy)]
struct Placed {
    segment: Segment,
    start: (f64, f64),
    heading: f64,
    s0: f64,
    /// Midpoint of the segment; every point of it lies within `length / 2`.
    mid: (f64, f64),
    end: (f64, f64),
    cos_h: f64,
    sin_h: f64,
    /// Arc center and the polar angle of `start` about it (arcs only).
    center: (f64, f64),
    alpha0: f64,
}

/// Closest centerline point to a query: arc parameter, squared distance,
/// the point, and the tangent heading with its cosine and sine.
struct Closest {
    t: f64,
    d2: f64,
    point: (f64, f64),
    heading: f64,
    cos_h: f64,
    sin_h: f64,
}

impl Placed {
    fn new(segment: Segment, start: (f64, f64), heading: f64, s0: f64) -> Self {
        let (sin_h, cos_h) = heading.sin_cos();
        let k = segment.curvature();
        let (center, alpha0) = if k == 0.0 {
            (start, 0.0)
        } else {
            let r = 1.0 / k;
            let c = (start.0 - r * sin_h, start.1 + r * cos_h);
            (c, (start.1 - c.1).atan2(start.0 - c.0))
        };
        let mut p = Placed {
            segment,
            start,
            heading,
            s0,
            mid: start,
            end: start,
            cos_h,
            sin_h,
            center,
            alpha0,
        };
        p.mid = p.pose_at(segment.length() / 2.0).0;
        p.end = p.pose_at(segment.length()).0;
        p
    }

    /// Lower bound on the distance from `p` to any point of the segment.
    fn distance_bound(&self, p: (f64, f64)) -> f64 {
        (dist2(p, self.mid).sqrt() - self.segment.length() / 2.0).max(0.0)
    }

    fn pose_at(&self, t: f64) -> ((f64, f64), f64) {
        let k = self.segment.curvature();
        let (x0, y0) = self.start;
        if k == 0.0 {
            ((x0 + t * self.cos_h, y0 + t * self.sin_h), self.heading)
        } else {
            let h = self.heading + k * t;
            let x = x0 + (h.sin() - self.sin_h) / k;
            let y = y0 - (h.cos() - self.cos_h) / k;
            ((x, y), h)
        }
    }

    fn closest(&self, p: (f64, f64)) -> Closest {
        let len = self.segment.length();
        let k = self.segment.curvature();
        if k == 0.0 {
            let (dx, dy) = (p.0 - self.start.0, p.1 - self.start.1);
            let t = (dx * self.cos_h + dy * self.sin_h).clamp(0.0, len);
            let q = (self.start.0 + t * self.cos_h, self.start.1 + t * self.sin_h);
            return Closest {
                t,
                d2: dist2(p, q),
                point: q,
                heading: self.heading,
                cos_h: self.cos_h,
                sin_h: self.sin_h,
            };
        }
        let radius = 1.0 / k.abs();
        let (vx, vy) = (p.0 - self.center.0, p.1 - self.center.1);
        let alpha = vy.atan2(vx);
        // swept angle measured in the direction of travel
        let sweep = wrap_angle((alpha - self.alpha0) * k.signum());
        let t = sweep * radius;
        let norm = vx.hypot(vy);
        if (0.0..=len).contains(&t) && norm > 0.0 {
            let (ux, uy) = (vx / norm, vy / norm);
            let q = (self.center.0 + radius * ux, self.center.1 + radius * uy);
            // tangent is the radial direction turned a quarter toward travel
            let (cos_h, sin_h) = if k > 0.0 { (-uy, ux) } else { (uy, -ux) };
            return Closest {
                t,
                d2: dist2(p, q),
                point: q,
                heading: self.heading + k * t,
                cos_h,
                sin_h,
            };
        }
        // outside the arc: whichever end is nearer
        let t = if dist2(p, self.start) <= dist2(p, self.end) {
            0.0
        } else {
            len
        };
        let (q, h) = self.pose_at(t);
        let (sin_h, cos_h) = h.sin_cos();
        Closest {
            t,
            d2: dist2(p, q),
            point: q,
            heading: h,
            cos_h,
            sin_h,
        }
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Position of a point relative to the road centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadPose {
    /// Arc length along the centerline (negative before the course start).
    pub s: f64,
    /// Signed lateral offset, positive to the left of the direction of travel.
    pub e: f64,
    /// Heading of the centerline tangent.
    pub heading: f64,
    /// Signed centerline curvature at the closest point.
    pub curvature: f64,
}

/// Road centerline starting at the origin heading along +X.
#[derive(Debug, Clone)]
pub struct Road {
    segments: Vec<Segment>,
    placed: Vec<Placed>,
    pub lane_count: usize,
}

impl Road {
    pub fn new(segments: Vec<Segment>, lane_count: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("road needs at least one segment"));
        }
        if lane_count == 0 {
            return Err(Error::invalid("road needs at least one lane"));
        }
        for seg in &segments {
            let ok = match *seg {
                Segment::Straight { length } => length > 0.0,
                Segment::Arc { radius, length, .. } => length > 0.0 && radius > 0.0 && length < PI * radius,
            };
            if !ok {
                return Err(Error::invalid(format!("invalid road segment {seg:?}")));
            }
        }
        let mut placed = Vec::with_capacity(segments.len() + 2);
        placed.push(Placed::new(
            Segment::Straight { length: ROAD_PADDING },
            (-ROAD_PADDING, 0.0),
            0.0,
            -ROAD_PADDING,
        ));
        let (mut pos, mut heading, mut s0) = ((0.0, 0.0), 0.0, 0.0);
        for &segment in &segments {
            let p = Placed::new(segment, pos, heading, s0);
            let (end, h) = p.pose_at(segment.length());
            placed.push(p);
            pos = end;
            heading = h;
            s0 += segment.length();
        }
        placed.push(Placed::new(
            Segment::Straight { length: ROAD_PADDING },
            pos,
            heading,
            s0,
        ));
        Ok(Road {
            segments,
            placed,
            lane_count,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn width(&self) -> f64 {
        self.lane_count as f64 * LANE_WIDTH
    }

    /// Course length, excluding the rendered padding.
    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Centerline point and tangent heading at arc length `s`.
    pub fn pose_at(&self, s: f64) -> ((f64, f64), f64) {
        let idx = self.placed.iter().rposition(|p| p.s0 <= s).unwrap_or(0);
        let p = &self.placed[idx];
        p.pose_at(s - p.s0)
    }

    /// End of the course centerline.
    pub fn end(&self) -> (f64, f64) {
        self.pose_at(self.length()).0
    }

    /// Projects a point onto the centerline.
    pub fn locate(&self, p: (f64, f64)) -> RoadPose {
        let mut best: Option<(&Placed, Closest)> = None;
        for seg in &self.placed {
            if let Some((_, b)) = &best {
                if seg.distance_bound(p).powi(2) >= b.d2 {
                    continue;
                }
            }
            let c = seg.closest(p);
            if best.as_ref().is_none_or(|(_, b)| c.d2 < b.d2) {
                best = Some((seg, c));
            }
        }
        let (seg, c) = best.expect("a road has at least one segment");
        let e = c.cos_h * (p.1 - c.point.1) - c.sin_h * (p.0 - c.point.0);
        RoadPose {
            s: seg.s0 + c.t,
            e,
            heading: c.heading,
            curvature: seg.segment.curvature(),
        }
    }
}

/// Axis-aligned (in its own yawed frame) box standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: (f64, f64),
    /// Half extents along the box's own x, y and z axes (m).
    pub half_extents: (f64, f64, f64),
    pub yaw: f64,
    pub intensity: f64,
}

impl Obstacle {
    /// Distance from a ground point to the box footprint (0 inside).
    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let ox = (lx.abs() - self.half_extents.0).max(0.0);
        let oy = (ly.abs() - self.half_extents.1).max(0.0);
        ox.hypot(oy)
    }

    /// World coordinates of the eight box corners.
    fn corners(&self) -> [[f64; 3]; 8] {
        let (s, c) = self.yaw.sin_cos();
        let (hx, hy, hz) = self.half_extents;
        let mut out = [[0.0; 3]; 8];
        for (k, corner) in out.iter_mut().enumerate() {
            let lx = if k & 1 == 0 { -hx } else { hx };
            let ly = if k & 2 == 0 { -hy } else { hy };
            let z = if k & 4 == 0 { 0.0 } else { 2.0 * hz };
            *corner = [self.center.0 + c * lx - s * ly, self.center.1 + s * lx + c * ly, z];
        }
        out
    }

    /// Ray intersection: entry distance and the local face coordinates.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize, f64, f64)> {
        let (s, c) = self.yaw.sin_cos();
        let (ox, oy) = (o[0] - self.center.0, o[1] - self.center.1);
        let lo = [c * ox + s * oy, -s * ox + c * oy, o[2] - self.half_extents.2];
        let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
        let he = [self.half_extents.0, self.half_extents.1, self.half_extents.2];
        let (mut t_in, mut t_out, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for i in 0..3 {
            if ld[i].abs() < 1e-12 {
                if lo[i].abs() > he[i] {
                    return None;
                }
                continue;
            }
            let a = (-he[i] - lo[i]) / ld[i];
            let b = (he[i] - lo[i]) / ld[i];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            if near > t_in {
                t_in = near;
                axis = i;
            }
            t_out = t_out.min(far);
        }
        if t_in > t_out || t_in <= 0.0 {
            return None;
        }
        let hit = [lo[0] + t_in * ld[0], lo[1] + t_in * ld[1], lo[2] + t_in * ld[2]];
        let (u, v) = match axis {
            0 => (hit[1], hit[2]),
            1 => (hit[0], hit[2]),
            _ => (hit[0], hit[1]),
        };
        Some((t_in, axis, u, v))
    }
}

/// Complete closed-loop world.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub road: Road,
    pub obstacles: Vec<Obstacle>,
    pub goal: (f64, f64),
    pub texture_seed: u64,
    pub start: VehicleState,
}

/// Built-in courses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Course {
    /// 100 m straight followed by a 105 m left arc of radius 500 m.
    StraightArc,
    /// The same course with two boxes inside the reference lane, the first
    /// toward its left side and the second toward its right.
    TwoObstacles,
    /// 150 m straight.
    Straight,
}

impl WorldConfig {
    pub fn course(course: Course, texture_seed: u64) -> Self {
        let road = match course {
            Course::Straight => Road::new(vec![Segment::Straight { length: 150.0 }], 4),
            Course::StraightArc | Course::TwoObstacles => Road::new(
                vec![
                    Segment::Straight { length: 100.0 },
                    Segment::Arc {
                        radius: 500.0,
                        length: 105.0,
                        left: true,
                    },
                ],
                4,
            ),
        }
        .expect("built-in road is valid");
        let obstacles = match course {
            Course::TwoObstacles => [(45.0, 0.75), (125.0, -0.75)]
                .iter()
                .map(|&(s, e)| {
                    let ((x, y), h) = road.pose_at(s);
                    Obstacle {
                        center: (x - e * h.sin(), y + e * h.cos()),
                        half_extents: (1.0, 1.0, 1.25),
                        yaw: h,
                        intensity: 0.6,
                    }
                })
                .collect(),
            _ => Vec::new(),
        };
        let goal = road.end();
        WorldConfig {
            road,
            obstacles,
            goal,
            texture_seed,
            start: VehicleState::new(0.0, 0.0, 0.0, 5.55),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            let (hx, hy, hz) = o.half_extents;
            if !(hx > 0.0 && hy > 0.0 && hz > 0.0) || !(0.0..=1.0).contains(&o.intensity) {
                return Err(Error::invalid(format!("obstacle {i} is malformed: {o:?}")));
            }
        }
        if !(self.goal.0.is_finite() && self.goal.1.is_finite()) {
            return Err(Error::invalid("goal must be finite"));
        }
        Ok(())
    }
}

/// Pinhole camera rigidly mounted on the vehicle. Pixel coordinates put
/// pixel centers on integers, matching the feature tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Mount offset relative to the CG: forward, left, up (m).
    pub mount: (f64, f64, f64),
    /// Pitch, negative looking down (rad).
    pub pitch: f64,
    pub focal: f64,
    pub principal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::with_size(320, 240)
    }
}

impl CameraModel {
    /// Default mount and pitch with the focal length scaled to the width.
    pub fn with_size(width: usize, height: usize) -> Self {
        CameraModel {
            mount: (0.5, 0.0, 1.4),
            pitch: (-5f64).to_radians(),
            focal: 280.0 * width as f64 / 320.0,
            principal: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mount.2 > 0.0) {
            return Err(Error::invalid(format!(
                "camera height must be above ground, got {}",
                self.mount.2
            )));
        }
        if !(self.focal > 0.0) || self.width < 2 || self.height < 2 {
            return Err(Error::invalid("camera focal length and image size must be positive"));
        }
        Ok(())
    }

    /// Image row of the horizon.
    pub fn horizon_row(&self) -> f64 {
        self.principal.1 + self.focal * self.pitch.tan()
    }

    /// Image point toward which forward motion expands: the vanishing point
    /// of the vehicle's heading.
    pub fn heading_vanishing_point(&self) -> (f64, f64) {
        (self.principal.0, self.horizon_row())
    }

    fn frame(&self, state: &VehicleState) -> ([f64; 3], [[f64; 3]; 3]) {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = state.psi.sin_cos();
        let forward = [cp * cy, cp * sy, sp];
        let right = [sy, -cy, 0.0];
        let up = [-sp * cy, -sp * sy, cp];
        let (mx, my, mz) = self.mount;
        let origin = [state.x + mx * cy - my * sy, state.y + mx * sy + my * cy, mz];
        (origin, [forward, right, up])
    }

    /// Projects a world point; `None` behind the camera.
    /// Ground-plane point seen at pixel `(px, py)`, if the ray meets the ground.
    pub fn ground_point(&self, state: &VehicleState, px: f64, py: f64) -> Option<[f64; 3]> {
        let (o, [f, r, u]) = self.frame(state);
        let (a, b) = (px - self.principal.0, py - self.principal.1);
        let d: Vec<f64> = (0..3).map(|k| self.focal * f[k] + a * r[k] - b * u[k]).collect();
        if d[2] >= -1e-12 {
            return None;
        }
        let t = -o[2] / d[2];
        Some([o[0] + t * d[0], o[1] + t * d[1], 0.0])
    }

    pub fn project(&self, state: &VehicleState, p: [f64; 3]) -> Option<(f64, f64)> {
        let (o, [f, r, u]) = self.frame(state);
        let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        let dot = |a: [f64; 3]| a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
        let z = dot(f);
        if z <= 1e-9 {
            return None;
        }
        Some((
            self.principal.0 + self.focal * dot(r) / z,
            self.principal.1 - self.focal * dot(u) / z,
        ))
    }
}

/// What a pixel's ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hit {
    Sky,
    Ground,
    Obstacle(usize),
}

fn hash(ix: i64, iy: i64, salt: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ salt.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 32;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// `x.floor() as i64` without the libm call, exact for world-scale inputs.
fn floor_i64(x: f64) -> i64 {
    let t = x as i64;
    t - i64::from((t as f64) > x)
}

fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (ix, iy) = (floor_i64(x), floor_i64(y));
    let (fx, fy) = (ix as f64, iy as f64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = hash(ix, iy, salt);
    let b = hash(ix + 1, iy, salt);
    let c = hash(ix, iy + 1, salt);
    let d = hash(ix + 1, iy + 1, salt);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Three-octave value noise in `[0, 1]`. Octaves finer than the pixel
/// footprint fade to their mean so distant texture does not alias.
fn texture(x: f64, y: f64, cell: f64, footprint: f64, seed: u64) -> f64 {
    const WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
    let mut acc = 0.0;
    for (octave, &w) in WEIGHTS.iter().enumerate() {
        let size = cell / (1u64 << octave) as f64;
        let keep = ((size / footprint - 1.0) / 2.0).clamp(0.0, 1.0);
        let n = if keep > 0.0 {
            value_noise(x / size, y / size, seed.wrapping_add(octave as u64 * 7919))
        } else {
            0.5
        };
        acc += w * (0.5 + keep * (n - 0.5));
    }
    acc
}

/// Coverage of a stripe of half-width `half` centered at 0, blurred by the footprint.
fn stripe(offset: f64, half: f64, footprint: f64) -> f64 {
    let blur = footprint.max(1e-3);
    ((half + blur / 2.0 - offset.abs()) / blur).clamp(0.0, 1.0) * (half / (half + blur / 2.0).max(half)).min(1.0)
}

fn ground_shade(world: &WorldConfig, p: (f64, f64), footprint: f64) -> f64 {
    let pose = world.road.locate(p);
    let half = world.road.width() / 2.0;
    let seed = world.texture_seed;
    if pose.e.abs() > half + 0.5 {
        return 0.45 + 0.35 * (texture(p.0, p.1, 0.4, footprint, seed ^ 0xA5A5) - 0.5) * 2.0;
    }
    let mut shade = 0.32 + 0.3 * (texture(p.0, p.1, 0.25, footprint, seed) - 0.5) * 2.0;
    // solid edge lines, dashed lane lines
    let mut paint: f64 = 0.0;
    for edge in [-half, half] {
        paint = paint.max(stripe(pose.e - edge, 0.1, footprint));
    }
    let dash_on = (pose.s.rem_euclid(9.0)) < 3.0;
    if dash_on {
        for k in 1..world.road.lane_count {
            let line = -half + k as f64 * LANE_WIDTH;
            paint = paint.max(stripe(pose.e - line, 0.075, footprint));
        }
    }
    shade += paint * (0.7 - shade);
    shade
}

/// Renders the view from `state`, also reporting what each pixel hit.
pub fn render_labeled(world: &WorldConfig, cam: &CameraModel, state: &VehicleState) -> Result<(GrayImage, Vec<Hit>)> {
    cam.validate()?;
    let (o, [f, r, u]) = cam.frame(state);
    let (w, h) = (cam.width, cam.height);
    let mut labels = vec![Hit::Sky; w * h];
    let mut data = vec![SKY; w * h];
    // Pixel rectangle `[x0, x1] x [y0, y1]` that can see each box; a convex
    // box wholly in front of the camera projects inside its corners' hull.
    let extents: Vec<Option<(f64, f64, f64, f64)>> = world
        .obstacles
        .iter()
        .map(|ob| {
            let projected: Vec<Option<(f64, f64)>> = ob.corners().iter().map(|&p| cam.project(state, p)).collect();
            if projected.iter().all(Option::is_none) {
                return None;
            }
            if projected.iter().any(Option::is_none) {
                return Some((f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY));
            }
            Some(projected.iter().flatten().fold(
                (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
                |(x0, x1, y0, y1), &(x, y)| (x0.min(x - 1.0), x1.max(x + 1.0), y0.min(y - 1.0), y1.max(y + 1.0)),
            ))
        })
        .collect();
    for j in 0..h {
        let b = j as f64 - cam.principal.1;
        for i in 0..w {
            let a = i as f64 - cam.principal.0;
            let d = [
                cam.focal * f[0] + a * r[0] - b * u[0],
                cam.focal * f[1] + a * r[1] - b * u[1],
                cam.focal * f[2] + a * r[2] - b * u[2],
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let d = [d[0] / norm, d[1] / norm, d[2] / norm];
            let mut best_t = if d[2] < -1e-9 { -o[2] / d[2] } else { f64::INFINITY };
            let mut hit = if best_t.is_finite() { Hit::Ground } else { Hit::Sky };
            let mut shade = SKY;
            for (k, obstacle) in world.obstacles.iter().enumerate() {
                let Some((x0, x1, y0, y1)) = extents[k] else {
                    continue;
                };
                let (px, py) = (i as f64, j as f64);
                if px < x0 || px > x1 || py < y0 || py > y1 {
                    continue;
                }
                if let Some((t, axis, fu, fv)) = obstacle.intersect(o, d) {
                    if t < best_t {
                        best_t = t;
                        hit = Hit::Obstacle(k);
                        let footprint = t / cam.focal;
                        let tone = [1.0, 0.85, 1.15][axis];
                        let n = texture(fu, fv, 0.3, footprint, world.texture_seed ^ (0x0B57 + k as u64));
                        shade = (obstacle.intensity * tone + 0.5 * (n - 0.5)).clamp(0.0, 1.0);
                    }
                }
            }
            if hit == Hit::Ground {
                let p = (o[0] + best_t * d[0], o[1] + best_t * d[1]);
                // geometric mean of the lateral and the foreshortened depth footprint
                let graze = (-d[2]).max(0.02);
                shade = ground_shade(world, p, best_t / cam.focal / graze.sqrt());
            }
            labels[j * w + i] = hit;
            data[j * w + i] = shade;
        }
    }
    Ok((GrayImage::new(w, h, data)?, labels))
}

/// Renders the grayscale view from `state`.
pub fn render(world: &WorldConfig, cam: &CameraModel, state: &VehicleState) -> Result<GrayImage> {
    render_labeled(world, cam, state).map(|(img, _)| img)
}

/// Exact geometric quantities used to score a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    /// Signed offset from the road centerline, positive left (m).
    pub lateral_offset: f64,
    pub goal_distance: f64,
    /// Distance to the nearest box footprint; infinite without obstacles.
    pub clearance: f64,
    pub road: RoadPose,
}

pub fn ground_truth(world: &WorldConfig, state: &VehicleState) -> GroundTruth {
    let p = state.position();
    let road = world.road.locate(p);
    GroundTruth {
        lateral_offset: road.e,
        goal_distance: (world.goal.0 - p.0).hypot(world.goal.1 - p.1),
        clearance: world
            .obstacles
            .iter()
            .map(|o| o.clearance(p))
            .fold(f64::INFINITY, f64::min),
        road,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weather {
    Clear,
    Rain,
}

impl std::str::FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(Weather::Clear),
            "rain" => Ok(Weather::Rain),
            other => Err(Error::invalid(format!(
                "unknown weather '{other}' (expected clear or rain)"
            ))),
        }
    }
}

/// Elliptical water drop on the lens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Droplet {
    pub center: (f64, f64),
    pub radii: (f64, f64),
}

impl Droplet {
    /// Normalized squared radius; below 1 inside the drop.
    fn rho(&self, x: f64, y: f64) -> f64 {
        ((x - self.center.0) / self.radii.0).powi(2) + ((y - self.center.1) / self.radii.1).powi(2)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rho(x, y) < 1.0
    }
}

pub const DROPLET_COUNT: usize = 12;
/// Weight of the mirrored scene on wet road.
pub const REFLECTION: f64 = 0.35;

/// Droplets drawn for `seed` on a `width` x `height` frame.
pub fn rain_droplets(seed: u64, width: usize, height: usize) -> Vec<Droplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..DROPLET_COUNT)
        .map(|_| Droplet {
            center: (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64)),
            radii: (rng.gen_range(2.0..5.0), rng.gen_range(3.0..7.0)),
        })
        .collect()
}

/// Applies weather to a rendered frame. Rain turns the road below the
/// horizon into a partial mirror of the scene above it and adds bright drops.
pub fn degrade(img: &GrayImage, weather: Weather, seed: u64, horizon_row: f64) -> GrayImage {
    if weather == Weather::Clear {
        return img.clone();
    }
    let raster = img.raster();
    let (w, h) = (raster.width(), raster.height());
    let first_wet = horizon_row.ceil().max(0.0) as usize;
    let mut out = raster.clone();
    for j in first_wet..h {
        let mirror = (2.0 * horizon_row - j as f64).round();
        if mirror < 0.0 {
            continue;
        }
        let m = mirror as usize;
        for i in 0..w {
            let v = (1.0 - REFLECTION) * raster.get(i, j) + REFLECTION * raster.get(i, m);
            out.set(i, j, v);
        }
    }
    for drop in rain_droplets(seed, w, h) {
        let x0 = (drop.center.0 - drop.radii.0).floor().max(0.0) as usize;
        let x1 = ((drop.center.0 + drop.radii.0).ceil() as usize).min(w - 1);
        let y0 = (drop.center.1 - drop.radii.1).floor().max(0.0) as usize;
        let y1 = ((drop.center.1 + drop.radii.1).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let rho = drop.rho(x as f64, y as f64);
                if rho < 1.0 {
                    let v = out.get(x, y);
                    out.set(x, y, v + 0.4 * (1.0 - rho) * (1.0 - v));
                }
            }
        }
    }
    GrayImage::from_raster_clamped(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egomotion::estimate_foe;
    use crate::features::{detect_corners, DetectorParams};
    use crate::flow::{track, LkParams};

    fn straight_world() -> WorldConfig {
        WorldConfig::course(Course::Straight, 7)
    }

    #[test]
    fn road_geometry() {
        let road = Road::new(
            vec![
                Segment::Straight { length: 100.0 },
                Segment::Arc {
                    radius: 200.0,
                    length: 100.0 * PI / 2.0 * 2.0 / 2.0,
                    left: true,
                },
            ],
            4,
        )
        .unwrap();
        assert_eq!(road.width(), 14.0);
        let ((x, y), h) = road.pose_at(100.0 + 100.0 * PI / 4.0);
        // a quarter of the way around a circle of radius 200 centered at (100, 200)
        let a = -PI / 2.0 + PI / 8.0;
        assert!((x - (100.0 + 200.0 * a.cos())).abs() < 1e-9 && (y - (200.0 + 200.0 * a.sin())).abs() < 1e-9);
        assert!((h - PI / 8.0).abs() < 1e-12);
        let pose = road.locate((50.0, 1.5));
        assert!((pose.s - 50.0).abs() < 1e-12 && (pose.e - 1.5).abs() < 1e-12);
        // inside the arc (toward its center) is left
        let ((cx, cy), ch) = road.pose_at(150.0);
        let pose = road.locate((cx - 2.0 * ch.sin(), cy + 2.0 * ch.cos()));
        assert!((pose.e - 2.0).abs() < 1e-9 && (pose.s - 150.0).abs() < 1e-9, "{pose:?}");
        assert!((pose.curvature - 1.0 / 200.0).abs() < 1e-15);
        // padding before the start
        let pose = road.locate((-20.0, -1.0));
        assert!((pose.s + 20.0).abs() < 1e-12 && (pose.e + 1.0).abs() < 1e-12);
        assert!(Road::new(vec![], 4).is_err());
        assert!(Road::new(vec![Segment::Straight { length: -1.0 }], 4).is_err());
    }

    #[test]
    fn ground_truth_examples() {
        let world = WorldConfig::course(Course::TwoObstacles, 1);
        let on_line = ground_truth(&world, &VehicleState::new(30.0, 0.0, 0.0, 5.0));
        assert!(on_line.lateral_offset.abs() < 1e-12);
        let at_goal = VehicleState::new(world.goal.0, world.goal.1, 0.0, 0.0);
        assert!(ground_truth(&world, &at_goal).goal_distance < 1e-12);
        let o = Obstacle {
            center: (10.0, 0.0),
            half_extents: (1.0, 0.5, 1.0),
            yaw: 0.0,
            intensity: 0.5,
        };
        assert!((o.clearance((7.0, 0.0)) - 2.0).abs() < 1e-12);
        assert!((o.clearance((10.0, 2.5)) - 2.0).abs() < 1e-12);
        assert!((o.clearance((14.0, 4.5)) - 5.0).abs() < 1e-12);
        assert_eq!(o.clearance((10.2, 0.1)), 0.0);
    }

    #[test]
    fn render_is_deterministic() {
        let world = WorldConfig::course(Course::TwoObstacles, 3);
        let cam = CameraModel::default();
        let s = VehicleState::new(20.0, 0.3, 0.05, 5.0);
        assert_eq!(render(&world, &cam, &s).unwrap(), render(&world, &cam, &s).unwrap());
        let mut low = cam;
        low.mount.2 = -0.1;
        assert!(render(&world, &low, &s).is_err());
    }

    #[test]
    fn horizon_and_sky() {
        let cam = CameraModel::default();
        let (img, labels) = render_labeled(&straight_world(), &cam, &VehicleState::new(0.0, 0.0, 0.0, 5.0)).unwrap();
        let hr = cam.horizon_row();
        assert!((hr - (119.5 - 280.0 * 5f64.to_radians().tan())).abs() < 1e-9);
        for j in 0..cam.height {
            let expect = if (j as f64) < hr { Hit::Sky } else { Hit::Ground };
            assert_eq!(labels[j * cam.width + 10], expect, "row {j}");
        }
        assert_eq!(img.raster().get(10, 0), SKY);
    }

    #[test]
    fn forward_motion_expands_from_heading_vanishing_point() {
        let world = straight_world();
        let cam = CameraModel::default();
        let s0 = VehicleState::new(10.0, 0.0, 0.0, 5.0);
        let s1 = VehicleState::new(10.1, 0.0, 0.0, 5.0);
        let a = render(&world, &cam, &s0).unwrap();
        let b = render(&world, &cam, &s1).unwrap();
        let d = DetectorParams::default();
        let pts = detect_corners(a.raster(), d.max_corners, d.quality_level, d.min_distance);
        let flow = track(&a, &b, &pts, &LkParams::default(), 1.0 / 60.0).unwrap();
        let foe = estimate_foe(&flow, 0.05).unwrap();
        let (vx, vy) = cam.heading_vanishing_point();
        assert!(foe.distance_to(vx, vy) < 15.0, "{foe:?}");
    }

    #[test]
    fn box_projects_to_the_left() {
        let mut world = straight_world();
        world.obstacles.push(Obstacle {
            center: (10.5, 1.0),
            half_extents: (0.3, 0.3, 0.5),
            yaw: 0.0,
            intensity: 0.6,
        });
        let cam = CameraModel::default();
        let (_, labels) = render_labeled(&world, &cam, &VehicleState::new(0.0, 0.0, 0.0, 5.0)).unwrap();
        let xs: Vec<f64> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Hit::Obstacle(0))
            .map(|(k, _)| (k % cam.width) as f64)
            .collect();
        assert!(!xs.is_empty());
        let centroid = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(centroid < cam.principal.0, "{centroid}");
        // and it agrees with projecting the box center
        let (px, _) = cam
            .project(&VehicleState::new(0.0, 0.0, 0.0, 5.0), [10.5, 1.0, 0.5])
            .unwrap();
        assert!((px - centroid).abs() < 3.0);
    }

    #[test]
    fn obstacle_culling_matches_brute_force() {
        let cam = CameraModel::default();
        let mut world = straight_world();
        world.obstacles = vec![
            Obstacle {
                center: (12.0, 1.5),
                half_extents: (1.0, 1.0, 1.25),
                yaw: 0.3,
                intensity: 0.6,
            },
            Obstacle {
                center: (30.0, -4.0),
                half_extents: (2.0, 0.5, 0.8),
                yaw: -0.7,
                intensity: 0.4,
            },
            // straddles the camera: some corners are behind it
            Obstacle {
                center: (1.0, 2.5),
                half_extents: (2.5, 1.0, 1.0),
                yaw: 0.0,
                intensity: 0.8,
            },
        ];
        let mut seen = [false; 3];
        for state in [
            VehicleState::new(0.0, 0.0, 0.0, 5.0),
            VehicleState::new(5.0, 1.0, 0.25, 5.0),
            VehicleState::new(20.0, -2.0, -0.4, 5.0),
            VehicleState::new(-3.0, 3.0, 2.5, 5.0),
        ] {
            let (_, labels) = render_labeled(&world, &cam, &state).unwrap();
            for h in &labels {
                if let Hit::Obstacle(k) = h {
                    seen[*k] = true;
                }
            }
            let (o, [f, r, u]) = cam.frame(&state);
            for j in 0..cam.height {
                for i in 0..cam.width {
                    let (a, b) = (i as f64 - cam.principal.0, j as f64 - cam.principal.1);
                    let d: Vec<f64> = (0..3).map(|k| cam.focal * f[k] + a * r[k] - b * u[k]).collect();
                    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let d = [d[0] / n, d[1] / n, d[2] / n];
                    let ground = if d[2] < -1e-9 { -o[2] / d[2] } else { f64::INFINITY };
                    let nearest = world
                        .obstacles
                        .iter()
                        .enumerate()
                        .filter_map(|(k, ob)| ob.intersect(o, d).map(|hit| (hit.0, k)))
                        .filter(|&(t, _)| t < ground)
                        .min_by(|x, y| x.0.total_cmp(&y.0));
                    let expected = match nearest {
                        Some((_, k)) => Hit::Obstacle(k),
                        None if ground.is_finite() => Hit::Ground,
                        None => Hit::Sky,
                    };
                    assert_eq!(labels[j * cam.width + i], expected, "pixel ({i}, {j}) from {state:?}");
                }
            }
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn rendered_road_has_corners() {
        let cam = CameraModel::default();
        let d = DetectorParams::default();
        for (course, seed) in [
            (Course::Straight, 1u64),
            (Course::StraightArc, 2),
            (Course::TwoObstacles, 3),
        ] {
            let world = WorldConfig::course(course, seed);
            for s in [0.0, 60.0, 150.0] {
                let ((x, y), h) = world.road.pose_at(s);
                let img = render(&world, &cam, &VehicleState::new(x, y, h, 5.0)).unwrap();
                let n = detect_corners(img.raster(), d.max_corners, d.quality_level, d.min_distance).len();
                assert!(n >= 100, "{course:?} at s = {s}: {n} corners");
            }
        }
    }

    #[test]
    fn rain_changes_only_road_and_drops() {
        let cam = CameraModel::default();
        let world = WorldConfig::course(Course::TwoObstacles, 4);
        let img = render(&world, &cam, &VehicleState::new(30.0, 0.0, 0.0, 5.0)).unwrap();
        let hr = cam.horizon_row();
        assert_eq!(degrade(&img, Weather::Clear, 5, hr), img);
        let wet = degrade(&img, Weather::Rain, 5, hr);
        assert_eq!(wet, degrade(&img, Weather::Rain, 5, hr));
        assert_ne!(wet, img);
        let drops = rain_droplets(5, cam.width, cam.height);
        let (r0, r1) = (img.raster(), wet.raster());
        for j in 0..cam.height {
            for i in 0..cam.width {
                if r0.get(i, j) != r1.get(i, j) && (j as f64) < hr.ceil() {
                    assert!(drops.iter().any(|d| d.contains(i as f64, j as f64)), "({i}, {j})");
                }
            }
        }
        assert!("fog".parse::<Weather>().is_err());
    }
}
