//! Visual potential field: goal attraction, the Morse road field with
//! FOE-driven curvature switching, and composition of the total force.
//!
//! Frames:
//! * global: world X/Y, yaw measured counterclockwise from +X;
//! * motion: vehicle-aligned, X forward, Y to the left;
//! * road field: the Morse field's own coordinates, x forward and y positive
//!   to the *right*, so the right boundary sits at `c0_right > 0`.
//!   [`road_force`] returns its gradient already expressed in the motion frame.

use crate::egomotion::FoeEstimate;
use crate::error::{Error, Result};
use crate::obstacle::RepulsiveForce;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Image,
    Motion,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceVector {
    pub fx: f64,
    pub fy: f64,
    pub frame: Frame,
}

impl ForceVector {
    pub fn new(fx: f64, fy: f64, frame: Frame) -> Self {
        ForceVector { fx, fy, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(0.0, 0.0, frame)
    }

    pub fn magnitude(&self) -> f64 {
        self.fx.hypot(self.fy)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fy.is_finite()
    }
}

/// Rotates `(x, y)` counterclockwise by `angle`.
#[inline]
fn rotate(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Attraction `alpha * (goal - pos)`: magnitude `alpha * distance`, pointing at the goal.
pub fn attractive_force(pos: (f64, f64), goal: (f64, f64), alpha: f64) -> Result<ForceVector> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let (dx, dy) = (goal.0 - pos.0, goal.1 - pos.1);
    let dist = dx.hypot(dy);
    if dist == 0.0 {
        return Ok(ForceVector::zero(Frame::Global));
    }
    let theta = dy.atan2(dx);
    Ok(ForceVector::new(
        alpha * dist * theta.cos(),
        alpha * dist * theta.sin(),
        Frame::Global,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    Straight,
    CurveLeft,
    CurveRight,
}

impl Curvature {
    pub fn as_str(&self) -> &'static str {
        match self {
            Curvature::Straight => "straight",
            Curvature::CurveLeft => "curve_left",
            Curvature::CurveRight => "curve_right",
        }
    }
}

/// Straight while the FOE stays within `center_band * width` of the frame center
/// (boundary inclusive), otherwise a curve toward the FOE's side.
pub fn classify_curvature(foe: &FoeEstimate, frame_width: usize, center_band: f64) -> Curvature {
    let center = frame_width as f64 / 2.0;
    let offset = foe.x_foe - center;
    if offset.abs() <= center_band * frame_width as f64 || !offset.is_finite() {
        Curvature::Straight
    } else if offset < 0.0 {
        Curvature::CurveLeft
    } else {
        Curvature::CurveRight
    }
}

/// Morse road-field parameters; defaults are the four-lane, 14 m road values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadFieldParams {
    /// Field depth.
    pub a: f64,
    /// Variance parameter.
    pub b: f64,
    pub c2_straight: f64,
    /// Magnitude of the curved-road coefficient; positive for left curves.
    pub c2_curve: f64,
    pub c1: f64,
    pub c0_left: f64,
    pub c0_right: f64,
    pub delta_x: f64,
}

impl Default for RoadFieldParams {
    fn default() -> Self {
        RoadFieldParams {
            a: 0.5,
            b: 1.0,
            c2_straight: 0.005,
            c2_curve: 5e-6,
            c1: 0.0,
            c0_left: -8.75,
            c0_right: 5.25,
            delta_x: 1e-10,
        }
    }
}

impl RoadFieldParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.c0_left < 0.0
            && 0.0 < self.c0_right
            && self.delta_x > 0.0
            && [self.c2_straight, self.c2_curve, self.c1].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid road field parameters {self:?}")))
        }
    }

    /// `(c2, n)` for the given curvature.
    pub fn shape(&self, curvature: Curvature) -> (f64, i32) {
        match curvature {
            Curvature::Straight => (self.c2_straight, 1),
            Curvature::CurveLeft => (self.c2_curve, 2),
            Curvature::CurveRight => (-self.c2_curve, 2),
        }
    }

    /// Lateral position (field y) of the field minimum at x = 0: midway
    /// between the two boundaries, where both Morse terms balance.
    pub fn equilibrium_y(&self) -> f64 {
        0.5 * (self.c0_left + self.c0_right)
    }
}

/// Boundary offsets `(y_r, y_l)` at longitudinal distance `x`:
/// `y = c2 (x + dx)^n + c1 (x + dx) + c0`.
pub fn lane_boundaries(x: f64, curvature: Curvature, params: &RoadFieldParams) -> (f64, f64) {
    let (c2, n) = params.shape(curvature);
    let xs = x + params.delta_x;
    let common = c2 * xs.powi(n) + params.c1 * xs;
    (common + params.c0_right, common + params.c0_left)
}

/// Right and left Morse terms at field position `(x, y)`.
///
/// Each term is `A (1 -/+ exp(-/+ b sign(y - y_s) d))^2` with
/// `d = sqrt(((y - b_y)/m - (x + dx))^2 + (y_s - y)^2)`, `m = -1 / (2 c2 (x + dx) + c1)`
/// and `b_y = y_s - m (x + dx)`. Substituting `b_y`, the first difference is
/// exactly `(y - y_s) / m`, so `d = |y - y_s| sqrt(1 + s^2)` with
/// `s = 2 c2 (x + dx) + c1`; that form stays finite when `m` is unbounded.
pub fn road_potential_terms(pos: (f64, f64), curvature: Curvature, params: &RoadFieldParams) -> (f64, f64) {
    let (x, y) = pos;
    let (c2, _) = params.shape(curvature);
    let (y_r, y_l) = lane_boundaries(x, curvature, params);
    let s = 2.0 * c2 * (x + params.delta_x) + params.c1;
    let stretch = (1.0 + s * s).sqrt();
    // sign(y - y_s) * |y - y_s| collapses to (y - y_s)
    let right = params.a * (1.0 - (-params.b * (y - y_r) * stretch).exp()).powi(2);
    let left = params.a * (1.0 - (params.b * (y - y_l) * stretch).exp()).powi(2);
    (right, left)
}

/// `U_s = U_r + U_l` at field position `(x, y)`.
pub fn road_potential(pos: (f64, f64), curvature: Curvature, params: &RoadFieldParams) -> f64 {
    let (r, l) = road_potential_terms(pos, curvature, params);
    r + l
}

/// Central-difference gradient of the road potential, in the motion frame.
///
/// `pos` is in field coordinates. The result is `grad U` with its lateral
/// component flipped to the motion frame's left-positive Y axis; the force
/// actually applied to the vehicle is `-lambda * road_force`.
pub fn road_force(pos: (f64, f64), curvature: Curvature, params: &RoadFieldParams, h: f64) -> Result<ForceVector> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (x, y) = pos;
    let u = |x, y| road_potential((x, y), curvature, params);
    let du_dx = (u(x + h, y) - u(x - h, y)) / (2.0 * h);
    let du_dy = (u(x, y + h) - u(x, y - h)) / (2.0 * h);
    Ok(ForceVector::new(du_dx, -du_dy, Frame::Motion))
}

/// Weights composing the total force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionParams {
    pub lambda_x: f64,
    pub lambda_y: f64,
    /// Image lateral force to motion lateral force.
    pub k_img: f64,
    /// Image urgency to longitudinal deceleration demand.
    pub k_ttc: f64,
}

impl Default for CompositionParams {
    fn default() -> Self {
        CompositionParams {
            lambda_x: 1.0,
            lambda_y: 1.0,
            k_img: 1.0,
            k_ttc: 1.0,
        }
    }
}

/// Obstacle force expressed in the motion frame.
///
/// Positive image `f_x` means "steer toward image +x", i.e. to the right, and
/// the obstacle term is subtracted in the composition, so it maps onto +Y here.
pub fn obstacle_in_motion(f_obs: &RepulsiveForce, params: &CompositionParams) -> ForceVector {
    ForceVector::new(params.k_ttc * f_obs.f_y, params.k_img * f_obs.f_x, Frame::Motion)
}

/// `F = f_att - f_obs - (lambda_x, lambda_y) * f_road`, composed in the motion
/// frame at yaw `psi` and returned in the global frame.
///
/// Only the obstacle and road terms are rotated; the attraction, already
/// global, passes through untouched, so zero obstacle and road inputs return
/// `f_att` bit for bit.
pub fn total_force(
    f_att: &ForceVector,
    f_obs: &RepulsiveForce,
    f_road: &ForceVector,
    params: &CompositionParams,
    psi: f64,
) -> Result<ForceVector> {
    if f_att.frame != Frame::Global || f_road.frame != Frame::Motion {
        return Err(Error::invalid(
            "total_force expects a global attraction and a motion-frame road force",
        ));
    }
    if !(params.lambda_x > 0.0 && params.lambda_y > 0.0) {
        return Err(Error::invalid("lambda weights must be positive"));
    }
    let obs = obstacle_in_motion(f_obs, params);
    let push_x = -obs.fx - params.lambda_x * f_road.fx;
    let push_y = -obs.fy - params.lambda_y * f_road.fy;
    let out = if push_x == 0.0 && push_y == 0.0 {
        *f_att
    } else {
        let (gx, gy) = rotate(push_x, push_y, psi);
        ForceVector::new(f_att.fx + gx, f_att.fy + gy, Frame::Global)
    };
    if !out.is_finite() {
        return Err(Error::invalid("total force is not finite"));
    }
    Ok(out)
}
