//! Kinematic bicycle model and the gradient-tracking sliding-mode controller.

use crate::error::{Error, Result};
use crate::potential::{ForceVector, Frame};
use std::f64::consts::PI;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    // guard against rounding pushing the result onto +pi
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Yaw, counterclockwise from global +X, in `[-pi, pi)`.
    pub psi: f64,
    /// Speed, never negative.
    pub v: f64,
    /// Front steering angle, positive to the left.
    pub delta_f: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        VehicleState {
            x,
            y,
            psi: wrap_angle(psi),
            v: v.max(0.0),
            delta_f: 0.0,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub l_f: f64,
    pub l_r: f64,
    /// Steering limit (rad).
    pub delta_0: f64,
    /// Steering-rate amplitude (rad/s).
    pub u_0: f64,
    /// Acceleration amplitude (m/s^2).
    pub a_0: f64,
    pub c_r: f64,
    pub c_l: f64,
    /// Desired speed (m/s).
    pub v_d: f64,
    /// Boundary-layer half-width of the saturated switching law.
    pub phi_band: f64,
    /// Use the discontinuous sign law instead of the boundary layer.
    pub pure_sign: bool,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            l_f: 1.25,
            l_r: 1.25,
            delta_0: 40f64.to_radians(),
            u_0: 0.6,
            a_0: 2.0,
            c_r: 2.0,
            c_l: 1.0,
            v_d: 5.55,
            phi_band: 0.05,
            pure_sign: false,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("delta_0", self.delta_0),
            ("u_0", self.u_0),
            ("a_0", self.a_0),
            ("c_r", self.c_r),
            ("c_l", self.c_l),
            ("v_d", self.v_d),
            ("phi_band", self.phi_band),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!(
                    "vehicle parameter {name} must be positive, got {value}"
                )));
            }
        }
        if self.delta_0 >= PI / 2.0 {
            return Err(Error::invalid("delta_0 must be below 90 degrees"));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    /// Turning radius of the CG path at a constant steering angle.
    pub fn turning_radius(&self, delta_f: f64) -> f64 {
        let beta = self.slip_angle(delta_f);
        self.wheelbase() / (beta.cos() * delta_f.tan())
    }

    /// `beta = atan(l_r tan(delta_f) / (l_f + l_r))`.
    pub fn slip_angle(&self, delta_f: f64) -> f64 {
        (self.l_r * delta_f.tan() / self.wheelbase()).atan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    /// Steering rate (rad/s).
    pub u: f64,
    /// Acceleration (m/s^2).
    pub a: f64,
}

/// Yaw rate `v cos(beta) tan(delta_f) / (l_f + l_r)` of the bicycle model.
pub fn yaw_rate(state: &VehicleState, params: &VehicleParams) -> f64 {
    let beta = params.slip_angle(state.delta_f);
    state.v * beta.cos() * state.delta_f.tan() / params.wheelbase()
}

/// One explicit Euler step of the kinematic bicycle model.
///
/// The steering integrator runs first (and is clamped to `delta_0`), so the
/// kinematics of the step use the updated steering angle. Speed is clamped at
/// zero and yaw re-wrapped.
pub fn step(state: &VehicleState, cmd: &ControlCommand, params: &VehicleParams, dt: f64) -> VehicleState {
    let delta_f = (state.delta_f + cmd.u * dt).clamp(-params.delta_0, params.delta_0);
    let beta = params.slip_angle(delta_f);
    let v = state.v;
    let heading = state.psi + beta;
    let psi_dot = v * beta.cos() * delta_f.tan() / params.wheelbase();
    VehicleState {
        x: state.x + v * heading.cos() * dt,
        y: state.y + v * heading.sin() * dt,
        psi: wrap_angle(state.psi + psi_dot * dt),
        v: (v + cmd.a * dt).max(0.0),
        delta_f,
    }
}

/// Heading of a global force vector, in `[-pi, pi)`.
pub fn desired_heading(f: &ForceVector) -> Result<f64> {
    if f.frame != Frame::Global {
        return Err(Error::invalid("desired heading needs a global-frame force"));
    }
    let magnitude = f.magnitude();
    if !(magnitude > 1e-9) {
        return Err(Error::NoDirection { magnitude });
    }
    Ok(wrap_angle(f.fy.atan2(f.fx)))
}

/// `s_r = c_r * wrap(psi - psi_d) + (psi_dot - psi_d_dot)`.
pub fn rotational_manifold(psi: f64, psi_d: f64, psi_dot: f64, psi_d_dot: f64, c_r: f64) -> f64 {
    c_r * wrap_angle(psi - psi_d) + (psi_dot - psi_d_dot)
}

/// `s_l = c_l * v - v_d`.
pub fn longitudinal_manifold(v: f64, v_d: f64, c_l: f64) -> f64 {
    c_l * v - v_d
}

/// Switching function: unit saturation with a boundary layer, or the plain
/// sign law (with `sign(0) = 0`) when `pure_sign` is set.
fn switch(s: f64, params: &VehicleParams) -> f64 {
    if params.pure_sign {
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    } else {
        (s / params.phi_band).clamp(-1.0, 1.0)
    }
}

/// Steering rate `u = -u_0 sat(s_r / phi)`.
pub fn steer_command(s_r: f64, params: &VehicleParams) -> f64 {
    -params.u_0 * switch(s_r, params)
}

/// Acceleration `a = -a_0 sat(s_l / phi)` with `s_l = c_l v - v_d`.
pub fn longitudinal_command(v: f64, v_d: f64, params: &VehicleParams) -> f64 {
    -params.a_0 * switch(longitudinal_manifold(v, v_d, params.c_l), params)
}

/// Desired speed tapered near the goal: `v_d * min(1, dist / 10 m)`.
pub fn tapered_speed(v_d: f64, dist_to_goal: f64) -> f64 {
    v_d * (dist_to_goal / GOAL_TAPER_DISTANCE).clamp(0.0, 1.0)
}

/// Distance over which the desired speed ramps down to zero.
pub const GOAL_TAPER_DISTANCE: f64 = 10.0;
/// Distance at which the goal counts as reached.
pub const GOAL_RADIUS: f64 = 2.0;

/// Stateful wrapper holding the previous desired heading for the backward
/// difference of `psi_d` and as a fallback when the force has no direction.
#[derive(Debug, Clone, Default)]
pub struct HeadingTracker {
    previous: Option<f64>,
}

/// Controller output for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: ControlCommand,
    pub psi_d: f64,
    pub s_r: f64,
    pub s_l: f64,
}

impl HeadingTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Computes both sliding-mode commands for the current state and force.
    ///
    /// A force without direction keeps the previous desired heading (or the
    /// current yaw on the first step).
    pub fn control(
        &mut self,
        state: &VehicleState,
        force: &ForceVector,
        v_d: f64,
        params: &VehicleParams,
        dt: f64,
    ) -> ControlOutput {
        let psi_d = match desired_heading(force) {
            Ok(h) => h,
            Err(_) => self.previous.unwrap_or(state.psi),
        };
        let psi_d_dot = match self.previous {
            Some(prev) => wrap_angle(psi_d - prev) / dt,
            None => 0.0,
        };
        self.previous = Some(psi_d);
        let s_r = rotational_manifold(state.psi, psi_d, yaw_rate(state, params), psi_d_dot, params.c_r);
        let s_l = longitudinal_manifold(state.v, v_d, params.c_l);
        ControlOutput {
            command: ControlCommand {
                u: steer_command(s_r, params),
                a: longitudinal_command(state.v, v_d, params),
            },
            psi_d,
            s_r,
            s_l,
        }
    }
}

/// Summary of a fixed-target heading hold, used to check the reaching condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachingReport {
    /// Time at which `|s_r|` first entered the boundary layer, if it did.
    pub entered_at: Option<f64>,
    /// Steps after entry on which `|s_r|` was outside the layer.
    pub escapes: usize,
    /// Steps outside the layer on which `s_r * delta s_r >= 0`.
    pub violations: usize,
}

/// Steers toward the fixed heading `psi_d` for `steps` steps at constant
/// speed and reports how the rotational manifold reaches its boundary layer.
pub fn heading_hold(start: &VehicleState, psi_d: f64, params: &VehicleParams, dt: f64, steps: usize) -> ReachingReport {
    let mut state = *start;
    let manifold = |s: &VehicleState| rotational_manifold(s.psi, psi_d, yaw_rate(s, params), 0.0, params.c_r);
    let mut s_r = manifold(&state);
    let mut report = ReachingReport {
        entered_at: (s_r.abs() <= params.phi_band).then_some(0.0),
        escapes: 0,
        violations: 0,
    };
    for k in 1..=steps {
        let cmd = ControlCommand {
            u: steer_command(s_r, params),
            a: 0.0,
        };
        state = step(&state, &cmd, params, dt);
        let next = manifold(&state);
        if s_r.abs() > params.phi_band && s_r * (next - s_r) >= 0.0 {
            report.violations += 1;
        }
        let inside = next.abs() <= params.phi_band;
        match report.entered_at {
            None if inside => report.entered_at = Some(k as f64 * dt),
            Some(_) if !inside => report.escapes += 1,
            _ => {}
        }
        s_r = next;
    }
    report
}
