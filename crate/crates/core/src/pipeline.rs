//! Per-frame perception, force composition, and the closed-loop simulation.

use crate::egomotion::{compute_ttc, estimate_foe, FoeEstimate, FoeParams, FoeSmoother};
use crate::error::{Error, Result};
use crate::features::{detect_corners, DetectorParams, FeaturePoint};
use crate::flow::{track_pyramids, LkParams, Pyramid};
use crate::imgproc::GrayImage;
use crate::obstacle::{
    default_sigma, obstacle_force, segment_obstacles, MotionModel, RepulsiveForce, RepulsiveParams, Roi, SegmentParams,
};
use crate::potential::{
    attractive_force, classify_curvature, road_force, total_force, CompositionParams, Curvature, ForceVector, Frame,
    RoadFieldParams,
};
use crate::scene::{degrade, ground_truth, render, CameraModel, GroundTruth, Weather, WorldConfig};
use crate::trace::{RunSummary, RunTrace, TraceRecord};
use crate::vehicle::{
    step, tapered_speed, wrap_angle, ControlCommand, HeadingTracker, VehicleParams, VehicleState, GOAL_RADIUS,
};
use std::collections::VecDeque;

/// Every tunable of the perception-to-control chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detector: DetectorParams,
    pub lk: LkParams,
    pub foe: FoeParams,
    pub segment: SegmentParams,
    pub repulsive: RepulsiveParams,
    /// Fraction of the frame, counted from the bottom, aggregated into the obstacle force.
    pub roi_fraction: f64,
    /// Obstacle-plane smoothing scale; `None` uses half the larger frame dimension.
    pub obstacle_sigma: Option<f64>,
    pub field: RoadFieldParams,
    /// Half-width of the straight-road FOE band as a fraction of the frame width.
    pub center_band: f64,
    /// Finite-difference step of the road gradient (m).
    pub field_step: f64,
    pub alpha: f64,
    pub composition: CompositionParams,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    /// Control period, one camera frame (s).
    pub dt: f64,
    pub max_steps: usize,
    /// Frames between the two images of each flow pair.
    pub flow_gap: usize,
    pub weather: Weather,
    /// Seed for weather effects.
    pub seed: u64,
    /// Lateral distance beyond the road edge at which a run is declared failed (m).
    pub corridor_margin: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: DetectorParams {
                max_corners: 150,
                ..DetectorParams::default()
            },
            // frame-to-frame motion is small, so the coarse-to-fine
            // iteration converges well before the general-purpose cap
            lk: LkParams {
                max_iters: 10,
                ..LkParams::default()
            },
            foe: FoeParams::default(),
            segment: SegmentParams {
                model: MotionModel::GroundPlane,
                min_residual: 0.3,
                max_residual: 12.0,
                relative_residual: 1.5,
                ..SegmentParams::default()
            },
            repulsive: RepulsiveParams {
                gamma: 1.5e7,
                ..RepulsiveParams::default()
            },
            roi_fraction: 0.6,
            obstacle_sigma: None,
            field: RoadFieldParams::default(),
            center_band: 0.1,
            field_step: 1e-4,
            alpha: 0.05,
            composition: CompositionParams {
                lambda_x: 5e-7,
                lambda_y: 5e-7,
                ..CompositionParams::default()
            },
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
            dt: 1.0 / 60.0,
            max_steps: 6000,
            flow_gap: 3,
            weather: Weather::Clear,
            seed: 0,
            corridor_margin: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.lk.validate()?;
        self.field.validate()?;
        self.vehicle.validate()?;
        self.camera.validate()?;
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::invalid(format!("dt must be in (0, 0.1], got {}", self.dt)));
        }
        if self.flow_gap == 0 {
            return Err(Error::invalid("flow_gap must be at least 1"));
        }
        if !(self.roi_fraction > 0.0 && self.roi_fraction <= 1.0) {
            return Err(Error::invalid("roi_fraction must be in (0, 1]"));
        }
        if !(self.alpha > 0.0) || !(self.field_step > 0.0) || !(self.center_band >= 0.0) {
            return Err(Error::invalid(
                "alpha and field_step must be positive, center_band non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.foe.ema) {
            return Err(Error::invalid("foe.ema must be in [0, 1)"));
        }
        if self.detector.max_corners == 0 {
            return Err(Error::invalid("detector.max_corners must be positive"));
        }
        Ok(())
    }
}

/// What the camera pipeline extracted from one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    /// Smoothed FOE used for curvature classification.
    pub foe: FoeEstimate,
    /// Whether this pair produced its own FOE (otherwise the previous one is held).
    pub foe_measured: bool,
    pub tracked: usize,
    pub obstacle_points: usize,
    pub f_obs: RepulsiveForce,
    pub curvature: Curvature,
}

/// Stateful frame-to-frame vision: keeps recent pyramids and features and
/// the FOE smoother.
pub struct Vision {
    config: PipelineConfig,
    history: VecDeque<(Pyramid, Vec<FeaturePoint>)>,
    smoother: FoeSmoother,
    roi: Roi,
    sigma: f64,
}

impl Vision {
    pub fn new(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let (w, h) = (config.camera.width, config.camera.height);
        Ok(Vision {
            config: config.clone(),
            history: VecDeque::with_capacity(config.flow_gap + 1),
            smoother: FoeSmoother::new(config.foe.ema)?,
            roi: Roi::lower_fraction(w, h, config.roi_fraction),
            sigma: config.obstacle_sigma.unwrap_or_else(|| default_sigma(w, h)),
        })
    }

    fn default_foe(&self) -> FoeEstimate {
        let (x, y) = self.config.camera.heading_vanishing_point();
        FoeEstimate::at(x, y)
    }

    /// Feeds the next frame. Until `flow_gap` earlier frames exist there is no
    /// flow: the result holds the default FOE and no obstacle force.
    pub fn process(&mut self, frame: &GrayImage) -> Result<Perception> {
        let c = &self.config;
        if frame.width() != c.camera.width || frame.height() != c.camera.height {
            return Err(Error::invalid(format!(
                "frame is {}x{}, camera expects {}x{}",
                frame.width(),
                frame.height(),
                c.camera.width,
                c.camera.height
            )));
        }
        let pyramid = Pyramid::new(frame, c.lk.levels)?;
        let features = detect_corners(
            frame.raster(),
            c.detector.max_corners,
            c.detector.quality_level,
            c.detector.min_distance,
        );
        let mut perception = Perception {
            foe: self.smoother.current().unwrap_or_else(|| self.default_foe()),
            foe_measured: false,
            tracked: 0,
            obstacle_points: 0,
            f_obs: RepulsiveForce::default(),
            curvature: Curvature::Straight,
        };
        if self.history.len() == c.flow_gap {
            let (old_pyr, old_features) = &self.history[0];
            let interval = c.dt * c.flow_gap as f64;
            let flow = track_pyramids(old_pyr, &pyramid, old_features, &c.lk, interval)?;
            perception.tracked = flow.valid_count();
            if let Ok(raw) = estimate_foe(&flow, c.foe.min_speed) {
                perception.foe = self.smoother.update(raw);
                perception.foe_measured = true;
                let ttc = compute_ttc(&flow, &raw, c.foe.exclusion_radius, c.foe.ttc_max);
                let (w, h) = (c.camera.width, c.camera.height);
                if let Ok(mask) = segment_obstacles(&flow, &raw, &ttc, w, h, &c.segment) {
                    perception.obstacle_points = mask.points.len();
                    perception.f_obs = obstacle_force(&mask, self.sigma, &self.roi, &c.repulsive)?;
                }
            }
            perception.curvature = classify_curvature(&perception.foe, c.camera.width, c.center_band);
            self.history.pop_front();
        }
        self.history.push_back((pyramid, features));
        Ok(perception)
    }
}

/// Road-boundary force expressed in the vehicle's motion frame.
///
/// The field is evaluated at the vehicle's own position in a road-aligned
/// frame whose origin sits on the field's reference line, so the field
/// minimum falls on the road centerline. The road-aligned gradient is then
/// rotated by the vehicle's heading relative to the road tangent.
pub fn road_force_motion(
    truth: &GroundTruth,
    psi: f64,
    curvature: Curvature,
    config: &PipelineConfig,
) -> Result<ForceVector> {
    let y = config.field.equilibrium_y() - truth.lateral_offset;
    let g = road_force((0.0, y), curvature, &config.field, config.field_step)?;
    let rel = truth.road.heading - psi;
    let (s, c) = rel.sin_cos();
    Ok(ForceVector::new(
        c * g.fx - s * g.fy,
        s * g.fx + c * g.fy,
        Frame::Motion,
    ))
}

/// Forces acting on the vehicle at one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forces {
    pub attraction: ForceVector,
    pub obstacle: RepulsiveForce,
    pub road: ForceVector,
    pub total: ForceVector,
}

pub fn compose_forces(
    state: &VehicleState,
    goal: (f64, f64),
    truth: Option<&GroundTruth>,
    perception: &Perception,
    config: &PipelineConfig,
) -> Result<Forces> {
    let attraction = attractive_force(state.position(), goal, config.alpha)?;
    let road = match truth {
        Some(t) => road_force_motion(t, state.psi, perception.curvature, config)?,
        None => ForceVector::zero(Frame::Motion),
    };
    let total = total_force(&attraction, &perception.f_obs, &road, &config.composition, state.psi)?;
    Ok(Forces {
        attraction,
        obstacle: perception.f_obs,
        road,
        total,
    })
}

/// Quantizes a frame to 8 bits, as a camera (and a PGM file) would.
pub fn quantize(img: &GrayImage) -> GrayImage {
    let data = img
        .raster()
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() / 255.0)
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}

/// Frames between droplet redraws: drops sit on the lens for half a second.
const DROPLET_HOLD: usize = 30;

/// Frame `k` as seen by the camera: rendered, weathered, and quantized.
pub fn camera_frame(world: &WorldConfig, config: &PipelineConfig, state: &VehicleState, k: usize) -> Result<GrayImage> {
    let clean = render(world, &config.camera, state)?;
    let drop_seed = config
        .seed
        .wrapping_mul(0x9E37_79B9)
        .wrapping_add((k / DROPLET_HOLD) as u64);
    let wet = degrade(&clean, config.weather, drop_seed, config.camera.horizon_row());
    Ok(quantize(&wet))
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    GoalReached,
    LeftCorridor,
    StepLimit,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::GoalReached => "goal_reached",
            Outcome::LeftCorridor => "left_corridor",
            Outcome::StepLimit => "step_limit",
        }
    }
}

fn check_end(world: &WorldConfig, config: &PipelineConfig, truth: &GroundTruth) -> Option<Outcome> {
    if truth.goal_distance <= GOAL_RADIUS {
        Some(Outcome::GoalReached)
    } else if truth.lateral_offset.abs() > world.road.width() / 2.0 + config.corridor_margin {
        Some(Outcome::LeftCorridor)
    } else {
        None
    }
}

/// Runs the visual potential-field controller in closed loop.
///
/// `on_frame` sees every camera frame in order (e.g. to save it for replay).
pub fn simulate(
    world: &WorldConfig,
    config: &PipelineConfig,
    mut on_frame: impl FnMut(usize, &GrayImage) -> Result<()>,
) -> Result<RunTrace> {
    world.validate()?;
    let mut vision = Vision::new(config)?;
    let mut tracker = HeadingTracker::new();
    let mut state = world.start;
    let mut records = Vec::new();
    let mut outcome = Outcome::StepLimit;
    for k in 0..config.max_steps {
        let frame = camera_frame(world, config, &state, k)?;
        on_frame(k, &frame)?;
        let perception = vision.process(&frame)?;
        let truth = ground_truth(world, &state);
        let forces = compose_forces(&state, world.goal, Some(&truth), &perception, config)?;
        let v_d = tapered_speed(config.vehicle.v_d, truth.goal_distance);
        let control = tracker.control(&state, &forces.total, v_d, &config.vehicle, config.dt);
        records.push(TraceRecord {
            t: k as f64 * config.dt,
            state,
            foe: (perception.foe.x_foe, perception.foe.y_foe),
            forces,
            curvature: perception.curvature,
            obstacle_points: perception.obstacle_points,
            psi_d: control.psi_d,
            s_r: control.s_r,
            s_l: control.s_l,
            command: control.command,
            lateral_offset: truth.lateral_offset,
            clearance: truth.clearance,
        });
        if let Some(end) = check_end(world, config, &truth) {
            outcome = end;
            break;
        }
        state = step(&state, &control.command, &config.vehicle, config.dt);
    }
    Ok(RunTrace::new(records, RunSummary::from_outcome(outcome)))
}

/// Gains of the waypoint-following PID baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    /// Look-ahead distance along the centerline (m).
    pub lookahead: f64,
    pub kp_lat: f64,
    pub ki_lat: f64,
    pub kd_lat: f64,
    pub kp_lon: f64,
    pub ki_lon: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            lookahead: 8.0,
            kp_lat: 1.0,
            ki_lat: 0.05,
            kd_lat: 0.1,
            kp_lon: 1.5,
            ki_lon: 0.1,
        }
    }
}

/// Pure-pursuit-style PID on exact centerline waypoints, with the same
/// vehicle model and actuator limits as the potential-field controller.
pub fn baseline(world: &WorldConfig, config: &PipelineConfig, gains: &PidGains) -> Result<RunTrace> {
    world.validate()?;
    config.validate()?;
    let p = &config.vehicle;
    let dt = config.dt;
    let mut state = world.start;
    let mut records = Vec::new();
    let mut outcome = Outcome::StepLimit;
    let (mut lat_int, mut lat_prev, mut lon_int) = (0.0, None::<f64>, 0.0);
    for k in 0..config.max_steps {
        let truth = ground_truth(world, &state);
        // steer toward a centerline point ahead, never past the goal
        let s_target = (truth.road.s + gains.lookahead).min(world.road.length());
        let (target, _) = world.road.pose_at(s_target);
        let bearing = wrap_angle((target.1 - state.y).atan2(target.0 - state.x) - state.psi);
        lat_int += bearing * dt;
        let deriv = lat_prev.map_or(0.0, |prev| (bearing - prev) / dt);
        lat_prev = Some(bearing);
        let delta_target =
            (gains.kp_lat * bearing + gains.ki_lat * lat_int + gains.kd_lat * deriv).clamp(-p.delta_0, p.delta_0);
        let u = ((delta_target - state.delta_f) / dt).clamp(-p.u_0, p.u_0);
        let v_d = tapered_speed(p.v_d, truth.goal_distance);
        let err = v_d - state.v;
        lon_int += err * dt;
        let a = (gains.kp_lon * err + gains.ki_lon * lon_int).clamp(-p.a_0, p.a_0);
        let command = ControlCommand { u, a };
        let heading_force = ForceVector::new(bearing.cos(), bearing.sin(), Frame::Global);
        records.push(TraceRecord {
            t: k as f64 * dt,
            state,
            foe: (f64::NAN, f64::NAN),
            forces: Forces {
                attraction: ForceVector::zero(Frame::Global),
                obstacle: RepulsiveForce::default(),
                road: ForceVector::zero(Frame::Motion),
                total: heading_force,
            },
            curvature: Curvature::Straight,
            obstacle_points: 0,
            psi_d: wrap_angle(state.psi + bearing),
            s_r: f64::NAN,
            s_l: f64::NAN,
            command,
            lateral_offset: truth.lateral_offset,
            clearance: truth.clearance,
        });
        if let Some(end) = check_end(world, config, &truth) {
            outcome = end;
            break;
        }
        state = step(&state, &command, p, dt);
    }
    Ok(RunTrace::new(records, RunSummary::from_outcome(outcome)))
}
