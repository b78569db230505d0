//! Running recorded camera frames through the pipeline and comparing the
//! predicted controls with the recorded ones.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::pipeline::{compose_forces, PipelineConfig, Vision};
use crate::scene::{ground_truth, WorldConfig};
use crate::trace::ControlRecord;
use crate::vehicle::{tapered_speed, HeadingTracker, VehicleState};

/// Steering angles closer to zero than this count as "straight" (rad).
pub const STEER_DEADBAND: f64 = 1e-4;
/// Accelerations closer to zero than this count as "coasting" (m/s^2).
pub const THROTTLE_DEADBAND: f64 = 1e-3;

/// Distance of the stand-in goal placed straight ahead when the recording
/// carries no positions (m).
const BLIND_GOAL_DISTANCE: f64 = 100.0;

/// Predicted and recorded controls at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayRow {
    pub t: f64,
    pub a_recorded: f64,
    pub a_predicted: f64,
    pub delta_recorded: f64,
    /// Steering angle reached by integrating the predicted rate over the
    /// previous step from the previous recorded angle; equal to the recorded
    /// angle on the first row, which has no predecessor.
    pub delta_predicted: f64,
}

/// Agreement between predicted and recorded controls.
///
/// Sign agreement is the share of compared rows whose signs match, with
/// values inside the deadband treated as zero (a sign of its own). Steering
/// is compared from the second row on, throttle on every row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub rows: Vec<ReplayRow>,
    pub steer_sign_agreement: f64,
    pub steer_mae: f64,
    pub throttle_sign_agreement: f64,
    pub throttle_mae: f64,
}

impl ReplayReport {
    fn new(rows: Vec<ReplayRow>) -> Self {
        let steer: Vec<(f64, f64)> = rows[1..]
            .iter()
            .map(|r| (r.delta_predicted, r.delta_recorded))
            .collect();
        let throttle: Vec<(f64, f64)> = rows.iter().map(|r| (r.a_predicted, r.a_recorded)).collect();
        ReplayReport {
            steer_sign_agreement: sign_agreement(&steer, STEER_DEADBAND),
            steer_mae: mae(&steer),
            throttle_sign_agreement: sign_agreement(&throttle, THROTTLE_DEADBAND),
            throttle_mae: mae(&throttle),
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a_recorded,a_predicted,delta_recorded,delta_predicted\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.t, r.a_recorded, r.a_predicted, r.delta_recorded, r.delta_predicted
            );
        }
        out
    }

    pub fn summary_text(&self) -> String {
        format!(
            "frames = {}\nsteer_sign_agreement_pct = {}\nsteer_mae_rad = {}\nthrottle_sign_agreement_pct = {}\nthrottle_mae_mps2 = {}\n",
            self.rows.len(),
            100.0 * self.steer_sign_agreement,
            self.steer_mae,
            100.0 * self.throttle_sign_agreement,
            self.throttle_mae
        )
    }
}

fn signum_with_deadband(x: f64, deadband: f64) -> i8 {
    if x > deadband {
        1
    } else if x < -deadband {
        -1
    } else {
        0
    }
}

fn sign_agreement(pairs: &[(f64, f64)], deadband: f64) -> f64 {
    let hits = pairs
        .iter()
        .filter(|(p, r)| signum_with_deadband(*p, deadband) == signum_with_deadband(*r, deadband))
        .count();
    hits as f64 / pairs.len() as f64
}

fn mae(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(p, r)| (p - r).abs()).sum::<f64>() / pairs.len() as f64
}

/// Predicts throttle and steering for every recorded frame.
///
/// Frame `k` pairs with control row `k`. The controller sees the recorded
/// vehicle state when the rows carry one, and otherwise a vehicle at the
/// origin moving straight ahead at the desired speed toward a goal 100 m in
/// front. The goal is the world's when a world is given, else the last
/// recorded position. Only with a world is the road-boundary force applied,
/// since it needs the road geometry.
pub fn replay(
    frames: &[GrayImage],
    controls: &[ControlRecord],
    config: &PipelineConfig,
    world: Option<&WorldConfig>,
) -> Result<ReplayReport> {
    if frames.len() < 2 || frames.len() != controls.len() {
        let detail = if frames.len() < 2 {
            "replay needs at least two frames".to_string()
        } else {
            "each frame needs exactly one control row".to_string()
        };
        return Err(Error::Alignment {
            frames: frames.len(),
            records: controls.len(),
            detail,
        });
    }
    let p = &config.vehicle;
    let recorded_goal = controls.last().and_then(|c| c.state).map(|(x, y, _, _)| (x, y));
    let goal = world
        .map(|w| w.goal)
        .or(recorded_goal)
        .unwrap_or((BLIND_GOAL_DISTANCE, 0.0));
    let mut vision = Vision::new(config)?;
    let mut tracker = HeadingTracker::new();
    let mut rows = Vec::with_capacity(frames.len());
    let mut prev: Option<(f64, f64)> = None;
    for (frame, rec) in frames.iter().zip(controls) {
        let perception = vision.process(frame)?;
        let state = match rec.state {
            Some((x, y, psi, v)) => VehicleState {
                x,
                y,
                psi,
                v,
                delta_f: rec.delta,
            },
            None => VehicleState {
                delta_f: rec.delta,
                ..VehicleState::new(0.0, 0.0, 0.0, p.v_d)
            },
        };
        let truth = world.map(|w| ground_truth(w, &state));
        let forces = compose_forces(&state, goal, truth.as_ref(), &perception, config)?;
        let dist = (goal.0 - state.x).hypot(goal.1 - state.y);
        let control = tracker.control(&state, &forces.total, tapered_speed(p.v_d, dist), p, config.dt);
        let delta_predicted = match prev {
            Some((delta, u)) => (delta + u * config.dt).clamp(-p.delta_0, p.delta_0),
            None => rec.delta,
        };
        rows.push(ReplayRow {
            t: rec.t,
            a_recorded: rec.a,
            a_predicted: control.command.a,
            delta_recorded: rec.delta,
            delta_predicted,
        });
        prev = Some((rec.delta, control.command.u));
    }
    Ok(ReplayReport::new(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64) -> ControlRecord {
        ControlRecord {
            t,
            a: 0.0,
            delta: 0.0,
            state: None,
        }
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let config = PipelineConfig::default();
        let frame = GrayImage::constant(config.camera.width, config.camera.height, 0.5);
        let one = vec![frame.clone()];
        let two = vec![frame.clone(), frame];
        assert!(matches!(
            replay(&one, &[record(0.0)], &config, None),
            Err(Error::Alignment {
                frames: 1,
                records: 1,
                ..
            })
        ));
        assert!(matches!(
            replay(&two, &[], &config, None),
            Err(Error::Alignment {
                frames: 2,
                records: 0,
                ..
            })
        ));
        assert!(replay(&two, &[record(0.0), record(0.1)], &config, None).is_ok());
    }

    #[test]
    fn agreement_metrics() {
        let pairs = [(0.2, 0.1), (-0.2, 0.1), (0.0, 5e-5), (1.0, 1.0)];
        assert_eq!(sign_agreement(&pairs, 1e-4), 0.75);
        assert!((mae(&pairs) - (0.1 + 0.3 + 5e-5 + 0.0) / 4.0).abs() < 1e-15);
    }
}
