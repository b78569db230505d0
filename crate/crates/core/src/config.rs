//! Plain-text run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, and keys are dotted
//! namespaces (`lk.window = 25`). Every key is optional; anything not named
//! keeps its default. Unknown keys, repeated keys and unparsable values are
//! reported with their 1-based line number.
//!
//! `world.course` picks a built-in course and is applied before every other
//! `world.*` key, so its position in the file does not matter. When
//! `world.texture_seed` is absent the ground texture follows `sim.seed`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::obstacle::{MotionModel, TtcWeighting};
use crate::pipeline::{PidGains, PipelineConfig};
use crate::scene::{Course, Obstacle, Weather, WorldConfig};

/// Everything a `simulate`, `baseline` or `replay` run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub world: WorldConfig,
    pub pid: PidGains,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            world: WorldConfig::course(Course::StraightArc, 0),
            pid: PidGains::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = entries(text)?;
        let mut config = RunConfig::default();
        let mut texture_seed = None;
        let mut course = Course::StraightArc;
        if let Some(e) = entries.iter().find(|e| e.key == "world.course") {
            course = e.parse()?;
        }
        config.world = WorldConfig::course(course, 0);
        for e in &entries {
            if e.key == "world.texture_seed" {
                texture_seed = Some(e.parse()?);
            } else if e.key != "world.course" {
                config.apply(e)?;
            }
        }
        config.world.texture_seed = texture_seed.unwrap_or(config.pipeline.seed);
        config.pipeline.validate()?;
        config.world.validate()?;
        Ok(config)
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let p = &mut self.pipeline;
        let w = &mut self.world;
        let g = &mut self.pid;
        match e.key.as_str() {
            "detector.max_corners" => p.detector.max_corners = e.parse()?,
            "detector.quality_level" => p.detector.quality_level = e.parse()?,
            "detector.min_distance" => p.detector.min_distance = e.parse()?,

            "lk.window" => p.lk.window = e.parse()?,
            "lk.epsilon" => p.lk.epsilon = e.parse()?,
            "lk.max_iters" => p.lk.max_iters = e.parse()?,
            "lk.levels" => p.lk.levels = e.parse()?,
            "lk.min_eigen" => p.lk.min_eigen = e.parse()?,
            "lk.min_isotropy" => p.lk.min_isotropy = e.parse()?,

            "foe.min_speed" => p.foe.min_speed = e.parse()?,
            "foe.exclusion_radius" => p.foe.exclusion_radius = e.parse()?,
            "foe.ttc_max" => p.foe.ttc_max = e.parse()?,
            "foe.ema" => p.foe.ema = e.parse()?,

            "segment.model" => {
                p.segment.model = match e.value.as_str() {
                    "radial" => MotionModel::Radial,
                    "ground_plane" => MotionModel::GroundPlane,
                    _ => return Err(e.error("expected radial or ground_plane")),
                }
            }
            "segment.splat_radius" => p.segment.splat_radius = e.parse()?,
            "segment.min_residual" => p.segment.min_residual = e.parse()?,
            "segment.max_residual" => p.segment.max_residual = e.parse()?,
            "segment.relative_residual" => p.segment.relative_residual = e.parse()?,

            "repulsive.gamma" => p.repulsive.gamma = e.parse()?,
            "repulsive.ttc_min" => p.repulsive.ttc_min = e.parse()?,
            "repulsive.weighting" => {
                p.repulsive.weighting = match e.value.as_str() {
                    "inverse" => TtcWeighting::Inverse,
                    "raw" => TtcWeighting::Raw,
                    _ => return Err(e.error("expected inverse or raw")),
                }
            }
            "repulsive.roi_fraction" => p.roi_fraction = e.parse()?,
            "repulsive.sigma" => {
                p.obstacle_sigma = match e.value.as_str() {
                    "auto" => None,
                    _ => Some(e.parse()?),
                }
            }

            "field.a" => p.field.a = e.parse()?,
            "field.b" => p.field.b = e.parse()?,
            "field.c2_straight" => p.field.c2_straight = e.parse()?,
            "field.c2_curve" => p.field.c2_curve = e.parse()?,
            "field.c1" => p.field.c1 = e.parse()?,
            "field.c0_left" => p.field.c0_left = e.parse()?,
            "field.c0_right" => p.field.c0_right = e.parse()?,
            "field.delta_x" => p.field.delta_x = e.parse()?,
            "field.center_band" => p.center_band = e.parse()?,
            "field.step" => p.field_step = e.parse()?,

            "composition.alpha" => p.alpha = e.parse()?,
            "composition.lambda_x" => p.composition.lambda_x = e.parse()?,
            "composition.lambda_y" => p.composition.lambda_y = e.parse()?,
            "composition.k_img" => p.composition.k_img = e.parse()?,
            "composition.k_ttc" => p.composition.k_ttc = e.parse()?,

            "vehicle.l_f" => p.vehicle.l_f = e.parse()?,
            "vehicle.l_r" => p.vehicle.l_r = e.parse()?,
            "vehicle.delta_0" => p.vehicle.delta_0 = e.parse()?,
            "vehicle.u_0" => p.vehicle.u_0 = e.parse()?,
            "vehicle.a_0" => p.vehicle.a_0 = e.parse()?,
            "vehicle.c_r" => p.vehicle.c_r = e.parse()?,
            "vehicle.c_l" => p.vehicle.c_l = e.parse()?,
            "vehicle.v_d" => p.vehicle.v_d = e.parse()?,
            "vehicle.phi_band" => p.vehicle.phi_band = e.parse()?,
            "vehicle.pure_sign" => p.vehicle.pure_sign = e.parse()?,

            "camera.mount_x" => p.camera.mount.0 = e.parse()?,
            "camera.mount_y" => p.camera.mount.1 = e.parse()?,
            "camera.mount_z" => p.camera.mount.2 = e.parse()?,
            "camera.pitch" => p.camera.pitch = e.parse()?,
            "camera.focal" => p.camera.focal = e.parse()?,
            "camera.cx" => p.camera.principal.0 = e.parse()?,
            "camera.cy" => p.camera.principal.1 = e.parse()?,
            "camera.width" => p.camera.width = e.parse()?,
            "camera.height" => p.camera.height = e.parse()?,

            "sim.dt" => p.dt = e.parse()?,
            "sim.max_steps" => p.max_steps = e.parse()?,
            "sim.flow_gap" => p.flow_gap = e.parse()?,
            "sim.weather" => p.weather = e.parse()?,
            "sim.seed" => p.seed = e.parse()?,
            "sim.corridor_margin" => p.corridor_margin = e.parse()?,

            "pid.lookahead" => g.lookahead = e.parse()?,
            "pid.kp_lat" => g.kp_lat = e.parse()?,
            "pid.ki_lat" => g.ki_lat = e.parse()?,
            "pid.kd_lat" => g.kd_lat = e.parse()?,
            "pid.kp_lon" => g.kp_lon = e.parse()?,
            "pid.ki_lon" => g.ki_lon = e.parse()?,

            "world.lanes" => w.road.lane_count = e.parse()?,
            "world.start_x" => w.start.x = e.parse()?,
            "world.start_y" => w.start.y = e.parse()?,
            "world.start_psi" => w.start.psi = e.parse()?,
            "world.start_v" => w.start.v = e.parse()?,
            "world.goal_x" => w.goal.0 = e.parse()?,
            "world.goal_y" => w.goal.1 = e.parse()?,
            "world.obstacles" => match e.value.as_str() {
                "none" => w.obstacles.clear(),
                _ => return Err(e.error("only 'none' is accepted; add boxes with world.obstacle")),
            },
            "world.obstacle" => w.obstacles.push(e.obstacle()?),
            _ => return Err(e.error("unknown key")),
        }
        if w.road.lane_count == 0 {
            return Err(e.error("world.lanes must be positive"));
        }
        Ok(())
    }

    /// Every pipeline and PID key with its current value, in the file format.
    ///
    /// World geometry is not included: it comes from `world.course` plus
    /// overrides and has no single textual form.
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let g = &self.pid;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("detector.max_corners", p.detector.max_corners.to_string());
        put("detector.quality_level", p.detector.quality_level.to_string());
        put("detector.min_distance", p.detector.min_distance.to_string());
        put("lk.window", p.lk.window.to_string());
        put("lk.epsilon", p.lk.epsilon.to_string());
        put("lk.max_iters", p.lk.max_iters.to_string());
        put("lk.levels", p.lk.levels.to_string());
        put("lk.min_eigen", p.lk.min_eigen.to_string());
        put("lk.min_isotropy", p.lk.min_isotropy.to_string());
        put("foe.min_speed", p.foe.min_speed.to_string());
        put("foe.exclusion_radius", p.foe.exclusion_radius.to_string());
        put("foe.ttc_max", p.foe.ttc_max.to_string());
        put("foe.ema", p.foe.ema.to_string());
        let model = match p.segment.model {
            MotionModel::Radial => "radial",
            MotionModel::GroundPlane => "ground_plane",
        };
        put("segment.model", model.to_string());
        put("segment.splat_radius", p.segment.splat_radius.to_string());
        put("segment.min_residual", p.segment.min_residual.to_string());
        put("segment.max_residual", p.segment.max_residual.to_string());
        put("segment.relative_residual", p.segment.relative_residual.to_string());
        put("repulsive.gamma", p.repulsive.gamma.to_string());
        put("repulsive.ttc_min", p.repulsive.ttc_min.to_string());
        let weighting = match p.repulsive.weighting {
            TtcWeighting::Inverse => "inverse",
            TtcWeighting::Raw => "raw",
        };
        put("repulsive.weighting", weighting.to_string());
        put("repulsive.roi_fraction", p.roi_fraction.to_string());
        put(
            "repulsive.sigma",
            p.obstacle_sigma.map_or("auto".to_string(), |s| s.to_string()),
        );
        put("field.a", p.field.a.to_string());
        put("field.b", p.field.b.to_string());
        put("field.c2_straight", p.field.c2_straight.to_string());
        put("field.c2_curve", p.field.c2_curve.to_string());
        put("field.c1", p.field.c1.to_string());
        put("field.c0_left", p.field.c0_left.to_string());
        put("field.c0_right", p.field.c0_right.to_string());
        put("field.delta_x", p.field.delta_x.to_string());
        put("field.center_band", p.center_band.to_string());
        put("field.step", p.field_step.to_string());
        put("composition.alpha", p.alpha.to_string());
        put("composition.lambda_x", p.composition.lambda_x.to_string());
        put("composition.lambda_y", p.composition.lambda_y.to_string());
        put("composition.k_img", p.composition.k_img.to_string());
        put("composition.k_ttc", p.composition.k_ttc.to_string());
        put("vehicle.l_f", p.vehicle.l_f.to_string());
        put("vehicle.l_r", p.vehicle.l_r.to_string());
        put("vehicle.delta_0", p.vehicle.delta_0.to_string());
        put("vehicle.u_0", p.vehicle.u_0.to_string());
        put("vehicle.a_0", p.vehicle.a_0.to_string());
        put("vehicle.c_r", p.vehicle.c_r.to_string());
        put("vehicle.c_l", p.vehicle.c_l.to_string());
        put("vehicle.v_d", p.vehicle.v_d.to_string());
        put("vehicle.phi_band", p.vehicle.phi_band.to_string());
        put("vehicle.pure_sign", p.vehicle.pure_sign.to_string());
        put("camera.mount_x", p.camera.mount.0.to_string());
        put("camera.mount_y", p.camera.mount.1.to_string());
        put("camera.mount_z", p.camera.mount.2.to_string());
        put("camera.pitch", p.camera.pitch.to_string());
        put("camera.focal", p.camera.focal.to_string());
        put("camera.cx", p.camera.principal.0.to_string());
        put("camera.cy", p.camera.principal.1.to_string());
        put("camera.width", p.camera.width.to_string());
        put("camera.height", p.camera.height.to_string());
        put("sim.dt", p.dt.to_string());
        put("sim.max_steps", p.max_steps.to_string());
        put("sim.flow_gap", p.flow_gap.to_string());
        let weather = match p.weather {
            Weather::Clear => "clear",
            Weather::Rain => "rain",
        };
        put("sim.weather", weather.to_string());
        put("sim.seed", p.seed.to_string());
        put("sim.corridor_margin", p.corridor_margin.to_string());
        put("pid.lookahead", g.lookahead.to_string());
        put("pid.kp_lat", g.kp_lat.to_string());
        put("pid.ki_lat", g.ki_lat.to_string());
        put("pid.kd_lat", g.kd_lat.to_string());
        put("pid.kp_lon", g.kp_lon.to_string());
        put("pid.ki_lon", g.ki_lon.to_string());
        out
    }
}

impl FromStr for Course {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Course::Straight),
            "straight_arc" => Ok(Course::StraightArc),
            "two_obstacles" => Ok(Course::TwoObstacles),
            other => Err(Error::invalid(format!(
                "unknown course '{other}' (expected straight, straight_arc or two_obstacles)"
            ))),
        }
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

impl Entry {
    fn error(&self, message: &str) -> Error {
        Error::Config {
            line: self.line,
            message: format!("{}: {message} (got '{}')", self.key, self.value),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T> {
        self.value.parse().map_err(|_| self.error("cannot parse value"))
    }

    /// `x, y, half_x, half_y, half_z, yaw, intensity`
    fn obstacle(&self) -> Result<Obstacle> {
        let v: Vec<f64> = self
            .value
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.error("expected seven numbers"))?;
        let [x, y, hx, hy, hz, yaw, intensity] = v[..] else {
            return Err(self.error("expected x, y, half_x, half_y, half_z, yaw, intensity"));
        };
        Ok(Obstacle {
            center: (x, y),
            half_extents: (hx, hy, hz),
            yaw,
            intensity,
        })
    }
}

fn entries(text: &str) -> Result<Vec<Entry>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config {
                line,
                message: "key and value must both be non-empty".into(),
            });
        }
        if key != "world.obstacle" && !seen.insert(key.to_string()) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(err: Error) -> usize {
        match err {
            Error::Config { line, .. } => line,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("# nothing here\n\n").unwrap();
        assert_eq!(c.pipeline, PipelineConfig::default());
        assert_eq!(c.pid, PidGains::default());
        assert!(c.world.obstacles.is_empty());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse(
            "lk.window = 15   # smaller window\nsim.weather = rain\nvehicle.pure_sign = true\n\
             repulsive.sigma = 40\nsegment.model = radial\nsim.seed = 9\n",
        )
        .unwrap();
        assert_eq!(c.pipeline.lk.window, 15);
        assert_eq!(c.pipeline.weather, Weather::Rain);
        assert!(c.pipeline.vehicle.pure_sign);
        assert_eq!(c.pipeline.obstacle_sigma, Some(40.0));
        assert_eq!(c.pipeline.segment.model, MotionModel::Radial);
        assert_eq!(c.world.texture_seed, 9);
    }

    #[test]
    fn course_applies_before_world_overrides() {
        let c = RunConfig::parse("world.obstacle = 30, 0, 1, 1, 1, 0, 0.5\nworld.course = two_obstacles\n").unwrap();
        assert_eq!(c.world.obstacles.len(), 3);
        let c =
            RunConfig::parse("world.course = two_obstacles\nworld.obstacles = none\nworld.texture_seed = 4\n").unwrap();
        assert!(c.world.obstacles.is_empty());
        assert_eq!(c.world.texture_seed, 4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            line_of(RunConfig::parse("\nlk.window = 25\nnope.key = 1\n").unwrap_err()),
            3
        );
        assert_eq!(line_of(RunConfig::parse("lk.window = big\n").unwrap_err()), 1);
        assert_eq!(
            line_of(RunConfig::parse("lk.window = 25\nlk.window = 27\n").unwrap_err()),
            2
        );
        assert_eq!(line_of(RunConfig::parse("# c\njust words\n").unwrap_err()), 2);
        assert_eq!(line_of(RunConfig::parse("world.obstacle = 1, 2, 3\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse("sim.weather = snow\n").unwrap_err()), 1);
        assert_eq!(line_of(RunConfig::parse("lk.window =\n").unwrap_err()), 1);
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        assert!(matches!(
            RunConfig::parse("sim.dt = 0\n"),
            Err(Error::InvalidParameter(_))
        ));
        assert!(RunConfig::parse("world.lanes = 0\n").is_err());
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.pipeline.lk.epsilon = 0.0123456789;
        c.pipeline.obstacle_sigma = Some(33.5);
        c.pipeline.weather = Weather::Rain;
        c.pipeline.repulsive.weighting = TtcWeighting::Raw;
        c.pid.kd_lat = 0.75;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.pipeline, c.pipeline);
        assert_eq!(back.pid, c.pid);
    }
}
