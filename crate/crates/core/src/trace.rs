//! Run traces: per-step records, summary metrics, and the `trace-v1` CSV format.

use crate::error::{Error, Result};
use crate::pipeline::{Forces, Outcome};
use crate::potential::Curvature;
use crate::vehicle::{ControlCommand, VehicleState};
use std::fmt::Write as _;
use std::path::Path;

pub const TRACE_VERSION: &str = "# trace-v1";

pub const TRACE_COLUMNS: [&str; 25] = [
    "t",
    "x",
    "y",
    "psi",
    "v",
    "delta",
    "foe_x",
    "foe_y",
    "att_x",
    "att_y",
    "obs_x",
    "obs_y",
    "road_x",
    "road_y",
    "total_x",
    "total_y",
    "curvature",
    "obstacle_points",
    "psi_d",
    "s_r",
    "s_l",
    "u",
    "a",
    "lateral_offset",
    "clearance",
];

/// One control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub state: VehicleState,
    pub foe: (f64, f64),
    pub forces: Forces,
    pub curvature: Curvature,
    pub obstacle_points: usize,
    pub psi_d: f64,
    pub s_r: f64,
    pub s_l: f64,
    pub command: ControlCommand,
    pub lateral_offset: f64,
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub goal_reached: bool,
    pub steps: usize,
    /// Mean absolute offset from the reference line (m).
    pub mean_abs_lateral: f64,
    /// Mean squared offset from the reference line (m^2).
    pub mse_lateral: f64,
    pub max_abs_lateral: f64,
    pub min_clearance: f64,
}

impl RunSummary {
    pub fn from_outcome(outcome: Outcome) -> Self {
        RunSummary {
            outcome,
            goal_reached: outcome == Outcome::GoalReached,
            steps: 0,
            mean_abs_lateral: f64::NAN,
            mse_lateral: f64::NAN,
            max_abs_lateral: f64::NAN,
            min_clearance: f64::INFINITY,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "outcome = {}\ngoal_reached = {}\nsteps = {}\nmean_abs_lateral_m = {}\nmse_lateral_m2 = {}\nmax_abs_lateral_m = {}\nmin_clearance_m = {}\n",
            self.outcome.as_str(),
            self.goal_reached,
            self.steps,
            self.mean_abs_lateral,
            self.mse_lateral,
            self.max_abs_lateral,
            self.min_clearance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
}

impl RunTrace {
    pub fn new(records: Vec<TraceRecord>, mut summary: RunSummary) -> Self {
        let n = records.len();
        summary.steps = n;
        if n > 0 {
            let offsets = records.iter().map(|r| r.lateral_offset);
            summary.mean_abs_lateral = offsets.clone().map(f64::abs).sum::<f64>() / n as f64;
            summary.mse_lateral = offsets.clone().map(|e| e * e).sum::<f64>() / n as f64;
            summary.max_abs_lateral = offsets.map(f64::abs).fold(0.0, f64::max);
            summary.min_clearance = records.iter().map(|r| r.clearance).fold(f64::INFINITY, f64::min);
        }
        RunTrace { records, summary }
    }

    pub fn mean_abs_lateral(&self) -> f64 {
        self.summary.mean_abs_lateral
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 300 + 256);
        out.push_str(TRACE_VERSION);
        out.push('\n');
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            let f = &r.forces;
            let fields = [
                r.t,
                r.state.x,
                r.state.y,
                r.state.psi,
                r.state.v,
                r.state.delta_f,
                r.foe.0,
                r.foe.1,
                f.attraction.fx,
                f.attraction.fy,
                f.obstacle.f_x,
                f.obstacle.f_y,
                f.road.fx,
                f.road.fy,
                f.total.fx,
                f.total.fy,
            ];
            for v in fields {
                let _ = write!(out, "{v},");
            }
            let _ = write!(out, "{},{},", r.curvature.as_str(), r.obstacle_points);
            let tail = [
                r.psi_d,
                r.s_r,
                r.s_l,
                r.command.u,
                r.command.a,
                r.lateral_offset,
                r.clearance,
            ];
            let last = tail.len() - 1;
            for (i, v) in tail.into_iter().enumerate() {
                let _ = write!(out, "{v}{}", if i == last { "\n" } else { "," });
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A row of recorded controls, with the vehicle state when the file has it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRecord {
    pub t: f64,
    pub a: f64,
    pub delta: f64,
    /// `(x, y, psi, v)` if the file carries those columns.
    pub state: Option<(f64, f64, f64, f64)>,
}

/// Parses a controls CSV: `#` lines are comments, the first other line is a
/// header that must name `t`, `a` and `delta`; `x`, `y`, `psi`, `v` are optional.
/// A `trace-v1` file qualifies.
pub fn parse_controls(text: &str) -> Result<Vec<ControlRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let Some((header_line, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| names.iter().position(|n| *n == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::Config {
            line: header_line + 1,
            message: format!("controls header lacks column '{name}'"),
        })
    };
    let (ct, ca, cd) = (required("t")?, required("a")?, required("delta")?);
    let state_cols = match (col("x"), col("y"), col("psi"), col("v")) {
        (Some(x), Some(y), Some(p), Some(v)) => Some((x, y, p, v)),
        _ => None,
    };
    let mut out = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |c: usize| -> Result<f64> {
            let raw = fields.get(c).ok_or_else(|| Error::Config {
                line: idx + 1,
                message: format!("expected {} fields, found {}", names.len(), fields.len()),
            })?;
            raw.parse::<f64>().map_err(|_| Error::Config {
                line: idx + 1,
                message: format!("'{raw}' is not a number"),
            })
        };
        let state = match state_cols {
            Some((x, y, p, v)) => Some((num(x)?, num(y)?, num(p)?, num(v)?)),
            None => None,
        };
        out.push(ControlRecord {
            t: num(ct)?,
            a: num(ca)?,
            delta: num(cd)?,
            state,
        });
    }
    Ok(out)
}
