//! Command-line front end: `flow`, `simulate`, `replay` and `baseline`.
//!
//! Exit codes: 0 success, 1 usage error (bad arguments or configuration
//! file), 2 runtime failure. A closed-loop run that ends without reaching
//! the goal counts as a runtime failure, but its partial trace, plot and
//! summary are still written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::egomotion::estimate_foe;
use crate::error::{Error, Result};
use crate::features::detect_corners;
use crate::flow::track;
use crate::imgproc::{read_pgm, write_pgm};
use crate::obstacle::TtcWeighting;
use crate::pipeline::{baseline, simulate};
use crate::replay::replay;
use crate::scene::Weather;
use crate::svg::{flow_svg, path_svg};
use crate::trace::{parse_controls, RunTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "visnav",
    version,
    about = "Monocular optical-flow navigation with visual potential fields"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for the ground texture and rain droplets
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Weather applied to rendered frames
    #[arg(long, global = true, value_name = "clear|rain")]
    weather: Option<Weather>,
    /// Weight obstacle points by raw time to contact instead of its inverse
    #[arg(long, global = true)]
    ttc_raw: bool,
    /// Use the discontinuous sign law instead of the boundary layer
    #[arg(long, global = true)]
    pure_sign: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sparse flow and FOE between two PGM frames
    Flow { prev: PathBuf, next: PathBuf },
    /// Closed-loop run of the visual potential-field controller
    Simulate {
        /// Also save every camera frame as PGM under OUT/frames
        #[arg(long)]
        frames: bool,
    },
    /// Predict controls for a directory of PGM frames and compare them with recordings
    Replay {
        frames: PathBuf,
        controls: PathBuf,
        /// Use the configured world's road geometry for the road force
        #[arg(long)]
        with_world: bool,
    },
    /// Waypoint PID baseline on the same world
    Baseline,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    // a malformed configuration is bad input, like a bad flag
    let config = match load_config(&cli.common) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&cli, &config) {
        Ok(report) => {
            print!("{}", report.text);
            if report.success {
                EXIT_OK
            } else {
                eprintln!("error: run did not reach the goal");
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

struct Report {
    text: String,
    success: bool,
}

impl Report {
    fn ok(text: String) -> Self {
        Report { text, success: true }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.pipeline.seed = seed;
        config.world.texture_seed = seed;
    }
    if let Some(weather) = common.weather {
        config.pipeline.weather = weather;
    }
    if common.ttc_raw {
        config.pipeline.repulsive.weighting = TtcWeighting::Raw;
    }
    if common.pure_sign {
        config.pipeline.vehicle.pure_sign = true;
    }
    config.pipeline.validate()?;
    Ok(config)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn execute(cli: &Cli, config: &RunConfig) -> Result<Report> {
    let out = &cli.common.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Flow { prev, next } => cmd_flow(prev, next, config, out),
        Command::Simulate { frames } => cmd_simulate(config, out, *frames),
        Command::Replay {
            frames,
            controls,
            with_world,
        } => cmd_replay(frames, controls, config, out, *with_world),
        Command::Baseline => {
            let trace = baseline(&config.world, &config.pipeline, &config.pid)?;
            finish_run(config, out, "baseline", trace)
        }
    }
}

fn cmd_flow(prev: &Path, next: &Path, config: &RunConfig, out: &Path) -> Result<Report> {
    let p = &config.pipeline;
    let a = read_pgm(prev)?;
    let b = read_pgm(next)?;
    let corners = detect_corners(
        a.raster(),
        p.detector.max_corners,
        p.detector.quality_level,
        p.detector.min_distance,
    );
    let flow = track(&a, &b, &corners, &p.lk, p.dt)?;
    let foe = estimate_foe(&flow, p.foe.min_speed).ok();
    let mut csv = String::from("x,y,vx,vy,valid\n");
    for v in &flow.vectors {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            v.origin.x,
            v.origin.y,
            v.vx,
            v.vy,
            u8::from(v.valid)
        );
    }
    write(&out.join("flow.csv"), csv)?;
    let foe_xy = foe.as_ref().map(|f| (f.x_foe, f.y_foe));
    write(&out.join("flow.svg"), flow_svg(a.width(), a.height(), &flow, foe_xy))?;
    let mut text = format!("features = {}\nvalid = {}\n", flow.vectors.len(), flow.valid_count());
    match foe {
        Some(f) => {
            let _ = writeln!(text, "foe = {} {}\nfoe_condition = {}", f.x_foe, f.y_foe, f.condition);
        }
        None => text.push_str("foe = none\n"),
    }
    Ok(Report::ok(text))
}

fn cmd_simulate(config: &RunConfig, out: &Path, save_frames: bool) -> Result<Report> {
    let frame_dir = out.join("frames");
    if save_frames {
        std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    }
    let trace = simulate(&config.world, &config.pipeline, |k, frame| {
        if save_frames {
            write_pgm(frame, frame_dir.join(format!("frame_{k:05}.pgm")))?;
        }
        Ok(())
    })?;
    finish_run(config, out, "simulate", trace)
}

fn finish_run(config: &RunConfig, out: &Path, label: &str, trace: RunTrace) -> Result<Report> {
    trace.write_csv(&out.join("trace.csv"))?;
    write(&out.join("path.svg"), path_svg(&config.world, &[(label, &trace)]))?;
    let summary = trace.summary.to_text();
    write(&out.join("summary.txt"), &summary)?;
    Ok(Report {
        text: summary,
        success: trace.summary.goal_reached,
    })
}

fn cmd_replay(frames_dir: &Path, controls: &Path, config: &RunConfig, out: &Path, with_world: bool) -> Result<Report> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(frames_dir)
        .map_err(|e| Error::io(frames_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let frames = paths.iter().map(read_pgm).collect::<Result<Vec<_>>>()?;
    let text = std::fs::read_to_string(controls).map_err(|e| Error::io(controls, e))?;
    let records = parse_controls(&text)?;
    let world = with_world.then_some(&config.world);
    let report = replay(&frames, &records, &config.pipeline, world)?;
    write(&out.join("replay.csv"), report.to_csv())?;
    let summary = report.summary_text();
    write(&out.join("replay_summary.txt"), &summary)?;
    Ok(Report::ok(summary))
}
