//! `curvewarn`: plan over a scenario and report rider risk.
//!
//! Exit codes: 0 safe, 1 intermediate, 2 danger, 3 error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::error;

use curvewarn::matching::{self, MatchParams};
use curvewarn::road::{self, PolylineDefaults};
use curvewarn::scenario::{self, ScenarioConfig};

const EXIT_ERROR: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "curvewarn", version, about = "Curve-speed warning planner for motorcycles")]
struct Cli {
    /// Log filter, e.g. `info` or `curvewarn::ocp=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Match, fuse, plan and classify one scenario.
    Run(ScenarioArgs),
    /// Solve the scenario for several horizon lengths.
    SweepHorizon {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Horizon lengths [m], comma separated.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Solve the scenario with and without the road slope.
    AblateSlope(ScenarioArgs),
    /// Snap a GPS trace onto a road graph.
    Match {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = MatchParams::default().sigma_gps)]
        sigma_gps: f64,
        #[arg(long, default_value_t = MatchParams::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = MatchParams::default().radius)]
        radius: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive a road profile from a `[lat, lon, ele]` polyline.
    Profile {
        #[arg(long)]
        polyline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Knot spacing [m].
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = PolylineDefaults::default().width)]
        width: f64,
        #[arg(long, default_value_t = PolylineDefaults::default().u_limit)]
        u_limit: f64,
    },
}

/// Scenario file plus command-line overrides of its fields.
#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario TOML file.
    config: PathBuf,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    perception: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    ds: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Ignore the road slope.
    #[arg(long)]
    no_slope: bool,
    /// Use the fixed lane instead of the roll-dependent one.
    #[arg(long)]
    no_roll_lane: bool,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        let i = &mut cfg.inputs;
        for (slot, value) in [
            (&mut i.profile, &self.profile),
            (&mut i.graph, &self.graph),
            (&mut i.trace, &self.trace),
            (&mut i.perception, &self.perception),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        let o = &mut cfg.ocp;
        o.steps = self.steps.unwrap_or(o.steps);
        o.ds = self.ds.unwrap_or(o.ds);
        o.max_iter = self.max_iter.unwrap_or(o.max_iter);
        o.include_slope &= !self.no_slope;
        o.include_roll_lane &= !self.no_roll_lane;
        if self.s0.is_some() {
            cfg.initial.s0 = self.s0;
        }
        if self.speed.is_some() {
            cfg.initial.speed = self.speed;
        }
        cfg.risk.theta1 = self.theta1.unwrap_or(cfg.risk.theta1);
        cfg.risk.theta2 = self.theta2.unwrap_or(cfg.risk.theta2);
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = scenario::run_scenario(&cfg)?;
            println!(
                "{} (min jerk {:.4} m/s^3 at s = {:.1} m, solver {})",
                out.report.overall,
                out.report.min_jerk,
                out.report.worst_s,
                out.solution.status.as_str()
            );
            Ok(out.report.overall.exit_code() as u8)
        }
        Command::SweepHorizon { scenario: args, horizons } => {
            let cfg = args.load()?;
            let horizons = horizons.unwrap_or_else(|| cfg.sweep.horizons.clone());
            let out = scenario::run_horizon_sweep(&cfg, &horizons)?;
            for r in &out.results {
                match (&r.overall, &r.error) {
                    (Some(level), _) => println!(
                        "{:>6.0} m: {} min jerk {:.4}, initial jx {:.4}",
                        r.horizon,
                        level,
                        r.min_jerk.unwrap_or(f64::NAN),
                        r.initial_jx.unwrap_or(f64::NAN)
                    ),
                    (None, Some(e)) => println!("{:>6.0} m: error: {e}", r.horizon),
                    (None, None) => {}
                }
            }
            Ok(0)
        }
        Command::AblateSlope(args) => {
            let cfg = args.load()?;
            let out = scenario::run_slope_ablation(&cfg)?;
            println!(
                "with slope: {} min jerk {:.4}; without: {} min jerk {:.4}",
                out.with_slope.overall, out.with_slope.min_jerk, out.without_slope.overall, out.without_slope.min_jerk
            );
            Ok(0)
        }
        Command::Match {
            graph,
            trace,
            sigma_gps,
            beta,
            radius,
            out,
        } => {
            let g = matching::load_graph(&graph)?;
            let t = matching::load_trace(&trace)?;
            let params = MatchParams { sigma_gps, beta, radius };
            let path = matching::viterbi_match(&t, &g, &params)?;
            let text = scenario::matched_path_json(&path, &g);
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Profile {
            polyline,
            out,
            spacing,
            width,
            u_limit,
        } => {
            let line = road::load_polyline(&polyline)?;
            let profile = road::profile_from_polyline(&line, spacing, PolylineDefaults { width, u_limit })?;
            road::save_profile(&profile, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage-error code would collide with the danger level
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
