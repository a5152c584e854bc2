//! End-to-end scenario pipeline: match, fuse, plan, classify, write artifacts.
//!
//! A scenario is a TOML file:
//!
//! ```toml
//! [inputs]
//! profile = "road.json"          # required
//! graph = "graph.json"           # optional, with trace
//! trace = "trace.csv"            # optional, t,lat,lon
//! perception = "perception.csv"  # optional, t,n_lnet,phi_rnet
//!
//! [initial]                      # used where no measurement is given
//! s0 = 0.0
//! speed = 20.0
//!
//! [ocp]
//! steps = 500
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths resolve against the directory of the scenario file. The
//! `[bike]`, `[ocp]`, `[risk]` and `[matching]` sections accept every field
//! of the corresponding parameter structs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::fusion::{self, build_initial_state, FusionError, FusionInput, InitialState, PerceptionSample};
use crate::matching::{self, MatchError, MatchParams, MatchedPath, RoadGraph};
use crate::model::{BikeParams, ModelError, StateSpace};
use crate::ocp::{self, OcpConfig, OcpError, OcpSolution, SolveStatus};
use crate::risk::{classify_maneuver, RiskError, RiskLevel, RiskReport, RiskThresholds};
use crate::road::{self, RoadError, RoadProfile};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario {path}: {message}")]
    Config { path: String, message: String },
    #[error("missing input file {0}")]
    MissingFile(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub profile: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub perception: Option<PathBuf>,
}

/// Initial state values used where no measurement is available.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub s0: Option<f64>,
    /// Lane position [m]; lane center when absent.
    pub n: Option<f64>,
    pub speed: Option<f64>,
    pub alpha: f64,
    pub phi: f64,
    /// Yaw rate [rad/s]; steady cornering when absent.
    pub wpsi: Option<f64>,
    pub wphi: f64,
    pub ax: f64,
    pub apsi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Horizon lengths [m].
    pub horizons: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            horizons: vec![500.0, 200.0, 100.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub inputs: Inputs,
    pub initial: InitialSpec,
    pub bike: BikeParams,
    pub ocp: OcpConfig,
    pub risk: RiskThresholds,
    pub matching: MatchParams,
    pub output: OutputSpec,
    pub sweep: SweepSpec,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads a scenario file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ScenarioError::MissingFile(path.display().to_string()),
            _ => io_err(path)(e),
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| ScenarioError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.profile, &mut i.graph, &mut i.trace, &mut i.perception].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let profile = self
            .inputs
            .profile
            .as_ref()
            .ok_or_else(|| ScenarioError::Invalid("inputs.profile is required".into()))?;
        let i = &self.inputs;
        for p in [Some(profile), i.graph.as_ref(), i.trace.as_ref(), i.perception.as_ref()]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(ScenarioError::MissingFile(p.display().to_string()));
            }
        }
        if i.trace.is_some() != i.graph.is_some() {
            return Err(ScenarioError::Invalid("inputs.trace and inputs.graph go together".into()));
        }
        self.ocp.validate()?;
        self.bike.validate()?;
        self.risk.validate()?;
        self.matching.validate()?;
        Ok(())
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub initial: InitialState,
    pub solution: OcpSolution,
    pub report: RiskReport,
    pub artifacts: Vec<PathBuf>,
}

/// Where the bike is, derived from the trace when one is given.
struct Localization {
    s: Option<f64>,
    speed: Option<f64>,
    heading: Option<f64>,
    time: Option<f64>,
}

fn localize(cfg: &ScenarioConfig) -> Result<Localization, ScenarioError> {
    let (Some(graph_path), Some(trace_path)) = (&cfg.inputs.graph, &cfg.inputs.trace) else {
        return Ok(Localization {
            s: None,
            speed: None,
            heading: None,
            time: None,
        });
    };
    let graph = matching::load_graph(graph_path)?;
    let trace = matching::load_trace(trace_path)?;
    let path = matching::viterbi_match(&trace, &graph, &cfg.matching)?;
    let s = matching::matched_arclength(&path, &graph)?;
    let last = path.matches.last().ok_or(MatchError::NoPath)?;
    let t_last = trace.fixes()[last.fix_index].t;
    let speed = (path.matches.len() >= 2).then(|| {
        let prev = &path.matches[path.matches.len() - 2];
        let dt = t_last - trace.fixes()[prev.fix_index].t;
        (s[s.len() - 1] - s[s.len() - 2]) / dt
    });
    Ok(Localization {
        s: s.last().copied(),
        speed,
        heading: Some(graph.heading_at(last.edge, last.offset)),
        time: Some(t_last),
    })
}

/// Perception sample at (or last before) `time`, and its predecessor.
fn pick_perception(samples: &[PerceptionSample], time: Option<f64>) -> (PerceptionSample, Option<PerceptionSample>) {
    let idx = match time {
        Some(t) => samples.iter().rposition(|p| p.timestamp <= t).unwrap_or(0),
        None => samples.len() - 1,
    };
    (samples[idx], idx.checked_sub(1).map(|i| samples[i]))
}

/// Initial state from measurements where present and `[initial]` otherwise.
pub fn initial_state(cfg: &ScenarioConfig, profile: &RoadProfile) -> Result<InitialState, ScenarioError> {
    let loc = localize(cfg)?;
    let spec = &cfg.initial;
    let s0 = spec.s0.or(loc.s).unwrap_or(profile.start());
    let speed = spec
        .speed
        .or(loc.speed)
        .ok_or_else(|| ScenarioError::Invalid("no speed: set initial.speed or give a trace".into()))?;
    let road = profile.query(s0)?;

    if let Some(perc_path) = &cfg.inputs.perception {
        let samples = fusion::load_perception(perc_path)?;
        let (cur, prev) = pick_perception(&samples, loc.time);
        let current = FusionInput {
            perception: cur,
            speed,
            s: s0,
            heading: loc.heading,
        };
        let previous = prev.map(|p| FusionInput {
            perception: p,
            speed,
            s: (s0 - speed * (cur.timestamp - p.timestamp)).max(profile.start()),
            heading: None,
        });
        let mut st = build_initial_state(&current, previous.as_ref(), profile, &cfg.bike)?;
        if let Some(w) = spec.wpsi {
            st.x0.wpsi = w;
        }
        return Ok(st);
    }

    let n = spec.n.unwrap_or(0.5 * road.width);
    let geometry = 1.0 - n * road.kappa;
    if geometry <= 0.0 {
        return Err(ModelError::SingularGeometry(geometry).into());
    }
    Ok(InitialState {
        s0,
        x0: StateSpace {
            n,
            alpha: spec.alpha,
            phi: spec.phi,
            ux: speed,
            wpsi: spec.wpsi.unwrap_or(road.kappa * speed / geometry),
            wphi: spec.wphi,
            ax: spec.ax,
            apsi: spec.apsi,
        },
        clamps: Vec::new(),
    })
}

/// Loads the profile and initial state and solves once with `ocp`.
fn plan_with(cfg: &ScenarioConfig, profile: &RoadProfile, initial: &InitialState, ocp_cfg: &OcpConfig) -> Result<(OcpSolution, RiskReport), ScenarioError> {
    let mut c = *ocp_cfg;
    c.s0 = initial.s0;
    let sol = ocp::plan(profile, initial.x0, &c, &cfg.bike)?;
    info!(
        "solve: steps={} status={} iterations={} objective={:.6}",
        c.steps,
        sol.status.as_str(),
        sol.iterations,
        sol.objective
    );
    let report = classify_maneuver(&sol, &cfg.risk)?;
    Ok((sol, report))
}

fn load_inputs(cfg: &ScenarioConfig) -> Result<(RoadProfile, InitialState), ScenarioError> {
    cfg.validate()?;
    let profile = road::load_profile(cfg.inputs.profile.as_ref().expect("validated"))?;
    let initial = initial_state(cfg, &profile)?;
    Ok((profile, initial))
}

fn write_file(path: &Path, content: &str) -> Result<(), ScenarioError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, content).map_err(io_err(path))
}

/// Trajectory table, one row per grid point.
pub fn trajectory_csv(sol: &OcpSolution, report: &RiskReport) -> String {
    let mut out = String::from("s,n,alpha,phi,ux,wpsi,wphi,ax,apsi,jx,jpsi,gg_ratio,n_lo,n_hi,risk\n");
    for (k, x) in sol.states.iter().enumerate() {
        let (jx, jpsi, risk) = match sol.inputs.get(k) {
            Some(u) => (u.jx.to_string(), u.jpsi.to_string(), report.per_step[k].as_str()),
            None => (String::new(), String::new(), ""),
        };
        let (lo, hi) = sol.lane[k];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{jx},{jpsi},{},{lo},{hi},{risk}",
            sol.s[k], x.n, x.alpha, x.phi, x.ux, x.wpsi, x.wphi, x.ax, x.apsi, sol.gg_ratio[k]
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct SolverSummary {
    status: SolveStatus,
    iterations: usize,
    kkt: f64,
    feasibility: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RiskDocument {
    overall: RiskLevel,
    worst_s: f64,
    min_jerk: f64,
    thresholds: RiskThresholds,
    solver: SolverSummary,
}

pub fn risk_json(sol: &OcpSolution, report: &RiskReport, th: &RiskThresholds) -> String {
    let doc = RiskDocument {
        overall: report.overall,
        worst_s: report.worst_s,
        min_jerk: report.min_jerk,
        thresholds: *th,
        solver: SolverSummary {
            status: sol.status,
            iterations: sol.iterations,
            kkt: sol.kkt_residual,
            feasibility: sol.feasibility_residual,
        },
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    s.push('\n');
    s
}

/// Match, fuse, plan and classify; writes `trajectory.csv` and `risk.json`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    let (profile, initial) = load_inputs(cfg)?;
    let (solution, report) = plan_with(cfg, &profile, &initial, &cfg.ocp)?;
    let traj_path = cfg.output.dir.join("trajectory.csv");
    let risk_path = cfg.output.dir.join("risk.json");
    write_file(&traj_path, &trajectory_csv(&solution, &report))?;
    write_file(&risk_path, &risk_json(&solution, &report, &cfg.risk))?;
    Ok(RunOutcome {
        initial,
        solution,
        report,
        artifacts: vec![traj_path, risk_path],
    })
}

/// Grid steps for a horizon length: `(N + 1) d_s` covers the horizon.
pub fn steps_for_horizon(horizon: f64, ds: f64) -> usize {
    ((horizon / ds).round() as usize).saturating_sub(1)
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonResult {
    pub horizon: f64,
    pub steps: usize,
    pub status: Option<SolveStatus>,
    pub objective: Option<f64>,
    pub min_jerk: Option<f64>,
    pub initial_jx: Option<f64>,
    pub initial_ax: Option<f64>,
    pub overall: Option<RiskLevel>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub results: Vec<HorizonResult>,
    pub solutions: Vec<Option<OcpSolution>>,
    pub artifacts: Vec<PathBuf>,
}

fn sweep_csv(results: &[HorizonResult]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("horizon,steps,status,objective,min_jerk,initial_jx,initial_ax,overall,error\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.horizon,
            r.steps,
            r.status.map(|s| s.as_str()).unwrap_or(""),
            opt(r.objective),
            opt(r.min_jerk),
            opt(r.initial_jx),
            opt(r.initial_ax),
            r.overall.map(|o| o.as_str()).unwrap_or(""),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    out
}

/// One solve per horizon from a shared initial state, run concurrently;
/// writes `sweep.csv`. Per-horizon failures are recorded, not fatal.
pub fn run_horizon_sweep(cfg: &ScenarioConfig, horizons: &[f64]) -> Result<SweepOutcome, ScenarioError> {
    let (profile, initial) = load_inputs(cfg)?;
    let runs: Vec<Result<(OcpSolution, RiskReport), ScenarioError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = horizons
            .iter()
            .map(|&h| {
                let (profile, initial) = (&profile, &initial);
                scope.spawn(move || {
                    let ocp_cfg = OcpConfig {
                        steps: steps_for_horizon(h, cfg.ocp.ds),
                        ..cfg.ocp
                    };
                    plan_with(cfg, profile, initial, &ocp_cfg)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut results = Vec::with_capacity(horizons.len());
    let mut solutions = Vec::with_capacity(horizons.len());
    for (&h, run) in horizons.iter().zip(runs) {
        let steps = steps_for_horizon(h, cfg.ocp.ds);
        match run {
            Ok((sol, rep)) => {
                results.push(HorizonResult {
                    horizon: h,
                    steps,
                    status: Some(sol.status),
                    objective: Some(sol.objective),
                    min_jerk: Some(rep.min_jerk),
                    initial_jx: Some(sol.inputs[0].jx),
                    initial_ax: Some(sol.states[1].ax),
                    overall: Some(rep.overall),
                    error: None,
                });
                solutions.push(Some(sol));
            }
            Err(e) => {
                results.push(HorizonResult {
                    horizon: h,
                    steps,
                    status: None,
                    objective: None,
                    min_jerk: None,
                    initial_jx: None,
                    initial_ax: None,
                    overall: None,
                    error: Some(e.to_string()),
                });
                solutions.push(None);
            }
        }
    }
    let path = cfg.output.dir.join("sweep.csv");
    write_file(&path, &sweep_csv(&results))?;
    Ok(SweepOutcome {
        results,
        solutions,
        artifacts: vec![path],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationArm {
    pub status: SolveStatus,
    pub objective: f64,
    pub min_jerk: f64,
    pub worst_s: f64,
    pub overall: RiskLevel,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeAblation {
    pub with_slope: AblationArm,
    pub without_slope: AblationArm,
    /// `with - without` of the minimum jerk.
    pub min_jerk_difference: f64,
    /// Sign of the difference: -1, 0 or 1.
    pub sign: i8,
    #[serde(skip)]
    pub solutions: [OcpSolution; 2],
    #[serde(skip)]
    pub artifacts: Vec<PathBuf>,
}

/// Solves with and without the road slope; writes `slope_ablation.json`.
pub fn run_slope_ablation(cfg: &ScenarioConfig) -> Result<SlopeAblation, ScenarioError> {
    let (profile, initial) = load_inputs(cfg)?;
    if !profile.has_slope() {
        log::warn!("slope ablation on a profile without slope; both arms are identical");
    }
    let arm = |include_slope: bool| {
        let c = OcpConfig {
            include_slope,
            ..cfg.ocp
        };
        plan_with(cfg, &profile, &initial, &c)
    };
    let (with_sol, with_rep) = arm(true)?;
    let (without_sol, without_rep) = arm(false)?;
    let summary = |sol: &OcpSolution, rep: &RiskReport| AblationArm {
        status: sol.status,
        objective: sol.objective,
        min_jerk: rep.min_jerk,
        worst_s: rep.worst_s,
        overall: rep.overall,
    };
    let diff = with_rep.min_jerk - without_rep.min_jerk;
    let sign = if diff < 0.0 {
        -1
    } else if diff > 0.0 {
        1
    } else {
        0
    };
    let path = cfg.output.dir.join("slope_ablation.json");
    let result = SlopeAblation {
        with_slope: summary(&with_sol, &with_rep),
        without_slope: summary(&without_sol, &without_rep),
        min_jerk_difference: diff,
        sign,
        solutions: [with_sol, without_sol],
        artifacts: vec![path.clone()],
    };
    let mut text = serde_json::to_string_pretty(&result).expect("plain data serializes");
    text.push('\n');
    write_file(&path, &text)?;
    Ok(result)
}

/// Matched fixes with edge ids and profile arc length where available.
pub fn matched_path_json(path: &MatchedPath, graph: &RoadGraph) -> String {
    #[derive(Serialize)]
    struct Fix<'a> {
        fix: usize,
        edge: &'a str,
        offset: f64,
        distance: f64,
        s: Option<f64>,
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        matches: Vec<Fix<'a>>,
        route: Vec<&'a str>,
        dropped: &'a [usize],
        log_likelihood: f64,
    }
    let s = matching::matched_arclength(path, graph).ok();
    let doc = Doc {
        matches: path
            .matches
            .iter()
            .enumerate()
            .map(|(i, m)| Fix {
                fix: m.fix_index,
                edge: &graph.edge(m.edge).id,
                offset: m.offset,
                distance: m.distance,
                s: s.as_ref().map(|s| s[i]),
            })
            .collect(),
        route: path.route.iter().map(|&e| graph.edge(e).id.as_str()).collect(),
        dropped: &path.dropped,
        log_likelihood: path.log_likelihood,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    text
}
