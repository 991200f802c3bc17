//! Configuration, single-case solves, factorial sweeps and their reports.
//!
//! Configuration files are TOML. Angles are given in degrees and body rates
//! in degrees per second; everything is converted to radians on load.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuation::{solve_with_frame_search, terminal_errors, ContinuationOptions, RunOutcome, RunStatus, StageStats};
use crate::frames::normalize_angle;
use crate::integrator::MIN_STEPS;
use crate::model::{hamiltonian, HomotopyState, State, VehicleParams};
use crate::ocp0::target_direction;
use crate::shooting::{CaseSpec, TerminalTarget};

/// Solves taking at least this long count as difficult in sweep summaries.
pub const EASY_THRESHOLD_S: f64 = 50.0;
pub const PRESETS: [&str; 3] = ["ariane-launch", "ariane-flight", "pegasus"];

pub const CSV_HEADER: &str = "t,v_x,v_y,v_z,theta,psi,phi,omega_x,omega_y,\
p_vx,p_vy,p_vz,p_theta,p_psi,p_phi,p_omega_x,p_omega_y,u1,u2,u_norm,zeta";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("unknown preset `{0}` (expected one of ariane-launch, ariane-flight, pegasus)")]
    UnknownPreset(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{0} holds neither a [case] nor a [sweep] table")]
    MissingProblem(PathBuf),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub gamma: Option<f64>,
    pub steps: Option<usize>,
    pub tol: Option<f64>,
    pub max_eval: Option<usize>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub max_step: Option<f64>,
    pub delta_alpha_deg: Option<f64>,
    pub max_frame_attempts: Option<usize>,
}

impl SolverSettings {
    pub fn apply(&self, opts: &mut ContinuationOptions) -> Result<(), ConfigError> {
        if let Some(g) = self.gamma {
            positive("solver.gamma", g)?;
            opts.gamma = g;
        }
        if let Some(n) = self.steps {
            if n < MIN_STEPS {
                return Err(invalid("solver.steps", format!("must be at least {MIN_STEPS}")));
            }
            opts.n_steps = n;
        }
        if let Some(t) = self.tol {
            positive("solver.tol", t)?;
            opts.solver.tol = t;
        }
        if let Some(m) = self.max_eval {
            opts.solver.max_eval = Some(m);
        }
        if let Some(s) = self.initial_step {
            positive("solver.initial_step", s)?;
            opts.initial_step = s;
        }
        if let Some(s) = self.min_step {
            positive("solver.min_step", s)?;
            opts.min_step = s;
        }
        if let Some(s) = self.max_step {
            positive("solver.max_step", s)?;
            opts.max_step = s;
        }
        if let Some(d) = self.delta_alpha_deg {
            positive("solver.delta_alpha_deg", d)?;
            opts.delta_alpha = d.to_radians();
        }
        if let Some(m) = self.max_frame_attempts {
            opts.max_frame_attempts = m;
        }
        if opts.min_step > opts.initial_step || opts.initial_step > opts.max_step {
            return Err(invalid("solver", "steps must satisfy min_step ≤ initial_step ≤ max_step"));
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

/// Vehicle data plus solver overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LauncherConfig {
    pub name: String,
    pub vehicle: VehicleParams,
    pub solver: SolverSettings,
}

impl LauncherConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let vehicle = match name {
            "ariane-launch" => VehicleParams::ariane_launch(),
            "ariane-flight" => VehicleParams::ariane_flight(),
            "pegasus" => VehicleParams::pegasus(),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(LauncherConfig { name: name.to_string(), vehicle, solver: SolverSettings::default() })
    }

    pub fn options(&self) -> Result<ContinuationOptions, ConfigError> {
        let mut opts = ContinuationOptions::default();
        self.solver.apply(&mut opts)?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    name: Option<String>,
    a: Option<f64>,
    b_bar: Option<f64>,
    c_x: Option<f64>,
    c_z: Option<f64>,
    gravity: Option<[f64; 3]>,
    #[serde(default)]
    solver: SolverSettings,
    case: Option<CaseInput>,
    sweep: Option<SweepSpec>,
}

/// Initial and target conditions of one case, in degrees and degrees per second.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaseInput {
    pub v0: f64,
    pub theta_v0: f64,
    pub psi_v0: f64,
    pub theta0: f64,
    pub psi0: f64,
    pub phi0: f64,
    pub omega_x0: f64,
    pub omega_y0: f64,
    pub theta_f: f64,
    pub psi_f: f64,
    pub phi_f: f64,
    pub omega_xf: f64,
    pub omega_yf: f64,
}

impl CaseInput {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("v0", self.v0),
            ("theta_v0", self.theta_v0),
            ("psi_v0", self.psi_v0),
            ("theta0", self.theta0),
            ("psi0", self.psi0),
            ("phi0", self.phi0),
            ("omega_x0", self.omega_x0),
            ("omega_y0", self.omega_y0),
            ("theta_f", self.theta_f),
            ("psi_f", self.psi_f),
            ("phi_f", self.phi_f),
            ("omega_xf", self.omega_xf),
            ("omega_yf", self.omega_yf),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(invalid(&format!("case.{name}"), "must be finite"));
            }
        }
        if self.v0 <= 0.0 {
            return Err(invalid("case.v0", "initial speed must be positive"));
        }
        Ok(())
    }

    pub fn to_case(&self, vehicle: &VehicleParams) -> CaseSpec {
        let r = f64::to_radians;
        let v = self.v0 * target_direction(r(self.theta_v0), r(self.psi_v0));
        let initial = State {
            vx: v.x,
            vy: v.y,
            vz: v.z,
            theta: normalize_angle(r(self.theta0)),
            psi: normalize_angle(r(self.psi0)),
            phi: normalize_angle(r(self.phi0)),
            omega_x: r(self.omega_x0),
            omega_y: r(self.omega_y0),
        };
        let target = TerminalTarget {
            theta: normalize_angle(r(self.theta_f)),
            psi: normalize_angle(r(self.psi_f)),
            phi: normalize_angle(r(self.phi_f)),
            omega_x: r(self.omega_xf),
            omega_y: r(self.omega_yf),
        };
        CaseSpec::new(initial, target, *vehicle)
    }
}

/// Either a single value or an inclusive arithmetic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Fixed(f64),
    Range { from: f64, to: f64, step: f64 },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Fixed(0.0)
    }
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::Fixed(v) => vec![v],
            Grid::Range { from, to, step } => {
                let n = ((to - from) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| from + k as f64 * step).collect()
            }
        }
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if let Grid::Range { from, to, step } = *self {
            if !(step > 0.0 && to >= from && from.is_finite() && to.is_finite()) {
                return Err(invalid(field, "ranges need finite bounds, to ≥ from and step > 0"));
            }
        }
        Ok(())
    }
}

/// Factorial grid over the initial and target conditions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub v0: Grid,
    pub theta_v0: Grid,
    pub psi_v0: Grid,
    pub theta0: Grid,
    pub psi0: Grid,
    pub theta_f: Grid,
    pub psi_f: Grid,
    pub omega_x0: Grid,
    pub omega_y0: Grid,
    /// Inclusive bounds on `θ_f − θ_0`.
    pub theta_f_minus_theta0: Option<[f64; 2]>,
    /// Inclusive bounds on `θ_v0 − θ_0`.
    pub theta_v0_minus_theta0: Option<[f64; 2]>,
}

impl SweepSpec {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let range = |from, to, step| Grid::Range { from, to, step };
        let fixed = Grid::Fixed;
        let spec = match name {
            "ariane-launch" => SweepSpec {
                v0: range(50.0, 475.0, 25.0),
                theta_v0: fixed(90.0),
                theta0: fixed(90.0),
                theta_f: range(60.0, 85.0, 5.0),
                ..SweepSpec::default()
            },
            "ariane-flight" => SweepSpec {
                v0: range(2000.0, 6000.0, 800.0),
                theta_v0: range(0.0, 60.0, 7.5),
                theta0: range(0.0, 60.0, 7.5),
                theta_f: range(0.0, 60.0, 7.5),
                theta_f_minus_theta0: Some([-20.0, 20.0]),
                theta_v0_minus_theta0: Some([0.0, 0.0]),
                ..SweepSpec::default()
            },
            "pegasus" => SweepSpec {
                v0: fixed(300.0),
                theta_v0: range(-10.0, 0.0, 5.0),
                theta0: range(0.0, 50.0, 5.0),
                theta_f: range(60.0, 90.0, 10.0),
                psi_f: range(0.0, 90.0, 30.0),
                omega_x0: range(-10.0, 10.0, 5.0),
                theta_v0_minus_theta0: Some([-10.0, 0.0]),
                ..SweepSpec::default()
            },
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grids = [
            ("sweep.v0", &self.v0),
            ("sweep.theta_v0", &self.theta_v0),
            ("sweep.psi_v0", &self.psi_v0),
            ("sweep.theta0", &self.theta0),
            ("sweep.psi0", &self.psi0),
            ("sweep.theta_f", &self.theta_f),
            ("sweep.psi_f", &self.psi_f),
            ("sweep.omega_x0", &self.omega_x0),
            ("sweep.omega_y0", &self.omega_y0),
        ];
        for (name, g) in grids {
            g.validate(name)?;
        }
        if self.v0.values().iter().any(|v| *v <= 0.0) {
            return Err(invalid("sweep.v0", "speeds must be positive"));
        }
        Ok(())
    }

    /// Cases in lexicographic order over
    /// `(v0, θ_v0, ψ_v0, θ0, ψ0, θ_f, ψ_f, ω_x0, ω_y0)`, restrictions applied.
    pub fn cases(&self) -> Vec<CaseInput> {
        let within = |b: Option<[f64; 2]>, d: f64| b.is_none_or(|[lo, hi]| d >= lo - 1e-9 && d <= hi + 1e-9);
        let mut out = Vec::new();
        for &v0 in &self.v0.values() {
            for &theta_v0 in &self.theta_v0.values() {
                for &psi_v0 in &self.psi_v0.values() {
                    for &theta0 in &self.theta0.values() {
                        if !within(self.theta_v0_minus_theta0, theta_v0 - theta0) {
                            continue;
                        }
                        for &psi0 in &self.psi0.values() {
                            for &theta_f in &self.theta_f.values() {
                                if !within(self.theta_f_minus_theta0, theta_f - theta0) {
                                    continue;
                                }
                                for &psi_f in &self.psi_f.values() {
                                    for &omega_x0 in &self.omega_x0.values() {
                                        for &omega_y0 in &self.omega_y0.values() {
                                            out.push(CaseInput {
                                                v0,
                                                theta_v0,
                                                psi_v0,
                                                theta0,
                                                psi0,
                                                theta_f,
                                                psi_f,
                                                omega_x0,
                                                omega_y0,
                                                ..CaseInput::default()
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Case(CaseInput),
    Sweep(Box<SweepSpec>),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn parse_raw(path: &Path, text: &str) -> Result<RawConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })
}

fn launcher_from_raw(raw: &RawConfig) -> Result<LauncherConfig, ConfigError> {
    let mut cfg = match &raw.preset {
        Some(p) => LauncherConfig::preset(p)?,
        None => LauncherConfig {
            name: "custom".into(),
            vehicle: VehicleParams { a: f64::NAN, b_bar: f64::NAN, c_x: 0.0, c_z: 0.0, gravity: VehicleParams::default_gravity() },
            solver: SolverSettings::default(),
        },
    };
    if let Some(n) = &raw.name {
        cfg.name = n.clone();
    }
    let v = &mut cfg.vehicle;
    v.a = raw.a.unwrap_or(v.a);
    v.b_bar = raw.b_bar.unwrap_or(v.b_bar);
    v.c_x = raw.c_x.unwrap_or(v.c_x);
    v.c_z = raw.c_z.unwrap_or(v.c_z);
    if let Some(g) = raw.gravity {
        v.gravity = Vector3::from(g);
    }
    if raw.preset.is_none() && (raw.a.is_none() || raw.b_bar.is_none()) {
        return Err(invalid("a", "`a` and `b_bar` are required without a preset"));
    }
    v.validate().map_err(|e| invalid("vehicle", e.to_string()))?;
    cfg.solver = raw.solver.clone();
    cfg.options()?;
    Ok(cfg)
}

/// Loads a configuration file, or a preset when `path` names one and no such
/// file exists. The problem is the file's `[case]` or `[sweep]` table, if any.
pub fn parse_config(path: &Path) -> Result<(LauncherConfig, Option<Problem>), ConfigError> {
    let name = path.to_string_lossy();
    if !path.exists() && PRESETS.contains(&name.as_ref()) {
        return Ok((LauncherConfig::preset(&name)?, None));
    }
    let raw = parse_raw(path, &read(path)?)?;
    let cfg = launcher_from_raw(&raw)?;
    let problem = match (raw.case, raw.sweep) {
        (Some(_), Some(_)) => return Err(invalid("case", "a file holds either [case] or [sweep], not both")),
        (Some(c), None) => {
            c.validate()?;
            Some(Problem::Case(c))
        }
        (None, Some(s)) => {
            s.validate()?;
            Some(Problem::Sweep(Box::new(s)))
        }
        (None, None) => None,
    };
    Ok((cfg, problem))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    preset: Option<String>,
    case: Option<CaseInput>,
    sweep: Option<SweepSpec>,
}

/// Reads a `[case]` file.
pub fn parse_case_file(path: &Path) -> Result<CaseInput, ConfigError> {
    let file: ProblemFile = toml::from_str(&read(path)?)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
    let case = file.case.ok_or_else(|| ConfigError::MissingProblem(path.to_path_buf()))?;
    case.validate()?;
    Ok(case)
}

/// Reads a `[sweep]` file, or a preset grid when `path` names one (either as a
/// missing file or through a top-level `preset` key).
pub fn parse_sweep_file(path: &Path) -> Result<SweepSpec, ConfigError> {
    let name = path.to_string_lossy();
    if !path.exists() && PRESETS.contains(&name.as_ref()) {
        return SweepSpec::preset(&name);
    }
    let file: ProblemFile = toml::from_str(&read(path)?)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(e) })?;
    let spec = match (file.sweep, file.preset) {
        (Some(s), _) => s,
        (None, Some(p)) => SweepSpec::preset(&p)?,
        (None, None) => return Err(ConfigError::MissingProblem(path.to_path_buf())),
    };
    spec.validate()?;
    Ok(spec)
}

pub const ENV_OVERRIDES: [&str; 6] = [
    "LAUNCHER_OCP_STEPS",
    "LAUNCHER_OCP_TOL",
    "LAUNCHER_OCP_MAX_EVAL",
    "LAUNCHER_OCP_GAMMA",
    "LAUNCHER_OCP_MIN_STEP",
    "LAUNCHER_OCP_MAX_FRAME_ATTEMPTS",
];

/// Applies `LAUNCHER_OCP_*` overrides read through `lookup`.
pub fn apply_env_overrides<F>(opts: &mut ContinuationOptions, lookup: F) -> Result<(), ConfigError>
where
    F: Fn(&str) -> Option<String>,
{
    fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
        v.trim().parse().map_err(|_| invalid(key, format!("cannot parse `{v}`")))
    }
    let mut s = SolverSettings::default();
    for key in ENV_OVERRIDES {
        let Some(v) = lookup(key) else { continue };
        match key {
            "LAUNCHER_OCP_STEPS" => s.steps = Some(parse(key, &v)?),
            "LAUNCHER_OCP_TOL" => s.tol = Some(parse(key, &v)?),
            "LAUNCHER_OCP_MAX_EVAL" => s.max_eval = Some(parse(key, &v)?),
            "LAUNCHER_OCP_GAMMA" => s.gamma = Some(parse(key, &v)?),
            "LAUNCHER_OCP_MIN_STEP" => s.min_step = Some(parse(key, &v)?),
            _ => s.max_frame_attempts = Some(parse(key, &v)?),
        }
    }
    s.apply(opts)
}

/// Per-case record written to summary JSON and sweep JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub index: usize,
    pub input: CaseInput,
    pub status: RunStatus,
    pub lambda4_final: f64,
    pub t_f: Option<f64>,
    pub ocp0_t_f: Option<f64>,
    pub residual_norm: Option<f64>,
    /// Largest terminal-condition error of the emitted trajectory.
    pub terminal_error: Option<f64>,
    pub max_abs_hamiltonian: Option<f64>,
    pub reached_lambda4: bool,
    pub stages: [StageStats; 4],
    pub total_time_s: f64,
    pub total_simulations: usize,
    pub frame_attempts: usize,
    pub alpha_deg: Option<f64>,
    pub beta_deg: Option<f64>,
    pub failure: Option<String>,
}

impl CaseRecord {
    pub fn from_outcome(index: usize, input: &CaseInput, case: &CaseSpec, out: &RunOutcome, gamma: f64) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        let terminal_error = out
            .trajectory
            .as_ref()
            .map(|t| terminal_errors(t, &case.target).iter().fold(0.0_f64, |m, e| m.max(e.abs())));
        let max_abs_hamiltonian = out.trajectory.as_ref().map(|t| {
            let h = HomotopyState { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, lambda4: out.lambda4, gamma };
            let h = if case.vehicle.has_aerodynamics() { h } else { HomotopyState { lambda3: 0.0, ..h } };
            t.nodes
                .iter()
                .zip(&t.controls)
                .map(|(n, u)| hamiltonian(&n.x, &n.p, u, &case.vehicle, &h).abs())
                .fold(0.0, f64::max)
        });
        CaseRecord {
            index,
            input: *input,
            status: out.status,
            lambda4_final: out.lambda4,
            t_f: out.t_f,
            ocp0_t_f: out.ocp0_t_f,
            residual_norm: finite(out.residual_norm),
            terminal_error,
            max_abs_hamiltonian,
            reached_lambda4: out.reached_lambda4(),
            stages: out.stages,
            total_time_s: out.total_time(),
            total_simulations: out.total_simulations(),
            frame_attempts: out.frame_attempts,
            alpha_deg: out.frame.map(|f| f.alpha.to_degrees()),
            beta_deg: out.frame.map(|f| f.beta.to_degrees()),
            failure: out.failure.as_ref().map(|f| {
                let stage = f.stage.map_or("setup", |s| s.name());
                format!("{stage} at λ = {}: {}", f.lambda, f.reason)
            }),
        }
    }

    pub fn is_easy(&self) -> bool {
        self.total_time_s < EASY_THRESHOLD_S
    }
}

/// Trajectory table, one row per node.
pub fn trajectory_csv(out: &RunOutcome) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    let Some(traj) = &out.trajectory else { return s };
    for (i, (n, u)) in traj.nodes.iter().zip(&traj.controls).enumerate() {
        let mut row = vec![traj.time(i)];
        row.extend(n.x.to_array());
        row.extend(n.p.to_array());
        row.extend([u.u1, u.u2, u.norm(), u.angle()]);
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Maximum allowed terminal error when writing a trajectory.
pub const TERMINAL_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot encode JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Write { path: path.to_path_buf(), source })
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.to_path_buf(), source })
}

/// Solves one case and writes `trajectory.csv` and `summary.json` to `out_dir`.
pub fn run_solve(
    config: &LauncherConfig,
    input: &CaseInput,
    opts: &ContinuationOptions,
    out_dir: &Path,
) -> Result<(RunOutcome, CaseRecord), RunError> {
    ensure_dir(out_dir)?;
    let case = input.to_case(&config.vehicle);
    let out = solve_with_frame_search(&case, opts);
    let record = CaseRecord::from_outcome(0, input, &case, &out, opts.gamma);
    if let Some(err) = record.terminal_error {
        if err > TERMINAL_CHECK_TOL {
            eprintln!("warning: terminal conditions met only to {err:.3e}");
        }
    }
    write_file(&out_dir.join("trajectory.csv"), &trajectory_csv(&out))?;
    write_file(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&record)?)?;
    Ok((out, record))
}

/// Aggregate statistics over a sweep, in the layout of the usual tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total: usize,
    pub easy: usize,
    pub difficult: usize,
    pub optimal: usize,
    pub sub_optimal: usize,
    pub failed: usize,
    /// Percentage of cases solved with `λ4 = 1`.
    pub success_rate: f64,
    /// Percentage of cases that completed the λ1 to λ3 stages.
    pub success_rate_before_lambda4: f64,
    /// Means over optimal cases, `[easy, difficult]`.
    pub mean_total_time_s: [Option<f64>; 2],
    pub mean_stage_time_s: [[Option<f64>; 2]; 4],
    pub mean_simulations: [Option<f64>; 2],
    pub mean_stage_simulations: [[Option<f64>; 2]; 4],
    pub mean_frame_attempts: [Option<f64>; 2],
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(records: &[CaseRecord]) -> SweepSummary {
    let count = |s: RunStatus| records.iter().filter(|r| r.status == s).count();
    let total = records.len();
    let pct = |n: usize| if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
    let optimal: Vec<&CaseRecord> = records.iter().filter(|r| r.status == RunStatus::Optimal).collect();
    let groups = [
        optimal.iter().copied().filter(|r| r.is_easy()).collect::<Vec<_>>(),
        optimal.iter().copied().filter(|r| !r.is_easy()).collect::<Vec<_>>(),
    ];
    let by_group = |f: &dyn Fn(&CaseRecord) -> f64| [0, 1].map(|g| mean(groups[g].iter().map(|r| f(r))));
    let easy = records.iter().filter(|r| r.is_easy()).count();
    SweepSummary {
        total,
        easy,
        difficult: total - easy,
        optimal: count(RunStatus::Optimal),
        sub_optimal: count(RunStatus::SubOptimal),
        failed: count(RunStatus::Failed),
        success_rate: pct(count(RunStatus::Optimal)),
        success_rate_before_lambda4: pct(records.iter().filter(|r| r.reached_lambda4).count()),
        mean_total_time_s: by_group(&|r| r.total_time_s),
        mean_stage_time_s: [0, 1, 2, 3].map(|k| by_group(&|r| r.stages[k].time_s)),
        mean_simulations: by_group(&|r| r.total_simulations as f64),
        mean_stage_simulations: [0, 1, 2, 3].map(|k| by_group(&|r| r.stages[k].simulations as f64)),
        mean_frame_attempts: by_group(&|r| r.frame_attempts as f64),
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.digits$}"))
}

pub fn render_summary(label: &str, s: &SweepSummary) -> String {
    let mut t = String::new();
    let line = |t: &mut String, name: &str, vals: [Option<f64>; 2], d: usize| {
        t.push_str(&format!("{name:<36}{:>12}{:>12}\n", cell(vals[0], d), cell(vals[1], d)));
    };
    t.push_str(&format!("{label}\n"));
    t.push_str(&format!("{:<36}{:>12}\n", "Number of cases", s.total));
    t.push_str(&format!("{:<36}{:>12}\n", "  easy (total time < 50 s)", s.easy));
    t.push_str(&format!("{:<36}{:>12}\n", "  difficult", s.difficult));
    t.push_str("Rate of success (%)\n");
    t.push_str(&format!("{:<36}{:>12.1}\n", "  total", s.success_rate));
    t.push_str(&format!("{:<36}{:>12.1}\n", "  before lambda4 continuation", s.success_rate_before_lambda4));
    t.push_str(&format!("{:<36}{:>12}\n", "  sub-optimal stops", s.sub_optimal));
    t.push_str(&format!("{:<36}{:>12}{:>12}\n", "Average execution time (s)", "easy", "difficult"));
    line(&mut t, "  total", s.mean_total_time_s, 2);
    for (k, name) in ["  lambda1", "  lambda2", "  lambda3", "  lambda4"].iter().enumerate() {
        line(&mut t, name, s.mean_stage_time_s[k], 2);
    }
    t.push_str(&format!("{:<36}{:>12}{:>12}\n", "Average number of simulations", "easy", "difficult"));
    line(&mut t, "  total", s.mean_simulations, 0);
    for (k, name) in ["  lambda1", "  lambda2", "  lambda3", "  lambda4"].iter().enumerate() {
        line(&mut t, name, s.mean_stage_simulations[k], 0);
    }
    line(&mut t, "Average frame changes", s.mean_frame_attempts, 1);
    t
}

/// Reads sweep JSON lines back, ordered by case index.
pub fn read_records(path: &Path) -> Result<Vec<CaseRecord>, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Write { path: path.to_path_buf(), source })?;
    let mut records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<CaseRecord>)
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by_key(|r| r.index);
    Ok(records)
}

/// Runs every case of `sweep` on `jobs` threads, appending one JSON line per
/// case to `sweep.jsonl` as it completes, then writes the summary files.
pub fn run_sweep(
    config: &LauncherConfig,
    sweep: &SweepSpec,
    opts: &ContinuationOptions,
    jobs: usize,
    out_dir: &Path,
) -> Result<(SweepSummary, Vec<CaseRecord>), RunError> {
    ensure_dir(out_dir)?;
    let cases = sweep.cases();
    let lines_path = out_dir.join("sweep.jsonl");
    let file = fs::File::create(&lines_path).map_err(|source| RunError::Write { path: lines_path.clone(), source })?;
    let writer = Mutex::new(BufWriter::new(file));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<CaseRecord, RunError>> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, input)| {
                let case = input.to_case(&config.vehicle);
                let out = solve_with_frame_search(&case, opts);
                let record = CaseRecord::from_outcome(i, input, &case, &out, opts.gamma);
                let line = serde_json::to_string(&record)?;
                let mut w = writer.lock().expect("writer lock");
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|source| RunError::Write { path: lines_path.clone(), source })?;
                Ok(record)
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&records);
    let mode = if opts.frame_change { "with change of frame" } else { "without change of frame" };
    let label = format!("{} sweep, {mode}", config.name);
    write_file(&out_dir.join("summary.txt"), &render_summary(&label, &summary))?;
    write_file(&out_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok((summary, records))
}

/// Counts of cases per value of each swept variable, used for quick grid checks.
pub fn grid_histogram(cases: &[CaseInput]) -> HashMap<&'static str, usize> {
    let distinct = |f: &dyn Fn(&CaseInput) -> f64| {
        let mut v: Vec<f64> = cases.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    HashMap::from([
        ("v0", distinct(&|c| c.v0)),
        ("theta_v0", distinct(&|c| c.theta_v0)),
        ("theta0", distinct(&|c| c.theta0)),
        ("theta_f", distinct(&|c| c.theta_f)),
        ("psi_f", distinct(&|c| c.psi_f)),
        ("omega_x0", distinct(&|c| c.omega_x0)),
    ])
}
