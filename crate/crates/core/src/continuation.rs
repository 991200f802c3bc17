//! Four-stage homotopy from the order-zero solution to the bang problem,
//! plus the frame-change retry loop.
//!
//! λ1 moves the initial attitude and rates from the order-zero values to the
//! true ones, λ2 moves the terminal attitude and rates from the natural
//! endpoint to the target, λ3 switches on aerodynamics and λ4 removes the
//! quadratic control penalty.

use std::cell::Cell;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::frames::{choose_beta, unwrap_near, FrameChange};
use crate::integrator::{terminal_point, ExtremalPoint, Trajectory, DEFAULT_STEPS};
use crate::model::{HomotopyState, State};
use crate::nlsolve::{solve, SolveOptions};
use crate::ocp0::{embed_in_mtcp, solve_ocp0, target_direction, Ocp0Problem};
use crate::shooting::{record_natural_endpoint, residual, residual_planar, shoot, CaseSpec, ShootingPoint, Stage, TerminalTarget};

/// Relative final speed below which the order-zero seed has no usable
/// velocity direction.
const REST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub solver: SolveOptions,
    /// Weight of the quadratic penalty while λ4 < 1.
    pub gamma: f64,
    pub n_steps: usize,
    /// Deliberate early end of the λ4 stage.
    pub stop_lambda4: Option<f64>,
    pub frame_change: bool,
    pub delta_alpha: f64,
    /// Transformed frames tried after the original one.
    pub max_frame_attempts: usize,
    /// Restrict planar cases to planar extremals.
    pub planar_symmetry: bool,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            initial_step: 0.1,
            min_step: 1e-4,
            max_step: 0.5,
            solver: SolveOptions::default(),
            gamma: 1.0,
            n_steps: DEFAULT_STEPS,
            stop_lambda4: None,
            frame_change: true,
            delta_alpha: 10f64.to_radians(),
            max_frame_attempts: 13,
            planar_symmetry: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stage: Stage,
    pub lambda: f64,
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Converged `(λ, point)` pairs in acceptance order.
    pub history: Vec<(f64, ShootingPoint)>,
    pub rejections: usize,
}

impl StagePlan {
    pub fn new(stage: Stage, opts: &ContinuationOptions) -> Self {
        StagePlan {
            stage,
            lambda: 0.0,
            step: opts.initial_step,
            min_step: opts.min_step,
            max_step: opts.max_step,
            history: Vec::new(),
            rejections: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallInfo {
    /// Last converged parameter value.
    pub lambda: f64,
    pub point: ShootingPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageResult {
    Completed(ShootingPoint),
    Stalled(StallInfo),
}

/// Walks `plan.lambda` up to `target`, correcting with `correct(λ, guess)`.
///
/// `seed` must already solve the stage at `plan.lambda`. Failed corrections
/// halve the step; two consecutive successes double it up to `max_step`.
pub fn run_stage<F>(plan: &mut StagePlan, target: f64, seed: ShootingPoint, mut correct: F) -> StageResult
where
    F: FnMut(f64, &ShootingPoint) -> Option<ShootingPoint>,
{
    let mut point = seed;
    let mut streak = 0;
    while plan.lambda < target {
        let trial = (plan.lambda + plan.step).min(target);
        match correct(trial, &point) {
            Some(next) => {
                plan.lambda = trial;
                point = next;
                plan.history.push((trial, next));
                streak += 1;
                if streak >= 2 {
                    plan.step = (2.0 * plan.step).min(plan.max_step);
                    streak = 0;
                }
            }
            None => {
                streak = 0;
                plan.rejections += 1;
                plan.step *= 0.5;
                if plan.step < plan.min_step {
                    return StageResult::Stalled(StallInfo { lambda: plan.lambda, point });
                }
            }
        }
    }
    StageResult::Completed(point)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Optimal,
    SubOptimal,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub time_s: f64,
    /// Number of extremal propagations.
    pub simulations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_lambda: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// `None` when the order-zero seed or the frame mapping failed.
    pub stage: Option<Stage>,
    pub lambda: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub failure: Option<Failure>,
    pub lambda4: f64,
    pub t_f: Option<f64>,
    pub ocp0_t_f: Option<f64>,
    pub point: Option<ShootingPoint>,
    /// Final extremal, expressed in the original frame.
    pub trajectory: Option<Trajectory>,
    /// `‖S‖∞` of the last accepted correction.
    pub residual_norm: f64,
    /// Indexed by `Stage::index`.
    pub stages: [StageStats; 4],
    /// Transformed frames tried after the original one.
    pub frame_attempts: usize,
    /// Frame the returned solution was computed in, if not the original one.
    pub frame: Option<FrameChange>,
    /// Case as solved, with its natural endpoint, in the solving frame.
    pub solved_case: Option<CaseSpec>,
}

impl RunOutcome {
    fn failed(failure: Failure, stages: [StageStats; 4], ocp0_t_f: Option<f64>) -> Self {
        RunOutcome {
            status: RunStatus::Failed,
            failure: Some(failure),
            lambda4: 0.0,
            t_f: None,
            ocp0_t_f,
            point: None,
            trajectory: None,
            residual_norm: f64::INFINITY,
            stages,
            frame_attempts: 0,
            frame: None,
            solved_case: None,
        }
    }

    pub fn total_time(&self) -> f64 {
        self.stages.iter().map(|s| s.time_s).sum()
    }

    pub fn total_simulations(&self) -> usize {
        self.stages.iter().map(|s| s.simulations).sum()
    }

    /// Whether λ1 to λ3 were all completed.
    pub fn reached_lambda4(&self) -> bool {
        self.status != RunStatus::Failed || self.failure.as_ref().is_some_and(|f| f.stage == Some(Stage::Lambda4))
    }
}

pub fn homotopy(stage: Stage, lambda: f64, gamma: f64) -> HomotopyState {
    let (l1, l2, l3, l4) = match stage {
        Stage::Lambda1 => (lambda, 0.0, 0.0, 0.0),
        Stage::Lambda2 => (1.0, lambda, 0.0, 0.0),
        Stage::Lambda3 => (1.0, 1.0, lambda, 0.0),
        Stage::Lambda4 => (1.0, 1.0, 1.0, lambda),
    };
    HomotopyState { lambda1: l1, lambda2: l2, lambda3: l3, lambda4: l4, gamma }
}

/// Homotopy state of a stage with the aerodynamic factor fixed by whether the
/// λ3 stage has run.
pub fn stage_homotopy(stage: Stage, lambda: f64, gamma: f64, aero: bool) -> HomotopyState {
    let mut h = homotopy(stage, lambda, gamma);
    if stage == Stage::Lambda4 && !aero {
        h.lambda3 = 0.0;
    }
    h
}

struct StageRunner<'a> {
    case: &'a CaseSpec,
    opts: &'a ContinuationOptions,
    aero: bool,
    planar: bool,
    sims: Cell<usize>,
    residual_norm: Cell<f64>,
}

impl StageRunner<'_> {
    fn correct(&self, stage: Stage, lambda: f64, guess: &ShootingPoint) -> Option<ShootingPoint> {
        let h = stage_homotopy(stage, lambda, self.opts.gamma, self.aero);
        let f = |z: &DVector<f64>| {
            self.sims.set(self.sims.get() + 1);
            let sp = ShootingPoint::from_slice(z.as_slice());
            if sp.t_f.is_nan() || sp.t_f <= 0.0 {
                return None;
            }
            let r = if self.planar {
                residual_planar(stage, &sp, self.case, &h)
            } else {
                residual(stage, &sp, self.case, &h)
            };
            r.ok().map(|r| DVector::from_column_slice(r.as_slice()))
        };
        let rep = solve(f, &DVector::from_column_slice(&guess.to_array()), &self.opts.solver);
        if rep.converged() {
            self.residual_norm.set(rep.residual_norm);
            Some(ShootingPoint::from_slice(rep.x.as_slice()))
        } else {
            None
        }
    }

    fn shoot(&self, stage: Stage, lambda: f64, sp: &ShootingPoint) -> Option<Trajectory> {
        self.sims.set(self.sims.get() + 1);
        shoot(sp, self.case, &stage_homotopy(stage, lambda, self.opts.gamma, self.aero)).ok()
    }
}

/// Runs one stage from `λ = 0` to `target`, polishing the seed first.
fn drive(
    runner: &StageRunner,
    stage: Stage,
    target: f64,
    seed: &ShootingPoint,
    stats: &mut StageStats,
) -> Result<StageResult, Failure> {
    let start = Instant::now();
    runner.sims.set(0);
    let fail = |reason: &str| Failure { stage: Some(stage), lambda: 0.0, reason: reason.to_string() };
    let polished = runner.correct(stage, 0.0, seed);
    let out = match polished {
        None => Err(fail("stage seed does not converge at λ = 0")),
        Some(p) => {
            let mut plan = StagePlan::new(stage, runner.opts);
            let r = run_stage(&mut plan, target, p, |l, z| runner.correct(stage, l, z));
            stats.accepted_steps = plan.history.len();
            stats.rejected_steps = plan.rejections;
            let r = match r {
                StageResult::Completed(p) => {
                    stats.final_lambda = target;
                    StageResult::Completed(p)
                }
                StageResult::Stalled(info) => {
                    stats.final_lambda = info.lambda;
                    StageResult::Stalled(info)
                }
            };
            Ok(r)
        }
    };
    stats.simulations += runner.sims.get();
    stats.time_s += start.elapsed().as_secs_f64();
    out
}

/// Solves one case in its own frame.
pub fn solve_case(case: &CaseSpec, opts: &ContinuationOptions) -> RunOutcome {
    let mut stages = [StageStats::default(); 4];
    let mut case = CaseSpec { n_steps: opts.n_steps, natural: None, ..case.clone() };
    let x0 = case.initial;
    let t = case.target;

    let ocp0_start = Instant::now();
    let mut prob = Ocp0Problem::new(x0.velocity(), target_direction(t.theta, t.psi), case.vehicle.a, case.vehicle.gravity);
    prob.psi0 = x0.psi;
    prob.psif = t.psi;
    let seed = match solve_ocp0(&prob) {
        Ok(s) if s.t_f > 0.0 => s,
        Ok(_) => {
            let f = Failure { stage: None, lambda: 0.0, reason: "velocity already aligned with the target".into() };
            return RunOutcome::failed(f, stages, Some(0.0));
        }
        Err(e) => {
            let f = Failure { stage: None, lambda: 0.0, reason: e.to_string() };
            return RunOutcome::failed(f, stages, None);
        }
    };
    let vf = seed.velocity_at(&prob, seed.t_f);
    if vf.norm() <= REST_TOL * (prob.v0.norm() + prob.a * seed.t_f) {
        let f = Failure { stage: None, lambda: 0.0, reason: "order-zero solution brings the velocity to rest".into() };
        return RunOutcome::failed(f, stages, Some(seed.t_f));
    }
    let mut seed = seed;
    seed.theta = unwrap_near(seed.theta, x0.theta);
    seed.psi = unwrap_near(seed.psi, x0.psi);
    seed.phi = unwrap_near(0.0, x0.phi);
    let ocp0_t_f = Some(seed.t_f);
    case.seed = Some(seed);
    let (_, p0) = embed_in_mtcp(&seed, &prob.v0, seed.phi);
    let mut point = ShootingPoint { p0, t_f: seed.t_f };
    stages[0].time_s += ocp0_start.elapsed().as_secs_f64();

    let aero = case.vehicle.has_aerodynamics();
    let planar = opts.planar_symmetry && case.is_planar();
    let mut lambda4 = 0.0;
    let mut status = RunStatus::Optimal;
    let mut last_residual = f64::INFINITY;
    for stage in Stage::ALL {
        let stats = &mut stages[stage.index()];
        if stage == Stage::Lambda3 && !aero {
            stats.skipped = true;
            continue;
        }
        let target = if stage == Stage::Lambda4 { opts.stop_lambda4.unwrap_or(1.0).clamp(0.0, 1.0) } else { 1.0 };
        let runner = StageRunner { case: &case, opts, aero, planar, sims: Cell::new(0), residual_norm: Cell::new(f64::INFINITY) };
        let result = match drive(&runner, stage, target, &point, stats) {
            Ok(r) => r,
            Err(f) => {
                let mut out = RunOutcome::failed(f, stages, ocp0_t_f);
                out.lambda4 = lambda4;
                return out;
            }
        };
        last_residual = runner.residual_norm.get();
        match result {
            StageResult::Completed(p) => {
                point = p;
                if stage == Stage::Lambda4 {
                    lambda4 = target;
                    if target < 1.0 {
                        status = RunStatus::SubOptimal;
                    }
                }
            }
            StageResult::Stalled(info) if stage == Stage::Lambda4 => {
                point = info.point;
                lambda4 = info.lambda;
                status = RunStatus::SubOptimal;
            }
            StageResult::Stalled(info) => {
                let f = Failure { stage: Some(stage), lambda: info.lambda, reason: "continuation step below minimum".into() };
                return RunOutcome::failed(f, stages, ocp0_t_f);
            }
        }
        if stage == Stage::Lambda1 {
            let start = Instant::now();
            let Some(traj) = runner.shoot(stage, 1.0, &point) else {
                let f = Failure { stage: Some(stage), lambda: 1.0, reason: "propagation failed".into() };
                return RunOutcome::failed(f, stages, ocp0_t_f);
            };
            case = record_natural_endpoint(&traj, &case);
            let natural = case.natural.expect("just recorded");
            case.target = TerminalTarget {
                theta: unwrap_near(case.target.theta, natural.theta),
                psi: unwrap_near(case.target.psi, natural.psi),
                phi: unwrap_near(case.target.phi, natural.phi),
                ..case.target
            };
            stages[0].simulations += 1;
            stages[0].time_s += start.elapsed().as_secs_f64();
        }
    }

    let start = Instant::now();
    let h = stage_homotopy(Stage::Lambda4, lambda4, opts.gamma, aero);
    let traj = shoot(&point, &case, &h).ok();
    stages[3].simulations += 1;
    stages[3].time_s += start.elapsed().as_secs_f64();
    let Some(traj) = traj else {
        let f = Failure { stage: Some(Stage::Lambda4), lambda: lambda4, reason: "propagation failed".into() };
        return RunOutcome::failed(f, stages, ocp0_t_f);
    };
    RunOutcome {
        status,
        failure: None,
        lambda4,
        t_f: Some(point.t_f),
        ocp0_t_f,
        point: Some(point),
        trajectory: Some(traj),
        residual_norm: last_residual,
        stages,
        frame_attempts: 0,
        frame: None,
        solved_case: Some(case),
    }
}

/// `0, +δ, −δ, +2δ, −2δ, …`, `n` values after the leading zero.
pub fn alpha_schedule(delta: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let m = k.div_ceil(2) as f64;
            if k % 2 == 1 {
                m * delta
            } else {
                -m * delta
            }
        })
        .collect()
}

/// Expresses a case in the frame rotated by `fc`.
pub fn transform_case(case: &CaseSpec, fc: &FrameChange) -> Option<CaseSpec> {
    let p = crate::model::Costate::default();
    let (x0, _) = fc.apply(&case.initial, &p).ok()?;
    let t = case.target;
    let e = fc.apply_attitude(&t.attitude()).ok()?;
    let x0 = State {
        theta: unwrap_near(x0.theta, case.initial.theta),
        phi: unwrap_near(x0.phi, case.initial.phi),
        ..x0
    };
    let target = TerminalTarget {
        theta: unwrap_near(e.theta, x0.theta),
        psi: e.psi,
        phi: unwrap_near(e.phi, x0.phi),
        ..t
    };
    Some(CaseSpec { initial: x0, target, vehicle: fc.apply_vehicle(&case.vehicle), natural: None, seed: None, ..*case })
}

/// Maps every node of a trajectory back to the original frame, keeping θ and
/// φ continuous from node to node.
pub fn map_trajectory_back(traj: &Trajectory, fc: &FrameChange) -> Option<Trajectory> {
    let mut nodes: Vec<ExtremalPoint> = Vec::with_capacity(traj.len());
    for n in &traj.nodes {
        let (mut x, p) = fc.invert(&n.x, &n.p).ok()?;
        if let Some(prev) = nodes.last() {
            x.theta = unwrap_near(x.theta, prev.x.theta);
            x.phi = unwrap_near(x.phi, prev.x.phi);
        }
        nodes.push(ExtremalPoint { tau: n.tau, x, p });
    }
    Some(Trajectory { t_f: traj.t_f, nodes, controls: traj.controls.clone() })
}

/// Solves `case`, retrying in rotated frames while the outcome is `Failed`.
pub fn solve_with_frame_search(case: &CaseSpec, opts: &ContinuationOptions) -> RunOutcome {
    let mut outcome = solve_case(case, opts);
    if outcome.status != RunStatus::Failed || !opts.frame_change {
        return outcome;
    }
    let mut stages = outcome.stages;
    let initial = case.initial.attitude();
    let terminal = case.target.attitude();
    let mut attempts = 0;
    for alpha in alpha_schedule(opts.delta_alpha, opts.max_frame_attempts) {
        attempts += 1;
        let Ok(beta) = choose_beta(alpha, &initial, &terminal) else { continue };
        let fc = FrameChange::new(alpha, beta);
        let Some(rotated) = transform_case(case, &fc) else { continue };
        let mut out = solve_case(&rotated, opts);
        for (acc, s) in stages.iter_mut().zip(out.stages.iter()) {
            acc.time_s += s.time_s;
            acc.simulations += s.simulations;
        }
        if out.status == RunStatus::Failed {
            outcome.failure = out.failure;
            continue;
        }
        out.frame = Some(fc);
        if let Some(traj) = out.trajectory.take() {
            match map_trajectory_back(&traj, &fc) {
                Some(back) => out.trajectory = Some(back),
                None => {
                    outcome.failure =
                        Some(Failure { stage: None, lambda: out.lambda4, reason: "solution hits gimbal lock in the original frame".into() });
                    continue;
                }
            }
        }
        if let Some(p) = out.point {
            let x0 = rotated.initial;
            out.point = fc.invert(&x0, &p.p0).ok().map(|(_, p0)| ShootingPoint { p0, ..p });
        }
        for (dst, acc) in out.stages.iter_mut().zip(stages.iter()) {
            let (accepted, rejected, lambda, skipped) = (dst.accepted_steps, dst.rejected_steps, dst.final_lambda, dst.skipped);
            *dst = StageStats { accepted_steps: accepted, rejected_steps: rejected, final_lambda: lambda, skipped, ..*acc };
        }
        out.frame_attempts = attempts;
        return out;
    }
    outcome.stages = stages;
    outcome.frame_attempts = attempts;
    outcome
}

/// Terminal-condition residuals of a trajectory against a target: attitude and
/// rate errors, then the two velocity rows scaled by `1/‖v(t_f)‖`.
pub fn terminal_errors(traj: &Trajectory, target: &TerminalTarget) -> [f64; 7] {
    let x = terminal_point(traj).x;
    let v = x.velocity();
    let rows = crate::shooting::velocity_rows(&v, target.theta, target.psi);
    let s = 1.0 / v.norm().max(1.0);
    let wrap = |a: f64, b: f64| crate::frames::normalize_angle(a - b);
    [
        x.omega_x - target.omega_x,
        x.omega_y - target.omega_y,
        wrap(x.theta, target.theta),
        wrap(x.psi, target.psi),
        wrap(x.phi, target.phi),
        s * rows[0],
        s * rows[1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_point(t_f: f64) -> ShootingPoint {
        ShootingPoint { p0: crate::model::Costate::default(), t_f }
    }

    #[test]
    fn stage_at_end_returns_seed() {
        let opts = ContinuationOptions::default();
        let mut plan = StagePlan::new(Stage::Lambda2, &opts);
        plan.lambda = 1.0;
        let r = run_stage(&mut plan, 1.0, dummy_point(3.0), |_, _| panic!("no correction expected"));
        assert_eq!(r, StageResult::Completed(dummy_point(3.0)));
    }

    #[test]
    fn easy_stage_needs_few_solves() {
        let opts = ContinuationOptions::default();
        let mut plan = StagePlan::new(Stage::Lambda1, &opts);
        let mut calls = 0;
        let r = run_stage(&mut plan, 1.0, dummy_point(1.0), |l, _| {
            calls += 1;
            Some(dummy_point(1.0 + l))
        });
        assert_eq!(r, StageResult::Completed(dummy_point(2.0)));
        assert!(calls <= 10);
        assert!(plan.history.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn stall_reports_last_good_lambda() {
        let opts = ContinuationOptions::default();
        let mut plan = StagePlan::new(Stage::Lambda4, &opts);
        let r = run_stage(&mut plan, 1.0, dummy_point(1.0), |l, _| (l <= 0.55).then(|| dummy_point(1.0 + l)));
        match r {
            StageResult::Stalled(info) => {
                assert!(info.lambda <= 0.55 && info.lambda > 0.55 - 1e-3);
                assert_eq!(info.point, dummy_point(1.0 + info.lambda));
            }
            other => panic!("{other:?}"),
        }
        assert!(plan.step < plan.min_step);
    }

    #[test]
    fn schedule_alternates() {
        let s = alpha_schedule(1.0, 5);
        assert_eq!(s, vec![1.0, -1.0, 2.0, -2.0, 3.0]);
    }
}
