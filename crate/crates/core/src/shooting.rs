//! Shooting residuals for the homotopy stages.
//!
//! The unknowns are the initial costate and the final time. Every residual is
//! a 9-vector built from one propagated extremal: five attitude/rate rows, two
//! velocity-parallelism rows, the transversality row and the Hamiltonian row.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::EulerAngles;
use crate::integrator::{propagate, terminal_point, IntegratorError, Trajectory, DEFAULT_STEPS};
use crate::model::{control_law, hamiltonian, Costate, HomotopyState, State, VehicleParams};
use crate::ocp0::Ocp0Solution;

pub const DIM: usize = 9;

pub type Residual = SVector<f64, DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootingError {
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("natural endpoint must be recorded before the λ2 stage")]
    MissingNaturalEndpoint,
    #[error("initial blend needs the order-zero seed while λ1 < 1")]
    MissingSeed,
    #[error("non-finite residual")]
    NonFinite,
}

/// Homotopy stage, which also selects the shooting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Lambda1,
    Lambda2,
    Lambda3,
    Lambda4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Lambda1, Stage::Lambda2, Stage::Lambda3, Stage::Lambda4];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Lambda1 => "lambda1",
            Stage::Lambda2 => "lambda2",
            Stage::Lambda3 => "lambda3",
            Stage::Lambda4 => "lambda4",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingPoint {
    pub p0: Costate,
    pub t_f: f64,
}

impl ShootingPoint {
    pub fn to_array(&self) -> [f64; DIM] {
        let mut z = [0.0; DIM];
        z[..8].copy_from_slice(&self.p0.to_array());
        z[8] = self.t_f;
        z
    }

    pub fn from_slice(z: &[f64]) -> Self {
        assert_eq!(z.len(), DIM, "shooting point has {DIM} unknowns");
        ShootingPoint { p0: Costate::from_array(&z[..8]), t_f: z[8] }
    }
}

/// Terminal attitude and body rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TerminalTarget {
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub omega_x: f64,
    pub omega_y: f64,
}

impl TerminalTarget {
    pub fn from_state(x: &State) -> Self {
        TerminalTarget { theta: x.theta, psi: x.psi, phi: x.phi, omega_x: x.omega_x, omega_y: x.omega_y }
    }

    pub fn attitude(&self) -> EulerAngles {
        EulerAngles::new(self.theta, self.psi, self.phi)
    }

    fn to_array(self) -> [f64; 5] {
        [self.omega_x, self.omega_y, self.theta, self.psi, self.phi]
    }

    /// `(1 − λ) self + λ other`, componentwise.
    pub fn blend(&self, other: &TerminalTarget, lambda: f64) -> TerminalTarget {
        let mix = |a: f64, b: f64| (1.0 - lambda) * a + lambda * b;
        TerminalTarget {
            theta: mix(self.theta, other.theta),
            psi: mix(self.psi, other.psi),
            phi: mix(self.phi, other.phi),
            omega_x: mix(self.omega_x, other.omega_x),
            omega_y: mix(self.omega_y, other.omega_y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub initial: State,
    pub target: TerminalTarget,
    pub vehicle: VehicleParams,
    /// Terminal attitude and rates of the converged λ1 = 1 extremal.
    pub natural: Option<TerminalTarget>,
    /// Order-zero solution the λ1 blend starts from.
    pub seed: Option<Ocp0Solution>,
    pub n_steps: usize,
}

impl CaseSpec {
    pub fn new(initial: State, target: TerminalTarget, vehicle: VehicleParams) -> Self {
        CaseSpec { initial, target, vehicle, natural: None, seed: None, n_steps: DEFAULT_STEPS }
    }

    /// Whether the whole problem lies in the `(x, z)` plane: no lateral
    /// velocity, yaw, roll or roll-axis rate at either end and no lateral
    /// gravity. Such cases admit extremals with zero out-of-plane costates.
    pub fn is_planar(&self) -> bool {
        let x = &self.initial;
        let t = &self.target;
        [x.vy, x.psi, x.phi, x.omega_x, t.psi, t.phi, t.omega_x, self.vehicle.gravity.y]
            .iter()
            .all(|c| *c == 0.0)
    }

    /// Scale applied to the velocity-parallelism rows.
    pub fn velocity_scale(&self) -> f64 {
        1.0 / self.initial.velocity().norm().max(1.0)
    }
}

/// Initial state of the λ1 stage: fixed velocity, attitude and rates blended
/// from the order-zero values `(θ*, ψ*, φ*, 0, 0)` to the true ones.
pub fn blend_initial_state(case: &CaseSpec, lambda1: f64, seed: &Ocp0Solution) -> State {
    let mix = |a: f64, b: f64| (1.0 - lambda1) * a + lambda1 * b;
    let x0 = &case.initial;
    State {
        theta: mix(seed.theta, x0.theta),
        psi: mix(seed.psi, x0.psi),
        phi: mix(seed.phi, x0.phi),
        omega_x: mix(0.0, x0.omega_x),
        omega_y: mix(0.0, x0.omega_y),
        ..*x0
    }
}

fn initial_state(case: &CaseSpec, h: &HomotopyState) -> Result<State, ShootingError> {
    if h.lambda1 >= 1.0 {
        return Ok(case.initial);
    }
    let seed = case.seed.as_ref().ok_or(ShootingError::MissingSeed)?;
    Ok(blend_initial_state(case, h.lambda1, seed))
}

/// Propagates the extremal issued from `sp` for the current homotopy state.
pub fn shoot(sp: &ShootingPoint, case: &CaseSpec, h: &HomotopyState) -> Result<Trajectory, ShootingError> {
    let x0 = initial_state(case, h)?;
    Ok(propagate(&x0, &sp.p0, sp.t_f, &case.vehicle, h, case.n_steps)?)
}

/// Velocity-parallelism rows, the second one divided by `cos ψ_f`.
pub fn velocity_rows(v: &nalgebra::Vector3<f64>, theta_f: f64, psi_f: f64) -> [f64; 2] {
    let (st, ct) = theta_f.sin_cos();
    let (sp, cp) = psi_f.sin_cos();
    [v.z * sp + v.y * ct * cp, v.z * st - v.x * ct]
}

/// `p_vy sin ψ_f − (p_vx sin θ_f cos ψ_f + p_vz cos θ_f cos ψ_f)`.
pub fn transversality(p: &Costate, theta_f: f64, psi_f: f64) -> f64 {
    let (st, ct) = theta_f.sin_cos();
    let (sp, cp) = psi_f.sin_cos();
    p.vy * sp - (p.vx * st * cp + p.vz * ct * cp)
}

fn terminal_hamiltonian(x: &State, p: &Costate, vp: &VehicleParams, h: &HomotopyState) -> f64 {
    let u = control_law(p, vp, h).unwrap_or_default();
    hamiltonian(x, p, &u, vp, h)
}

fn finite(r: Residual) -> Result<Residual, ShootingError> {
    if r.iter().all(|c| c.is_finite()) {
        Ok(r)
    } else {
        Err(ShootingError::NonFinite)
    }
}

/// λ1 residual for an already propagated extremal.
pub fn s1_from_trajectory(traj: &Trajectory, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    let end = terminal_point(traj);
    let (x, p) = (&end.x, &end.p);
    let t = &case.target;
    let vel = velocity_rows(&x.velocity(), t.theta, t.psi);
    let s = case.velocity_scale();
    finite(Residual::from([
        p.omega_x,
        p.omega_y,
        p.theta,
        p.psi,
        p.phi,
        terminal_hamiltonian(x, p, &case.vehicle, h),
        s * vel[0],
        s * vel[1],
        transversality(p, t.theta, t.psi),
    ]))
}

/// λ2 residual for an already propagated extremal; `lambda2` sets the
/// terminal blend from the natural endpoint to the target.
pub fn s2_from_trajectory(traj: &Trajectory, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    let natural = case.natural.ok_or(ShootingError::MissingNaturalEndpoint)?;
    let end = terminal_point(traj);
    let (x, p) = (&end.x, &end.p);
    let t = &case.target;
    let goal = natural.blend(t, h.lambda2).to_array();
    let reached = TerminalTarget::from_state(x).to_array();
    let vel = velocity_rows(&x.velocity(), t.theta, t.psi);
    let s = case.velocity_scale();
    finite(Residual::from([
        reached[0] - goal[0],
        reached[1] - goal[1],
        reached[2] - goal[2],
        reached[3] - goal[3],
        reached[4] - goal[4],
        s * vel[0],
        s * vel[1],
        transversality(p, t.theta, t.psi),
        terminal_hamiltonian(x, p, &case.vehicle, h),
    ]))
}

pub fn residual_s1(sp: &ShootingPoint, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    s1_from_trajectory(&shoot(sp, case, h)?, case, h)
}

pub fn residual_s2(sp: &ShootingPoint, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    s2_from_trajectory(&shoot(sp, case, h)?, case, h)
}

/// Shooting function of a stage: `S_λ1` for λ1, `S_λ2` for the others.
pub fn residual(stage: Stage, sp: &ShootingPoint, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    match stage {
        Stage::Lambda1 => residual_s1(sp, case, h),
        _ => residual_s2(sp, case, h),
    }
}

/// `(unknown, row)` pairs of the out-of-plane unknowns `p_vy, p_ψ, p_φ, p_ωx`
/// and the rows that vanish identically on planar extremals.
pub fn out_of_plane_pairs(stage: Stage) -> [(usize, usize); 4] {
    match stage {
        Stage::Lambda1 => [(1, 6), (4, 3), (5, 4), (6, 0)],
        _ => [(1, 5), (4, 3), (5, 4), (6, 0)],
    }
}

/// Residual of a planar case restricted to planar extremals: the
/// out-of-plane unknowns are zeroed before shooting and their rows replaced by
/// the unknowns themselves, which keeps the system square.
///
/// Near `λ4 = 1` the full map is not differentiable in `p_ωx` at the planar
/// solution, since a small lateral component turns each control reversal into
/// a fast rotation.
pub fn residual_planar(stage: Stage, sp: &ShootingPoint, case: &CaseSpec, h: &HomotopyState) -> Result<Residual, ShootingError> {
    let pairs = out_of_plane_pairs(stage);
    let z = sp.to_array();
    let mut pinned = z;
    for (k, _) in pairs {
        pinned[k] = 0.0;
    }
    let mut r = residual(stage, &ShootingPoint::from_slice(&pinned), case, h)?;
    for (k, row) in pairs {
        r[row] = z[k];
    }
    Ok(r)
}

pub fn record_natural_endpoint(traj: &Trajectory, case: &CaseSpec) -> CaseSpec {
    CaseSpec { natural: Some(TerminalTarget::from_state(&terminal_point(traj).x)), ..case.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp0::{embed_in_mtcp, solve_ocp0, target_direction, Ocp0Problem};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn flight_case() -> CaseSpec {
        let (th0, thf) = (38f64.to_radians(), 40f64.to_radians());
        let v = 2000.0 * target_direction(th0, 0.0);
        let x0 = State { vx: v.x, vy: v.y, vz: v.z, theta: th0, ..State::default() };
        let target = TerminalTarget { theta: thf, ..TerminalTarget::default() };
        CaseSpec::new(x0, target, VehicleParams::ariane_flight())
    }

    fn seeded(case: &CaseSpec) -> (CaseSpec, ShootingPoint) {
        let t = case.target;
        let prob = Ocp0Problem::new(
            case.initial.velocity(),
            target_direction(t.theta, t.psi),
            case.vehicle.a,
            case.vehicle.gravity,
        );
        let sol = solve_ocp0(&prob).unwrap();
        let (_, p) = embed_in_mtcp(&sol, &prob.v0, 0.0);
        (CaseSpec { seed: Some(sol), ..case.clone() }, ShootingPoint { p0: p, t_f: sol.t_f })
    }

    #[test]
    fn blend_endpoints() {
        let case = flight_case();
        let (case, _) = seeded(&case);
        let seed = case.seed.unwrap();
        let x = blend_initial_state(&case, 0.0, &seed);
        assert_eq!((x.theta, x.psi, x.phi, x.omega_x, x.omega_y), (seed.theta, seed.psi, 0.0, 0.0, 0.0));
        assert_eq!(blend_initial_state(&case, 1.0, &seed), case.initial);
        let mut s = seed;
        s.theta = 0.2;
        let mut c = case.clone();
        c.initial.theta = 0.4;
        assert_abs_diff_eq!(blend_initial_state(&c, 0.5, &s).theta, 0.3, epsilon = 1e-15);
        assert_eq!(blend_initial_state(&c, 0.5, &s).velocity(), c.initial.velocity());
    }

    #[test]
    fn embedded_seed_solves_first_stage() {
        let (case, sp) = seeded(&flight_case());
        let r = residual_s1(&sp, &case, &HomotopyState::default()).unwrap();
        assert!(r.amax() < 1e-6, "{r}");
    }

    #[test]
    fn planar_transversality() {
        let p = Costate { vx: 0.3, vy: 0.7, vz: -0.2, ..Costate::default() };
        let th = 0.4f64;
        assert_abs_diff_eq!(transversality(&p, th, 0.0), -(p.vx * th.sin() + p.vz * th.cos()), epsilon = 1e-15);
    }

    #[test]
    fn velocity_rows_match_cross_product() {
        let (th, ps) = (0.5f64, -0.3f64);
        let e = target_direction(th, ps);
        let v = 1500.0 * e;
        let r = velocity_rows(&v, th, ps);
        assert!(r[0].abs() < 1e-10 && r[1].abs() < 1e-10);
        let off = v + Vector3::new(1.0, 2.0, 0.0);
        let r = velocity_rows(&off, th, ps);
        let cross = off.cross(&e);
        // rows are the x component and the y component over cos ψ_f
        assert_abs_diff_eq!(r[0], cross.x, epsilon = 1e-9);
        assert_abs_diff_eq!(r[1] * ps.cos(), cross.y, epsilon = 1e-9);
    }

    #[test]
    fn no_dead_components() {
        let (case, sp) = seeded(&flight_case());
        let h = HomotopyState { lambda1: 0.5, ..HomotopyState::default() };
        let base = residual_s1(&sp, &case, &h).unwrap();
        let z = sp.to_array();
        let mut jac = nalgebra::SMatrix::<f64, 9, 9>::zeros();
        for j in 0..DIM {
            let mut zp = z;
            let step = 1e-6 * z[j].abs().max(1e-2);
            zp[j] += step;
            let r = residual_s1(&ShootingPoint::from_slice(&zp), &case, &h).unwrap();
            jac.set_column(j, &((r - base) / step));
        }
        for i in 0..DIM {
            assert!(jac.row(i).amax() > 0.0, "row {i} is dead");
        }
        for j in 0..DIM {
            assert!(jac.column(j).amax() > 0.0, "column {j} is dead");
        }
    }

    #[test]
    fn second_stage_needs_natural_endpoint() {
        let (case, sp) = seeded(&flight_case());
        let h = HomotopyState { lambda1: 1.0, ..HomotopyState::default() };
        assert_eq!(residual_s2(&sp, &case, &h), Err(ShootingError::MissingNaturalEndpoint));
    }

    #[test]
    fn natural_endpoint_is_blend_fixed_point() {
        let (case, sp) = seeded(&flight_case());
        let h = HomotopyState { lambda1: 1.0, ..HomotopyState::default() };
        let traj = shoot(&sp, &case, &h).unwrap();
        let recorded = record_natural_endpoint(&traj, &case);
        assert_eq!(record_natural_endpoint(&traj, &recorded), recorded);
        let end = terminal_point(&traj).x;
        assert_eq!(recorded.natural.unwrap(), TerminalTarget::from_state(&end));
        let r2 = residual_s2(&sp, &recorded, &h).unwrap();
        let r1 = residual_s1(&sp, &recorded, &h).unwrap();
        assert_eq!(&r2.as_slice()[..5], &[0.0; 5]);
        // the shared rows agree between both shooting functions
        assert_eq!(r2[5], r1[6]);
        assert_eq!(r2[6], r1[7]);
        assert_eq!(r2[7], r1[8]);
        assert_eq!(r2[8], r1[5]);
    }

    #[test]
    fn full_blend_compares_against_target() {
        let (case, sp) = seeded(&flight_case());
        let h = HomotopyState { lambda1: 1.0, lambda2: 1.0, ..HomotopyState::default() };
        let traj = shoot(&sp, &case, &h).unwrap();
        let case = record_natural_endpoint(&traj, &case);
        let r = s2_from_trajectory(&traj, &case, &h).unwrap();
        let x = terminal_point(&traj).x;
        let t = case.target;
        assert_eq!(r[0], x.omega_x - t.omega_x);
        assert_eq!(r[1], x.omega_y - t.omega_y);
        assert_eq!(r[2], x.theta - t.theta);
        assert_eq!(r[3], x.psi - t.psi);
        assert_eq!(r[4], x.phi - t.phi);
    }

    #[test]
    fn hamiltonian_row_uses_penalty_weight() {
        let (case, sp) = seeded(&flight_case());
        let sp = ShootingPoint { p0: Costate { omega_y: 20.0, ..sp.p0 }, ..sp };
        let case = CaseSpec { natural: Some(TerminalTarget::default()), ..case };
        let h = HomotopyState { lambda1: 1.0, lambda4: 0.5, ..HomotopyState::default() };
        let traj = shoot(&sp, &case, &h).unwrap();
        let end = terminal_point(&traj);
        let u = control_law(&end.p, &case.vehicle, &h).unwrap();
        let r = s2_from_trajectory(&traj, &case, &h).unwrap();
        assert_eq!(r[8], hamiltonian(&end.x, &end.p, &u, &case.vehicle, &h));
        let h0 = HomotopyState { lambda4: 0.0, ..h };
        assert_ne!(r[8], hamiltonian(&end.x, &end.p, &u, &case.vehicle, &h0));
    }

    #[test]
    fn planar_rows_vanish_with_zero_lateral_costates() {
        let (case, sp) = seeded(&flight_case());
        assert!(case.is_planar());
        let p0 = Costate { theta: 0.4, omega_y: 12.0, ..sp.p0 };
        let sp = ShootingPoint { p0, ..sp };
        let h = HomotopyState { lambda1: 0.7, ..HomotopyState::default() };
        let r = residual_s1(&sp, &case, &h).unwrap();
        for (k, row) in out_of_plane_pairs(Stage::Lambda1) {
            assert_eq!(sp.to_array()[k], 0.0);
            assert_eq!(r[row], 0.0, "row {row}");
        }
        assert_eq!(residual_planar(Stage::Lambda1, &sp, &case, &h).unwrap(), r);
        let mut z = sp.to_array();
        z[6] = 1e-3;
        let rp = residual_planar(Stage::Lambda1, &ShootingPoint::from_slice(&z), &case, &h).unwrap();
        assert_eq!(rp[0], 1e-3);
        assert_eq!(rp[1], r[1]);
    }

    #[test]
    fn point_round_trip() {
        let z = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        assert_eq!(ShootingPoint::from_slice(&z).to_array(), z);
    }
}
