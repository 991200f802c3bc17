//! Extremal vector fields of the coupled attitude/trajectory system.
//!
//! The state is `(v_x, v_y, v_z, θ, ψ, φ, ω_x, ω_y)`; the costate is its
//! conjugate with the cost multiplier fixed at [`P0`]. Controls come from the
//! homotopy control law, which moves from the saturated quadratic-penalty law
//! (`λ4 = 0`) to the unit-disk bang law `u = Φ/‖Φ‖` (`λ4 = 1`).

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::EulerAngles;

/// Cost multiplier of normal extremals.
pub const P0: f64 = -1.0;

/// Below this `|cos ψ|` the Euler kinematics are replaced by their limit field.
pub const GIMBAL_LOCK_THRESHOLD: f64 = 1e-4;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid vehicle parameter: {0}")]
    InvalidParams(&'static str),
    #[error("switching function vanishes with λ4 = 1 (singular junction)")]
    SingularControl,
    #[error("|cos ψ| = {cos_psi:e} is below the gimbal-lock threshold")]
    NearGimbalLock { cos_psi: f64 },
}

macro_rules! eight_vector {
    ($name:ident) => {
        impl $name {
            pub fn to_array(&self) -> [f64; 8] {
                [
                    self.vx,
                    self.vy,
                    self.vz,
                    self.theta,
                    self.psi,
                    self.phi,
                    self.omega_x,
                    self.omega_y,
                ]
            }

            pub fn from_array(a: &[f64]) -> Self {
                $name {
                    vx: a[0],
                    vy: a[1],
                    vz: a[2],
                    theta: a[3],
                    psi: a[4],
                    phi: a[5],
                    omega_x: a[6],
                    omega_y: a[7],
                }
            }

            pub fn velocity(&self) -> Vector3<f64> {
                Vector3::new(self.vx, self.vy, self.vz)
            }

            pub fn is_finite(&self) -> bool {
                self.to_array().iter().all(|c| c.is_finite())
            }
        }
    };
}

/// Velocity in the launch frame (m/s), Euler angles (rad), body rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub omega_x: f64,
    pub omega_y: f64,
}

eight_vector!(State);

impl State {
    pub fn attitude(&self) -> EulerAngles {
        EulerAngles::new(self.theta, self.psi, self.phi)
    }
}

/// Adjoint vector; field names mirror the state component they are conjugate to.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub theta: f64,
    pub psi: f64,
    pub phi: f64,
    pub omega_x: f64,
    pub omega_y: f64,
}

eight_vector!(Costate);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Thrust acceleration, m/s².
    pub a: f64,
    /// Angular acceleration per unit control, rad/s².
    pub b_bar: f64,
    pub c_x: f64,
    pub c_z: f64,
    /// Gravity in the launch frame, m/s².
    pub gravity: Vector3<f64>,
}

impl VehicleParams {
    pub fn new(a: f64, b_bar: f64, c_x: f64, c_z: f64, gravity: Vector3<f64>) -> Result<Self, ModelError> {
        let vp = VehicleParams { a, b_bar, c_x, c_z, gravity };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(ModelError::InvalidParams("thrust acceleration a must be positive"));
        }
        if !(self.b_bar > 0.0 && self.b_bar.is_finite()) {
            return Err(ModelError::InvalidParams("angular acceleration b_bar must be positive"));
        }
        if !(self.c_x >= 0.0 && self.c_z >= 0.0) {
            return Err(ModelError::InvalidParams("aerodynamic coefficients must be non-negative"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(ModelError::InvalidParams("gravity must be finite"));
        }
        Ok(())
    }

    pub fn has_aerodynamics(&self) -> bool {
        self.c_x != 0.0 || self.c_z != 0.0
    }

    /// Radially downward gravity, `x̂_R` pointing up.
    pub fn default_gravity() -> Vector3<f64> {
        Vector3::new(-STANDARD_GRAVITY, 0.0, 0.0)
    }

    pub fn ariane_launch() -> Self {
        VehicleParams { a: 18.0, b_bar: 0.0138, c_x: 0.0, c_z: 0.0, gravity: Self::default_gravity() }
    }

    pub fn ariane_flight() -> Self {
        VehicleParams { a: 25.0, b_bar: 0.0158, c_x: 0.0, c_z: 0.0, gravity: Self::default_gravity() }
    }

    pub fn pegasus() -> Self {
        VehicleParams { a: 24.873, b_bar: 0.0607, c_x: 5e-6, c_z: 5e-6, gravity: Self::default_gravity() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub u1: f64,
    pub u2: f64,
}

impl Control {
    pub fn norm(&self) -> f64 {
        self.u1.hypot(self.u2)
    }

    /// Control angle ζ with `u1 = ‖u‖ cos ζ`, `u2 = ‖u‖ sin ζ`.
    pub fn angle(&self) -> f64 {
        self.u2.atan2(self.u1)
    }
}

/// Continuation parameters and regularization weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomotopyState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub gamma: f64,
}

impl Default for HomotopyState {
    fn default() -> Self {
        HomotopyState { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, gamma: 1.0 }
    }
}

impl HomotopyState {
    /// Weight of the quadratic control penalty in the Hamiltonian.
    pub fn penalty_weight(&self) -> f64 {
        self.gamma * (1.0 - self.lambda4)
    }
}

fn sat(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// `Φ = (b̄ p_ωy, −b̄ p_ωx)`.
pub fn switching_function(p: &Costate, vp: &VehicleParams) -> Vector2<f64> {
    Vector2::new(vp.b_bar * p.omega_y, -vp.b_bar * p.omega_x)
}

/// Control law before saturation, `Φ / (−2p⁰γ(1 − λ4) + b̄ λ4 ‖p_ω‖)`.
pub fn unsaturated_control(p: &Costate, vp: &VehicleParams, h: &HomotopyState) -> Result<Vector2<f64>, ModelError> {
    let pw = p.omega_x.hypot(p.omega_y);
    let denom = -2.0 * P0 * h.penalty_weight() + vp.b_bar * h.lambda4 * pw;
    if denom == 0.0 {
        return Err(ModelError::SingularControl);
    }
    Ok(switching_function(p, vp) / denom)
}

/// Extremal control for the current homotopy stage.
pub fn control_law(p: &Costate, vp: &VehicleParams, h: &HomotopyState) -> Result<Control, ModelError> {
    let r = unsaturated_control(p, vp, h)?;
    Ok(Control { u1: sat(r.x), u2: sat(r.y) })
}

/// Aerodynamic acceleration, drag plus lift, scaled by `lambda3`.
///
/// With `ρ = sqrt(v_y² + v_z²) = v sin ξ`, `sin κ = v_y/ρ`, `cos κ = −v_z/ρ`,
/// the drag is `−c_x v v⃗` and the lift term is `−c_z v (ρ, v_x v_y/ρ, v_x v_z/ρ)`.
pub fn aero_acceleration(v: &Vector3<f64>, vp: &VehicleParams, lambda3: f64) -> Vector3<f64> {
    if lambda3 == 0.0 || !vp.has_aerodynamics() {
        return Vector3::zeros();
    }
    let speed = v.norm();
    let rho = v.y.hypot(v.z);
    let drag = -vp.c_x * speed * v;
    let lift = if rho > 0.0 {
        -vp.c_z * speed * Vector3::new(rho, v.x * v.y / rho, v.x * v.z / rho)
    } else {
        // velocity along x̂_R: ξ = 0, bank angle taken as κ = 0
        Vector3::new(0.0, 0.0, vp.c_z * speed * v.x)
    };
    lambda3 * (drag + lift)
}

/// Jacobian `∂A/∂v` of [`aero_acceleration`].
pub fn aero_jacobian(v: &Vector3<f64>, vp: &VehicleParams, lambda3: f64) -> Matrix3<f64> {
    if lambda3 == 0.0 || !vp.has_aerodynamics() {
        return Matrix3::zeros();
    }
    let speed = v.norm();
    if speed == 0.0 {
        return Matrix3::zeros();
    }
    let (vx, vy, vz) = (v.x, v.y, v.z);
    let mut jac = Matrix3::zeros();
    // drag: −c_x (v δ_ij + v_i v_j / v)
    for i in 0..3 {
        for j in 0..3 {
            let delta = if i == j { speed } else { 0.0 };
            jac[(i, j)] = -vp.c_x * (delta + v[i] * v[j] / speed);
        }
    }
    let rho = vy.hypot(vz);
    if rho > 0.0 {
        let rho3 = rho * rho * rho;
        let q = vy / rho;
        let r = vz / rho;
        let lift = Matrix3::new(
            vx * rho / speed,
            vy * rho / speed + speed * vy / rho,
            vz * rho / speed + speed * vz / rho,
            q * (vx * vx / speed + speed),
            vy / speed * vx * q + speed * vx * vz * vz / rho3,
            vz / speed * vx * q - speed * vx * vy * vz / rho3,
            r * (vx * vx / speed + speed),
            vy / speed * vx * r - speed * vx * vy * vz / rho3,
            vz / speed * vx * r + speed * vx * vy * vy / rho3,
        );
        jac -= vp.c_z * lift;
    }
    lambda3 * jac
}

fn thrust_acceleration(x: &State, vp: &VehicleParams) -> Vector3<f64> {
    crate::frames::body_axis(&x.attitude()) * vp.a
}

fn check_gimbal(x: &State) -> Result<f64, ModelError> {
    let c = x.psi.cos();
    if c.abs() < GIMBAL_LOCK_THRESHOLD {
        Err(ModelError::NearGimbalLock { cos_psi: c })
    } else {
        Ok(c)
    }
}

pub fn is_near_gimbal_lock(x: &State) -> bool {
    x.psi.cos().abs() < GIMBAL_LOCK_THRESHOLD
}

/// State derivative of the regular (non-singular) system.
pub fn dynamics(x: &State, u: &Control, vp: &VehicleParams, lambda3: f64) -> Result<State, ModelError> {
    let cpsi = check_gimbal(x)?;
    let (sphi, cphi) = x.phi.sin_cos();
    let w = x.omega_x * sphi + x.omega_y * cphi;
    let vdot = thrust_acceleration(x, vp) + vp.gravity + aero_acceleration(&x.velocity(), vp, lambda3);
    Ok(State {
        vx: vdot.x,
        vy: vdot.y,
        vz: vdot.z,
        theta: w / cpsi,
        psi: x.omega_x * cphi - x.omega_y * sphi,
        phi: w * x.psi.tan(),
        omega_x: -vp.b_bar * u.u2,
        omega_y: vp.b_bar * u.u1,
    })
}

fn velocity_costate_rate(x: &State, p: &Costate, vp: &VehicleParams, lambda3: f64) -> Vector3<f64> {
    -aero_jacobian(&x.velocity(), vp, lambda3).transpose() * p.velocity()
}

/// Costate derivative `ṗ = −∂H/∂x` of the regular system.
pub fn adjoint_dynamics(
    x: &State,
    p: &Costate,
    _u: &Control,
    vp: &VehicleParams,
    lambda3: f64,
) -> Result<Costate, ModelError> {
    let cpsi = check_gimbal(x)?;
    let spsi = x.psi.sin();
    let tpsi = spsi / cpsi;
    let (st, ct) = x.theta.sin_cos();
    let (sphi, cphi) = x.phi.sin_cos();
    let w = x.omega_x * sphi + x.omega_y * cphi;
    let vrate = x.omega_x * cphi - x.omega_y * sphi;
    let a = vp.a;
    let pv = velocity_costate_rate(x, p, vp, lambda3);
    Ok(Costate {
        vx: pv.x,
        vy: pv.y,
        vz: pv.z,
        theta: -a * cpsi * (p.vx * ct - p.vz * st),
        psi: a * spsi * st * p.vx + a * cpsi * p.vy + a * ct * spsi * p.vz
            - spsi * w / (cpsi * cpsi) * p.theta
            - w / (cpsi * cpsi) * p.phi,
        phi: -vrate / cpsi * p.theta + w * p.psi - tpsi * vrate * p.phi,
        omega_x: -sphi / cpsi * p.theta - cphi * p.psi - spsi * sphi / cpsi * p.phi,
        omega_y: -cphi / cpsi * p.theta + sphi * p.psi - spsi * cphi / cpsi * p.phi,
    })
}

/// Limit of the state and costate fields as `ψ → π/2 + kπ`.
pub fn singular_limit_field(
    x: &State,
    p: &Costate,
    u: &Control,
    vp: &VehicleParams,
    lambda3: f64,
) -> (State, Costate) {
    let (sphi, cphi) = x.phi.sin_cos();
    let (st, ct) = x.theta.sin_cos();
    let vdot = thrust_acceleration(x, vp) + vp.gravity + aero_acceleration(&x.velocity(), vp, lambda3);
    let xdot = State {
        vx: vdot.x,
        vy: vdot.y,
        vz: vdot.z,
        theta: 0.0,
        psi: x.omega_x * cphi - x.omega_y * sphi,
        phi: 0.0,
        omega_x: -vp.b_bar * u.u2,
        omega_y: vp.b_bar * u.u1,
    };
    let pv = velocity_costate_rate(x, p, vp, lambda3);
    let pdot = Costate {
        vx: pv.x,
        vy: pv.y,
        vz: pv.z,
        theta: 0.0,
        psi: vp.a * st * p.vx + vp.a * ct * p.vz,
        phi: 0.0,
        omega_x: -p.psi * cphi,
        omega_y: p.psi * sphi,
    };
    (xdot, pdot)
}

/// State field, switching to the limit field near gimbal lock.
pub fn state_rate(x: &State, p: &Costate, u: &Control, vp: &VehicleParams, lambda3: f64) -> State {
    match dynamics(x, u, vp, lambda3) {
        Ok(d) => d,
        Err(_) => singular_limit_field(x, p, u, vp, lambda3).0,
    }
}

/// Control, state rate and costate rate of the extremal flow at `(x, p)`.
///
/// A vanishing switching function at `λ4 = 1` yields the zero control.
pub fn extremal_field(x: &State, p: &Costate, vp: &VehicleParams, h: &HomotopyState) -> (Control, State, Costate) {
    let u = control_law(p, vp, h).unwrap_or_default();
    let (xd, pd) = extremal_field_with(x, p, &u, vp, h.lambda3);
    (u, xd, pd)
}

/// State and costate rates for a given control.
pub fn extremal_field_with(x: &State, p: &Costate, u: &Control, vp: &VehicleParams, lambda3: f64) -> (State, Costate) {
    if is_near_gimbal_lock(x) {
        singular_limit_field(x, p, u, vp, lambda3)
    } else {
        // both are infallible away from the threshold
        let xd = dynamics(x, u, vp, lambda3).expect("regular field");
        let pd = adjoint_dynamics(x, p, u, vp, lambda3).expect("regular field");
        (xd, pd)
    }
}

/// Unit control `±Φ/‖Φ‖` on the side of `reference`, and `reference`
/// itself where `Φ = 0`. Along a bang arc this continues the arc's control
/// across a zero of the switching function.
pub fn bang_control_on_branch(p: &Costate, vp: &VehicleParams, reference: &Vector2<f64>) -> Control {
    let phi = switching_function(p, vp);
    let n = phi.norm();
    if n == 0.0 {
        return Control { u1: reference.x, u2: reference.y };
    }
    let s = if phi.dot(reference) >= 0.0 { 1.0 } else { -1.0 };
    Control { u1: s * phi.x / n, u2: s * phi.y / n }
}

/// `H = ⟨p, f(x, u)⟩ + p⁰ + p⁰ γ (1 − λ4) ‖u‖²`.
pub fn hamiltonian(x: &State, p: &Costate, u: &Control, vp: &VehicleParams, h: &HomotopyState) -> f64 {
    let f = state_rate(x, p, u, vp, h.lambda3);
    let inner: f64 = p.to_array().iter().zip(f.to_array()).map(|(a, b)| a * b).sum();
    inner + P0 + P0 * h.penalty_weight() * (u.u1 * u.u1 + u.u2 * u.u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h_at(lambda4: f64, gamma: f64) -> HomotopyState {
        HomotopyState { lambda4, gamma, ..HomotopyState::default() }
    }

    #[test]
    fn bang_control_on_unit_switching_vector() {
        let p = Costate { omega_y: 1.0, ..Costate::default() };
        let u = control_law(&p, &VehicleParams::ariane_launch(), &h_at(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(u.u1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.u2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn regularized_control_by_hand() {
        let p = Costate { omega_y: 10.0, ..Costate::default() };
        let u = control_law(&p, &VehicleParams::ariane_launch(), &h_at(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(u.u1, 0.069, epsilon = 1e-15);
        assert_eq!(u.u2, 0.0);
    }

    #[test]
    fn regularized_control_saturates() {
        let vp = VehicleParams::ariane_launch();
        let p = Costate { omega_y: 10.0 / vp.b_bar, ..Costate::default() };
        let u = control_law(&p, &vp, &h_at(0.0, 1.0)).unwrap();
        assert_eq!(u.u1, 1.0);
    }

    #[test]
    fn singular_control_error() {
        let r = control_law(&Costate::default(), &VehicleParams::ariane_launch(), &h_at(1.0, 1.0));
        assert_eq!(r, Err(ModelError::SingularControl));
    }

    #[test]
    fn thrust_along_z_at_rest() {
        let vp = VehicleParams { gravity: Vector3::new(-9.0, 0.5, 0.25), ..VehicleParams::ariane_launch() };
        let d = dynamics(&State::default(), &Control::default(), &vp, 1.0).unwrap();
        assert_abs_diff_eq!(d.vx, -9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.vy, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.vz, 18.25, epsilon = 1e-15);
        assert_eq!((d.theta, d.psi, d.phi, d.omega_x, d.omega_y), (0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn vertical_thrust_ariane_launch() {
        let vp = VehicleParams::ariane_launch();
        let x = State { theta: std::f64::consts::FRAC_PI_2, ..State::default() };
        let d = dynamics(&x, &Control::default(), &vp, 0.0).unwrap();
        assert_abs_diff_eq!(d.vx, 18.0 - STANDARD_GRAVITY, epsilon = 1e-12);
    }

    #[test]
    fn pegasus_aero_terms_along_z() {
        // v along ẑ_R: ξ = π/2, sin κ = 0, cos κ = −1
        let vp = VehicleParams { gravity: Vector3::zeros(), ..VehicleParams::pegasus() };
        let x = State { vz: 300.0, theta: 0.3, ..State::default() };
        let d = dynamics(&x, &Control::default(), &vp, 1.0).unwrap();
        let v2 = 300.0 * 300.0;
        let (xi, kappa) = (std::f64::consts::FRAC_PI_2, std::f64::consts::PI);
        let ax = vp.a * 0.3f64.sin() - vp.c_x * v2 * xi.cos() - vp.c_z * v2 * xi.sin();
        let ay = -vp.c_x * v2 * xi.sin() * kappa.sin() - vp.c_z * v2 * xi.cos() * kappa.sin();
        let az = vp.a * 0.3f64.cos() + vp.c_x * v2 * xi.sin() * kappa.cos() + vp.c_z * v2 * xi.cos() * kappa.cos();
        assert_abs_diff_eq!(d.vx, ax, epsilon = 1e-12);
        assert_abs_diff_eq!(d.vy, ay, epsilon = 1e-12);
        assert_abs_diff_eq!(d.vz, az, epsilon = 1e-12);
    }

    #[test]
    fn aero_matches_flight_path_form() {
        let vp = VehicleParams::pegasus();
        let v = Vector3::new(120.0, -40.0, 250.0);
        let ang = crate::frames::velocity_to_angles(&v).unwrap();
        let (s, xi, k) = (ang.speed, ang.xi, ang.kappa);
        let s2 = s * s;
        let expected = Vector3::new(
            -vp.c_x * s2 * xi.cos() - vp.c_z * s2 * xi.sin(),
            -vp.c_x * s2 * xi.sin() * k.sin() - vp.c_z * s2 * xi.cos() * k.sin(),
            vp.c_x * s2 * xi.sin() * k.cos() + vp.c_z * s2 * xi.cos() * k.cos(),
        );
        assert!((aero_acceleration(&v, &vp, 1.0) - expected).norm() < 1e-12);
    }

    #[test]
    fn gimbal_guard() {
        let x = State { psi: std::f64::consts::FRAC_PI_2, ..State::default() };
        assert!(matches!(
            dynamics(&x, &Control::default(), &VehicleParams::ariane_launch(), 0.0),
            Err(ModelError::NearGimbalLock { .. })
        ));
    }

    #[test]
    fn velocity_costate_constant_without_aero() {
        let x = State { vx: 10.0, vy: 3.0, vz: 40.0, theta: 0.2, psi: 0.3, phi: 0.1, omega_x: 0.1, omega_y: 0.2 };
        let p = Costate { vx: 1.0, vy: 2.0, vz: 3.0, ..Costate::default() };
        let d = adjoint_dynamics(&x, &p, &Control::default(), &VehicleParams::pegasus(), 0.0).unwrap();
        assert_eq!((d.vx, d.vy, d.vz), (0.0, 0.0, 0.0));
    }

    #[test]
    fn adjoint_at_zero_attitude() {
        let vp = VehicleParams::ariane_flight();
        let x = State { vz: 100.0, ..State::default() };
        let p = Costate { vx: 0.3, vy: -0.2, vz: 0.1, theta: 0.7, psi: -1.1, phi: 0.4, omega_x: 2.0, omega_y: 3.0 };
        let d = adjoint_dynamics(&x, &p, &Control::default(), &vp, 0.0).unwrap();
        assert_abs_diff_eq!(d.theta, -vp.a * p.vx, epsilon = 1e-14);
        assert_abs_diff_eq!(d.psi, vp.a * p.vy, epsilon = 1e-14);
        assert_abs_diff_eq!(d.omega_x, -p.psi, epsilon = 1e-14);
        assert_abs_diff_eq!(d.omega_y, -p.theta, epsilon = 1e-14);
    }

    #[test]
    fn hamiltonian_of_zero_costate() {
        let vp = VehicleParams::ariane_flight();
        let x = State { vx: 5.0, vz: 100.0, theta: 0.4, ..State::default() };
        let u = Control { u1: 0.6, u2: -0.8 };
        assert_abs_diff_eq!(hamiltonian(&x, &Costate::default(), &u, &vp, &h_at(1.0, 1.0)), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn penalty_vanishes_with_zero_control() {
        let vp = VehicleParams::pegasus();
        let x = State { vx: 5.0, vy: 2.0, vz: 100.0, theta: 0.4, psi: 0.2, phi: 0.1, omega_x: 0.01, omega_y: 0.02 };
        let p = Costate { vx: 0.1, vy: 0.2, vz: 0.3, theta: 0.4, psi: 0.5, phi: 0.6, omega_x: 0.7, omega_y: 0.8 };
        let u = Control::default();
        let h0 = hamiltonian(&x, &p, &u, &vp, &h_at(0.0, 1.0));
        for l in [0.25, 0.5, 1.0] {
            assert_eq!(hamiltonian(&x, &p, &u, &vp, &h_at(l, 1.0)), h0);
        }
    }

    #[test]
    fn switching_function_pegasus() {
        let p = Costate { omega_y: 2.0, ..Costate::default() };
        let phi = switching_function(&p, &VehicleParams::pegasus());
        assert_abs_diff_eq!(phi.x, 0.1214, epsilon = 1e-15);
        assert_eq!(phi.y, 0.0);
        assert_eq!(switching_function(&Costate::default(), &VehicleParams::pegasus()), Vector2::zeros());
    }

    #[test]
    fn limit_field_freezes_pitch_and_roll() {
        let vp = VehicleParams::ariane_flight();
        let x = State { vz: 10.0, theta: 0.3, psi: 1.5, phi: 0.0, omega_x: 0.2, omega_y: -0.1, ..State::default() };
        let p = Costate { vx: 0.1, vz: 0.2, theta: 0.3, psi: 0.4, phi: 0.5, omega_x: 0.6, omega_y: 0.7, ..Costate::default() };
        let (xd, pd) = singular_limit_field(&x, &p, &Control { u1: 0.5, u2: 0.5 }, &vp, 0.0);
        assert_eq!((xd.theta, xd.phi), (0.0, 0.0));
        assert_abs_diff_eq!(xd.psi, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(pd.omega_x, -0.4, epsilon = 1e-15);
        assert_eq!(pd.omega_y, 0.0);
    }
}
